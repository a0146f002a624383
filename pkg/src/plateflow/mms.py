"""Manufactured Stokes solutions for the verification suites.

Two solenoidal families on the box (0,lx) x (0,ly) x (-depth,0):

  "interior": curl of a sin^2-windowed potential; velocity and its normal
              derivatives vanish on every wall, so the interface data is
              zero and the convergence study is free of boundary-layer
              artifacts.
  "shear":    the same planform times a linear-in-z profile, giving a
              nonzero in-plane interface trace and a nonzero viscous shear
              traction at z=0 (exercises the Dirichlet lift and traction
              sampling).

Forcing g = -nu Lap v + grad p is generated symbolically and lambdified.
"""

import numpy as np
import sympy as sp

from .grid import FluidField


class ManufacturedStokes:

    def __init__(self, lx=1.0, ly=1.0, depth=1.0, nu=1.0, case="interior"):
        self.lx, self.ly, self.depth, self.nu = lx, ly, depth, nu
        self.case = case
        x, y, z = sp.symbols("x y z")
        planform = (sp.sin(sp.pi * x / lx) ** 2
                    * sp.sin(sp.pi * y / ly) ** 2)
        if case == "interior":
            win = sp.sin(sp.pi * z / depth) ** 2
            chi = planform * win
            chi2 = chi * sp.cos(sp.pi * x / lx)
            v1 = sp.diff(chi, y)
            v2 = sp.diff(chi2, z) - sp.diff(chi, x)
            v3 = -sp.diff(chi2, y)
        elif case == "shear":
            prof = (1 + z / depth)          # 0 at the bottom, 1 at z=0
            chi = planform * prof
            v1 = sp.diff(chi, y)
            v2 = -sp.diff(chi, x)
            v3 = sp.Integer(0)
        else:
            raise ValueError(f"unknown manufactured case {case!r}")
        p = (sp.cos(sp.pi * x / lx) * sp.cos(sp.pi * y / ly)
             * sp.cos(sp.pi * z / depth))
        div = sp.simplify(sp.diff(v1, x) + sp.diff(v2, y) + sp.diff(v3, z))
        assert div == 0
        lap = lambda f: sp.diff(f, x, 2) + sp.diff(f, y, 2) + sp.diff(f, z, 2)
        g1 = -nu * lap(v1) + sp.diff(p, x)
        g2 = -nu * lap(v2) + sp.diff(p, y)
        g3 = -nu * lap(v3) + sp.diff(p, z)
        syms = (x, y, z)
        self._v = [sp.lambdify(syms, f, "numpy") for f in (v1, v2, v3)]
        self._g = [sp.lambdify(syms, f, "numpy") for f in (g1, g2, g3)]
        self._p = sp.lambdify(syms, p, "numpy")
        # traction on z=0 per the stress formula
        t1 = nu * (sp.diff(v1, z) + sp.diff(v3, x))
        t2 = nu * (sp.diff(v2, z) + sp.diff(v3, y))
        t3 = 2 * nu * sp.diff(v3, z) - p
        self._traction = [sp.lambdify(syms, f.subs(z, 0), "numpy")
                          for f in (t1, t2, t3)]

    def forcing(self):
        g1, g2, g3 = self._g
        return lambda X, Y, Z: (np.broadcast_to(g1(X, Y, Z), X.shape),
                                np.broadcast_to(g2(X, Y, Z), X.shape),
                                np.broadcast_to(g3(X, Y, Z), X.shape))

    def boundary_psi(self, plate):
        """Exact interface velocity at the plate nodes."""
        X, Y = plate.meshgrid()
        Z = np.zeros_like(X)
        return tuple(np.broadcast_to(v(X, Y, Z), X.shape).astype(float)
                     for v in self._v)

    def exact_field(self, grid):
        arrs = []
        for comp, f in zip(("v1", "v2", "v3"), self._v):
            xs, ys, zs = grid.face_coords(comp)
            X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
            arrs.append(np.broadcast_to(f(X, Y, Z), X.shape).astype(float))
        xs, ys, zs = grid.face_coords("p")
        X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
        p = np.broadcast_to(self._p(X, Y, Z), X.shape).astype(float)
        p = p - p.mean()
        return FluidField(*arrs, p)

    def exact_traction(self, plate):
        X, Y = plate.meshgrid()
        Z = np.zeros_like(X)
        return tuple(np.broadcast_to(f(X, Y, Z), X.shape).astype(float)
                     for f in self._traction)

    def velocity_error(self, grid, vf):
        """Weighted L2 error and exact-solution norm over the faces."""
        ex = self.exact_field(grid)
        err2 = nrm2 = 0.0
        for comp in ("v1", "v2", "v3"):
            ids = getattr(grid, "id_" + comp)
            vols = grid.slot_volume[ids.ravel()].reshape(ids.shape)
            a = getattr(vf, comp)
            b = getattr(ex, comp)
            err2 += float(np.sum(vols * (a - b) ** 2))
            nrm2 += float(np.sum(vols * b ** 2))
        return np.sqrt(err2), np.sqrt(nrm2)


def convergence_order(hs, errors):
    """Least-squares slope of log(error) against log(h)."""
    lh = np.log(np.asarray(hs, dtype=float))
    le = np.log(np.asarray(errors, dtype=float))
    A = np.vstack([lh, np.ones_like(lh)]).T
    coef, *_ = np.linalg.lstsq(A, le, rcond=None)
    return float(coef[0])
