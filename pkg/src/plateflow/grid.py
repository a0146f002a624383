"""Box geometry, staggered fluid grid, plate grid, and the discrete operators.

The fluid occupies the box (0,lx) x (0,ly) x (-depth,0) on a MAC staggered
grid: pressure at cell centers, velocity components on faces.  The plate
occupies the top face z=0; plate nodes coincide with the fluid top-face
centers, so the transversal plate velocity is literally the Dirichlet datum
of the vertical fluid velocity there.

All differential operators are assembled as sparse matrices built from
compact (two-point) differences plus averaging, so that every divergence is
the exact negative transpose of the matching gradient under the quadrature
weights.  The energy audits elsewhere in the package rely on that exactness.
"""

import numpy as np
from dataclasses import dataclass, field
from functools import cached_property
from scipy import sparse


class GridError(ValueError):
    """Invalid geometry or mismatched grids."""


# ---------------------------------------------------------------------------
# geometry and grid containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoxGeometry:
    """Rectangular box: fluid in (0,lx) x (0,ly) x (-depth,0), plate on z=0."""
    lx: float
    ly: float
    depth: float
    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        if min(self.lx, self.ly, self.depth) <= 0:
            raise GridError("box extents must be positive")
        if min(self.nx, self.ny, self.nz) < 4:
            raise GridError("need at least 4 cells per axis")

    @property
    def spacings(self):
        return (self.lx / self.nx, self.ly / self.ny, self.depth / self.nz)


def build_grids(geometry):
    """Build the staggered fluid grid and the matching plate grid."""
    fluid = FluidGrid(geometry)
    plate = PlateGrid(geometry)
    return fluid, plate


class FluidGrid:
    """Slot bookkeeping for the MAC grid.

    A "slot" is any stored velocity value: interior faces, Dirichlet faces on
    the walls, and the tangential trace values of v1/v2 on the top face
    (which are not faces but enter the boundary strain rows).  Interface and
    wall values are carried explicitly so boundary conditions are plain data.
    """

    def __init__(self, geometry):
        self.geometry = geometry
        nx, ny, nz = geometry.nx, geometry.ny, geometry.nz
        self.hx, self.hy, self.hz = geometry.spacings
        self.shape_v1 = (nx + 1, ny, nz)
        self.shape_v2 = (nx, ny + 1, nz)
        self.shape_v3 = (nx, ny, nz + 1)
        self.shape_p = (nx, ny, nz)
        # tangential traces of v1, v2 at z=0 (x-edges / y-edges of the top face)
        self.shape_v1o = (nx + 1, ny)
        self.shape_v2o = (nx, ny + 1)

        sizes = [np.prod(s) for s in (self.shape_v1, self.shape_v2,
                                      self.shape_v3, self.shape_v1o,
                                      self.shape_v2o)]
        offs = np.concatenate([[0], np.cumsum(sizes)])
        self.n_slots = int(offs[-1])
        self.id_v1 = np.arange(offs[0], offs[1]).reshape(self.shape_v1)
        self.id_v2 = np.arange(offs[1], offs[2]).reshape(self.shape_v2)
        self.id_v3 = np.arange(offs[2], offs[3]).reshape(self.shape_v3)
        self.id_v1o = np.arange(offs[3], offs[4]).reshape(self.shape_v1o)
        self.id_v2o = np.arange(offs[4], offs[5]).reshape(self.shape_v2o)

        data = np.zeros(self.n_slots, dtype=bool)
        data[self.id_v1[0, :, :].ravel()] = True     # x = 0 wall (S)
        data[self.id_v1[-1, :, :].ravel()] = True    # x = lx wall
        data[self.id_v2[:, 0, :].ravel()] = True
        data[self.id_v2[:, -1, :].ravel()] = True
        data[self.id_v3[:, :, 0].ravel()] = True     # bottom wall
        data[self.id_v3[:, :, -1].ravel()] = True    # top face: plate datum
        data[self.id_v1o.ravel()] = True
        data[self.id_v2o.ravel()] = True
        self.is_data = data
        self.idx_int = np.flatnonzero(~data)
        self.idx_bc = np.flatnonzero(data)
        self.n_int = self.idx_int.size

        # face volumes (quadrature for the fluid L2 norm / mass matrix);
        # trace slots carry no volume.
        vol = np.zeros(self.n_slots)
        wx = np.full(nx + 1, self.hx); wx[[0, -1]] = self.hx / 2
        wy = np.full(ny + 1, self.hy); wy[[0, -1]] = self.hy / 2
        wz = np.full(nz + 1, self.hz); wz[[0, -1]] = self.hz / 2
        vol[self.id_v1.ravel()] = np.broadcast_to(
            wx[:, None, None], self.shape_v1).ravel() * self.hy * self.hz
        vol[self.id_v2.ravel()] = np.broadcast_to(
            wy[None, :, None], self.shape_v2).ravel() * self.hx * self.hz
        vol[self.id_v3.ravel()] = np.broadcast_to(
            wz[None, None, :], self.shape_v3).ravel() * self.hx * self.hy
        self.slot_volume = vol
        self.cell_volume = self.hx * self.hy * self.hz

    # -- coordinates ------------------------------------------------------

    def face_coords(self, comp):
        """Coordinate arrays (1d per axis) of the stored values of one family."""
        g = self.geometry
        xc = (np.arange(g.nx) + 0.5) * self.hx
        yc = (np.arange(g.ny) + 0.5) * self.hy
        zc = -g.depth + (np.arange(g.nz) + 0.5) * self.hz
        xf = np.arange(g.nx + 1) * self.hx
        yf = np.arange(g.ny + 1) * self.hy
        zf = -g.depth + np.arange(g.nz + 1) * self.hz
        if comp == "v1":
            return xf, yc, zc
        if comp == "v2":
            return xc, yf, zc
        if comp == "v3":
            return xc, yc, zf
        if comp == "p":
            return xc, yc, zc
        raise GridError(f"unknown component {comp!r}")

    def slots_from_fields(self, v1, v2, v3, v1o=None, v2o=None):
        z = np.zeros(self.n_slots)
        z[self.id_v1.ravel()] = np.asarray(v1).ravel()
        z[self.id_v2.ravel()] = np.asarray(v2).ravel()
        z[self.id_v3.ravel()] = np.asarray(v3).ravel()
        if v1o is not None:
            z[self.id_v1o.ravel()] = np.asarray(v1o).ravel()
        if v2o is not None:
            z[self.id_v2o.ravel()] = np.asarray(v2o).ravel()
        return z

    def fields_from_slots(self, z):
        return (z[self.id_v1], z[self.id_v2], z[self.id_v3],
                z[self.id_v1o], z[self.id_v2o])

    @cached_property
    def ops(self):
        return FluidOperators(self)


class PlateGrid:
    """Cell-centered plate nodes; the outermost ring is the clamped boundary."""

    def __init__(self, geometry):
        self.geometry = geometry
        self.nx, self.ny = geometry.nx, geometry.ny
        self.hx = geometry.lx / geometry.nx
        self.hy = geometry.ly / geometry.ny
        if min(self.nx, self.ny) < 4:
            raise GridError("plate grid needs at least 4 nodes per axis")
        self.x = (np.arange(self.nx) + 0.5) * self.hx
        self.y = (np.arange(self.ny) + 0.5) * self.hy
        interior = np.zeros((self.nx, self.ny), dtype=bool)
        interior[1:-1, 1:-1] = True
        self.interior_mask = interior
        self.ring_mask = ~interior
        self.n_interior = int(interior.sum())
        self.node_area = self.hx * self.hy
        self.area = geometry.lx * geometry.ly

    def interior_vec(self, w):
        return np.asarray(w)[self.interior_mask]

    def full_field(self, vec):
        w = np.zeros((self.nx, self.ny))
        w[self.interior_mask] = vec
        return w

    def meshgrid(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    @cached_property
    def ops(self):
        return PlateOperators(self)


# ---------------------------------------------------------------------------
# fluid operators (assembled sparse)
# ---------------------------------------------------------------------------

class _Triplets:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rows, cols, vals):
        rows = np.asarray(rows).ravel()
        cols = np.asarray(cols).ravel()
        vals = np.broadcast_to(vals, rows.shape).ravel()
        self.rows.append(rows)
        self.cols.append(cols)
        self.vals.append(np.asarray(vals, dtype=float))

    def tocsr(self, shape):
        m = sparse.coo_matrix(
            (np.concatenate(self.vals),
             (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=shape)
        return m.tocsr()


class FluidOperators:
    """Divergence, symmetric-gradient and quadrature matrices over the slots.

    div_mat:    cells x slots, the conservative staggered divergence
    strain_mat: strain locations x slots, compact symmetric-gradient rows
    strain_w:   quadrature weight x multiplicity of each strain row (shear
                rows carry 2x the location volume since eps_ij = eps_ji both
                enter |eps|^2)

    E(v,phi) = 2 * (S v)^T diag(w) (S phi) is the discrete version of the
    symmetric-gradient dissipation form; the viscous stiffness assembled from
    it is exactly its own energy form, which the audits depend on.
    Tangential wall/interface values enter through half-spacing one-sided
    differences (equivalent to linear reflection ghosts).
    """

    def __init__(self, grid):
        self.grid = grid
        g = grid.geometry
        nx, ny, nz = g.nx, g.ny, g.nz
        hx, hy, hz = grid.hx, grid.hy, grid.hz

        # divergence: rows ordered like pressure cells
        t = _Triplets()
        cid = np.arange(nx * ny * nz).reshape(grid.shape_p)
        t.add(cid, grid.id_v1[1:, :, :], 1.0 / hx)
        t.add(cid, grid.id_v1[:-1, :, :], -1.0 / hx)
        t.add(cid, grid.id_v2[:, 1:, :], 1.0 / hy)
        t.add(cid, grid.id_v2[:, :-1, :], -1.0 / hy)
        t.add(cid, grid.id_v3[:, :, 1:], 1.0 / hz)
        t.add(cid, grid.id_v3[:, :, :-1], -1.0 / hz)
        self.div_mat = t.tocsr((nx * ny * nz, grid.n_slots))

        # strain rows
        t = _Triplets()
        weights = []
        row0 = 0

        def normal_family(idv, axis, h):
            nonlocal row0
            sl_hi = [slice(None)] * 3
            sl_lo = [slice(None)] * 3
            sl_hi[axis] = slice(1, None)
            sl_lo[axis] = slice(None, -1)
            rows = row0 + cid
            t.add(rows, idv[tuple(sl_hi)], 1.0 / h)
            t.add(rows, idv[tuple(sl_lo)], -1.0 / h)
            weights.append(np.full(rows.size, grid.cell_volume))
            row0 += rows.size

        normal_family(grid.id_v1, 0, hx)   # eps_11
        normal_family(grid.id_v2, 1, hy)   # eps_22
        normal_family(grid.id_v3, 2, hz)   # eps_33

        def half_weights(n, h):
            w = np.full(n + 1, h)
            w[[0, -1]] = h / 2
            return w

        wxe = half_weights(nx, hx)
        wye = half_weights(ny, hy)
        wze = half_weights(nz, hz)

        def shear_terms(rows, ida, axis, h, n, trace_top=None):
            """Add 0.5*d(va)/d(axis) over an edge family.

            ida values live at offsets +-h/2 from the edge along `axis`; at the
            axis boundary the wall (or top-trace) value sits on the edge
            itself, giving the half-spacing one-sided difference.  trace_top:
            slot ids of the stored trace values at the high end (z=0
            interface); walls contribute zero and drop out.
            """
            c = 0.5 / h
            mid = [slice(None)] * 3
            mid[axis] = slice(1, n)
            mid = tuple(mid)
            # interior edges: centered two-point difference across the edge
            t.add(rows[mid], _slice_axis(ida, axis, 1, n), c)
            t.add(rows[mid], _slice_axis(ida, axis, 0, n - 1), -c)
            # low boundary edge: value at the wall is 0 -> half spacing
            lo = [slice(None)] * 3
            lo[axis] = 0
            t.add(rows[tuple(lo)], _slice_axis(ida, axis, 0, 1), 2 * c)
            # high boundary edge
            hi = [slice(None)] * 3
            hi[axis] = n
            if trace_top is not None:
                t.add(rows[tuple(hi)], trace_top, 2 * c)
            t.add(rows[tuple(hi)], _slice_axis(ida, axis, n - 1, n), -2 * c)

        # Off-diagonal strains appear twice in |eps|^2 (eps_12 and eps_21),
        # so the shear rows carry weight 2*volume.

        # eps_12 at z-parallel edges: shape (nx+1, ny+1, nz)
        shp = (nx + 1, ny + 1, nz)
        rows = row0 + np.arange(np.prod(shp)).reshape(shp)
        shear_terms(rows, grid.id_v1, 1, hy, ny)
        shear_terms(rows, grid.id_v2, 0, hx, nx)
        w = 2.0 * wxe[:, None, None] * wye[None, :, None] * hz
        weights.append(np.broadcast_to(w, shp).ravel())
        row0 += rows.size

        # eps_13 at y-parallel edges: shape (nx+1, ny, nz+1); top row uses the
        # stored interface trace of v1.
        shp = (nx + 1, ny, nz + 1)
        rows = row0 + np.arange(np.prod(shp)).reshape(shp)
        shear_terms(rows, grid.id_v1, 2, hz, nz, trace_top=grid.id_v1o)
        shear_terms(rows, grid.id_v3, 0, hx, nx)
        w = 2.0 * wxe[:, None, None] * hy * wze[None, None, :]
        weights.append(np.broadcast_to(w, shp).ravel())
        row0 += rows.size

        # eps_23 at x-parallel edges: shape (nx, ny+1, nz+1)
        shp = (nx, ny + 1, nz + 1)
        rows = row0 + np.arange(np.prod(shp)).reshape(shp)
        shear_terms(rows, grid.id_v2, 2, hz, nz, trace_top=grid.id_v2o)
        shear_terms(rows, grid.id_v3, 1, hy, ny)
        w = 2.0 * hx * wye[None, :, None] * wze[None, None, :]
        weights.append(np.broadcast_to(w, shp).ravel())
        row0 += rows.size

        self.strain_mat = t.tocsr((row0, grid.n_slots))
        self.strain_w = np.concatenate(weights)
        self.n_strain = row0

        # weighted divergence rows (momentum gets -div_w^T p; keeps the saddle
        # system symmetric)
        self.div_w = sparse.diags(
            np.full(nx * ny * nz, grid.cell_volume)) @ self.div_mat

        self.mass = grid.slot_volume          # diagonal fluid mass
        self.visc_form = (self.strain_mat.T @
                          sparse.diags(2.0 * self.strain_w) @ self.strain_mat)
        self.visc_form = self.visc_form.tocsr()

    def energy_form(self, za, zb):
        """E(a,b): the symmetric-gradient dissipation form (Definition-style)."""
        sa = self.strain_mat @ za
        sb = self.strain_mat @ zb
        return 2.0 * float(np.dot(sa * self.strain_w, sb))


def _slice_axis(arr, axis, lo, hi):
    sl = [slice(None)] * arr.ndim
    sl[axis] = slice(lo, hi)
    return arr[tuple(sl)]


# ---------------------------------------------------------------------------
# plate operators
# ---------------------------------------------------------------------------

def _pad_matrix_mirror(nx, ny):
    """Sparse map from full-node fields to the (nx+4, ny+4) padded grid with
    clamped-plate ghost rules: ring values pass through, ghosts mirror the
    interior across the ring (so the centered normal derivative at the ring
    vanishes); corner ghosts are the average of the two edge extrapolations.
    Input fields are assumed zero on the ring, but the map is built for
    arbitrary full fields so the stencil ops can be exercised on polynomials.
    """
    t = _Triplets()
    pid = np.arange((nx + 4) * (ny + 4)).reshape(nx + 4, ny + 4)
    nid = np.arange(nx * ny).reshape(nx, ny)
    t.add(pid[2:-2, 2:-2], nid, 1.0)
    # edge ghosts: mirror across the ring node
    t.add(pid[1, 2:-2], nid[1, :], 1.0)
    t.add(pid[0, 2:-2], nid[2, :], 1.0)
    t.add(pid[-2, 2:-2], nid[-2, :], 1.0)
    t.add(pid[-1, 2:-2], nid[-3, :], 1.0)
    t.add(pid[2:-2, 1], nid[:, 1], 1.0)
    t.add(pid[2:-2, 0], nid[:, 2], 1.0)
    t.add(pid[2:-2, -2], nid[:, -2], 1.0)
    t.add(pid[2:-2, -1], nid[:, -3], 1.0)
    # corner ghosts: mirroring in both directions lands on an interior node,
    # and averaging the two edge extrapolations gives the same value
    corner = [((1, 1), (1, 1)), ((0, 1), (2, 1)), ((1, 0), (1, 2)),
              ((0, 0), (2, 2))]
    for (gi, gj), (si, sj) in corner:
        t.add(pid[gi, gj], nid[si, sj], 1.0)
        t.add(pid[-1 - gi, gj], nid[-1 - si, sj], 1.0)
        t.add(pid[gi, -1 - gj], nid[si, -1 - sj], 1.0)
        t.add(pid[-1 - gi, -1 - gj], nid[-1 - si, -1 - sj], 1.0)
    return t.tocsr(((nx + 4) * (ny + 4), nx * ny))


def _pad_matrix_odd(nx, ny):
    """One-layer pad with odd reflection through the ring (Dirichlet ghosts)."""
    t = _Triplets()
    pid = np.arange((nx + 2) * (ny + 2)).reshape(nx + 2, ny + 2)
    nid = np.arange(nx * ny).reshape(nx, ny)
    t.add(pid[1:-1, 1:-1], nid, 1.0)
    t.add(pid[0, 1:-1], nid[1, :], -1.0)
    t.add(pid[-1, 1:-1], nid[-2, :], -1.0)
    t.add(pid[1:-1, 0], nid[:, 1], -1.0)
    t.add(pid[1:-1, -1], nid[:, -2], -1.0)
    # corners: odd in both directions
    t.add(pid[0, 0], nid[1, 1], 1.0)
    t.add(pid[0, -1], nid[1, -2], 1.0)
    t.add(pid[-1, 0], nid[-2, 1], 1.0)
    t.add(pid[-1, -1], nid[-2, -2], 1.0)
    return t.tocsr(((nx + 2) * (ny + 2), nx * ny))


def _lap5(nx, ny, hx, hy, pad):
    """5-point Laplacian rows at all nodes, composed with a ghost pad."""
    t = _Triplets()
    if pad.shape[0] == (nx + 4) * (ny + 4):
        off = 2
        pw = nx + 4
    elif pad.shape[0] == (nx + 2) * (ny + 2):
        off = 1
        pw = nx + 2
    else:
        raise GridError("unexpected pad shape")
    pid = np.arange(pad.shape[0]).reshape(pw, -1)
    nid = np.arange(nx * ny).reshape(nx, ny)
    core = pid[off:off + nx, off:off + ny]
    t.add(nid, core, -2.0 / hx ** 2 - 2.0 / hy ** 2)
    t.add(nid, pid[off - 1:off - 1 + nx, off:off + ny], 1.0 / hx ** 2)
    t.add(nid, pid[off + 1:off + 1 + nx, off:off + ny], 1.0 / hx ** 2)
    t.add(nid, pid[off:off + nx, off - 1:off - 1 + ny], 1.0 / hy ** 2)
    t.add(nid, pid[off:off + nx, off + 1:off + 1 + ny], 1.0 / hy ** 2)
    return t.tocsr((nx * ny, pad.shape[0])) @ pad


def _grad_mats(nx, ny, hx, hy, pad):
    if pad.shape[0] == (nx + 4) * (ny + 4):
        off, pw = 2, nx + 4
    else:
        off, pw = 1, nx + 2
    pid = np.arange(pad.shape[0]).reshape(pw, -1)
    nid = np.arange(nx * ny).reshape(nx, ny)
    tx = _Triplets()
    tx.add(nid, pid[off + 1:off + 1 + nx, off:off + ny], 0.5 / hx)
    tx.add(nid, pid[off - 1:off - 1 + nx, off:off + ny], -0.5 / hx)
    ty = _Triplets()
    ty.add(nid, pid[off:off + nx, off + 1:off + 1 + ny], 0.5 / hy)
    ty.add(nid, pid[off:off + nx, off - 1:off - 1 + ny], -0.5 / hy)
    return (tx.tocsr((nx * ny, pad.shape[0])) @ pad,
            ty.tocsr((nx * ny, pad.shape[0])) @ pad)


class PlateOperators:
    """Assembled plate matrices over full-node fields (ring held at zero).

    lap_c / bih: clamped 5-point Laplacian and its composition (13-point in
    the deep interior).  bending_form = lap_c^T Q lap_c is the SPD bending
    stiffness; its quadratic form is the discrete ||Lap w||^2.
    gw_x/gw_y: centered gradient with mirror ghosts (for w);
    gu_x/gu_y: centered gradient with odd ghosts (for in-plane components).
    """

    def __init__(self, plate):
        self.plate = plate
        nx, ny = plate.nx, plate.ny
        hx, hy = plate.hx, plate.hy
        self.pad_mirror = _pad_matrix_mirror(nx, ny)
        self.pad_odd = _pad_matrix_odd(nx, ny)
        self.lap_c = _lap5(nx, ny, hx, hy, self.pad_mirror)
        self.gw_x, self.gw_y = _grad_mats(nx, ny, hx, hy, self.pad_mirror)
        self.gu_x, self.gu_y = _grad_mats(nx, ny, hx, hy, self.pad_odd)
        area = plate.node_area
        self.node_w = np.full(nx * ny, area)
        self.bending_form = (self.lap_c.T @
                             sparse.diags(self.node_w) @ self.lap_c).tocsr()
        # restriction to interior DOFs
        rid = np.flatnonzero(plate.interior_mask.ravel())
        self.interior_ids = rid
        R = sparse.coo_matrix(
            (np.ones(rid.size), (np.arange(rid.size), rid)),
            shape=(rid.size, nx * ny)).tocsr()
        self.restrict = R
        self.prolong = R.T.tocsr()

    def laplacian(self, w):
        return (self.lap_c @ np.asarray(w).ravel()).reshape(self.plate.nx,
                                                            self.plate.ny)

    def biharmonic(self, w):
        """Clamped-ghost Laplacian applied twice; 13-point in the interior."""
        return self.laplacian(self.laplacian(w))

    def grad_w(self, w):
        v = np.asarray(w).ravel()
        s = (self.plate.nx, self.plate.ny)
        return (self.gw_x @ v).reshape(s), (self.gw_y @ v).reshape(s)

    def grad_u(self, u):
        v = np.asarray(u).ravel()
        s = (self.plate.nx, self.plate.ny)
        return (self.gu_x @ v).reshape(s), (self.gu_y @ v).reshape(s)


# ---------------------------------------------------------------------------
# field containers
# ---------------------------------------------------------------------------

@dataclass
class FluidField:
    """Staggered velocity + cell pressure + the interface trace it was solved
    with (3 plate-node components).  The trace is data, not derived."""
    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray
    p: np.ndarray
    trace: tuple = None  # (t1, t2, t3) plate-node arrays

    @classmethod
    def zeros(cls, grid):
        nxp, nyp = grid.geometry.nx, grid.geometry.ny
        return cls(np.zeros(grid.shape_v1), np.zeros(grid.shape_v2),
                   np.zeros(grid.shape_v3), np.zeros(grid.shape_p),
                   (np.zeros((nxp, nyp)), np.zeros((nxp, nyp)),
                    np.zeros((nxp, nyp))))

    def copy(self):
        tr = tuple(a.copy() for a in self.trace) if self.trace else None
        return FluidField(self.v1.copy(), self.v2.copy(), self.v3.copy(),
                          self.p.copy(), tr)


@dataclass
class PlateField:
    """Displacements and velocities at plate nodes (ring values are zero)."""
    w: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    wt: np.ndarray
    u1t: np.ndarray
    u2t: np.ndarray

    @classmethod
    def zeros(cls, plate):
        s = (plate.nx, plate.ny)
        return cls(*(np.zeros(s) for _ in range(6)))

    def copy(self):
        return PlateField(self.w.copy(), self.u1.copy(), self.u2.copy(),
                          self.wt.copy(), self.u1t.copy(), self.u2t.copy())

    def displacements(self):
        return self.u1, self.u2, self.w

    def velocities(self):
        return self.u1t, self.u2t, self.wt


# ---------------------------------------------------------------------------
# stencil operators of the module API
# ---------------------------------------------------------------------------

def discrete_div(grid, vf):
    """Conservative staggered divergence at cell centers."""
    hx, hy, hz = grid.hx, grid.hy, grid.hz
    return ((vf.v1[1:, :, :] - vf.v1[:-1, :, :]) / hx
            + (vf.v2[:, 1:, :] - vf.v2[:, :-1, :]) / hy
            + (vf.v3[:, :, 1:] - vf.v3[:, :, :-1]) / hz)


def discrete_grad_p(grid, p):
    """Compact pressure gradient on interior faces (zero on boundary faces).

    Satisfies <grad p, v> = -<p, div v> exactly for interior-supported v
    under the face/cell quadrature weights.
    """
    g1 = np.zeros(grid.shape_v1)
    g2 = np.zeros(grid.shape_v2)
    g3 = np.zeros(grid.shape_v3)
    g1[1:-1, :, :] = (p[1:, :, :] - p[:-1, :, :]) / grid.hx
    g2[:, 1:-1, :] = (p[:, 1:, :] - p[:, :-1, :]) / grid.hy
    g3[:, :, 1:-1] = (p[:, :, 1:] - p[:, :, :-1]) / grid.hz
    return g1, g2, g3


def vector_laplacian(grid, vf):
    """Componentwise 7-point Laplacian with linear-reflection ghosts for the
    no-slip walls and the stored interface trace at z=0.  Stencil operator
    only; the solvers use the symmetric-stress form."""
    out = []
    for comp, arr in (("v1", vf.v1), ("v2", vf.v2), ("v3", vf.v3)):
        out.append(_lap7(grid, comp, arr, vf.trace))
    return tuple(out)


def _lap7(grid, comp, a, trace):
    # tangential walls use linear reflection to the wall value (0 on S, trace
    # on the top face); normal boundaries extrapolate through the stored
    # Dirichlet face values.
    hx, hy, hz = grid.hx, grid.hy, grid.hz
    ext = np.zeros((a.shape[0] + 2, a.shape[1] + 2, a.shape[2] + 2))
    ext[1:-1, 1:-1, 1:-1] = a
    if comp == "v1":
        ext[0, 1:-1, 1:-1] = 2 * a[0, :, :] - a[1, :, :]
        ext[-1, 1:-1, 1:-1] = 2 * a[-1, :, :] - a[-2, :, :]
        ext[1:-1, 0, 1:-1] = -a[:, 0, :]
        ext[1:-1, -1, 1:-1] = -a[:, -1, :]
        ext[1:-1, 1:-1, 0] = -a[:, :, 0]
        top = trace[0] if trace is not None else None
        t = 0.0 if top is None else _u_to_xedge(top)
        ext[1:-1, 1:-1, -1] = 2 * t - a[:, :, -1]
    elif comp == "v2":
        ext[1:-1, 0, 1:-1] = 2 * a[:, 0, :] - a[:, 1, :]
        ext[1:-1, -1, 1:-1] = 2 * a[:, -1, :] - a[:, -2, :]
        ext[0, 1:-1, 1:-1] = -a[0, :, :]
        ext[-1, 1:-1, 1:-1] = -a[-1, :, :]
        ext[1:-1, 1:-1, 0] = -a[:, :, 0]
        top = trace[1] if trace is not None else None
        t = 0.0 if top is None else _u_to_yedge(top)
        ext[1:-1, 1:-1, -1] = 2 * t - a[:, :, -1]
    else:
        ext[1:-1, 1:-1, 0] = 2 * a[:, :, 0] - a[:, :, 1]
        ext[1:-1, 1:-1, -1] = 2 * a[:, :, -1] - a[:, :, -2]
        ext[0, 1:-1, 1:-1] = -a[0, :, :]
        ext[-1, 1:-1, 1:-1] = -a[-1, :, :]
        ext[1:-1, 0, 1:-1] = -a[:, 0, :]
        ext[1:-1, -1, 1:-1] = -a[:, -1, :]
    core = ext[1:-1, 1:-1, 1:-1]
    return ((ext[2:, 1:-1, 1:-1] - 2 * core + ext[:-2, 1:-1, 1:-1]) / hx ** 2
            + (ext[1:-1, 2:, 1:-1] - 2 * core + ext[1:-1, :-2, 1:-1]) / hy ** 2
            + (ext[1:-1, 1:-1, 2:] - 2 * core + ext[1:-1, 1:-1, :-2]) / hz ** 2)


def _u_to_xedge(u):
    """Plate-node field -> v1 trace locations (x-edges of the top face)."""
    nx, ny = u.shape
    out = np.zeros((nx + 1, ny))
    out[1:-1, :] = 0.5 * (u[1:, :] + u[:-1, :])
    return out


def _u_to_yedge(u):
    nx, ny = u.shape
    out = np.zeros((nx, ny + 1))
    out[:, 1:-1] = 0.5 * (u[:, 1:] + u[:, :-1])
    return out


def _xedge_to_u_adjoint(e):
    """Transpose of _u_to_xedge: distributes edge values back to nodes."""
    nx, ny = e.shape[0] - 1, e.shape[1]
    out = np.zeros((nx, ny))
    out[1:, :] += 0.5 * e[1:-1, :]
    out[:-1, :] += 0.5 * e[1:-1, :]
    return out


def _yedge_to_u_adjoint(e):
    nx, ny = e.shape[0], e.shape[1] - 1
    out = np.zeros((nx, ny))
    out[:, 1:] += 0.5 * e[:, 1:-1]
    out[:, :-1] += 0.5 * e[:, 1:-1]
    return out


def biharmonic(plate, w):
    """13-point clamped biharmonic stencil (Laplacian applied twice)."""
    return plate.ops.biharmonic(w)


def trace_to_plate(grid, plate, vf):
    """Interface velocity of a fluid field as plate-node components.

    The third component is read off the top faces directly; the in-plane
    components are the stored trace data (boundary data is canonical, so the
    round trip with lift_to_topface is the identity).
    """
    if vf.v3.shape != grid.shape_v3:
        raise GridError("fluid field does not match grid")
    t3 = vf.v3[:, :, -1].copy()
    if vf.trace is not None:
        t1, t2 = vf.trace[0].copy(), vf.trace[1].copy()
    else:
        t1 = np.zeros((plate.nx, plate.ny))
        t2 = np.zeros((plate.nx, plate.ny))
    return t1, t2, t3


def lift_to_topface(grid, plate, b):
    """Plate vector field -> fluid boundary data on the top face.

    Returns the canonical plate-node representation; solvers interpolate the
    in-plane components to their edge locations internally.
    """
    b1, b2, b3 = (np.asarray(x) for x in b)
    if b3.shape != (plate.nx, plate.ny):
        raise GridError("plate field does not match grid")
    return b1.copy(), b2.copy(), b3.copy()


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def fluid_norms(grid, vf):
    """(L2, H1) of a fluid velocity; H1 = sqrt(L2^2 + E(v,v)) with E the
    symmetric-gradient form."""
    ops = grid.ops
    z = grid.slots_from_fields(vf.v1, vf.v2, vf.v3,
                               None if vf.trace is None else _u_to_xedge(vf.trace[0]),
                               None if vf.trace is None else _u_to_yedge(vf.trace[1]))
    l2sq = float(np.dot(z * ops.mass, z))
    h1sq = l2sq + ops.energy_form(z, z)
    return np.sqrt(l2sq), np.sqrt(h1sq)


def plate_norms(plate, u):
    """(L2, H1, H2) discrete norms of a plate scalar field."""
    ops = plate.ops
    v = np.asarray(u).ravel()
    a = plate.node_area
    l2sq = a * float(v @ v)
    gx, gy = ops.gw_x @ v, ops.gw_y @ v
    h1sq = l2sq + a * float(gx @ gx + gy @ gy)
    lap = ops.lap_c @ v
    h2sq = h1sq + a * float(lap @ lap)
    return np.sqrt(l2sq), np.sqrt(h1sq), np.sqrt(h2sq)


def plate_mean(plate, w):
    """Discrete mean over the plate (quadrature sum / area)."""
    return float(np.sum(w) * plate.node_area / plate.area)
