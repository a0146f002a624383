"""Run configuration: INI (key = value sections) or JSON, same schema.

Sections and fields (defaults in parentheses):

  [geometry]     lx, ly, depth, nx, ny, nz            -- required
  [physics]      nu, mu                               -- required
  [forcing]      gfl = "0 0 0" | three floats         (zero)
                 g1, g2, g3 = float | "coscos:AMP" | "bump:AMP"   (zero)
  [numerics]     dt, t_end                            -- required
                 tol_couple (1e-8), tol_linear (1e-10),
                 picard_max (50), burn_steps (0), burn_dt (0.02)
  [diagnostics]  eta (0.1 min(nu,1)), omega ("0.1 0.5"),
                 snapshot_stride (1), R0 (none -> auto), output_dir,
                 verify_grids ("16 32 64")
  [initial]      w0 = "bump:AMP" | "zero" | "snapshot:PATH"  (zero)
                 w1 = "bump:AMP" | "zero"                    (zero)

Profiles: "bump:A" is the clamped zero-mean two-mode bump; "coscos:A" is
A cos(2*pi*x/lx) cos(2*pi*y/ly) (zero-mean static load shape).
"""

import configparser
import json
import os
import numpy as np
from dataclasses import dataclass, field

from .coupling import ModelParams, System, bump_profile
from .grid import BoxGeometry


class ConfigError(ValueError):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


_REQUIRED = {
    "geometry": ["lx", "ly", "depth", "nx", "ny", "nz"],
    "physics": ["nu", "mu"],
    "numerics": ["dt", "t_end"],
}


@dataclass
class RunConfig:
    sections: dict
    path: str = ""

    # -- raw access ----------------------------------------------------------

    def get(self, section, key, default=None, required=False, cast=float):
        sec = self.sections.get(section, {})
        if key not in sec:
            if required:
                raise ConfigError(
                    f"missing required field '{key}' in section "
                    f"[{section}]", field=key)
            return default
        val = sec[key]
        if cast is None or val is None:
            return val
        try:
            if cast is bool and isinstance(val, str):
                return val.strip().lower() in ("1", "true", "yes", "on")
            return cast(val)
        except (TypeError, ValueError):
            raise ConfigError(
                f"field '{key}' in [{section}] has invalid value {val!r}",
                field=key)

    # -- builders -------------------------------------------------------------

    def geometry(self):
        g = {k: self.get("geometry", k, required=True,
                         cast=int if k in ("nx", "ny", "nz") else float)
             for k in _REQUIRED["geometry"]}
        return BoxGeometry(**g)

    def params(self):
        geo = self.geometry()
        nu = self.get("physics", "nu", required=True)
        mu = self.get("physics", "mu", required=True)
        dt = self.get("numerics", "dt", required=True)
        t_end = self.get("numerics", "t_end", required=True)
        if dt <= 0 or t_end <= 0:
            raise ConfigError("dt and t_end must be positive", field="dt")
        omega = _floats(self.get("diagnostics", "omega", "0.1 0.5", cast=str))
        p = ModelParams(
            geometry=geo, nu=nu, mu=mu, dt=dt,
            tol_couple=self.get("numerics", "tol_couple", 1e-8),
            tol_linear=self.get("numerics", "tol_linear", 1e-10),
            picard_max=self.get("numerics", "picard_max", 50, cast=int),
            eta=self.get("diagnostics", "eta", None),
            omega=tuple(omega),
            snapshot_stride=self.get("diagnostics", "snapshot_stride", 1,
                                     cast=int),
        )
        self.t_end = t_end
        return p

    def forcing(self, plate):
        gfl = self.get("forcing", "gfl", None, cast=str)
        G_fl = None
        if gfl is not None:
            comps = _floats(gfl)
            if len(comps) != 3:
                raise ConfigError("gfl needs three components", field="gfl")
            if any(c != 0.0 for c in comps):
                G_fl = tuple(comps)
        parts = []
        for key in ("g1", "g2", "g3"):
            spec = self.sections.get("forcing", {}).get(key, 0.0)
            parts.append(_plate_profile(plate, spec, key))
        G_pl = None
        if any(np.any(np.asarray(p) != 0.0) for p in parts):
            G_pl = tuple(parts)
        return {"G_fl": G_fl, "G_pl": G_pl}

    def initial_state(self, system):
        from .snapshot import load_state
        pg = system.plate_grid
        w0_spec = self.get("initial", "w0", "zero", cast=str)
        w1_spec = self.get("initial", "w1", "zero", cast=str)
        if isinstance(w0_spec, str) and w0_spec.startswith("snapshot:"):
            return load_state(w0_spec.split(":", 1)[1], system)
        z = np.zeros((pg.nx, pg.ny))
        w0 = _plate_profile(pg, w0_spec, "w0")
        w1 = _plate_profile(pg, w1_spec, "w1")
        state = system.make_initial_state(
            u0_spec=(z, z, w0), u1_spec=(z, z, w1))
        burn = self.get("numerics", "burn_steps", 0, cast=int)
        if burn > 0:
            burn_dt = self.get("numerics", "burn_dt", 0.02)
            sys_b = System(_with_dt(system.params, burn_dt)) \
                if burn_dt != system.params.dt else system
            for _ in range(burn):
                state, _ = sys_b.advance(state)
            state.time = 0.0
        return state

    def output_dir(self, override=None):
        cand = (override
                or os.environ.get("PLATEFLOW_OUTPUT_DIR")
                or self.get("diagnostics", "output_dir", "plateflow_out",
                            cast=str))
        return cand

    def verify_grids(self):
        return [int(v) for v in
                _floats(self.get("diagnostics", "verify_grids", "16 32 64",
                                 cast=str))]


def _with_dt(params, dt):
    import dataclasses
    return dataclasses.replace(params, dt=dt)


def _floats(s):
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    return [float(v) for v in str(s).replace(",", " ").split()]


def _plate_profile(plate, spec, key):
    """Constant, 'bump:A', 'coscos:A', or an array."""
    if spec is None:
        return np.zeros((plate.nx, plate.ny))
    if isinstance(spec, np.ndarray):
        return spec
    if isinstance(spec, (int, float)):
        return np.full((plate.nx, plate.ny), float(spec))
    s = str(spec).strip()
    if s in ("zero", "0", "none"):
        return np.zeros((plate.nx, plate.ny))
    if ":" in s:
        name, amp = s.split(":", 1)
        try:
            amp = float(amp)
        except ValueError:
            raise ConfigError(f"bad amplitude in '{spec}' for {key}",
                              field=key)
        if name == "bump":
            return bump_profile(plate, amp)
        if name == "coscos":
            X, Y = plate.meshgrid()
            lx, ly = plate.geometry.lx, plate.geometry.ly
            return amp * np.cos(2 * np.pi * X / lx) * np.cos(2 * np.pi * Y / ly)
        raise ConfigError(f"unknown profile '{name}' for {key}", field=key)
    try:
        return np.full((plate.nx, plate.ny), float(s))
    except ValueError:
        raise ConfigError(f"cannot parse '{spec}' for {key}", field=key)


def load_config(path):
    """Parse an INI or JSON config file into a RunConfig."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    text = open(path).read()
    if path.endswith(".json") or text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON config: {e}")
        sections = {k: dict(v) for k, v in raw.items()}
    else:
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"invalid config: {e}")
        sections = {s: dict(cp.items(s)) for s in cp.sections()}
    cfg = RunConfig(sections=sections, path=path)
    for sec, keys in _REQUIRED.items():
        for k in keys:
            if k not in cfg.sections.get(sec, {}):
                raise ConfigError(
                    f"missing required field '{k}' in section [{sec}]",
                    field=k)
    return cfg
