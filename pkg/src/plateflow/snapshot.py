"""Snapshot file format: one JSON header line, then the raw float64 arrays.

Field order (little-endian float64, C order), documented for external
consumers:

  v1, v2, v3, p, trace1, trace2, trace3,
  w, u1, u2, wt, u1t, u2t

The header records the grid metadata, the snapshot time and a parameter
hash, plus the shapes in the same order.
"""

import hashlib
import json
import numpy as np

from .grid import FluidField, PlateField

FORMAT_VERSION = 1
FIELD_ORDER = ["v1", "v2", "v3", "p", "trace1", "trace2", "trace3",
               "w", "u1", "u2", "wt", "u1t", "u2t"]


def params_hash(params):
    g = params.geometry
    blob = json.dumps({
        "lx": g.lx, "ly": g.ly, "depth": g.depth,
        "nx": g.nx, "ny": g.ny, "nz": g.nz,
        "nu": params.nu, "mu": params.mu, "dt": params.dt,
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _state_arrays(state):
    f, p = state.fluid, state.plate
    tr = f.trace if f.trace is not None else (np.zeros_like(p.w),) * 3
    return [f.v1, f.v2, f.v3, f.p, tr[0], tr[1], tr[2],
            p.w, p.u1, p.u2, p.wt, p.u1t, p.u2t]


def save_state(path, state, params):
    arrays = [np.ascontiguousarray(a, dtype="<f8") for a in _state_arrays(state)]
    header = {
        "format": "plateflow-snapshot",
        "version": FORMAT_VERSION,
        "time": state.time,
        "params_hash": params_hash(params),
        "geometry": {
            "lx": params.geometry.lx, "ly": params.geometry.ly,
            "depth": params.geometry.depth, "nx": params.geometry.nx,
            "ny": params.geometry.ny, "nz": params.geometry.nz,
        },
        "fields": FIELD_ORDER,
        "shapes": [list(a.shape) for a in arrays],
        "dtype": "<f8",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for a in arrays:
            fh.write(a.tobytes())


def load_state(path, system):
    from .coupling import CoupledState
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("format") != "plateflow-snapshot":
            raise ValueError(f"{path} is not a plateflow snapshot")
        if header["params_hash"] != params_hash(system.params):
            raise ValueError("snapshot parameter hash does not match the "
                             "configured system")
        arrays = []
        for shape in header["shapes"]:
            n = int(np.prod(shape))
            buf = fh.read(8 * n)
            arrays.append(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
    (v1, v2, v3, p, t1, t2, t3, w, u1, u2, wt, u1t, u2t) = arrays
    fluid = FluidField(v1, v2, v3, p, (t1, t2, t3))
    plate = PlateField(w, u1, u2, wt, u1t, u2t)
    return CoupledState(fluid, plate, float(header["time"]))
