"""Binary snapshot files, the run manifest, and CSV plot-data emission.

A snapshot is a fixed 76-byte header followed by four row-major little-
endian float64 payloads (q, psi, u1, u2), each ny*nx values with NaN at
exterior nodes.  The format is deliberately dumb so any language can read
it; round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Domain, ScalarField, VectorField, build_domain

MAGIC = b"QGFS"
FORMAT_VERSION = 1
_SHAPE_TAGS = {"rectangle": 0, "disk": 1}
_TAG_SHAPES = {v: k for k, v in _SHAPE_TAGS.items()}
_HEADER = struct.Struct("<4sIIII7d")       # magic, version, shape, nx, ny,
                                           # geo[4], t, l, beta
HEADER_BYTES = _HEADER.size
FIELD_NAMES = ("q", "psi", "u1", "u2")


@dataclass
class Snapshot:
    domain: Domain
    q: ScalarField
    psi: ScalarField
    u: VectorField
    t: float
    l: float
    beta: float


def _geo_params(domain: Domain):
    if domain.shape == "rectangle":
        return (domain.params["lx"], domain.params["ly"], 0.0, 0.0)
    return (domain.params["cx"], domain.params["cy"],
            domain.params["radius"], 0.0)


def write_snapshot(path, domain: Domain, q: ScalarField, psi: ScalarField,
                   u: VectorField, t: float, l: float, beta: float):
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, _SHAPE_TAGS[domain.shape],
                          domain.nx, domain.ny, *_geo_params(domain),
                          float(t), float(l), float(beta))
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in (q.values, psi.values, u.u, u.v):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_snapshot(path, domain: Domain | None = None) -> Snapshot:
    """Read a snapshot; the domain is rebuilt from the header unless one is
    supplied (grids are cheap but reuse keeps solver caches warm)."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_BYTES:
        raise ValueError(f"{path}: truncated snapshot header")
    magic, version, shape_tag, nx, ny, g0, g1, g2, _g3, t, l, beta = \
        _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    expected = HEADER_BYTES + 4 * nx * ny * 8
    if len(raw) != expected:
        raise ValueError(f"{path}: payload length {len(raw) - HEADER_BYTES} "
                         f"!= 4*nx*ny*8 = {expected - HEADER_BYTES}")
    if domain is None:
        shape = _TAG_SHAPES[shape_tag]
        if shape == "rectangle":
            domain = build_domain("rectangle", nx=nx, ny=ny, lx=g0, ly=g1)
        else:
            domain = build_domain("disk", nx=nx, ny=ny, radius=g2,
                                  center=(g0, g1))
    elif (domain.nx, domain.ny) != (nx, ny):
        raise ValueError(f"{path}: domain mismatch")
    fields = []
    off = HEADER_BYTES
    for _ in FIELD_NAMES:
        arr = np.frombuffer(raw, dtype="<f8", count=nx * ny,
                            offset=off).reshape(ny, nx).copy()
        fields.append(arr)
        off += nx * ny * 8
    qv, pv, u1, u2 = fields
    return Snapshot(domain=domain,
                    q=ScalarField(domain, qv, t=t),
                    psi=ScalarField(domain, pv, t=t),
                    u=VectorField(domain, u1, u2),
                    t=t, l=l, beta=beta)


# ----------------------------------------------------------------------
# manifest


MANIFEST_NAME = "manifest.json"


def write_manifest(outdir, config_echo, snapshots, window_iterations,
                   metric_trace, wall_seconds, diagnostics_summary,
                   complete):
    """Write the run manifest; ``snapshots`` is a list of (file, t, l)."""
    doc = {
        "format": "qgfs-manifest",
        "version": 1,
        "config": config_echo,
        "windows": {"iterations": list(window_iterations),
                    "metric_trace": [list(m) for m in metric_trace]},
        "timings": {"wall_seconds": wall_seconds},
        "diagnostics": diagnostics_summary,
        "snapshots": [{"file": f, "t": t, "l": l} for f, t, l in snapshots],
        "complete": bool(complete),
    }
    path = Path(outdir) / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(outdir):
    path = Path(outdir) / MANIFEST_NAME
    doc = json.loads(path.read_text())
    if doc.get("format") != "qgfs-manifest":
        raise ValueError(f"{path}: not a run manifest")
    return doc


def verify_manifest(outdir):
    """Both directions: every listed snapshot exists, every snapshot file on
    disk is listed.  Returns a list of problem strings (empty = good)."""
    outdir = Path(outdir)
    doc = read_manifest(outdir)
    problems = []
    listed = {s["file"] for s in doc["snapshots"]}
    on_disk = {p.name for p in outdir.glob("snapshot_*.bin")}
    for missing in sorted(listed - on_disk):
        problems.append(f"listed snapshot missing from disk: {missing}")
    for stray in sorted(on_disk - listed):
        problems.append(f"snapshot on disk not in manifest: {stray}")
    if not doc.get("complete", False):
        problems.append("manifest flagged incomplete")
    return problems


def write_history(outdir, history, wall_seconds=0.0,
                  diagnostics_summary=None, complete=True):
    """Persist a RunHistory as snapshot files plus the manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k in range(len(history)):
        t, q, psi, u, l = history.snapshot(k)
        name = f"snapshot_{k:06d}.bin"
        write_snapshot(outdir / name, history.domain, q, psi, u, t, l,
                       history.beta)
        entries.append((name, float(t), float(l)))
    write_manifest(outdir, _config_echo(history.config), entries,
                   history.window_iterations, history.metric_trace,
                   wall_seconds, diagnostics_summary or {}, complete)
    return entries


def _config_echo(config):
    if config is None:
        return {}
    echo = {
        "domain": dict(config.domain_spec),
        "T": config.T, "dt": config.dt, "t_w": config.t_w,
        "beta": config.beta, "outer_tol": config.outer_tol,
        "max_outer": config.max_outer,
        "interpolation": config.interpolation,
        "time_interp": config.time_interp,
        "out_cadence": config.out_cadence,
        "linear": {"tolerance": config.linear.tolerance,
                   "max_iterations": config.linear.max_iterations,
                   "method": config.linear.method},
        "forcing": {"mode": config.forcing.mode},
    }
    for key in ("f", "Fx", "Fy"):
        expr = getattr(getattr(config.forcing, key, None), "expression", None)
        if expr is not None:
            echo["forcing"][key] = expr
    for key in ("psi0", "q0"):
        fn = getattr(config, key)
        if fn is not None and getattr(fn, "expression", None):
            echo[key] = fn.expression
    return echo


# ----------------------------------------------------------------------
# plot data


def emit_plot_data(target, what, outdir, field="q", prefix="plot"):
    """CSV emission for downstream plotting; no binary dependencies.

    what = "field": one CSV per snapshot with (x, y, value) rows over
    interior+boundary nodes.  what = "trace": (k, rho, e) of a Picard trace.
    what = "extrema": (t, q_min, q_max, bound) of an extrema series.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if what == "field":
        history = target
        dom = history.domain
        m = dom.valued_mask
        xs, ys = dom.X[m], dom.Y[m]
        for k in range(len(history)):
            t, q, psi, u, l = history.snapshot(k)
            vals = {"q": q.values, "psi": psi.values,
                    "u1": u.u, "u2": u.v}[field][m]
            path = outdir / f"{prefix}_{field}_{k:06d}.csv"
            _write_csv(path, ["x", "y", "value"],
                       np.column_stack([xs, ys, vals]))
            written.append(path)
    elif what == "trace":
        trace = target
        path = outdir / f"{prefix}_trace.csv"
        rows = np.column_stack([trace.ks, trace.rho, trace.e])
        _write_csv(path, ["k", "rho", "e"], rows)
        written.append(path)
    elif what == "extrema":
        series = target
        path = outdir / f"{prefix}_extrema.csv"
        rows = np.column_stack([series.times, series.q_min, series.q_max,
                                series.bound])
        _write_csv(path, ["t", "q_min", "q_max", "bound"], rows)
        written.append(path)
    else:
        raise ValueError(f"unknown plot-data target {what!r}")
    return written


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(rows):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
