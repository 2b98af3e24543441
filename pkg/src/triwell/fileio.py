"""File formats and atomic writers for run outputs.

All text outputs are CSV with floats printed to 17 significant digits, so
values round-trip exactly and repeated deterministic runs produce
bit-identical files.  Every write goes through a temp-file-plus-rename, so
an interrupted run never leaves a truncated file that parses.

Restart files are binary: one ASCII header line followed by the two
displacement coefficient arrays as little-endian float64 in C order.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .errors import SpecFileError


def fmt(x):
    return format(float(x), ".17g")


def atomic_write_text(path, text):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, blob):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# CSV formats
# ---------------------------------------------------------------------------
ENERGY_HEADER = "step,t_half,kinetic,internal,total,dissipation,newton_iters"


def energy_csv_text(ledger):
    lines = [ENERGY_HEADER]
    for r in ledger.records:
        lines.append(
            f"{r.step},{fmt(r.t_half)},{fmt(r.kinetic)},{fmt(r.internal)},"
            f"{fmt(r.total)},{fmt(r.dissipation)},{r.newton_iters}"
        )
    return "\n".join(lines) + "\n"


def write_energy_csv(path, ledger):
    atomic_write_text(path, energy_csv_text(ledger))


def read_energy_csv(path):
    with open(path) as f:
        header = f.readline().strip()
        if header != ENERGY_HEADER:
            raise SpecFileError(f"{path}: unexpected energy CSV header")
        rows = [line.strip().split(",") for line in f if line.strip()]
    return rows


def write_field_csv(path, points, u):
    lines = ["X1,X2,X3,u1,u2,u3"]
    for X, v in zip(points, u):
        lines.append(",".join(fmt(x) for x in (*X, *v)))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_snapshot_csv(path, snapshot):
    lines = ["X1,X2,X3,u1,u2,u3,e2,e3,phase"]
    pts = snapshot["points"]
    u = snapshot["u"]
    e2 = snapshot["e2"]
    e3 = snapshot["e3"]
    ph = snapshot["phase"]
    for i in range(pts.shape[0]):
        lines.append(
            ",".join(fmt(x) for x in (*pts[i], *u[i], e2[i], e3[i]))
            + f",{ph[i]}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


SWEEP_HEADER = (
    "eta,E11,E22,E33,E23,E13,E12,S11,S22,S33,S23,S13,S12,Psi_bar,newton_iters"
)


def sweep_csv_text(response):
    lines = []
    for row in response.D:
        lines.append("# D = " + " ".join(f"{v:.6f}" for v in row))
    lines.append(SWEEP_HEADER)
    for r in response.records:
        E, S = r.Ebar, r.Sbar
        vals = [
            r.eta,
            E[0, 0], E[1, 1], E[2, 2], E[1, 2], E[0, 2], E[0, 1],
            S[0, 0], S[1, 1], S[2, 2], S[1, 2], S[0, 2], S[0, 1],
            r.Psibar,
        ]
        lines.append(",".join(fmt(v) for v in vals) + f",{r.newton_iters}")
    return "\n".join(lines) + "\n"


def write_sweep_csv(path, response):
    atomic_write_text(path, sweep_csv_text(response))


def write_newton_trace_csv(path, history):
    """Per-iteration residual norms: ``step,iter,residual_norm`` rows."""
    lines = ["step,iter,residual_norm"]
    for step, it, norm in history:
        lines.append(f"{step},{it},{fmt(norm)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_convergence_csv(path, rows, slope):
    lines = ["dt,l2_error,slope"]
    for dt, err in rows:
        lines.append(f"{fmt(dt)},{fmt(err)},{fmt(slope)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_histogram_csv(path, columns, histograms, dnf):
    """Iteration-count histogram: rows are counts, columns scheme@dt cells.

    ``histograms`` maps column -> {iters: count}; ``dnf`` maps column ->
    step index of the failure (or None).
    """
    all_iters = sorted({n for h in histograms.values() for n in h})
    lines = ["iters," + ",".join(columns)]
    for n in all_iters:
        cells = [str(histograms[c].get(n, "")) for c in columns]
        lines.append(f"{n}," + ",".join(cells))
    lines.append(
        "DNF," + ",".join("" if dnf.get(c) is None else str(dnf[c]) for c in columns)
    )
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# restart files
# ---------------------------------------------------------------------------
RESTART_MAGIC = "triwell-restart v1"


def write_restart(path, space, states, step):
    d = space.dofs_per_axis
    header = (
        f"{RESTART_MAGIC} elements={space.n_elements[0]} "
        f"periodic={1 if space.periodic else 0} "
        f"dofs={d[0]} {d[1]} {d[2]} dt={fmt(states.dt)} step={step}\n"
    )
    blob = header.encode("ascii")
    blob += np.ascontiguousarray(states.u_prev, dtype="<f8").tobytes()
    blob += np.ascontiguousarray(states.u_curr, dtype="<f8").tobytes()
    atomic_write_bytes(path, blob)


def read_restart(path):
    """Returns (meta dict, u_prev, u_curr)."""
    import re

    with open(path, "rb") as f:
        header = f.readline().decode("ascii").strip()
        if not header.startswith(RESTART_MAGIC):
            raise SpecFileError(f"{path}: not a restart file")
        raw = f.read()
    # header grammar: elements=N periodic=P dofs=D1 D2 D3 dt=DT step=S
    m = re.match(
        r"elements=(\d+) periodic=([01]) dofs=(\d+) (\d+) (\d+) "
        r"dt=(\S+) step=(\d+)",
        header[len(RESTART_MAGIC):].strip(),
    )
    if not m:
        raise SpecFileError(f"{path}: malformed restart header")
    meta = {
        "elements": int(m.group(1)),
        "periodic": bool(int(m.group(2))),
        "dofs": (int(m.group(3)), int(m.group(4)), int(m.group(5))),
        "dt": float(m.group(6)),
        "step": int(m.group(7)),
    }
    d = meta["dofs"]
    count = d[0] * d[1] * d[2] * 3
    expect = 2 * count * 8
    if len(raw) != expect:
        raise SpecFileError(
            f"{path}: payload has {len(raw)} bytes, expected {expect}"
        )
    arr = np.frombuffer(raw, dtype="<f8")
    u_prev = arr[:count].reshape(d + (3,)).copy()
    u_curr = arr[count:].reshape(d + (3,)).copy()
    return meta, u_prev, u_curr


def output_root(default_dir):
    """Run-output directory, honoring the TRIWELL_OUTPUT_ROOT override."""
    root = os.environ.get("TRIWELL_OUTPUT_ROOT")
    if root:
        return os.path.join(root, os.path.basename(os.path.normpath(default_dir)))
    return default_dir
