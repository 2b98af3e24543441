import numpy as np
import pytest

from triwell import fileio
from triwell.cli import (
    EXIT_OK,
    EXIT_USAGE,
    RunSpec,
    cmd_check,
    main,
    parse_spec,
)
from triwell.dynamics import StatePair
from triwell.errors import SpecFileError
from triwell.splines import make_uniform_space

BASE_SPEC = """
[mesh]
elements = 3

[time]
dt = 1e-3
t_end = 5e-3
switch_threshold = 0
steady_threshold = 0

[ic]
elements = 3
amplitude = 1e-2

[output]
directory = {out}
snapshot_times =
"""


def write_spec(tmp_path, text, name="run.spec"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ---------------------------------------------------------------------------
# spec parsing
# ---------------------------------------------------------------------------
def test_spec_roundtrip(tmp_path):
    spec = RunSpec()
    path = write_spec(tmp_path, spec.to_text())
    again = parse_spec(path)
    assert again.mesh_elements == spec.mesh_elements
    assert again.scheme == spec.scheme
    assert again.dt == spec.dt and again.t_end == spec.t_end
    assert again.material == spec.material
    assert again.newton == spec.newton
    path2 = write_spec(tmp_path, again.to_text(), "again.spec")
    assert parse_spec(path2).to_text() == again.to_text()


def test_spec_rejects_unknown_key(tmp_path):
    path = write_spec(tmp_path, "[mesh]\nelements = 4\nwibble = 3\n")
    with pytest.raises(SpecFileError) as err:
        parse_spec(path)
    assert "wibble" in str(err.value) and "mesh" in str(err.value)


def test_spec_rejects_bad_number(tmp_path):
    path = write_spec(tmp_path, "[time]\ndt = fast\n")
    with pytest.raises(SpecFileError) as err:
        parse_spec(path)
    assert "dt" in str(err.value)


def test_spec_rejects_nonpositive_dt(tmp_path, monkeypatch):
    out = tmp_path / "out"
    path = write_spec(tmp_path, f"[time]\ndt = -1e-3\n[output]\ndirectory = {out}\n")
    code = main(["run", path])
    assert code == EXIT_USAGE
    assert not out.exists()  # nothing written on validation failure


def test_missing_spec_is_usage_error(tmp_path):
    assert main(["run", str(tmp_path / "nope.spec")]) == EXIT_USAGE


# ---------------------------------------------------------------------------
# run command
# ---------------------------------------------------------------------------
def test_cmd_run_end_to_end(tmp_path):
    out = tmp_path / "out"
    path = write_spec(tmp_path, BASE_SPEC.format(out=out))
    assert main(["run", path]) == EXIT_OK
    energy = out / "energy.csv"
    assert energy.exists()
    rows = fileio.read_energy_csv(energy)
    assert len(rows) == 5  # t_end / dt steps, one row per step
    totals = [float(r[4]) for r in rows]
    assert all(b <= a + 1e-15 for a, b in zip(totals, totals[1:]))
    meta, u_prev, u_curr = fileio.read_restart(out / "restart.bin")
    assert meta["elements"] == 3 and meta["dofs"] == (5, 5, 5)

    # determinism: identical spec produces a bit-identical ledger
    first = energy.read_bytes()
    assert main(["run", path]) == EXIT_OK
    assert energy.read_bytes() == first


def test_cmd_run_writes_snapshots(tmp_path):
    out = tmp_path / "out"
    text = BASE_SPEC.format(out=out).replace(
        "snapshot_times =", "snapshot_times = 3e-3"
    ) + "snapshot_samples = 4\n"
    path = write_spec(tmp_path, text)
    assert main(["run", path]) == EXIT_OK
    snap = out / "snapshot_t0.003.csv"
    assert snap.exists()
    header = snap.read_text().splitlines()[0]
    assert header == "X1,X2,X3,u1,u2,u3,e2,e3,phase"


def test_output_root_override(tmp_path, monkeypatch):
    monkeypatch.setenv("TRIWELL_OUTPUT_ROOT", str(tmp_path / "root"))
    assert fileio.output_root("some/dir") == str(tmp_path / "root" / "dir")
    monkeypatch.delenv("TRIWELL_OUTPUT_ROOT")
    assert fileio.output_root("some/dir") == "some/dir"


# ---------------------------------------------------------------------------
# converge / compare
# ---------------------------------------------------------------------------
def test_cmd_converge_small(tmp_path):
    out = tmp_path / "out"
    path = write_spec(tmp_path, BASE_SPEC.format(out=out))
    code = main([
        "converge", path, "--dt", "2.5e-3", "--dt", "1.25e-3",
        "--dt", "6.25e-4", "--reference", "2.5e-4",
    ])
    assert code == EXIT_OK
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0] == "dt,l2_error,slope"
    assert len(lines) == 4


def test_cmd_converge_single_dt_is_usage_error(tmp_path):
    out = tmp_path / "out"
    path = write_spec(tmp_path, BASE_SPEC.format(out=out))
    code = main(["converge", path, "--dt", "1e-3", "--reference", "2.5e-4"])
    assert code == EXIT_USAGE


def test_cmd_run_newton_trace(tmp_path):
    out = tmp_path / "out"
    text = BASE_SPEC.format(out=out) + "newton_trace = true\n"
    path = write_spec(tmp_path, text)
    assert main(["run", path]) == EXIT_OK
    lines = (out / "newton_trace.csv").read_text().splitlines()
    assert lines[0] == "step,iter,residual_norm"
    assert len(lines) > 5


def test_cmd_compare_zero_steps(tmp_path):
    out = tmp_path / "out"
    text = BASE_SPEC.format(out=out).replace("t_end = 5e-3", "t_end = 1e-4")
    path = write_spec(tmp_path, text)
    code = main(["compare", path, "--scheme", "taylor_full", "--dt", "1e-3"])
    assert code == EXIT_OK
    lines = (out / "compare.csv").read_text().splitlines()
    assert lines[0].startswith("iters,")
    assert lines[-1].startswith("DNF,")


def test_cmd_compare_histogram(tmp_path):
    out = tmp_path / "out"
    path = write_spec(tmp_path, BASE_SPEC.format(out=out))
    code = main([
        "compare", path,
        "--scheme", "taylor_full", "--scheme", "gonzalez",
        "--dt", "1e-3",
    ])
    assert code == EXIT_OK
    lines = (out / "compare.csv").read_text().splitlines()
    assert lines[0] == "iters,taylor_full@dt=0.001,gonzalez@dt=0.001"
    counts = {}
    for line in lines[1:-1]:
        parts = line.split(",")
        counts[parts[0]] = [int(v) for v in parts[1:] if v]
    assert sum(sum(v) for v in counts.values()) == 2 * 5  # two runs, 5 steps


# ---------------------------------------------------------------------------
# homogenize
# ---------------------------------------------------------------------------
HOM_SPEC = """
[mesh]
elements = 3
periodic = true

[loading]
eta_start = -0.1
eta_stop = 0.1
eta_step = 0.1

[output]
directory = {out}
snapshot_times =
"""


def test_cmd_homogenize_homogeneous_branch(tmp_path):
    out = tmp_path / "out"
    path = write_spec(tmp_path, HOM_SPEC.format(out=out))
    assert main(["homogenize", path]) == EXIT_OK
    lines = (out / "sweep.csv").read_text().splitlines()
    # the loading direction is echoed in the header comments
    assert lines[0] == "# D = 0.040382 -0.004023 -0.004722"
    assert lines[3] == fileio.SWEEP_HEADER
    data = [line.split(",") for line in lines[4:]]
    assert [float(r[0]) for r in data] == [-0.1, 0.0, 0.1]
    middle = data[1]
    assert float(middle[7]) == 0.0  # S11 at the reference state


def test_cmd_homogenize_requires_periodic(tmp_path):
    out = tmp_path / "out"
    path = write_spec(tmp_path, BASE_SPEC.format(out=out))
    assert main(["homogenize", path]) == EXIT_USAGE


# ---------------------------------------------------------------------------
# check + fileio details
# ---------------------------------------------------------------------------
def test_cmd_check_passes():
    assert cmd_check() == EXIT_OK


def test_restart_roundtrip(tmp_path):
    space = make_uniform_space(3)
    rng = np.random.default_rng(0)
    states = StatePair(
        rng.normal(size=space.dofs_per_axis + (3,)),
        rng.normal(size=space.dofs_per_axis + (3,)),
        2.5e-4,
    )
    path = tmp_path / "state.bin"
    fileio.write_restart(path, space, states, 17)
    meta, u_prev, u_curr = fileio.read_restart(path)
    assert meta["step"] == 17 and meta["dt"] == 2.5e-4
    assert np.array_equal(u_prev, states.u_prev)
    assert np.array_equal(u_curr, states.u_curr)


def test_atomic_write_creates_parents(tmp_path):
    target = tmp_path / "a" / "b" / "f.txt"
    fileio.atomic_write_text(target, "hello\n")
    assert target.read_text() == "hello\n"


def test_float_format_roundtrips():
    vals = [1.0 / 3.0, 1e-300, np.pi, -2.5e-4]
    for v in vals:
        assert float(fileio.fmt(v)) == v
