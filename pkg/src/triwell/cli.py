"""Command-line front end: run definitions and experiment harnesses.

A run is defined by a flat ``key = value`` spec file with one section per
concern (documented in the README and in :data:`SPEC_SCHEMA`).  Subcommands:

``run``         relax one configuration, writing the energy ledger, field
                snapshots and a restart file
``converge``    timestep-refinement study against a fine reference
``compare``     Newton-iteration histogram across schemes and timesteps
``homogenize``  periodic-cell sweep of effective quantities
``check``       fast property suite (exact identities at random states)

Exit codes: 0 success, 2 usage/spec errors, 3 solver failures, 4 I/O.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .assembly import NewtonConfig
from .dynamics import (
    DynamicsDriver,
    RunConfig,
    bump_initial_condition,
    temporal_convergence_study,
)
from .errors import (
    LinearSolveError,
    NonconvergenceError,
    SpecFileError,
    TriwellError,
)
from .homogenize import (
    MacroLoading,
    continuation_sweep,
    map_to_periodic,
)
from .integrators import SchemeConfig
from .material import MaterialParams
from .splines import make_uniform_space

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOLVER = 3
EXIT_IO = 4

SPEC_SCHEMA = {
    "mesh": {"elements": "8", "periodic": "false"},
    "material": {
        "B1": None, "B2": None, "B3": None, "B4": None, "B5": None,
        "l": None, "r": None, "rho": None, "c": None,
    },
    "scheme": {
        "kind": "taylor_full",
        "kappa_F_max": None,
        "kappa_gradF_max": None,
        "l_gs": "1.0",
    },
    "time": {
        "dt": "1e-3",
        "t_end": "0.05",
        "dt_coarse": "2e-2",
        "switch_threshold": "1e-6",
        "steady_threshold": "1e-6",
        "steady_consecutive": "5",
    },
    "newton": {
        "residual_tol": "1e-10",
        "max_iters": "25",
        "linear_solver": "direct",
    },
    "ic": {"elements": "auto", "amplitude": "1e-3", "index": "auto"},
    "loading": {"eta_start": "0.0", "eta_stop": "0.0", "eta_step": "0.1",
                "increment": "0.1", "D": "default", "seed": "homogeneous"},
    "output": {
        "directory": "out",
        "snapshot_times": "0.04 0.07 0.10 0.25",
        "snapshot_samples": "17",
        "newton_trace": "false",
    },
    "run": {"seed": "0", "threads": "1"},
}


@dataclass
class RunSpec:
    """Validated run definition, assembled from a spec file."""

    mesh_elements: int = 8
    periodic: bool = False
    material: MaterialParams = field(default_factory=MaterialParams)
    scheme: SchemeConfig = field(default_factory=SchemeConfig.taylor_full)
    dt: float = 1e-3
    t_end: float = 0.05
    dt_coarse: float = 2e-2
    switch_threshold: float = 1e-6
    steady_threshold: float = 1e-6
    steady_consecutive: int = 5
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    ic_elements: int | None = None
    ic_amplitude: float = 1e-3
    ic_index: tuple | None = None
    loading_etas: tuple = ()
    loading_increment: float = 0.1
    loading_D: np.ndarray | None = None
    loading_seed: str = "homogeneous"
    output_dir: str = "out"
    snapshot_times: tuple = (0.04, 0.07, 0.10, 0.25)
    snapshot_samples: int = 17
    newton_trace: bool = False
    seed: int = 0
    threads: int = 1

    def run_config(self):
        return RunConfig(
            dt=self.dt,
            t_end=self.t_end,
            scheme=self.scheme,
            dt_coarse=max(self.dt, self.dt_coarse),
            dissipation_switch_threshold=self.switch_threshold,
            steady_threshold=self.steady_threshold,
            steady_consecutive=self.steady_consecutive,
            snapshot_times=self.snapshot_times,
            snapshot_samples=self.snapshot_samples,
            newton=self.newton,
        )

    def space(self):
        return make_uniform_space(self.mesh_elements, self.periodic)

    def initial_condition(self, space):
        return bump_initial_condition(
            space,
            amplitude=self.ic_amplitude,
            ic_elements=self.ic_elements,
            bump_index=self.ic_index,
        )

    def to_text(self):
        sch = self.scheme
        lines = [
            "[mesh]",
            f"elements = {self.mesh_elements}",
            f"periodic = {'true' if self.periodic else 'false'}",
            "",
            "[material]",
        ]
        m = self.material
        for k in ("B1", "B2", "B3", "B4", "B5", "l", "r", "rho", "c"):
            lines.append(f"{k} = {fileio.fmt(getattr(m, k))}")
        lines += [
            "",
            "[scheme]",
            f"kind = {sch.kind}",
            f"kappa_F_max = {sch.kappa_F_max}",
            f"kappa_gradF_max = {sch.kappa_gradF_max}",
            f"l_gs = {fileio.fmt(sch.l_gs)}",
            "",
            "[time]",
            f"dt = {fileio.fmt(self.dt)}",
            f"t_end = {fileio.fmt(self.t_end)}",
            f"dt_coarse = {fileio.fmt(self.dt_coarse)}",
            f"switch_threshold = {fileio.fmt(self.switch_threshold)}",
            f"steady_threshold = {fileio.fmt(self.steady_threshold)}",
            f"steady_consecutive = {self.steady_consecutive}",
            "",
            "[newton]",
            f"residual_tol = {fileio.fmt(self.newton.residual_tol)}",
            f"max_iters = {self.newton.max_iters}",
            f"linear_solver = {self.newton.linear_solver}",
            "",
            "[ic]",
            f"elements = {self.ic_elements if self.ic_elements else 'auto'}",
            f"amplitude = {fileio.fmt(self.ic_amplitude)}",
            "index = "
            + (
                " ".join(str(i) for i in self.ic_index)
                if self.ic_index
                else "auto"
            ),
            "",
            "[output]",
            f"directory = {self.output_dir}",
            "snapshot_times = " + " ".join(fileio.fmt(t) for t in self.snapshot_times),
            f"snapshot_samples = {self.snapshot_samples}",
            f"newton_trace = {'true' if self.newton_trace else 'false'}",
            "",
            "[run]",
            f"seed = {self.seed}",
            f"threads = {self.threads}",
            "",
        ]
        return "\n".join(lines)


def _get(cp, section, key, default=None):
    if cp.has_option(section, key):
        return cp.get(section, key)
    return default


def _parse_float(cp, section, key, default):
    raw = _get(cp, section, key)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        raise SpecFileError(
            f"[{section}] {key} = {raw!r}: not a number"
        ) from None


def _parse_int(cp, section, key, default):
    raw = _get(cp, section, key)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise SpecFileError(
            f"[{section}] {key} = {raw!r}: not an integer"
        ) from None


def _parse_bool(cp, section, key, default):
    raw = _get(cp, section, key)
    if raw is None:
        return default
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise SpecFileError(f"[{section}] {key} = {raw!r}: not a boolean")


def parse_spec(path):
    """Parse and validate a spec file into a RunSpec."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        with open(path) as f:
            cp.read_file(f, source=path)
    except OSError as err:
        raise SpecFileError(f"cannot read spec {path}: {err}") from None
    except configparser.Error as err:
        raise SpecFileError(f"malformed spec {path}: {err}") from None

    for section in cp.sections():
        if section not in SPEC_SCHEMA:
            raise SpecFileError(f"unknown section [{section}] in {path}")
        for key in cp.options(section):
            if key not in SPEC_SCHEMA[section]:
                raise SpecFileError(
                    f"unknown key {key!r} in section [{section}] of {path}"
                )

    spec = RunSpec()
    spec.mesh_elements = _parse_int(cp, "mesh", "elements", 8)
    spec.periodic = _parse_bool(cp, "mesh", "periodic", False)

    defaults = MaterialParams()
    kwargs = {}
    for k in ("B1", "B2", "B3", "B4", "B5", "l", "r", "rho", "c"):
        kwargs[k] = _parse_float(cp, "material", k, getattr(defaults, k))
    try:
        spec.material = MaterialParams(**kwargs)
    except ValueError as err:
        raise SpecFileError(f"[material]: {err}") from None

    kind = _get(cp, "scheme", "kind", "taylor_full")
    kF = _parse_int(cp, "scheme", "kappa_F_max", None)
    kG = _parse_int(cp, "scheme", "kappa_gradF_max", None)
    lgs = _parse_float(cp, "scheme", "l_gs", 1.0)
    try:
        if kF is None:
            kF = 4 if kind == "taylor_reduced" else 8
        if kG is None:
            kG = 2
        spec.scheme = SchemeConfig(
            kind=kind, l_gs=lgs, kappa_F_max=kF, kappa_gradF_max=kG
        )
    except ValueError as err:
        raise SpecFileError(f"[scheme]: {err}") from None

    spec.dt = _parse_float(cp, "time", "dt", 1e-3)
    spec.t_end = _parse_float(cp, "time", "t_end", 0.05)
    spec.dt_coarse = _parse_float(cp, "time", "dt_coarse", 2e-2)
    spec.switch_threshold = _parse_float(cp, "time", "switch_threshold", 1e-6)
    spec.steady_threshold = _parse_float(cp, "time", "steady_threshold", 1e-6)
    spec.steady_consecutive = _parse_int(cp, "time", "steady_consecutive", 5)
    if spec.dt <= 0:
        raise SpecFileError(f"[time] dt = {spec.dt}: must be positive")
    if spec.t_end < 0:
        raise SpecFileError(f"[time] t_end = {spec.t_end}: must be non-negative")

    try:
        spec.newton = NewtonConfig(
            residual_tol=_parse_float(cp, "newton", "residual_tol", 1e-10),
            max_iters=_parse_int(cp, "newton", "max_iters", 25),
            linear_solver=_get(cp, "newton", "linear_solver", "direct"),
        )
    except ValueError as err:
        raise SpecFileError(f"[newton]: {err}") from None

    ic_el = _get(cp, "ic", "elements", "auto")
    spec.ic_elements = None if ic_el == "auto" else int(ic_el)
    spec.ic_amplitude = _parse_float(cp, "ic", "amplitude", 1e-3)
    idx = _get(cp, "ic", "index", "auto")
    if idx != "auto" and idx is not None:
        try:
            spec.ic_index = tuple(int(v) for v in idx.split())
            assert len(spec.ic_index) == 3
        except (ValueError, AssertionError):
            raise SpecFileError(
                f"[ic] index = {idx!r}: expected three integers or 'auto'"
            ) from None

    eta_start = _parse_float(cp, "loading", "eta_start", 0.0)
    eta_stop = _parse_float(cp, "loading", "eta_stop", 0.0)
    eta_step = _parse_float(cp, "loading", "eta_step", 0.1)
    spec.loading_increment = _parse_float(cp, "loading", "increment", 0.1)
    if eta_stop > eta_start and eta_step > 0:
        count = int(round((eta_stop - eta_start) / eta_step)) + 1
        spec.loading_etas = tuple(
            eta_start + i * eta_step for i in range(count)
        )
    elif eta_start == eta_stop:
        spec.loading_etas = (eta_start,)
    else:
        raise SpecFileError("[loading]: eta_stop must be >= eta_start")
    D_raw = _get(cp, "loading", "D", "default")
    if D_raw not in (None, "default"):
        vals = [float(v) for v in D_raw.split()]
        if len(vals) != 9:
            raise SpecFileError("[loading] D: expected 9 numbers or 'default'")
        spec.loading_D = np.array(vals).reshape(3, 3)
    spec.loading_seed = _get(cp, "loading", "seed", "homogeneous")

    spec.output_dir = _get(cp, "output", "directory", "out")
    times = _get(cp, "output", "snapshot_times", "0.04 0.07 0.10 0.25")
    spec.snapshot_times = tuple(float(t) for t in times.split()) if times.strip() else ()
    spec.snapshot_samples = _parse_int(cp, "output", "snapshot_samples", 17)
    spec.newton_trace = _parse_bool(cp, "output", "newton_trace", False)
    spec.seed = _parse_int(cp, "run", "seed", 0)
    spec.threads = _parse_int(cp, "run", "threads", 1)
    if spec.mesh_elements < 2:
        raise SpecFileError("[mesh] elements: need at least 2")
    return spec


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_run(spec_path):
    spec = parse_spec(spec_path)
    if spec.periodic:
        raise SpecFileError("relaxation runs use the open variant")
    space = spec.space()
    ic = spec.initial_condition(space)
    driver = DynamicsDriver(space, spec.material, spec.scheme, spec.newton)
    outdir = fileio.output_root(spec.output_dir)
    try:
        result = driver.run(ic, spec.run_config())
    except (NonconvergenceError, TriwellError) as err:
        ledger = getattr(err, "ledger", None)
        if ledger is not None:
            fileio.write_energy_csv(os.path.join(outdir, "energy.csv"), ledger)
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    fileio.write_energy_csv(os.path.join(outdir, "energy.csv"), result.ledger)
    for t, snap in result.snapshots.items():
        fileio.write_snapshot_csv(
            os.path.join(outdir, f"snapshot_t{t:g}.csv"), snap
        )
    fileio.write_restart(
        os.path.join(outdir, "restart.bin"),
        space,
        result.states,
        len(result.ledger.records),
    )
    if spec.newton_trace:
        fileio.write_newton_trace_csv(
            os.path.join(outdir, "newton_trace.csv"), driver.newton_history
        )
    drift = result.ledger.total_drift
    init = result.ledger.initial.total
    final = result.ledger.records[-1].total if result.ledger.records else init
    summary = (
        f"completed {len(result.ledger.records)} steps to t={result.elapsed:g}; "
        f"total energy {init:.6e} -> {final:.6e} (drift {drift:.3e}); "
        f"steady_state={result.steady_state}; "
        f"static residual {result.static_residual_norm:.3e}"
    )
    if spec.material.c == 0.0 and result.ledger.records:
        bound = len(result.ledger.records) * max(
            r.balance_tol for r in result.ledger.records
        )
        summary += f"; conservation bound {bound:.3e}"
    print(summary)
    print(f"outputs in {outdir}")
    return EXIT_OK


def cmd_converge(spec_path, dts, dt_ref):
    spec = parse_spec(spec_path)
    if len(dts) < 3 or dt_ref is None:
        raise SpecFileError(
            "converge needs at least three dt values plus a reference dt"
        )
    space = spec.space()
    ic = spec.initial_condition(space)
    outdir = fileio.output_root(spec.output_dir)
    try:
        result = temporal_convergence_study(
            space,
            spec.material,
            spec.scheme,
            ic,
            dts,
            dt_ref,
            spec.t_end,
            newton=spec.newton,
        )
    except (NonconvergenceError, TriwellError) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    fileio.write_convergence_csv(
        os.path.join(outdir, "convergence.csv"), result.rows, result.slope
    )
    for dt, err in result.rows:
        print(f"dt={dt:g}  l2_error={err:.6e}")
    print(f"{spec.scheme.kind}: fitted slope = {result.slope:.3f}")
    print(f"outputs in {outdir}")
    return EXIT_OK


def cmd_compare(spec_path, schemes, dts):
    spec = parse_spec(spec_path)
    space = spec.space()
    ic = spec.initial_condition(space)
    outdir = fileio.output_root(spec.output_dir)
    columns = []
    histograms = {}
    dnf = {}
    for kind in schemes:
        scheme = SchemeConfig(
            kind=kind,
            kappa_F_max=4 if kind == "taylor_reduced" else 8,
        )
        driver = DynamicsDriver(space, spec.material, scheme, spec.newton)
        for dt in dts:
            col = f"{kind}@dt={dt:g}"
            columns.append(col)
            cfg = RunConfig(
                dt=dt,
                t_end=spec.t_end,
                scheme=scheme,
                dt_coarse=max(dt, spec.dt_coarse),
                dissipation_switch_threshold=0.0,
                steady_threshold=0.0,
                newton=spec.newton,
            )
            try:
                result = driver.run(ic, cfg)
                histograms[col] = result.ledger.iteration_histogram()
                dnf[col] = None
            except (NonconvergenceError, TriwellError) as err:
                ledger = getattr(err, "ledger", None)
                histograms[col] = (
                    ledger.iteration_histogram() if ledger else {}
                )
                dnf[col] = getattr(err, "step", -1)
                print(f"{col}: DNF at step {dnf[col]}", file=sys.stderr)
    fileio.write_histogram_csv(
        os.path.join(outdir, "compare.csv"), columns, histograms, dnf
    )
    print(f"outputs in {outdir}")
    return EXIT_SOLVER if any(v is not None for v in dnf.values()) else EXIT_OK


def cmd_homogenize(spec_path, seed_path=None):
    spec = parse_spec(spec_path)
    if not spec.periodic:
        raise SpecFileError("homogenize needs a periodic mesh ([mesh] periodic = true)")
    space = spec.space()
    kwargs = dict(eta_values=spec.loading_etas, increment=spec.loading_increment)
    if spec.loading_D is not None:
        kwargs["D"] = spec.loading_D
    loading = MacroLoading(**kwargs)
    seed_src = seed_path or spec.loading_seed
    if seed_src == "homogeneous":
        u_seed = space.zero_field()
    else:
        try:
            meta, u_prev, u_curr = fileio.read_restart(seed_src)
        except OSError as err:
            raise SpecFileError(f"cannot read seed {seed_src}: {err}") from None
        open_space = make_uniform_space(meta["elements"], meta["periodic"])
        mid = 0.5 * (u_prev + u_curr)
        if meta["periodic"] and meta["dofs"] == space.dofs_per_axis:
            u_seed = mid
        else:
            u_seed = map_to_periodic(open_space, mid, space)
    outdir = fileio.output_root(spec.output_dir)
    try:
        response = continuation_sweep(
            space, loading, spec.material, spec.newton, u_seed=u_seed
        )
    except (NonconvergenceError, LinearSolveError, TriwellError) as err:
        partial = getattr(err, "partial_response", None)
        if partial is not None and partial.records:
            fileio.write_sweep_csv(os.path.join(outdir, "sweep.csv"), partial)
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    fileio.write_sweep_csv(os.path.join(outdir, "sweep.csv"), response)
    for r in response.records:
        print(
            f"eta={r.eta:+.3f}  Psi_bar={r.Psibar:+.6e}  "
            f"|S-S^T|/|S|={r.symmetry_gap:.2e}  iters={r.newton_iters}"
        )
    print(f"outputs in {outdir}")
    return EXIT_OK


def cmd_check():
    """Fast property suite over the exact identities; prints PASS/FAIL lines."""
    from .material import build_psi_polynomial, energy_model, nonconvex_part, well_points
    from .integrators import (
        discrete_work,
        gonzalez_stress_batch,
        taylor_stress_batch,
    )

    rng = np.random.default_rng(0)
    params = MaterialParams()
    model = energy_model(params)
    failures = 0

    def report(name, ok, detail=""):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
        failures += 0 if ok else 1

    n = 1000
    zm = np.concatenate(
        [
            np.tile(np.eye(3).ravel(), (n, 1)) + rng.uniform(-0.3, 0.3, (n, 9)),
            rng.uniform(-0.3, 0.3, (n, 27)),
        ],
        axis=1,
    )
    dd = rng.uniform(-0.05, 0.05, (n, 36))
    psi_p = model.psi(zm + dd)
    psi_m = model.psi(zm)
    scale = np.maximum(1.0, np.maximum(np.abs(psi_p), np.abs(psi_m)))
    for name, fn in (
        ("discrete work identity (series)", taylor_stress_batch),
        ("discrete work identity (midpoint)", gonzalez_stress_batch),
    ):
        cfg = (
            SchemeConfig.taylor_full()
            if fn is taylor_stress_batch
            else SchemeConfig.gonzalez()
        )
        S = fn(zm, dd, model, cfg)
        gap = np.abs(discrete_work(S, dd) - (psi_p - psi_m)) / scale
        report(name, gap.max() <= 1e-12, f"max {gap.max():.2e}")

    wells = well_points(params)
    depth_ok = all(
        abs(nonconvex_part(e2, e3, params) + 1.0) <= 1e-14
        for e2, e3 in wells.values()
    )
    report("well depth is -1 at all three wells", depth_ok)

    poly = build_psi_polynomial(params)
    sub = zm[:200]
    rel = np.abs(poly.evaluate(sub) - model.psi(sub)) / np.maximum(
        1.0, np.abs(model.psi(sub))
    )
    report("polynomial expansion matches density", rel.max() <= 1e-12,
           f"max {rel.max():.2e}")

    space = make_uniform_space(4)
    pts = rng.random((200, 3))
    pu = np.array(
        [sum(v for _, v, g, h in space.eval_basis(X)) for X in pts[:50]]
    )
    report("partition of unity", np.abs(pu - 1.0).max() <= 1e-12,
           f"max {np.abs(pu - 1.0).max():.2e}")

    return EXIT_SOLVER if failures else EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------
def make_parser():
    ap = argparse.ArgumentParser(
        prog="triwell",
        description="Energy-stable relaxation of a three-well gradient-elastic solid",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="relax one configuration")
    p_run.add_argument("spec", help="path to a spec file")

    p_conv = sub.add_parser("converge", help="timestep refinement study")
    p_conv.add_argument("spec")
    p_conv.add_argument("--dt", type=float, action="append", required=True,
                        help="timestep (repeatable)")
    p_conv.add_argument("--reference", type=float, required=True,
                        help="reference timestep treated as exact")

    p_cmp = sub.add_parser("compare", help="scheme comparison histogram")
    p_cmp.add_argument("spec")
    p_cmp.add_argument("--scheme", action="append", required=True,
                       choices=["gonzalez", "taylor_full", "taylor_reduced"])
    p_cmp.add_argument("--dt", type=float, action="append", required=True)

    p_hom = sub.add_parser("homogenize", help="periodic-cell sweep")
    p_hom.add_argument("spec")
    p_hom.add_argument("--seed", default=None,
                       help="restart file for the seed microstructure, or 'homogeneous'")

    sub.add_parser("check", help="run the fast property suites")
    return ap


def main(argv=None):
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as err:
        return EXIT_USAGE if err.code not in (0, None) else 0
    try:
        if args.command == "run":
            return cmd_run(args.spec)
        if args.command == "converge":
            return cmd_converge(args.spec, args.dt, args.reference)
        if args.command == "compare":
            return cmd_compare(args.spec, args.scheme, args.dt)
        if args.command == "homogenize":
            return cmd_homogenize(args.spec, args.seed)
        if args.command == "check":
            return cmd_check()
    except SpecFileError as err:
        print(f"spec error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
