"""Batch driver: config parsing, experiment subcommands, manifests and plot data.

Usage: vortex-limit <subcommand> --config <path> [--out <dir>] [--seed <u64>]

Heavy modules are imported inside the subcommands so that ``VLIM_THREADS`` can
cap the BLAS/FFT thread pools before numpy loads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from .errors import MissingReport, ParseError, ValidationError, VortexLimitError

EXPERIMENTS = ("euler-run", "flow-run", "kinetic-validate", "expansion-residuals", "rates-sweep", "convergence")
INITIAL_KINDS = ("modes", "patch", "eigen")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "run": {"experiment": (str, None), "seed": (int, 0)},
    "grid": {
        "n": (int, 128),
        "T": (float, 1.0),
        "dt": (float, 0.0),
        "store_every": (int, 1),
        "initial": (str, "modes"),
        "amplitude": (float, 1.0),
    },
    "velocity": {"n_v": (int, 16), "n_sigma": (int, 16), "write_cache": (_bool, False)},
    "scales": {
        "eps": (float, 0.01),
        "kappa": (float, 0.2),
        "beta": (float, 0.1),
        "vartheta": (float, 0.2),
        "varrho": (float, 0.2),
        "C0": (float, 2.0),
        "eps_list": (_floats, (0.02, 0.01, 0.005, 0.002)),
    },
    "rates": {
        "m": (int, 0),
        "T": (float, 1.0),
        "p": (float, 2.0),
        "s": (float, 1.0),
        "s_prime": (float, 0.5),
        "betas": (_floats, (0.2, 0.1, 0.05, 0.025)),
        "p_list": (_floats, (1.0, 2.0)),
    },
    "io": {"out": (str, "out")},
}


@dataclass
class RunConfig:
    experiment: str
    values: dict[str, dict[str, Any]]
    seed: int = 0
    source: str = ""

    def __getitem__(self, key: str) -> Any:
        section, name = key.split(".")
        return self.values[section][name]

    @property
    def out(self) -> Path:
        return Path(self.values["io"]["out"])

    def echo(self) -> dict[str, dict[str, Any]]:
        return {s: {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()} for s, d in self.values.items()}


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    seen: set[tuple[str, str]] = set()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"unterminated section header {line!r}", lineno)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ParseError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno)
        if section is None:
            raise ParseError("key outside any [section]", lineno)
        key, val = (x.strip() for x in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ParseError(f"unknown key {key!r} in [{section}]", lineno)
        if (section, key) in seen:
            raise ParseError(f"duplicate key {key!r} in [{section}]", lineno)
        seen.add((section, key))
        parser = SCHEMA[section][key][0]
        try:
            values[section][key] = parser(val)
        except ValueError as exc:
            raise ParseError(f"bad value for {key}: {exc}", lineno) from None
    exp = values["run"]["experiment"]
    cfg = RunConfig(exp or "", values, values["run"]["seed"], source)
    return cfg


def parse_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file {p} does not exist")
    cfg = parse_config_text(p.read_text(), str(p))
    if cfg.experiment:
        validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    v = cfg.values
    if cfg.experiment not in EXPERIMENTS:
        raise ValidationError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    g, vel, sc, r = v["grid"], v["velocity"], v["scales"], v["rates"]
    if g["n"] < 8 or g["n"] & (g["n"] - 1):
        raise ValidationError("grid.n must be a power of two >= 8")
    if g["T"] <= 0:
        raise ValidationError("grid.T must be positive")
    if g["dt"] < 0:
        raise ValidationError("grid.dt must be nonnegative (0 picks the CFL step)")
    if g["store_every"] < 1:
        raise ValidationError("grid.store_every must be >= 1")
    if g["initial"] not in INITIAL_KINDS:
        raise ValidationError(f"grid.initial must be one of {', '.join(INITIAL_KINDS)}")
    if vel["n_v"] < 4:
        raise ValidationError("velocity.n_v must be >= 4")
    if vel["n_sigma"] < 4:
        raise ValidationError("velocity.n_sigma must be >= 4")
    for name in ("eps", "kappa", "beta"):
        if not 0.0 < sc[name] < 1.0:
            raise ValidationError(f"scales.{name} must lie in (0, 1)")
    for name in ("vartheta", "varrho"):
        if not 0.0 < sc[name] < 0.25:
            raise ValidationError(f"scales.{name} must lie in (0, 1/4)")
    if any(not 0.0 < e < 1.0 for e in sc["eps_list"]):
        raise ValidationError("scales.eps_list entries must lie in (0, 1)")
    if r["m"] < 0:
        raise ValidationError("rates.m must be nonnegative")
    if not 0.0 < r["s_prime"] < r["s"]:
        raise ValidationError("rates need 0 < s_prime < s")
    if r["p"] < 1:
        raise ValidationError("rates.p must be >= 1")
    if any(not 0.0 < b < 1.0 for b in r["betas"]) or len(r["betas"]) < 2:
        raise ValidationError("rates.betas needs at least two entries in (0, 1)")
    if not 0 <= cfg.seed < 2**64:
        raise ValidationError("seed must be an unsigned 64-bit integer")


# ---------------------------------------------------------------------------
# outputs


@dataclass
class RunManifest:
    config: dict
    experiment: str
    seed: int
    constants: dict[str, float] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)
    files: dict[str, str] = field(default_factory=dict)
    versions: dict[str, str] = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_json(self) -> str:
        body = {
            "experiment": self.experiment,
            "seed": self.seed,
            "config": self.config,
            "constants": self.constants,
            "checks": self.checks,
            "passed": self.passed,
            "files": self.files,
            "versions": self.versions,
            "wall_clock_s": self.wall_clock,
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def verify_manifest(path: str | Path) -> bool:
    p = Path(path)
    data = json.loads(p.read_text())
    return all(sha256(p.parent / name) == digest for name, digest in data["files"].items())


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    def fmt(x):
        if isinstance(x, bool):
            return str(x).lower()
        if isinstance(x, float):
            return repr(x)
        return str(x)

    lines = [",".join(header)] + [",".join(fmt(x) for x in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def _versions() -> dict[str, str]:
    import numpy
    import scipy

    from . import __version__

    return {"vortex_limit": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


# ---------------------------------------------------------------------------
# experiments


def initial_vorticity(cfg: RunConfig):
    import numpy as np

    from .convergence_rates import smoothed_patch
    from .torus_spectral import GridSpec2D, MollifierSpec, ScalarField2D, mollify

    g = GridSpec2D(cfg["grid.n"])
    a = cfg["grid.amplitude"]
    kind = cfg["grid.initial"]
    if kind == "eigen":
        return ScalarField2D.from_function(g, lambda x, y: a * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y))
    if kind == "modes":
        return ScalarField2D.from_function(
            g,
            lambda x, y: a * (np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y) + 0.5 * np.cos(2 * np.pi * (x + 2 * y))),
        )
    return mollify(smoothed_patch(g, amplitude=a), MollifierSpec(cfg["scales.beta"]))


def _euler(cfg: RunConfig, omega0):
    from .euler_lagrangian import cfl_bound, run_euler

    T = cfg["grid.T"]
    dt = cfg["grid.dt"]
    if dt == 0.0:
        steps = int(math.ceil(T / (0.9 * cfl_bound(omega0))))
    else:
        steps = int(round(T / dt))
    return run_euler(omega0, T, T / steps, store_every=cfg["grid.store_every"])


def _invariants(traj, ps=(1.0, 2.0, 4.0)):
    import numpy as np

    from .torus_spectral import lp_norm

    sp = traj.sp
    rows = []
    for t, wh in zip(traj.times, traj.spectra):
        w = sp.inv(wh)
        u1, u2 = (sp.inv(c) for c in sp.velocity(wh))
        energy = 0.5 * float(np.mean(u1**2 + u2**2))
        enstrophy = 0.5 * float(np.mean(w**2))
        rows.append((float(t), energy, enstrophy, *[lp_norm(w, p) for p in ps]))
    return rows


def run_euler_cmd(cfg: RunConfig, out: Path, man: RunManifest) -> None:
    from .euler_lagrangian import write_trajectory

    omega0 = initial_vorticity(cfg)
    traj = _euler(cfg, omega0)
    write_trajectory(out / "trajectory", traj, beta=cfg["scales.beta"], seed=cfg.seed)
    rows = _invariants(traj)
    _write_csv(out / "invariants.csv", ["t", "energy", "enstrophy", "l1", "l2", "l4"], rows)
    base = rows[0]
    drift = [max(abs(r[c] - base[c]) / abs(base[c]) for r in rows) for c in range(1, 6)]
    man.constants.update(energy_drift=drift[0], enstrophy_drift=drift[1], l1_drift=drift[2], l2_drift=drift[3], l4_drift=drift[4])
    man.checks["energy_enstrophy_1e-6"] = max(drift[:2]) <= 1e-6
    man.checks["lp_norms_1e-3"] = max(drift[2:]) <= 1e-3


def run_flow_cmd(cfg: RunConfig, out: Path, man: RunManifest) -> None:
    import numpy as np

    from .euler_lagrangian import (
        StabilitySpec,
        flow_integrate,
        gronwall_bound,
        operator_norm_2x2,
        stability_lambda,
        transport_vorticity,
    )

    omega0 = initial_vorticity(cfg)
    traj = _euler(cfg, omega0)
    T = traj.t_end
    targets = [T * k / 4 for k in range(4)]
    maps = flow_integrate(traj, T, targets)
    rows = []
    for fm in maps:
        det = fm.grad_X[:, 0, 0] * fm.grad_X[:, 1, 1] - fm.grad_X[:, 0, 1] * fm.grad_X[:, 1, 0]
        jac = float(operator_norm_2x2(fm.grad_X).max())
        gb = gronwall_bound(traj, fm.s, T)
        rows.append((fm.s, float(np.abs(det - 1.0).max()), jac, gb))
    w_lag = transport_vorticity(omega0, maps[0])
    w_eul = traj.sp.inv(traj.spectra[-1])
    cross = float(np.sqrt(np.mean((w_lag.values - w_eul) ** 2)))
    _write_csv(out / "flow.csv", ["s", "det_err", "jac_norm", "gronwall"], rows)
    man.constants.update(det_err=max(r[1] for r in rows), cross_solver_l2=cross)
    man.checks["det_1e-5"] = all(r[1] <= 1e-5 for r in rows)
    man.checks["gronwall"] = all(r[2] <= r[3] * (1 + 1e-9) for r in rows)
    man.checks["cross_solver_1e-4"] = cross <= 1e-4
    man.checks["lambda_diagonal_zero"] = all(stability_lambda(fm, fm, StabilitySpec(0.1)) == 0.0 for fm in maps)


def run_kinetic_cmd(cfg: RunConfig, out: Path, man: RunManifest) -> None:
    import numpy as np

    from .kinetic_ops import (
        KineticVector,
        build_L,
        burnett_matrix,
        hydro_basis,
        write_operator_cache,
    )

    n_v = cfg["velocity.n_v"]
    ns = cfg["velocity.n_sigma"]
    model = build_L((0.0, 0.0, 0.0), n_v=n_v, sphere=(ns, 2 * ns))
    basis = hydro_basis(model.grid)
    M = basis.matrix
    gram = float(np.abs(basis.gram - np.eye(5)).max())
    null = max(model.apply(KineticVector(model.grid, M[:, a], "f")).norm() for a in range(5))
    bt = burnett_matrix(model)
    a11, a12 = bt.inner_L(0, 0, 0, 0), bt.inner_L(0, 1, 0, 1)
    ratio = a11 / a12
    off = max(abs(bt.inner_L(0, 0, 0, 1)), abs(bt.inner_L(0, 1, 1, 2)), abs(bt.inner_L(0, 0, 1, 2)))
    rows = [
        ("gram_residual", gram, 1e-9, gram <= 1e-9),
        ("null_residual", null, 1e-8, null <= 1e-8),
        ("ratio_minus_4_3", abs(ratio - 4.0 / 3.0), 1e-4, abs(ratio - 4.0 / 3.0) <= 1e-4),
        ("off_pattern_over_eta0", off / bt.eta0, 1e-6, off <= 1e-6 * bt.eta0),
        ("nu_fit_residual", model.c1_residual, 1e-4, model.c1_residual <= 1e-4),
    ]
    _write_csv(out / "kinetic.csv", ["quantity", "value", "tolerance", "pass"], rows)
    man.constants.update(c1=model.c1, c2=model.c2, c3=model.c3, eta0=bt.eta0, gram_residual=gram, delta0=model.delta0)
    for name, _, _, ok in rows:
        man.checks[name] = bool(ok)
    if cfg["velocity.write_cache"]:
        write_operator_cache(out / f"L_nv{n_v}.lop", model)


def run_expansion_cmd(cfg: RunConfig, out: Path, man: RunManifest) -> None:
    import numpy as np

    from .euler_lagrangian import AuxState, run_aux
    from .hilbert_expansion import (
        ExpansionFields,
        ScaleParams,
        build_expansion_operators,
        default_nodes,
        hydro_cancellation_check,
        residual_sources,
        write_residual_csv,
    )
    from .kinetic_ops import build_L

    ns = cfg["velocity.n_sigma"]
    model = build_L((0.0, 0.0, 0.0), n_v=cfg["velocity.n_v"])
    ops = build_expansion_operators(model, sphere=(ns, 2 * ns))
    omega0 = initial_vorticity(cfg)
    traj = _euler(cfg, omega0)
    steps = (len(traj.spectra) - 1) * cfg["grid.store_every"]
    aux = run_aux(AuxState.zero(omega0.grid, ops.eta0), traj, traj.dt / cfg["grid.store_every"], steps, cfg["grid.store_every"])
    mid = len(traj.spectra) // 2
    hc = hydro_cancellation_check(traj, aux, ops.eta0, mid)
    hp = hydro_cancellation_check(traj, aux, ops.eta0, mid, perturb=0.01)
    fields = ExpansionFields.from_trajectories(traj, aux, mid)
    nodes = default_nodes(omega0.grid, 4)
    reports = []
    for eps in sorted(cfg["scales.eps_list"], reverse=True):
        sc = ScaleParams(eps, cfg["scales.kappa"], cfg["scales.beta"], vartheta=cfg["scales.vartheta"], varrho=cfg["scales.varrho"])
        reports.append(residual_sources(fields, sc, ops, nodes))
    write_residual_csv(out / "residuals.csv", reports)
    e = np.log([r.eps for r in reports])
    q = np.log([r.norms["dR2_par"] / r.norms["dR2"] for r in reports])
    slope = float(np.polyfit(e, q, 1)[0])
    man.constants.update(eta0=ops.eta0, slope=slope, hydro_residual=hc.residual, hydro_discretization=hc.discretization_error)
    for r in reports:
        for k, v in r.envelope.items():
            man.constants[f"envelope_{k}_eps{r.eps:g}"] = v
    man.checks["slope_1_pm_0.15"] = abs(slope - 1.0) <= 0.15
    man.checks["hydro_cancellation"] = hc.passed
    man.checks["hydro_sensitivity_100x"] = hp.residual >= 100.0 * hc.residual


def run_rates_cmd(cfg: RunConfig, out: Path, man: RunManifest) -> None:
    from .convergence_rates import (
        RateInputs,
        ScheduleParams,
        rate_besov,
        rate_velocity,
        rate_vorticity,
        validate_schedule,
    )
    from .errors import DomainError

    # small data keeps every rate below one on the sweep
    inputs = RateInputs(
        m=cfg["rates.m"],
        T=cfg["rates.T"],
        p=cfg["rates.p"],
        s=cfg["rates.s"],
        s_prime=cfg["rates.s_prime"],
        u0_l2=0.1,
        w0_l2=0.1,
        w0_l3=0.1,
        w0_yud=0.1,
        w0_lp=0.1,
    )
    betas = sorted(cfg["rates.betas"], reverse=True)
    rows = []
    for b in betas:
        vals = []
        for fn in (
            lambda: rate_velocity(inputs, b),
            lambda: rate_vorticity(inputs, b),
            lambda: rate_besov(inputs, b, "loc-Y"),
            lambda: rate_besov(inputs, b, "Y"),
        ):
            try:
                vals.append(fn())
            except DomainError:
                vals.append(math.nan)
        rows.append((b, *vals))
    _write_csv(out / "rates.csv", ["beta", "rate_u", "rate_w", "rate_w_locY", "rate_w_Y"], rows)
    for c, name in enumerate(("rate_u", "rate_w", "rate_w_locY", "rate_w_Y"), start=1):
        col = [r[c] for r in rows]
        man.checks[f"{name}_monotone"] = all(b < a for a, b in zip(col, col[1:]))
    eps_seq = sorted(cfg["scales.eps_list"], reverse=True)
    good = validate_schedule(ScheduleParams(1.0 / 3.0, 0.5), eps_seq)
    bad = validate_schedule(ScheduleParams(2.0, 0.5), eps_seq)
    srows = [("kappa=eps^(1/3)", good.clauses["eps_over_kappa2"]), ("kappa=eps^2", bad.clauses["eps_over_kappa2"])]
    _write_csv(out / "schedule.csv", ["schedule", "eps_over_kappa2_pass"], srows)
    man.checks["schedule_examples"] = good.clauses["eps_over_kappa2"] and not bad.clauses["eps_over_kappa2"]


def run_convergence_cmd(cfg: RunConfig, out: Path, man: RunManifest) -> None:
    from .convergence_rates import convergence_experiment, smoothed_patch
    from .hilbert_expansion import build_expansion_operators
    from .kinetic_ops import build_L
    from .torus_spectral import GridSpec2D

    g = GridSpec2D(cfg["grid.n"])
    omega0 = smoothed_patch(g, amplitude=cfg["grid.amplitude"])
    ops = build_expansion_operators(build_L((0.0, 0.0, 0.0), n_v=cfg["velocity.n_v"]))
    res = convergence_experiment(
        omega0,
        cfg["rates.betas"],
        cfg["rates.T"],
        p_list=cfg["rates.p_list"],
        m=cfg["rates.m"],
        store_every=cfg["grid.store_every"],
        ops=ops,
        C0=cfg["scales.C0"],
    )
    res.write_csv(out)
    man.constants.update(C_u=res.C_u, C_kappa=res.C_kappa, C_kappa_fitted=res.C_kappa_fitted, eta0=ops.eta0)
    man.checks["rate_bound"] = res.rate_ok
    man.checks["osgood_pointwise"] = res.osgood_ok
    man.checks["kinetic_vorticity"] = res.kinetic_ok


RUNNERS = {
    "euler-run": run_euler_cmd,
    "flow-run": run_flow_cmd,
    "kinetic-validate": run_kinetic_cmd,
    "expansion-residuals": run_expansion_cmd,
    "rates-sweep": run_rates_cmd,
    "convergence": run_convergence_cmd,
}


def run(cfg: RunConfig, out: Path | None = None) -> RunManifest:
    validate_config(cfg)
    out = Path(out) if out is not None else cfg.out
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest(cfg.echo(), cfg.experiment, cfg.seed)
    start = time.perf_counter()
    try:
        RUNNERS[cfg.experiment](cfg, out, man)
    except VortexLimitError as exc:
        raise type(exc)(f"{cfg.experiment}: {exc}") from exc
    man.wall_clock = time.perf_counter() - start
    man.versions = _versions()
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            man.files[p.relative_to(out).as_posix()] = sha256(p)
    (out / "manifest.json").write_text(man.to_json())
    return man


# ---------------------------------------------------------------------------
# plot data


def emit_plotdata(report_paths: Sequence[str | Path], out_dir: str | Path) -> list[Path]:
    """Long-format CSVs (series, x, y) from experiment reports.

    Recognized reports: convergence.csv (beta vs error), residuals.csv
    (eps vs residual ratio), invariants.csv (t vs relative drift).
    """
    paths = [Path(p) for p in report_paths]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise MissingReport(f"missing report(s): {', '.join(missing)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for p in paths:
        lines = p.read_text().splitlines()
        head = lines[0].split(",")
        recs = [dict(zip(head, ln.split(","))) for ln in lines[1:] if ln]
        rows = []
        if p.name == "convergence.csv":
            target = out / "beta_vs_error.csv"
            best: dict[str, dict[str, float]] = {}
            for r in recs:
                b = r["beta"]
                d = best.setdefault(b, {})
                for k in head:
                    if k.startswith("err_"):
                        d[k] = max(d.get(k, 0.0), float(r[k]))
            for b, d in best.items():
                rows += [(k, b, repr(v)) for k, v in sorted(d.items())]
        elif p.name == "residuals.csv":
            target = out / "eps_vs_residual.csv"
            for r in recs:
                rows.append((r["order"], r["eps"], r["norm"]))
        elif p.name == "invariants.csv":
            target = out / "t_vs_drift.csv"
            base = recs[0]
            for r in recs:
                for k in head[1:]:
                    b0 = float(base[k])
                    rows.append((k, r["t"], repr(abs(float(r[k]) - b0) / abs(b0) if b0 else 0.0)))
        else:
            raise MissingReport(f"{p.name} is not a recognized report")
        _write_csv(target, ["series", "x", "y"], rows)
        written.append(target)
    return written


# ---------------------------------------------------------------------------
# entry point


def _cap_threads() -> None:
    n = os.environ.get("VLIM_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = n


def main(argv: Sequence[str] | None = None) -> int:
    _cap_threads()
    ap = argparse.ArgumentParser(prog="vortex-limit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
    pp = sub.add_parser("plotdata")
    pp.add_argument("reports", nargs="+")
    pp.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    try:
        if args.command == "plotdata":
            for p in emit_plotdata(args.reports, args.out):
                print(p)
            return 0
        p = Path(args.config)
        if not p.is_file():
            raise ValidationError(f"config file {p} does not exist")
        cfg = parse_config_text(p.read_text(), str(p))
        if cfg.experiment and cfg.experiment != args.command:
            raise ValidationError(f"config declares experiment {cfg.experiment!r}, not {args.command!r}")
        cfg.experiment = args.command
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.values["run"]["seed"] = args.seed
        man = run(cfg, Path(args.out) if args.out else None)
    except (ParseError, ValidationError, MissingReport) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, ok in sorted(man.checks.items()):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if man.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
