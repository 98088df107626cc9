"""Command-line interface: ``probdae {run,converge,calibrate,demo}``.

Settings come from built-in defaults, then an optional flat TOML file
(``--config``), then explicit flags.  All tables are written as CSV with 17
significant digits.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .calibrate import calibrate_sigma
from .core import SemiExplicitDAE, Trajectory
from .ensemble import (
    EXPONENTIAL_HORIZON,
    EXPONENTIAL_LADDER,
    IMPLICIT_LADDER,
    P_SWEEPS,
    convergence_study,
    run_ensemble,
    write_csv,
)
from .integrators import SCHEMES, NonSymmetricKernelWarning, SchemeId, integrate
from .noise import NoiseSpec
from .problems import get_problem, reference_solution

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["RunConfig", "build_parser", "load_config", "main"]

LOW_CONFIDENCE = 0.3


@dataclass
class RunConfig:
    problem: str = "fitzhugh"
    grid_points: int = 100
    T: Optional[float] = None
    scheme: str = "implicit_euler"
    schemes: Optional[list] = None
    path: str = "kernel"
    noise_injection: Optional[str] = None
    tau: float = 0.04
    taus: Optional[list] = None
    sigma: float = 0.0
    p: Optional[float] = None
    p_list: Optional[list] = None
    realizations: int = 1
    seed: int = 0
    workers: int = 1
    out: str = "out"
    perturb_constraint: bool = False
    error_mode: str = "sup"
    bracket: list = field(default_factory=lambda: [1e-3, 10.0])

    def scheme_id(self, name: Optional[str] = None) -> SchemeId:
        return SchemeId(name or self.scheme, self.path, self.noise_injection)

    def build_problem(self, T: Optional[float] = None) -> SemiExplicitDAE:
        params = {}
        if self.problem.lower() in ("heat", "constrained_heat"):
            params["grid_points"] = self.grid_points
        horizon = T if T is not None else self.T
        if horizon is not None:
            params["T"] = horizon
        return get_problem(self.problem, **params)

    def validate(self) -> None:
        for name in self.schemes or [self.scheme]:
            self.scheme_id(name)
        if self.perturb_constraint and self.scheme_id().is_exponential:
            raise ValueError("--perturb-constraint requires implicit_euler or midpoint")
        if self.realizations < 1:
            raise ValueError("--realizations must be at least 1")
        if self.sigma < 0:
            raise ValueError("--sigma must be non-negative")


def _floats(text: str) -> list:
    return [float(v) for v in str(text).replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # default=SUPPRESS keeps unset flags out of the namespace so config values survive
    opt = dict(default=argparse.SUPPRESS)
    common.add_argument("--config", help="flat TOML file with settings", **opt)
    common.add_argument("--problem", choices=["fitzhugh", "heat"], **opt)
    common.add_argument("--grid-points", dest="grid_points", type=int, **opt)
    common.add_argument("--T", dest="T", type=float, help="final time", **opt)
    common.add_argument("--scheme", choices=sorted(SCHEMES), **opt)
    common.add_argument("--path", choices=["saddle", "kernel"], **opt)
    common.add_argument("--noise-injection", dest="noise_injection",
                        choices=["raw", "a_projected"], **opt)
    common.add_argument("--tau", type=float, **opt)
    common.add_argument("--sigma", type=float, **opt)
    common.add_argument("--p", type=float, **opt)
    common.add_argument("--realizations", "-M", type=int, **opt)
    common.add_argument("--seed", type=int, **opt)
    common.add_argument("--workers", type=int, **opt)
    common.add_argument("--out", **opt)
    common.add_argument("--error-mode", dest="error_mode", choices=["sup", "final"], **opt)

    parser = argparse.ArgumentParser(prog="probdae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="integrate an ensemble of trajectories")
    run.add_argument("--perturb-constraint", dest="perturb_constraint", action="store_true",
                     **opt)

    conv = sub.add_parser("converge", parents=[common], help="mean-square convergence study")
    conv.add_argument("--taus", type=_floats, help="step-size ladder, comma separated", **opt)
    conv.add_argument("--p-list", dest="p_list", type=_floats, **opt)
    conv.add_argument("--schemes", type=lambda s: s.replace(",", " ").split(), **opt)
    conv.add_argument("--paper-defaults", dest="paper_defaults", action="store_true",
                      help="heat problem, all four schemes, full p sweep, sigma=4, M=1000")

    cal = sub.add_parser("calibrate", parents=[common], help="calibrate the noise scale")
    cal.add_argument("--bracket", type=_floats, **opt)

    sub.add_parser("demo", parents=[common], help="FitzHugh-Nagumo trajectory bundles")
    return parser


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
    return data


def _config_from_args(args: argparse.Namespace, base: RunConfig) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(load_config(args.config))
    known = {f.name for f in fields(RunConfig)}
    values.update({k: v for k, v in vars(args).items() if k in known})
    cfg = replace(base, **values)
    cfg.validate()
    return cfg


def _trajectory_rows(problem: SemiExplicitDAE, trajectories: Sequence[Trajectory]):
    for k, tr in enumerate(trajectories):
        res = tr.constraint_residuals(problem)
        for t, u, r in zip(tr.times, tr.states, res):
            yield [k, float(t), *u.tolist(), float(r)]


def _write_bundle(out: Path, problem: SemiExplicitDAE, trajectories, reference: Trajectory):
    comps = [f"u{i}" for i in range(problem.n)]
    write_csv(out / "trajectories.csv", ["trajectory", "t", *comps, "constraint_residual"],
              _trajectory_rows(problem, trajectories))
    write_csv(out / "reference.csv", ["t", *comps],
              ([float(t), *u.tolist()] for t, u in zip(reference.times, reference.states)))


def _run_bundle(cfg: RunConfig, out: Path):
    problem = cfg.build_problem()
    scheme = cfg.scheme_id()
    noise = NoiseSpec(cfg.sigma, scheme.order if cfg.p is None else cfg.p, cfg.seed)
    _, trajs = run_ensemble(problem, scheme, cfg.tau, noise, cfg.realizations,
                            workers=cfg.workers, store_trajectories=True,
                            perturb_constraint=cfg.perturb_constraint)
    reference = reference_solution(problem, trajs[0].times, experiment_tau=cfg.tau)
    _write_bundle(out, problem, trajs, reference)
    states = np.stack([tr.states for tr in trajs])
    deviation = float(np.max(np.abs(states - reference.states)))
    # deviation caused by the noise alone, free of the scheme's own bias
    deterministic = integrate(problem, scheme, cfg.tau).states
    noise_deviation = float(np.max(np.abs(states - deterministic)))
    residual = float(max(tr.constraint_residuals(problem).max() for tr in trajs))
    return deviation, noise_deviation, residual


def cmd_run(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    deviation, noise_deviation, residual = _run_bundle(cfg, out)
    print(f"wrote {out / 'trajectories.csv'} ({cfg.realizations} trajectories); "
          f"max deviation from reference {deviation:.3e}, from the sigma=0 run "
          f"{noise_deviation:.3e}, max constraint residual {residual:.3e}")
    if not cfg.perturb_constraint and residual > 1e-9:
        print("constraint check failed", file=sys.stderr)
        return 1
    return 0


def _paper_defaults(cfg: RunConfig) -> RunConfig:
    return replace(cfg, problem="heat", grid_points=100, sigma=4.0, realizations=1000,
                   error_mode="final", schemes=list(SCHEMES), taus=None, p_list=None, T=None)


def cmd_converge(cfg: RunConfig, paper_defaults: bool = False) -> int:
    if paper_defaults:
        cfg = _paper_defaults(cfg)
    out = Path(cfg.out)
    summary = []
    for name in cfg.schemes or [cfg.scheme]:
        scheme = cfg.scheme_id(name)
        if cfg.taus is not None:
            taus, T = cfg.taus, cfg.T
        elif scheme.is_exponential:
            taus, T = EXPONENTIAL_LADDER, cfg.T or EXPONENTIAL_HORIZON
        else:
            taus, T = IMPLICIT_LADDER, cfg.T or 0.1
        if len(taus) < 3:
            raise ValueError("need ≥ 3 step sizes")
        problem = cfg.build_problem(T)
        if cfg.p_list is not None:
            p_list = cfg.p_list
        elif cfg.p is not None:
            p_list = [cfg.p]
        else:
            p_list = P_SWEEPS[name] if paper_defaults else [float(scheme.order)]
        reference = None
        for p in p_list:
            noise = NoiseSpec(cfg.sigma, p, cfg.seed)
            table = convergence_study(problem, scheme, taus, noise, cfg.realizations,
                                      mode=cfg.error_mode, workers=cfg.workers,
                                      reference=reference)
            write_csv(out / f"convergence_{name}_p{p:g}.csv", ["tau", "rms_error"], table.rows)
            summary.append([name, float(p), table.slope, table.half_width])
            flag = "  (low confidence)" if table.half_width > LOW_CONFIDENCE else ""
            print(f"{name:15s} p={p:<4g} slope={table.slope:.3f} ± {table.half_width:.3f}{flag}")
    write_csv(out / "orders_summary.csv", ["scheme", "p", "slope", "half_width"], summary)
    return 0


def cmd_calibrate(cfg: RunConfig) -> int:
    problem = cfg.build_problem()
    scheme = cfg.scheme_id()
    M = cfg.realizations if cfg.realizations > 1 else 100
    rep = calibrate_sigma(problem, scheme, cfg.tau, M, tuple(cfg.bracket), p=cfg.p,
                          seed=cfg.seed, workers=cfg.workers)
    out = Path(cfg.out)
    write_csv(out / "calibration_objective.csv", ["sigma", "neg_log_pi"], rep.evaluations)
    comps = range(problem.n)
    header = ["t", *[f"var_u{i}" for i in comps], "mean_variance",
              *[f"indicator_u{i}" for i in comps], "indicator_rms"]
    rows = (
        [float(t), *v.tolist(), float(mv), *e.tolist(), float(er)]
        for t, v, mv, e, er in zip(rep.times, rep.variances, rep.mean_marginal_variance,
                                   rep.indicators, rep.indicator_scale)
    )
    write_csv(out / "calibration_variances.csv", header, rows)
    flag = " (at bracket boundary)" if rep.at_boundary else ""
    print(f"sigma* = {rep.sigma_star:.6g}, -log pi = {rep.objective:.6g}, "
          f"{len(rep.evaluations)} evaluations{flag}")
    return 0


def cmd_demo(cfg: RunConfig) -> int:
    base = replace(cfg, problem="fitzhugh", scheme=cfg.scheme if cfg.scheme in
                   ("implicit_euler", "midpoint") else "implicit_euler",
                   realizations=cfg.realizations if cfg.realizations > 1 else 50)
    out = Path(cfg.out)
    cases = [
        ("dynamic_sigma0.1", dict(sigma=0.1)),
        ("constraint_sigma0.1", dict(sigma=0.1, perturb_constraint=True)),
        ("dynamic_sigma0.5", dict(sigma=0.5)),
        ("dynamic_sigma1.5", dict(sigma=1.5)),
    ]
    deviations = {}
    for label, overrides in cases:
        deviation, noise_deviation, residual = _run_bundle(replace(base, **overrides),
                                                           out / label)
        deviations[label] = noise_deviation
        print(f"{label:22s} max deviation {deviation:.3e} (noise-induced {noise_deviation:.3e})"
              f"  max constraint residual {residual:.3e}")
    ratio = deviations["constraint_sigma0.1"] / deviations["dynamic_sigma0.1"]
    print(f"constraint/dynamic noise-induced deviation ratio at sigma=0.1: {ratio:.1f}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args, RunConfig())
        with warnings.catch_warnings():
            warnings.simplefilter("once", NonSymmetricKernelWarning)
            if args.command == "run":
                return cmd_run(cfg)
            if args.command == "converge":
                return cmd_converge(cfg, getattr(args, "paper_defaults", False))
            if args.command == "calibrate":
                return cmd_calibrate(cfg)
            return cmd_demo(cfg)
    except Exception as exc:  # any module error becomes a message and exit status 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
