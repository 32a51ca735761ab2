"""Command-line entry point.

    smallbody run --config run.yaml [--out DIR] [--format json|csv] [--seed N] [--threads N]
    smallbody validate --config run.yaml

Exit status: 0 success, 1 invalid input, 2 numerical failure.  The
thread count can also be set with ``SMALLBODY_THREADS``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import os
import sys
import time
import warnings
from contextlib import nullcontext

import numpy as np
from threadpoolctl import threadpool_limits

from . import effective_medium as em
from .config import RunConfig, build_field, build_laurent, load_config, parse_complex
from .errors import NumericalError, ValidationError
from .multi_scatter import (
    assemble_las,
    contraction_norm,
    eval_field_multi,
    solve_las,
    solve_las_direct,
    solve_las_iterative,
    solve_las_krylov,
)
from .quadrature import BallRule
from .report import RunReport, Table, emit
from .single_scatter import compute_H, eval_field_single, oracle_solve_ie16, solve_single

THREADS_ENV = "SMALLBODY_THREADS"


def _field_table(x: np.ndarray, E: np.ndarray, prefix: str = "E") -> dict:
    cols = {"x": x[:, 0], "y": x[:, 1], "z": x[:, 2]}
    for i, c in enumerate("xyz"):
        cols[f"{prefix}{c}"] = np.asarray(E, complex).reshape(-1, 3)[:, i]
    return cols


def _rule(cfg: RunConfig) -> BallRule | None:
    num = cfg.numerics
    if (num["n_r"], num["n_theta"], num["n_phi"]) == (24, 24, 48):
        return None  # per-particle default with graded radial panels
    return BallRule(int(num["n_r"]), int(num["n_theta"]), int(num["n_phi"]))


def _run_single(cfg: RunConfig, rep: RunReport) -> None:
    pt = cfg.particle()
    inc = cfg.incident()
    mom = solve_single(pt, inc, cfg.k, _rule(cfg))
    rep.results.update(V=mom.V, nu=mom.nu, a=mom.a, A=mom.A, B=mom.B, b=mom.b, V0=mom.V0, nu0=mom.nu0)
    x = cfg.probes()
    E = eval_field_single(x, mom, inc, cfg.k) if len(x) else np.zeros((0, 3), complex)
    cols = _field_table(x, E)
    if cfg.numerics["field_h"]:
        omega, mu = float(cfg.physics["omega"]), float(cfg.physics["mu"])
        H = np.array([compute_H(lambda y: eval_field_single(y, mom, inc, cfg.k), xi, omega, mu) for xi in x])
        cols.update(_field_table(x, H.reshape(-1, 3), "H"))
    if cfg.numerics["oracle"]:
        orc = oracle_solve_ie16(pt, inc, cfg.k, int(cfg.numerics["oracle_cells"]))
        E_o = orc.field(x) if len(x) else np.zeros((0, 3), complex)
        cols.update({f"oracle_E{c}": E_o[:, i] for i, c in enumerate("xyz")})
        err = np.linalg.norm(E - E_o, axis=-1) / np.linalg.norm(E_o, axis=-1) if len(x) else np.zeros(0)
        cols["relative_error"] = err
        V_o, nu_o = orc.moments()
        rep.results.update(oracle_V=V_o[0], oracle_nu=nu_o[0], oracle_residual=orc.residual, oracle_nodes=len(orc.nodes))
    rep.tables["field"] = Table(cols)


def _particles_for(cfg: RunConfig):
    if cfg.raw["particles"]:
        return cfg.particle_list()
    law = cfg.law()
    return em.generate_particles(law, float(cfg.raw["law"]["a"]), cfg.seed, cfg.gamma_field())


def _run_multi(cfg: RunConfig, rep: RunReport) -> None:
    inc = cfg.incident()
    particles = _particles_for(cfg)
    system = assemble_las(particles, inc, cfg.k, _rule(cfg))
    tol = float(cfg.numerics["tol"])
    solver = cfg.numerics["solver"]
    if solver == "direct":
        sol = solve_las_direct(system)
    elif solver == "iterative":
        sol = solve_las_iterative(system, tol)
    elif solver == "krylov":
        sol = solve_las_krylov(system, tol)
    else:
        sol = solve_las(system, tol)
    rep.results.update(
        M=system.M, contraction_norm=contraction_norm(system) if system.M else 0.0,
        solver=sol.solver, iterations=sol.iterations, residual=sol.residual,
        condition=sol.condition if sol.condition is not None else float("nan"),
        min_distance=system.min_distance if system.M > 1 else float("nan"),
    )
    centers = system.centers.reshape(-1, 3)
    rep.tables["moments"] = Table(
        {"index": np.arange(system.M), "x": centers[:, 0], "y": centers[:, 1], "z": centers[:, 2],
         **{f"V{c}": sol.V[:, i] for i, c in enumerate("xyz")}, "nu": sol.nu}
    )
    rep.tables["residual_history"] = Table({"step": np.arange(len(sol.history)), "residual": np.asarray(sol.history, float)})
    x = cfg.probes()
    E = eval_field_multi(x, sol, particles, inc, cfg.k) if len(x) else np.zeros((0, 3), complex)
    rep.tables["field"] = Table(_field_table(x, E))


def _run_effective(cfg: RunConfig, rep: RunReport) -> None:
    law = cfg.law()
    inc = cfg.incident()
    C = em.coefficient_field(law, cfg.gamma_field())
    eff = em.solve_effective_field(C, inc, cfg.k, law.domain, int(cfg.numerics["mesh"]), tol=float(cfg.numerics["tol"]))
    div = em.divergence_diagnostic(eff)
    rep.results.update(
        cells=int(np.prod(eff.shape)), residual=eff.residual, iterations=eff.iterations,
        divergence_norm=div.eta_norm, divergence_equation_residual=div.residual_norm,
        helmholtz_residual=div.helmholtz_residual_norm,
    )
    x = cfg.probes()
    E = eff.field(x) if len(x) else np.zeros((0, 3), complex)
    model = em.refraction_coefficient(C, cfg.k)
    cols = _field_table(x, E)
    cols.update(C=np.asarray(C(x), complex), n2=model.n2(x))
    rep.tables["field"] = Table(cols)


def _run_converge(cfg: RunConfig, rep: RunReport) -> None:
    law = cfg.law()
    rows = em.convergence_study(
        law, cfg.gamma_field(), cfg.incident(), cfg.k, cfg.a_sequence(), cfg.probes(),
        seed=cfg.seed, effective_n=int(cfg.numerics["mesh"]),
    )
    rep.meta["seconds_per_a"] = [r.pop("seconds") for r in rows]
    rep.tables["convergence"] = Table.from_rows(rows)
    errs = [r["max_error"] for r in rows]
    rep.results["strictly_decreasing"] = bool(all(b < a for a, b in zip(errs, errs[1:])))


def _run_nrcheck(cfg: RunConfig, rep: RunReport) -> None:
    nr = cfg.raw["nrcheck"]
    omega = float(nr["omega"])
    if nr["index"] is not None:
        n = build_laurent(nr["index"], "nrcheck.index")
        terms = {int(p): parse_complex(c) for p, c in nr["index"]["terms"].items()}

        def dn(w):
            return sum(p * c * w ** (p - 1) for p, c in terms.items())

        res = em.negative_refraction_check(n, omega, dn)
    else:
        C = build_laurent(nr["coefficient"], "nrcheck.coefficient")
        n = em.index_from_coefficient(C, float(nr["wave_speed"]))
        res = em.negative_refraction_check(n, omega)
    fd = em.negative_refraction_check(n, omega)
    rep.results.update(negative=res.negative, value=res.value, n=res.n, dn_domega=res.dn_domega, value_central_difference=fd.value)


def _run_lemma3(cfg: RunConfig, rep: RunReport) -> None:
    law = cfg.law()
    f = build_field(cfg.raw["function"], "function", real=True)
    rows = em.lemma3_limit_check(f, law, cfg.a_sequence(), cfg.seed)
    rep.tables["lemma3"] = Table.from_rows(rows)


SCENARIO_RUNNERS = {
    "single": _run_single,
    "multi": _run_multi,
    "effective": _run_effective,
    "converge": _run_converge,
    "nrcheck": _run_nrcheck,
    "lemma3": _run_lemma3,
}


def run(cfg: RunConfig) -> RunReport:
    """Execute the configured scenario; warnings raised by the modules are
    recorded in the report."""
    # output location is run plumbing; keep it out of the reproducible echo
    echo = {key: value for key, value in cfg.raw.items() if key != "output"}
    rep = RunReport(cfg.scenario, echo, meta={"output": dict(cfg.raw["output"])})
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            SCENARIO_RUNNERS[cfg.scenario](cfg, rep)
        except (ValidationError, NumericalError) as exc:
            raise type(exc)(f"scenario {cfg.scenario!r}: {exc}") from exc
    for w in caught:
        rep.warn(f"{w.category.__name__}: {w.message}")
    rep.meta.update(
        timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(),
        seconds=time.perf_counter() - t0,
    )
    return rep


def _threads(arg: int | None) -> int | None:
    if arg is not None:
        value, source = arg, "--threads"
    elif os.environ.get(THREADS_ENV):
        value, source = os.environ[THREADS_ENV], THREADS_ENV
    else:
        return None
    try:
        n = int(value)
    except ValueError:
        raise ValidationError(f"{source} must be an integer >= 1, got {value!r}") from None
    if n < 1:
        raise ValidationError(f"{source} must be an integer >= 1, got {n}")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smallbody", description="Small-body EM scattering and effective-medium runs")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario and write a report")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    r.add_argument("--format", choices=("json", "csv"), default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--threads", type=int, default=None)
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("--config", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok (scenario={cfg.scenario})")
            return 0
        if args.seed is not None:
            cfg.raw["seed"] = int(args.seed)
        out = cfg.raw["output"]
        if args.out is not None:
            out["dir"] = args.out
        if args.format is not None:
            out["format"] = args.format
        n_threads = _threads(args.threads)
        limits = threadpool_limits(limits=n_threads) if n_threads else nullcontext()
        with limits:
            rep = run(cfg)
        rep.meta["threads"] = n_threads
        try:
            paths = emit(rep, out["dir"], out["format"], out["name"])
        except OSError as exc:
            raise ValidationError(f"cannot write report to {out['dir']}: {exc}") from exc
        for p in paths:
            print(p)
        for w in rep.warnings:
            print(f"warning: {w}", file=sys.stderr)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
