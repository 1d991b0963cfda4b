"""fracsource command-line entry point and importable ``cmd_*`` helpers.

Commands share one YAML config and exchange delimited text artifacts through
the output directory::

    fracsource forward --config configs/smooth_homogeneous.yaml --out out/
    fracsource moments --config configs/smooth_homogeneous.yaml --out out/
    fracsource invert  --config configs/smooth_homogeneous.yaml --out out/ --delta 0.01
    fracsource verify  --config configs/smooth_homogeneous.yaml --out out/
    fracsource basis   --config configs/nonsmooth_channels.yaml --bases 2
    fracsource study time-order --out out/

Users who prefer Python can call the helpers directly::

    from fracsource.cli import cmd_forward
    from fracsource.models import load_config

    cmd_forward(load_config("configs/smooth_homogeneous.yaml"))
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from fracsource.errors import ConfigError, FracSourceError
from fracsource.fractime import TimeGrid
from fracsource.gmsfem import reduce
from fracsource.inverse import plateau_means, reconstruct, truth_errors
from fracsource.io import (
    check_compatible,
    grid_provenance,
    load_ensemble,
    read_moments,
    read_v_trace,
    save_ensemble,
    write_ensemble_text,
    write_moments,
    write_reconstruction,
    write_rows,
    write_v_trace,
)
from fracsource.models import RunConfig, load_config
from fracsource.moments import estimate_moments, exact_moments, inject_noise
from fracsource.pipeline import (
    basis_for,
    build_model,
    build_operators,
    build_problem,
    build_signals,
    mean_trajectory,
    open_cache,
)
from fracsource.stochastic import measurement_stream, run_ensemble
from fracsource.studies import (
    STUDY_KINDS,
    StudyTable,
    dof_speedup_study,
    mc_rate_study,
    noise_trend_study,
    time_order_study,
)
from fracsource.verify import check_bounds

logger = logging.getLogger(__name__)

V_TRACE_FILE = "v_trace.csv"
ENSEMBLE_FILE = "ensemble.npz"
ENSEMBLE_TEXT_FILE = "ensemble.csv"
MOMENTS_FILE = "moments.csv"
NOISY_MOMENTS_FILE = "moments_noisy.csv"
RECONSTRUCTION_FILE = "reconstruction.csv"
SUMMARY_FILE = "reconstruction_summary.csv"
BOUNDS_TEXT_FILE = "bounds.txt"
BOUNDS_FILE = "bounds.csv"
BASIS_FILE = "basis_eigenvalues.csv"


###############################################################################
# Internal helpers
###############################################################################

def _out(config: RunConfig) -> Path:
    path = Path(config.output.directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _provenance(config: RunConfig, solver_tag: str) -> Dict[str, object]:
    return {
        "mesh": config.mesh.cells_per_side,
        "solver": solver_tag,
        "x0": f"{config.observation.x0[0]}:{config.observation.x0[1]}",
        "seed": config.ensemble.seed,
    }


def _grid(config: RunConfig) -> TimeGrid:
    return TimeGrid(T=config.time.T, N=config.time.N, alpha=config.time.alpha)


def _check_config_grid(config: RunConfig, prov: Dict[str, str], path: Path) -> None:
    check_compatible(grid_provenance(_grid(config)), prov, what=f"config and {path.name}")


###############################################################################
# Public runner API (can be imported)
###############################################################################

def cmd_forward(config: RunConfig) -> Dict[str, Path]:
    """Deterministic v-trace and, when realizations are requested, the ensemble."""
    out = _out(config)
    problem = build_problem(config)
    ops = build_operators(problem, cache=open_cache(config))
    model = build_model(problem, ops)
    prov = _provenance(config, model.solver_tag)

    v = model.v_trace()
    if not v[1] > 0:
        logger.warning(f"v(x0, t_1) = {v[1]:.3e} is not positive; inversion will reject this trace")
    files = {"v_trace": write_v_trace(out / V_TRACE_FILE, problem.grid, v, dof=model.dof, **prov)}
    logger.info(f"v(x0, t_1) = {v[1]:.6e}, dof = {model.dof}")

    ens = config.ensemble
    ensemble = run_ensemble(model, problem.spec, ens.realizations, ens.seed, strategy=ens.strategy,
                            workers=ens.workers, batch_size=ens.batch_size, keep_final=ens.keep_final)
    files["ensemble"] = save_ensemble(out / ENSEMBLE_FILE, ensemble, mesh=config.mesh.cells_per_side,
                                      x0=prov["x0"])
    if ens.text_columns:
        thin = max(1, ensemble.realization_count // ens.text_columns)
        files["ensemble_text"] = write_ensemble_text(out / ENSEMBLE_TEXT_FILE, ensemble, thin=thin,
                                                     mesh=config.mesh.cells_per_side)
    return files


def cmd_moments(config: RunConfig, ensemble_path: Optional[Path] = None, v_trace_path: Optional[Path] = None,
                exact: bool = False) -> Path:
    """E and V from the ensemble, or by quadrature of the v-trace with the configured signals."""
    out = _out(config)
    if exact or config.inversion.moments == "exact":
        v_trace_path = Path(v_trace_path or out / V_TRACE_FILE)
        grid, v, prov = read_v_trace(v_trace_path)
        _check_config_grid(config, prov, v_trace_path)
        series = exact_moments(v, build_signals(config), grid)
        extra = {"solver": prov.get("solver"), "mesh": prov.get("mesh")}
    else:
        ensemble_path = Path(ensemble_path or out / ENSEMBLE_FILE)
        ensemble, prov = load_ensemble(ensemble_path)
        _check_config_grid(config, prov, ensemble_path)
        series = estimate_moments(ensemble, ensemble.grid)
        extra = {"solver": prov.get("solver"), "mesh": prov.get("mesh"), "seed": prov.get("seed")}
    return write_moments(out / MOMENTS_FILE, series, **extra)


def cmd_invert(config: RunConfig, moments_path: Optional[Path] = None,
               v_trace_path: Optional[Path] = None) -> Dict[str, Path]:
    out = _out(config)
    moments_path = Path(moments_path or out / MOMENTS_FILE)
    v_trace_path = Path(v_trace_path or out / V_TRACE_FILE)
    series, m_prov = read_moments(moments_path)
    grid, v, v_prov = read_v_trace(v_trace_path)
    check_compatible(m_prov, v_prov, what=f"{moments_path.name} and {v_trace_path.name}")
    check_compatible(m_prov, v_prov, keys=("solver", "mesh"), what=f"{moments_path.name} and {v_trace_path.name}")

    inv = config.inversion
    files: Dict[str, Path] = {}
    if inv.delta > 0:
        noise_seed = inv.noise_seed if inv.noise_seed is not None else config.ensemble.seed
        series = inject_noise(series, inv.delta, measurement_stream(noise_seed))
        files["noisy_moments"] = write_moments(out / NOISY_MOMENTS_FILE, series, noise_seed=noise_seed)

    result = reconstruct(v, series, inv.gamma1, inv.gamma2, inv.max_iter, inv.stop_tol)
    spec = build_signals(config)
    files["reconstruction"] = write_reconstruction(out / RECONSTRUCTION_FILE, result, grid, spec=spec,
                                                   delta=repr(inv.delta))

    errors = truth_errors(result, spec)
    plateaus = plateau_means(result.times, result.g2abs_rec, grid.T)
    summary = [["key", "value"]]
    summary += [[k, format(v_, ".10g")] for k, v_ in errors.items()]
    summary += [
        ["residual_g1", format(result.g1.residual, ".10g")],
        ["residual_g2sq", format(result.g2sq.residual, ".10g")],
        ["iterations_g1", result.g1.iterations],
        ["iterations_g2sq", result.g2sq.iterations],
        ["rho_g1", format(result.spectral_radius_1, ".10g")],
        ["rho_g2sq", format(result.spectral_radius_2, ".10g")],
        ["clipped", result.clipped],
    ]
    summary += [[f"g2abs_plateau_{i + 1}", format(p, ".10g")] for i, p in enumerate(plateaus)]
    files["summary"] = write_rows(out / SUMMARY_FILE, summary, grid_provenance(grid, kind="summary"))
    logger.info("Errors vs configured signals: " + ", ".join(f"{k}={v_:.4g}" for k, v_ in errors.items()))
    return files


def cmd_verify(config: RunConfig, v_trace_path: Optional[Path] = None, moments_path: Optional[Path] = None,
               ensemble_path: Optional[Path] = None, strict: bool = True) -> Dict[str, Path]:
    """Bound checks on the stored artifacts.

    Without an ensemble the expected trajectory norm is taken from the mean
    trajectory, which can only lower the right-hand sides. Without a moments
    file V comes from quadrature of the v-trace.
    """
    out = _out(config)
    v_trace_path = Path(v_trace_path or out / V_TRACE_FILE)
    grid, v, v_prov = read_v_trace(v_trace_path)
    _check_config_grid(config, v_prov, v_trace_path)
    problem = build_problem(config)
    spec = problem.spec

    if moments_path is not None:
        series, m_prov = read_moments(moments_path)
        check_compatible(m_prov, v_prov, what="moments and v-trace")
    else:
        series = exact_moments(v, spec, grid)

    if ensemble_path is not None:
        ensemble, e_prov = load_ensemble(ensemble_path)
        check_compatible(e_prov, v_prov, what="ensemble and v-trace")
        trajectories = ensemble.trajectories
    else:
        model = build_model(problem, build_operators(problem, cache=open_cache(config)))
        trajectories = mean_trajectory(model, spec)[None, :]

    g1, g2 = spec.samples(grid)
    report = check_bounds(g1, g2, trajectories, series.V, v, grid, eta=config.eta,
                          M_bound=spec.M_bound, Cf=problem.Cf, tol=config.verify.tol)
    text = report.to_text()
    (out / BOUNDS_TEXT_FILE).write_text(text, encoding="utf-8")
    files = {"text": out / BOUNDS_TEXT_FILE,
             "table": write_rows(out / BOUNDS_FILE, report.to_rows(), grid_provenance(grid, kind="bounds"))}
    logger.info("Bound checks:\n" + text)
    if strict:
        report.raise_on_failure()
    return files


def cmd_basis(config: RunConfig) -> Path:
    """Build (or fetch from the cache) the GMsFEM basis and record its eigenvalues."""
    out = _out(config)
    problem = build_problem(config)
    bases = config.solver.bases_per_neighborhood
    basis = basis_for(problem, bases, config.solver.snapshots, open_cache(config))
    reduced = reduce(problem.fine_ops, basis, problem.source)
    logger.info(f"GMsFEM basis: {basis.total_dof} dofs ({problem.coarse_grid().n_coarse} neighborhoods x {bases}), "
                f"fine system {problem.fine_ops.size} dofs, reduced system {reduced.size} dofs")
    rows: List[List[object]] = [["neighborhood"] + [f"lambda_{l + 1}" for l in range(bases)]]
    for i, values in enumerate(basis.eigenvalues):
        rows.append([i] + [format(float(x), ".10g") for x in values])
    prov = {"mesh": config.mesh.cells_per_side, "blocks": config.mesh.blocks_per_side,
            "bases": bases, "snapshots": basis.kind, "dof": basis.total_dof, "fine_dof": problem.fine_ops.size}
    return write_rows(out / BASIS_FILE, rows, {k: str(v) for k, v in prov.items()})


def cmd_study(config: RunConfig, kind: str, realizations: Optional[List[int]] = None,
              deltas: Optional[List[float]] = None) -> StudyTable:
    if kind not in STUDY_KINDS:
        raise ConfigError(f"unknown study {kind!r}; expected one of {STUDY_KINDS}", "invalid_study")
    out = _out(config)
    if kind == "time-order":
        table = time_order_study(T=config.time.T)
    else:
        problem = build_problem(config)
        cache = open_cache(config)
        if kind == "dof-speedup":
            table = dof_speedup_study(problem, realizations=config.ensemble.realizations,
                                      seed=config.ensemble.seed, cache=cache)
        else:
            model = build_model(problem, build_operators(problem, cache=cache))
            if kind == "mc-rate":
                kwargs = {"realizations": realizations} if realizations else {}
                table = mc_rate_study(model, problem.spec, seed=config.ensemble.seed,
                                      workers=config.ensemble.workers, batch_size=config.ensemble.batch_size,
                                      **kwargs)
            else:
                inv = config.inversion
                kwargs = {"deltas": deltas} if deltas else {}
                table = noise_trend_study(model.v_trace(), problem.spec, problem.grid,
                                          seed=inv.noise_seed if inv.noise_seed is not None else config.ensemble.seed,
                                          gamma1=inv.gamma1, gamma2=inv.gamma2, max_iter=inv.max_iter,
                                          stop_tol=inv.stop_tol, **kwargs)
    prov = {k: format(v, ".10g") for k, v in table.summary.items()}
    write_rows(out / f"study_{kind.replace('-', '_')}.csv", table.as_rows(), prov)
    return table


###############################################################################
# CLI entry-point
###############################################################################

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults are used when omitted)")
    common.add_argument("--out", help="Output directory (overrides output.directory)")
    common.add_argument("--seed", type=int, help="Master seed for the realization streams")
    common.add_argument("--solver", choices=["fem", "gmsfem"], help="Spatial solver")
    common.add_argument("--bases", type=int, help="GMsFEM bases per coarse neighborhood")
    common.add_argument("--delta", type=float, help="Relative noise level added to the moments")
    common.add_argument("--realizations", type=int, help="Monte Carlo realizations R")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    verbosity.add_argument("--quiet", action="store_true", help="Log warnings and errors only")

    p = argparse.ArgumentParser(
        prog="fracsource",
        description="Forward and inverse solvers for the time-fractional stochastic diffusion equation",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("forward", parents=[common], help="Deterministic v-trace and Monte Carlo ensemble")

    moments = sub.add_parser("moments", parents=[common], help="Estimate E and V of the integrated observations")
    moments.add_argument("--ensemble", help="Ensemble file (default: <out>/ensemble.npz)")
    moments.add_argument("--v-trace", help="v-trace file used with --exact (default: <out>/v_trace.csv)")
    moments.add_argument("--exact", action="store_true", help="Quadrature moments from the v-trace and signals")

    invert = sub.add_parser("invert", parents=[common], help="Reconstruct g1 and |g2| from moments")
    invert.add_argument("--moments", help="Moments file (default: <out>/moments.csv)")
    invert.add_argument("--v-trace", help="v-trace file (default: <out>/v_trace.csv)")

    verify = sub.add_parser("verify", parents=[common], help="Check the stability bounds on stored artifacts")
    verify.add_argument("--v-trace", help="v-trace file (default: <out>/v_trace.csv)")
    verify.add_argument("--moments", help="Moments file (default: quadrature of the v-trace)")
    verify.add_argument("--ensemble", help="Ensemble file (default: mean trajectory)")
    verify.add_argument("--eta", type=float, help="Window length eta (default 5 dt)")

    sub.add_parser("basis", parents=[common], help="Build or fetch the GMsFEM basis")

    study = sub.add_parser("study", parents=[common], help="Convergence and cost studies")
    study.add_argument("kind", choices=STUDY_KINDS)
    study.add_argument("--sizes", type=int, nargs="+", help="Ensemble sizes for mc-rate")
    study.add_argument("--deltas", type=float, nargs="+", help="Noise levels for noise-trend")
    return p


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    overrides = {
        "output.directory": args.out,
        "ensemble.seed": args.seed,
        "solver.kind": args.solver,
        "solver.bases_per_neighborhood": args.bases,
        "inversion.delta": args.delta,
        "ensemble.realizations": args.realizations,
    }
    if getattr(args, "eta", None) is not None:
        overrides["verify.eta"] = args.eta
    if args.command == "basis":
        overrides["solver.kind"] = "gmsfem"
    return overrides


def _dispatch(args: argparse.Namespace, config: RunConfig) -> None:
    if args.command == "forward":
        cmd_forward(config)
    elif args.command == "moments":
        cmd_moments(config, args.ensemble, args.v_trace, exact=args.exact)
    elif args.command == "invert":
        cmd_invert(config, args.moments, args.v_trace)
    elif args.command == "verify":
        cmd_verify(config, args.v_trace, args.moments, args.ensemble)
    elif args.command == "basis":
        cmd_basis(config)
    elif args.command == "study":
        cmd_study(config, args.kind, realizations=args.sizes, deltas=args.deltas)


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(message)s")

    try:
        config = load_config(args.config, _overrides(args))
        _dispatch(args, config)
    except FracSourceError as e:
        logger.error(str(e))
        return e.exit_code
    logger.info(f"{args.command} completed.")
    return 0


if __name__ == "__main__":
    sys.exit(main())
