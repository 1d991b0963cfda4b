"""Delimited text artifacts exchanged between commands.

Every file starts with ``# key=value`` provenance lines (alpha, T, N, mesh,
seed, ...), followed by one header row naming the comma-separated columns
and then the data rows. Values are written with 17 significant digits so a
file read back reproduces the arrays exactly.
"""
from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from fracsource.errors import ConfigError
from fracsource.fractime import TimeGrid

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Keys that must agree between artifacts combined by one command.
GRID_KEYS = ("alpha", "T", "N")


def grid_provenance(grid: TimeGrid, **extra) -> Dict[str, str]:
    prov = {"alpha": repr(float(grid.alpha)), "T": repr(float(grid.T)), "N": str(grid.N)}
    prov.update({k: str(v) for k, v in extra.items() if v is not None})
    return prov


def grid_from_provenance(prov: Dict[str, str], path: PathLike = "") -> TimeGrid:
    try:
        return TimeGrid(T=float(prov["T"]), N=int(prov["N"]), alpha=float(prov["alpha"]))
    except KeyError as e:
        raise ConfigError(f"{path}: provenance header lacks {e.args[0]!r}", "header_mismatch") from None
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"{path}: malformed provenance header: {e}", "header_mismatch") from None


def write_table(
    path: PathLike,
    columns: Sequence[str],
    data: np.ndarray,
    provenance: Optional[Dict[str, str]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[1] != len(columns):
        raise ValueError(f"{len(columns)} column names for {data.shape[1]} columns")
    header = [f"# {key}={value}" for key, value in (provenance or {}).items()] + [", ".join(columns)]
    temp_path = path.with_name(path.name + ".tmp")
    with open(temp_path, "w", encoding="utf-8") as f:
        np.savetxt(f, data, fmt="%.17g", delimiter=", ", header="\n".join(header), comments="")
        f.flush()
        os.fsync(f.fileno())
    os.rename(temp_path, path)
    logger.debug(f"Wrote {path} ({data.shape[0]} rows)")
    return path


def read_table(path: PathLike) -> Tuple[Dict[str, str], List[str], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"artifact {path} does not exist", "missing_artifact")
    provenance: Dict[str, str] = {}
    columns: Optional[List[str]] = None
    body: List[str] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                provenance[key.strip()] = value.strip()
        elif columns is None:
            columns = [c.strip() for c in line.split(",")]
        else:
            body.append(line)
    if columns is None:
        raise ConfigError(f"{path} has no header row", "invalid_artifact")
    if not body:
        return provenance, columns, np.empty((0, len(columns)))
    try:
        data = np.loadtxt(body, delimiter=",", ndmin=2)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}", "invalid_artifact") from None
    if data.shape[1] != len(columns):
        raise ConfigError(f"{path}: expected {len(columns)} values per row, found {data.shape[1]}",
                          "invalid_artifact")
    return provenance, columns, data


def _expect_columns(path: PathLike, columns: List[str], expected: Sequence[str]) -> None:
    if columns[: len(expected)] != list(expected):
        raise ConfigError(f"{path}: expected columns {list(expected)}, found {columns}", "invalid_artifact")


def check_compatible(a: Dict[str, str], b: Dict[str, str], keys: Iterable[str] = GRID_KEYS,
                     what: str = "artifacts") -> None:
    """Raise when two provenance headers disagree on any of ``keys``."""
    for key in keys:
        if key in a and key in b and a[key] != b[key]:
            raise ConfigError(f"{what} disagree on {key}: {a[key]} vs {b[key]}", "header_mismatch")


###############################################################################
# Typed artifacts
###############################################################################

def write_v_trace(path: PathLike, grid: TimeGrid, v_trace: np.ndarray, **extra) -> Path:
    data = np.column_stack((grid.times, v_trace))
    return write_table(path, ["t", "v"], data, grid_provenance(grid, kind="v_trace", **extra))


def read_v_trace(path: PathLike) -> Tuple[TimeGrid, np.ndarray, Dict[str, str]]:
    prov, columns, data = read_table(path)
    _expect_columns(path, columns, ["t", "v"])
    grid = grid_from_provenance(prov, path)
    if len(data) != grid.N + 1:
        raise ConfigError(f"{path}: header says N={grid.N} but holds {len(data)} rows", "header_mismatch")
    return grid, data[:, 1].copy(), prov


def write_moments(path: PathLike, series, **extra) -> Path:
    data = np.column_stack((series.times, series.E, series.V))
    prov = grid_provenance(
        series.grid,
        kind="moments",
        provenance=series.provenance,
        noise_level=repr(float(series.noise_level)),
        realizations=series.realizations,
        **extra,
    )
    return write_table(path, ["t", "E", "V"], data, prov)


def read_moments(path: PathLike):
    from fracsource.moments import PROVENANCES, MomentSeries

    prov, columns, data = read_table(path)
    _expect_columns(path, columns, ["t", "E", "V"])
    grid = grid_from_provenance(prov, path)
    if len(data) != grid.N:
        raise ConfigError(f"{path}: header says N={grid.N} but holds {len(data)} rows", "header_mismatch")
    provenance = prov.get("provenance", "monte-carlo")
    if provenance not in PROVENANCES:
        raise ConfigError(f"{path}: unknown moment provenance {provenance!r}; expected one of {PROVENANCES}",
                          "header_mismatch")
    try:
        noise_level = float(prov.get("noise_level", 0.0))
        realizations = int(prov["realizations"]) if prov.get("realizations") else None
    except ValueError as e:
        raise ConfigError(f"{path}: malformed provenance header: {e}", "header_mismatch") from None
    series = MomentSeries(
        E=data[:, 1].copy(),
        V=data[:, 2].copy(),
        grid=grid,
        provenance=provenance,
        noise_level=noise_level,
        realizations=realizations,
    )
    return series, prov


def write_ensemble_text(path: PathLike, ensemble, thin: int = 1, **extra) -> Path:
    """One column per realization (every ``thin``-th), header ``t, r0, r1, ...``."""
    kept = np.arange(0, ensemble.realization_count, max(1, thin))
    data = np.column_stack((ensemble.grid.times, ensemble.trajectories[kept].T))
    prov = grid_provenance(ensemble.grid, kind="ensemble", seed=ensemble.seed, solver=ensemble.solver_tag,
                           realizations=ensemble.realization_count, **extra)
    return write_table(path, ["t"] + [f"r{i}" for i in kept], data, prov)


def save_ensemble(path: PathLike, ensemble, **extra) -> Path:
    """Binary ``.npz`` form for large ensembles, written atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    prov = grid_provenance(ensemble.grid, kind="ensemble", seed=ensemble.seed, solver=ensemble.solver_tag,
                           strategy=ensemble.strategy, **extra)
    temp_path = path.with_name(path.name + ".tmp")
    with open(temp_path, "wb") as f:
        np.savez(f, trajectories=ensemble.trajectories,
                 provenance_keys=np.array(list(prov.keys())), provenance_values=np.array(list(prov.values())))
        f.flush()
        os.fsync(f.fileno())
    os.rename(temp_path, path)
    return path


def load_ensemble(path: PathLike):
    from fracsource.stochastic import Ensemble

    path = Path(path)
    if not path.exists():
        raise ConfigError(f"artifact {path} does not exist", "missing_artifact")
    with np.load(path, allow_pickle=False) as data:
        prov = dict(zip((str(k) for k in data["provenance_keys"]), (str(v) for v in data["provenance_values"])))
        trajectories = data["trajectories"]
    ensemble = Ensemble(
        trajectories=trajectories,
        seed=int(prov.get("seed", 0)),
        solver_tag=prov.get("solver", "fem"),
        grid=grid_from_provenance(prov, path),
        strategy=prov.get("strategy", "response"),
    )
    return ensemble, prov


def write_reconstruction(path: PathLike, result, grid: TimeGrid, spec=None, **extra) -> Path:
    columns = ["t", "g1_rec", "g2abs_rec"]
    data = [result.times, result.g1_rec, result.g2abs_rec]
    if spec is not None:
        columns += ["g1_true", "g2abs_true"]
        data += [spec.g1(result.times), np.abs(spec.g2(result.times))]
    prov = grid_provenance(
        grid,
        kind="reconstruction",
        gamma1=repr(result.gamma1),
        gamma2=repr(result.gamma2),
        iterations1=result.g1.iterations,
        iterations2=result.g2sq.iterations,
        rho1=repr(result.spectral_radius_1),
        rho2=repr(result.spectral_radius_2),
        clipped=result.clipped,
        **extra,
    )
    return write_table(path, columns, np.column_stack(data), prov)


def write_rows(path: PathLike, rows: List[List[str]], provenance: Optional[Dict[str, str]] = None) -> Path:
    """Free-form delimited table whose first row is the header (reports, study tables)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for key, value in (provenance or {}).items():
            f.write(f"# {key}={value}\n")
        for row in rows:
            f.write(", ".join(str(c) for c in row) + "\n")
    return path
