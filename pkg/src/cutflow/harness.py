"""Disorder sweeps: configuration, seeding, workers, statistics, export.

One *experiment* is a grid of ``(L, d)`` cells; each cell runs
``n_realizations`` independent disorder realizations through the full
pipeline (build, flow, reconstruct, evolve, sample, rescale, filter) and
reduces them into an :class:`EnsembleSummary`.  Everything a realization
needs is derived from ``(config, master_seed, cell, k)``, so reruns are
reproducible regardless of worker scheduling, and per-realization rows
land in CSV files next to a JSON summary.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import (
    CorrelationTrace,
    correlation_trace,
    default_time_grid,
    divergence_filter,
    reconstruct_number_operator,
    rescale_trace,
)
from .errors import ConfigurationError, EmptyEnsembleError
from .flow import FlowDivergenceError, FlowParams, initial_state, integrate_flow
from .lattice import ModelSpec, build_hamiltonian, sample_potential
from .opflow import FlowedCreationOperator, complexity
from .oracle import basis_states, fock_image, free_fermion_correlation

__all__ = [
    "ExperimentConfig",
    "EnsembleSummary",
    "run_experiment",
    "run_realization",
    "time_average",
    "finite_size_fit",
    "fit_localization_length",
    "output_root",
]

#: environment variable naming the default output root
OUTPUT_ENV = "CUTFLOW_OUTPUT"

#: JSON summary schema version
SCHEMA_VERSION = 1

#: oracle comparisons are refused above this many sites
_MAX_ORACLE_SITES = 14


def output_root() -> Path:
    """Default directory for experiment output (overridable by env var)."""
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one disorder sweep.

    All fields have CLI flags of the same name (hyphenated); a config
    file supplies ``key = value`` lines that CLI flags override.  With
    ``deterministic`` set, every output byte is a pure function of this
    object plus ``master_seed``.
    """

    l_values: tuple[int, ...] = (8,)
    d_values: tuple[float, ...] = (5.0,)
    family: str = "random-box"
    dims: int = 1
    ly: int | None = None
    hopping: float = 1.0
    delta0: float = 0.1
    n_realizations: int = 8
    sample_states: int = 256
    order: int = 4
    t_min: float = 0.1
    t_max: float = 1e5
    n_times: int = 200
    flow: FlowParams = field(default_factory=FlowParams)
    rescale: bool = True
    filter_divergent: bool | None = None
    oracle: bool = False
    output_dir: str | None = None
    master_seed: int = 0
    workers: int = 1
    deterministic: bool = False

    def __post_init__(self) -> None:
        if self.order not in (4, 6):
            raise ConfigurationError(f"order must be 4 or 6, got {self.order}")
        if self.n_realizations < 1:
            raise ConfigurationError("need at least one realization")
        if self.workers < 1:
            raise ConfigurationError("need at least one worker")
        if self.dims not in (1, 2):
            raise ConfigurationError(f"dims must be 1 or 2, got {self.dims}")
        for lv in self.l_values:
            if self.dims == 1 and lv % 2:
                raise ConfigurationError("half-filled sampling needs even L")

    # -- derived pieces --------------------------------------------------------

    def times(self) -> np.ndarray:
        return default_time_grid(self.n_times, self.t_min, self.t_max)

    def model_spec(self, l_value: int, d_value: float) -> ModelSpec:
        extent = l_value if self.dims == 1 else (l_value, self.ly or l_value)
        return ModelSpec(
            dims=self.dims,
            extent=extent,
            hopping=self.hopping,
            interaction=self.delta0,
            family=self.family,
            disorder=d_value,
            seed=self.master_seed,
        )

    def drop_divergent(self) -> bool:
        """Divergence filtering defaults to on only for 2D sweeps."""
        if self.filter_divergent is None:
            return self.dims == 2
        return self.filter_divergent

    def resolved_output(self) -> Path:
        return Path(self.output_dir) if self.output_dir else output_root()


def realization_seeds(master_seed: int, cell: int, k: int) -> tuple[int, int]:
    """(potential seed, sampler seed) for realization ``k`` of a cell.

    Uses the splittable SeedSequence construction, so the values depend
    only on the identifiers, never on worker scheduling.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=(cell, k))
    a, b = ss.generate_state(2)
    return int(a), int(b)


# ---------------------------------------------------------------------------
# per-realization pipeline


def _oracle_record(h0, diag) -> dict:
    """Median relative many-body eigenvalue error in the half-filled sector."""
    n = h0.n_sites
    states = basis_states(n, filling=n // 2)
    occ = ((states[:, None] >> np.arange(n)[None, :]) & 1).astype(float)
    pred = np.sort(diag.many_body_energies(occ))
    exact = np.sort(np.linalg.eigvalsh(fock_image(h0, states)))
    keep = np.abs(exact) > 1e-12
    rel = np.abs(pred[keep] - exact[keep]) / np.abs(exact[keep])
    return {
        "median_rel_error": float(np.median(rel)),
        "max_rel_error": float(np.max(rel)),
        "sector_dim": int(states.size),
    }


def run_realization(config: ExperimentConfig, cell: int, l_value: int,
                    d_value: float, k: int) -> dict:
    """Run one disorder realization end to end; never raises.

    Returns a record dict with either ``"trace"`` and diagnostics or
    ``"error"`` describing the failure.
    """
    pot_seed, sample_seed = realization_seeds(config.master_seed, cell, k)
    record: dict = {"k": k, "seed": pot_seed}
    try:
        spec = config.model_spec(l_value, d_value)
        pot = sample_potential(spec, seed=pot_seed)
        h = build_hamiltonian(spec, pot)
        h2_free = h.block(2).copy()
        h_oracle = h.copy() if config.oracle else None
        site = spec.n_sites // 2
        state = initial_state(h, op_sites=(site,))
        diag, ops, ledger = integrate_flow(state, config.flow)
        fop = FlowedCreationOperator.from_polynomial(ops[0], site)
        n0 = reconstruct_number_operator(fop, order=config.order)
        trace = correlation_trace(
            n0, diag, times=config.times(),
            n_samples=config.sample_states, seed=sample_seed,
            meta={"L": l_value, "d": d_value, "k": k},
        )
        trace.seed = pot_seed
        if config.rescale:
            free = free_fermion_correlation(h2_free, site, trace.times)
            trace = rescale_trace(trace, free)
        chi, chi_bar = complexity(fop)
        record.update(
            trace=trace,
            converged=diag.converged,
            l_final=diag.l_final,
            chi=chi,
            chi_bar=chi_bar,
            eps_total=ledger.eps_total,
            eps_frob=ledger.eps_frob,
            max_increment=float(max(ledger.increments, default=0.0)),
            induced_bandwidth=ledger.induced_bandwidth,
            delta=diag.delta.copy(),
        )
        if config.oracle and spec.n_sites <= _MAX_ORACLE_SITES:
            record["oracle"] = _oracle_record(h_oracle, diag)
    except FlowDivergenceError as exc:
        record["error"] = f"flow divergence: {exc}"
    except Exception as exc:  # noqa: BLE001 - a worker must not kill the sweep
        record["error"] = f"{type(exc).__name__}: {exc}"
    return record


# ---------------------------------------------------------------------------
# reduction


def _stats(values) -> dict:
    arr = np.asarray([v for v in values if v is not None], dtype=float)
    if arr.size == 0:
        return {"n": 0}
    return {
        "n": int(arr.size),
        "mean": float(arr.mean()),
        "std": float(arr.std()),
        "median": float(np.median(arr)),
        "min": float(arr.min()),
        "max": float(arr.max()),
    }


@dataclass
class EnsembleSummary:
    """Reduced statistics of one ``(L, d)`` cell.

    ``c_mean``/``c_var`` hold the pointwise ensemble mean and variance
    of the retained traces; ``counts`` reconciles attempted,
    succeeded, failed and dropped realizations.
    """

    l_value: int
    d_value: float
    family: str
    times: np.ndarray
    c_mean: np.ndarray | None
    c_var: np.ndarray | None
    cbar: dict
    counts: dict
    drop_fraction: float
    chi: dict
    chi_bar: dict
    ledger: dict
    oracle: dict | None
    converged_fraction: float

    def to_json_dict(self) -> dict:
        return {
            "L": self.l_value,
            "d": self.d_value,
            "family": self.family,
            "times": self.times.tolist(),
            "c_mean": None if self.c_mean is None else self.c_mean.tolist(),
            "c_var": None if self.c_var is None else self.c_var.tolist(),
            "cbar": self.cbar,
            "counts": self.counts,
            "drop_fraction": self.drop_fraction,
            "chi": self.chi,
            "chi_bar": self.chi_bar,
            "ledger": self.ledger,
            "oracle": self.oracle,
            "converged_fraction": self.converged_fraction,
        }


def _reduce_cell(config: ExperimentConfig, l_value: int, d_value: float,
                 records: list[dict]) -> EnsembleSummary:
    times = config.times()
    ok = [r for r in records if "trace" in r]
    failed = [r for r in records if "error" in r]
    traces = [r["trace"] for r in ok]
    if traces and config.drop_divergent():
        try:
            retained, drop_fraction = divergence_filter(traces)
        except EmptyEnsembleError:
            retained, drop_fraction = [], 1.0
    else:
        retained, drop_fraction = traces, 0.0
    kept_ids = {id(t) for t in retained}
    kept = [r for r in ok if id(r["trace"]) in kept_ids]

    c_mean = c_var = None
    cbar: dict = {"n": 0}
    if retained:
        mat = np.array([t.values() for t in retained])
        c_mean = mat.mean(axis=0)
        c_var = mat.var(axis=0)
        try:
            cbar = _stats([time_average(t) for t in retained])
        except ConfigurationError:
            cbar = {"n": 0}

    counts = {
        "attempted": len(records),
        "succeeded": len(kept),
        "failed": len(failed),
        "dropped": len(ok) - len(kept),
    }
    oracle_stats = None
    med = [r["oracle"]["median_rel_error"] for r in kept if "oracle" in r]
    if med:
        oracle_stats = _stats(med)
    return EnsembleSummary(
        l_value=l_value,
        d_value=d_value,
        family=config.family,
        times=times,
        c_mean=c_mean,
        c_var=c_var,
        cbar=cbar,
        counts=counts,
        drop_fraction=drop_fraction,
        chi=_stats([r.get("chi") for r in kept]),
        chi_bar=_stats([r.get("chi_bar") for r in kept]),
        ledger={
            "eps_total": _stats([r.get("eps_total") for r in kept]),
            "eps_frob": _stats([r.get("eps_frob") for r in kept]),
            "max_increment": _stats([r.get("max_increment") for r in kept]),
            "induced_bandwidth": _stats([r.get("induced_bandwidth") for r in kept]),
        },
        oracle=oracle_stats,
        converged_fraction=(
            sum(1 for r in kept if r.get("converged")) / len(kept) if kept else 0.0
        ),
    )


# ---------------------------------------------------------------------------
# output


def _flags(trace: CorrelationTrace, record: dict) -> str:
    flags = []
    if trace.diverged:
        flags.append("diverged")
    if not record.get("converged", True):
        flags.append("unconverged")
    return ";".join(flags)


def _write_trace_csv(path: Path, trace: CorrelationTrace, record: dict) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "t", "C_raw", "C_rescaled", "c1", "c2", "flags"])
        flags = _flags(trace, record)
        resc = trace.c_rescaled
        for i, t in enumerate(trace.times):
            w.writerow([
                trace.seed,
                f"{t:.12g}",
                f"{trace.c_raw[i]:.12g}",
                "" if resc is None else f"{resc[i]:.12g}",
                "" if trace.c1 is None else f"{trace.c1:.12g}",
                "" if trace.c2 is None else f"{trace.c2:.12g}",
                flags,
            ])


def _config_json(config: ExperimentConfig) -> dict:
    out = dataclasses.asdict(config)
    out["l_values"] = list(config.l_values)
    out["d_values"] = list(config.d_values)
    return out


_POOL_CONFIG: ExperimentConfig | None = None


def _pool_init(config: ExperimentConfig) -> None:
    global _POOL_CONFIG
    _POOL_CONFIG = config


def _pool_run(args: tuple[int, int, float, int]) -> dict:
    cell, l_value, d_value, k = args
    return run_realization(_POOL_CONFIG, cell, l_value, d_value, k)


def run_experiment(config: ExperimentConfig) -> tuple[list[EnsembleSummary], Path]:
    """Execute a sweep and write trace CSVs plus a summary JSON.

    Realizations are independent; failures are recorded and skipped, an
    all-failed cell simply reports zero successes.  Reduction happens in
    realization order, so worker scheduling cannot change any output.
    Returns the summaries and the summary-file path.
    """
    if config.deterministic:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, "1")
    out_dir = config.resolved_output()
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs: list[tuple[int, int, float, int]] = []
    cells = [(lv, dv) for lv in config.l_values for dv in config.d_values]
    for cell, (lv, dv) in enumerate(cells):
        jobs += [(cell, lv, dv, k) for k in range(config.n_realizations)]

    if config.workers > 1:
        with ProcessPoolExecutor(
            max_workers=config.workers,
            initializer=_pool_init,
            initargs=(config,),
        ) as pool:
            results = list(pool.map(_pool_run, jobs))
    else:
        results = [run_realization(config, *job) for job in jobs]

    by_cell: dict[int, list[dict]] = {}
    for job, rec in zip(jobs, results):
        by_cell.setdefault(job[0], []).append(rec)

    summaries = []
    for cell, (lv, dv) in enumerate(cells):
        records = sorted(by_cell.get(cell, []), key=lambda r: r["k"])
        # reduce first: the divergence filter sets the flags the CSVs record
        summaries.append(_reduce_cell(config, lv, dv, records))
        for rec in records:
            if "trace" not in rec:
                continue
            name = f"trace_L{lv}_d{dv:g}_k{rec['k']:03d}.csv"
            _write_trace_csv(out_dir / name, rec["trace"], rec)

    summary_path = out_dir / "summary.json"
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": _config_json(config),
        "cells": [s.to_json_dict() for s in summaries],
    }
    summary_path.write_text(json.dumps(payload, indent=1, sort_keys=True))
    return summaries, summary_path


# ---------------------------------------------------------------------------
# post-processing


def time_average(trace: CorrelationTrace, window: tuple[float, float] = (50.0, 1e3)) -> float:
    """Arithmetic mean of C over the grid points inside ``window``.

    The default window targets the late-time plateau; a grid that does
    not reach into the window is a configuration error.
    """
    lo, hi = window
    if lo > hi:
        raise ConfigurationError(f"empty window {window}")
    mask = (trace.times >= lo) & (trace.times <= hi)
    if not np.any(mask):
        raise ConfigurationError(
            f"time grid [{trace.times.min():g}, {trace.times.max():g}] misses "
            f"the window [{lo:g}, {hi:g}]"
        )
    return float(np.mean(trace.values()[mask]))


def finite_size_fit(cbar_by_l: dict) -> tuple[float, float]:
    """Extrapolate window-averaged C to infinite size.

    Weighted least squares of C-bar against ``1/L``; values may be bare
    floats or ``(value, standard_error)`` pairs (errors become inverse-
    variance weights).  Returns ``(intercept, intercept_uncertainty)``.
    """
    if len(cbar_by_l) < 3:
        raise ConfigurationError("finite-size fit needs at least 3 sizes")
    sizes = np.array(sorted(cbar_by_l), dtype=float)
    if np.unique(sizes).size < 3:
        raise ConfigurationError("finite-size fit needs 3 distinct sizes")
    vals, errs = [], []
    for lv in sizes:
        entry = cbar_by_l[int(lv)] if int(lv) in cbar_by_l else cbar_by_l[lv]
        if np.iterable(entry):
            v, e = entry
        else:
            v, e = entry, 0.0
        vals.append(float(v))
        errs.append(float(e))
    y = np.array(vals)
    se = np.array(errs)
    w = np.where(se > 0, 1.0 / np.maximum(se**2, 1e-300), 1.0)
    if not np.all(se > 0):
        w = np.ones_like(se)  # mixed/absent errors: fall back to uniform
    x = 1.0 / sizes
    a = np.column_stack([np.ones_like(x), x])
    aw = a * w[:, None]
    cov = np.linalg.inv(a.T @ aw)
    coef = cov @ (aw.T @ y)
    return float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0)))


def fit_localization_length(delta: np.ndarray) -> float:
    """Decay length of ``|Delta_ij|`` with distance ``|i - j|``.

    Medians over equal-distance bins tame outliers; bins whose median is
    below ``1e-14`` are dropped as numerical zeros.  A matrix with fewer
    than two usable bins (e.g. the free case) returns ``nan``.
    """
    delta = np.asarray(delta)
    n = delta.shape[0]
    dist = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    xs, ys = [], []
    for r in range(1, n):
        vals = np.abs(delta[dist == r])
        if vals.size == 0:
            continue
        med = float(np.median(vals))
        if med < 1e-14:
            continue
        xs.append(float(r))
        ys.append(math.log(med))
    if len(xs) < 2:
        return float("nan")
    slope = np.polyfit(xs, ys, 1)[0]
    if slope >= 0:
        warnings.warn("interaction matrix does not decay; no localization length")
        return float("nan")
    return float(-1.0 / slope)
