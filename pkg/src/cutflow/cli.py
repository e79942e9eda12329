"""Command-line front end.

Verbs:

``run``
    Execute a disorder sweep and write trace CSVs plus ``summary.json``.
``oracle-check``
    Small-system sweep with the exact-diagonalization comparison forced
    on; prints eigenvalue-error statistics.
``summarize``
    Print a table from an existing ``summary.json``.
``fss``
    Finite-size extrapolation of the window-averaged correlation from an
    existing ``summary.json``.
``complexity``
    Flow a range of sizes and report operator-complexity scaling.

Options come from (lowest to highest precedence) dataclass defaults, a
``key = value`` config file, and CLI flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .flow import FlowParams, initial_state, integrate_flow
from .harness import (
    ExperimentConfig,
    finite_size_fit,
    realization_seeds,
    run_experiment,
)
from .lattice import build_hamiltonian, sample_potential
from .opflow import FlowedCreationOperator, complexity

__all__ = ["main", "build_config"]


# ---------------------------------------------------------------------------
# configuration assembly


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _float_tuple(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    word = str(text).strip().lower()
    if word in ("1", "true", "yes", "on"):
        return True
    if word in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


_CONFIG_CASTERS = {
    "l_values": _int_tuple,
    "d_values": _float_tuple,
    "family": str,
    "dims": int,
    "ly": int,
    "hopping": float,
    "delta0": float,
    "n_realizations": int,
    "sample_states": int,
    "order": int,
    "t_min": float,
    "t_max": float,
    "n_times": int,
    "rescale": _bool,
    "filter_divergent": _bool,
    "oracle": _bool,
    "output_dir": str,
    "master_seed": int,
    "workers": int,
    "deterministic": _bool,
}

_FLOW_CASTERS = {
    "max_rank": int,
    "rtol": float,
    "atol": float,
    "first_step": float,
    "max_step": float,
    "l_max": float,
    "stop_offdiag2": float,
    "stop_offdiag4": float,
    "scramble": _bool,
    "scramble_eps": float,
    "scramble_floor": float,
    "scramble_phase_cap": float,
    "scramble_budget_frac": float,
    "retrigger_floor": float,
}


def _read_config_file(path: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        pairs[key] = value
    return pairs


def build_config(file_pairs: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Assemble an :class:`~cutflow.harness.ExperimentConfig`.

    ``file_pairs`` holds raw strings from a config file (flow fields use
    a ``flow.`` prefix); ``overrides`` holds already-typed CLI values and
    wins on conflicts.
    """
    fields: dict = {}
    flow_fields: dict = {}
    for key, raw in (file_pairs or {}).items():
        if key.startswith("flow."):
            sub = key[5:]
            if sub not in _FLOW_CASTERS:
                raise ConfigurationError(f"unknown config key {key!r}")
            flow_fields[sub] = _FLOW_CASTERS[sub](raw)
        elif key in _CONFIG_CASTERS:
            fields[key] = _CONFIG_CASTERS[key](raw)
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key.startswith("flow."):
            flow_fields[key[5:]] = value
        else:
            fields[key] = value
    fields["flow"] = FlowParams(**flow_fields)
    return ExperimentConfig(**fields)


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    file_pairs = _read_config_file(args.config) if args.config else {}
    overrides = {
        "l_values": args.L,
        "d_values": args.d,
        "family": args.family,
        "dims": args.dims,
        "ly": args.ly,
        "delta0": args.delta0,
        "n_realizations": args.realizations,
        "sample_states": args.samples,
        "order": args.order,
        "master_seed": args.seed,
        "output_dir": args.out,
        "workers": args.workers,
        "flow.l_max": args.l_max,
    }
    if args.deterministic:
        overrides["deterministic"] = True
    if getattr(args, "oracle", False):
        overrides["oracle"] = True
    if getattr(args, "no_rescale", False):
        overrides["rescale"] = False
    if getattr(args, "no_scramble", False):
        overrides["flow.scramble"] = False
    return build_config(file_pairs, overrides)


def _add_sweep_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--L", type=_int_tuple, metavar="L1,L2,...",
                   help="system sizes")
    p.add_argument("--d", type=_float_tuple, metavar="D1,D2,...",
                   help="disorder strengths")
    p.add_argument("--family", choices=("random-box", "quasi-periodic"))
    p.add_argument("--dims", type=int, choices=(1, 2))
    p.add_argument("--ly", type=int, help="second extent for 2D lattices")
    p.add_argument("--delta0", type=float, help="interaction strength")
    p.add_argument("--realizations", type=int, help="disorder realizations per cell")
    p.add_argument("--samples", type=int, help="occupation states per trace")
    p.add_argument("--order", type=int, choices=(4, 6),
                   help="reconstruction truncation order")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="process count")
    p.add_argument("--l-max", type=float, dest="l_max", help="flow-time cap")
    p.add_argument("--deterministic", action="store_true",
                   help="pin thread counts for bit-stable reruns")
    p.add_argument("--no-rescale", action="store_true",
                   help="skip short-time rescaling against the free solution")
    p.add_argument("--no-scramble", action="store_true",
                   help="Wegner-only flow (no scrambling transforms)")


# ---------------------------------------------------------------------------
# verbs


def _print_cells(summaries) -> None:
    head = f"{'L':>4} {'d':>6} {'kept':>5} {'C-bar':>10} {'drop':>6} " \
           f"{'chi-bar':>10} {'eps_T':>10}"
    print(head)
    for s in summaries:
        cbar = s.cbar.get("mean")
        chib = s.chi_bar.get("mean")
        eps = s.ledger["eps_total"].get("mean")
        print(
            f"{s.l_value:>4} {s.d_value:>6g} {s.counts['succeeded']:>5} "
            f"{'--' if cbar is None else format(cbar, '10.4f')} "
            f"{s.drop_fraction:>6.2f} "
            f"{'--' if chib is None else format(chib, '10.3e')} "
            f"{'--' if eps is None else format(eps, '10.3e')}"
        )


def cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    summaries, path = run_experiment(config)
    _print_cells(summaries)
    print(f"summary written to {path}")
    return 0


def cmd_oracle_check(args: argparse.Namespace) -> int:
    config = dataclasses.replace(_config_from_args(args), oracle=True)
    for lv in config.l_values:
        n_sites = lv if config.dims == 1 else lv * (config.ly or lv)
        if n_sites > 14:
            print(f"refusing L={lv}: {n_sites} sites exceeds the exact-check limit (14)")
            return 2
    summaries, path = run_experiment(config)
    failures = 0
    for s in summaries:
        if s.oracle is None:
            print(f"L={s.l_value} d={s.d_value:g}: no successful realizations")
            failures += 1
            continue
        print(
            f"L={s.l_value} d={s.d_value:g}: median relative eigenvalue error "
            f"{s.oracle['median']:.3e} over {s.oracle['n']} realizations "
            f"(worst median {s.oracle['max']:.3e})"
        )
    print(f"summary written to {path}")
    return 1 if failures else 0


def _load_summary(path: str) -> dict:
    payload = json.loads(Path(path).read_text())
    if payload.get("schema_version") != 1:
        raise ConfigurationError(
            f"unsupported summary schema {payload.get('schema_version')!r}"
        )
    return payload


def cmd_summarize(args: argparse.Namespace) -> int:
    payload = _load_summary(args.summary)
    cells = payload["cells"]
    print(f"{len(cells)} cells, family {payload['config']['family']}, "
          f"delta0 {payload['config']['delta0']:g}")
    head = f"{'L':>4} {'d':>6} {'n':>4} {'C-bar':>10} {'+/-':>9} {'drop':>6} " \
           f"{'chi':>10} {'chi-bar':>10} {'eps_T':>10} {'oracle':>10}"
    print(head)
    for cell in cells:
        cbar = cell["cbar"]
        mean = cbar.get("mean")
        se = None
        if cbar.get("n", 0) > 0 and "std" in cbar:
            se = cbar["std"] / max(cbar["n"], 1) ** 0.5
        orc = (cell.get("oracle") or {}).get("median")
        print(
            f"{cell['L']:>4} {cell['d']:>6g} {cell['counts']['succeeded']:>4} "
            f"{'--' if mean is None else format(mean, '10.4f')} "
            f"{'--' if se is None else format(se, '9.1e')} "
            f"{cell['drop_fraction']:>6.2f} "
            f"{'--' if not cell['chi'].get('n') else format(cell['chi']['mean'], '10.3e')} "
            f"{'--' if not cell['chi_bar'].get('n') else format(cell['chi_bar']['mean'], '10.3e')} "
            f"{'--' if not cell['ledger']['eps_total'].get('n') else format(cell['ledger']['eps_total']['mean'], '10.3e')} "
            f"{'--' if orc is None else format(orc, '10.3e')}"
        )
    return 0


def cmd_fss(args: argparse.Namespace) -> int:
    payload = _load_summary(args.summary)
    cbar_by_l: dict = {}
    for cell in payload["cells"]:
        if abs(cell["d"] - args.d) > 1e-12:
            continue
        cbar = cell["cbar"]
        if not cbar.get("n"):
            continue
        se = cbar["std"] / max(cbar["n"], 1) ** 0.5
        cbar_by_l[cell["L"]] = (cbar["mean"], se)
    if len(cbar_by_l) < 3:
        print(f"need >= 3 sizes with data at d={args.d:g}, "
              f"found {sorted(cbar_by_l)}", file=sys.stderr)
        return 2
    intercept, err = finite_size_fit(cbar_by_l)
    for lv in sorted(cbar_by_l):
        v, se = cbar_by_l[lv]
        print(f"L={lv:>3}: C-bar = {v:.4f} +/- {se:.1e}")
    print(f"L -> infinity: C-bar = {intercept:.4f} +/- {err:.1e}")
    return 0


def cmd_complexity(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if len(config.d_values) != 1:
        print("complexity wants a single disorder strength", file=sys.stderr)
        return 2
    d_value = config.d_values[0]
    chi_med, chibar_med = {}, {}
    for cell, lv in enumerate(config.l_values):
        chis, chibars = [], []
        for k in range(config.n_realizations):
            pot_seed, _ = realization_seeds(config.master_seed, cell, k)
            spec = config.model_spec(lv, d_value)
            pot = sample_potential(spec, seed=pot_seed)
            h = build_hamiltonian(spec, pot)
            site = spec.n_sites // 2
            state = initial_state(h, op_sites=(site,))
            _, ops, _ = integrate_flow(state, config.flow)
            fop = FlowedCreationOperator.from_polynomial(ops[0], site)
            chi, chi_bar = complexity(fop)
            chis.append(chi)
            chibars.append(chi_bar)
        chi_med[lv] = float(np.median(chis))
        chibar_med[lv] = float(np.median(chibars))
        print(f"L={lv:>3}: chi = {chi_med[lv]:.4e}  chi-bar = {chibar_med[lv]:.4e}")
    if len(config.l_values) >= 2:
        xs = np.log(np.array(sorted(chi_med), dtype=float))
        ys = np.log(np.array([chi_med[lv] for lv in sorted(chi_med)]))
        slope = float(np.polyfit(xs, ys, 1)[0])
        ratio = max(chibar_med.values()) / min(chibar_med.values())
        print(f"log-log slope of chi vs L: {slope:.3f}")
        print(f"chi-bar spread across sizes: {ratio:.3f}x")
    return 0


# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="cutflow",
        description="flow-equation diagonalization of disordered lattice fermions",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="execute a disorder sweep")
    _add_sweep_flags(p_run)
    p_run.add_argument("--oracle", action="store_true",
                       help="compare spectra against exact diagonalization (N <= 14)")
    p_run.set_defaults(func=cmd_run)

    p_orc = sub.add_parser("oracle-check",
                           help="small-system sweep with forced exact comparison")
    _add_sweep_flags(p_orc)
    p_orc.set_defaults(func=cmd_oracle_check)

    p_sum = sub.add_parser("summarize", help="print a table from summary.json")
    p_sum.add_argument("summary", help="path to summary.json")
    p_sum.set_defaults(func=cmd_summarize)

    p_fss = sub.add_parser("fss", help="finite-size extrapolation of C-bar")
    p_fss.add_argument("summary", help="path to summary.json")
    p_fss.add_argument("--d", type=float, required=True,
                       help="disorder strength to extrapolate at")
    p_fss.set_defaults(func=cmd_fss)

    p_cx = sub.add_parser("complexity", help="operator-complexity scaling in L")
    _add_sweep_flags(p_cx)
    p_cx.set_defaults(func=cmd_complexity)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
