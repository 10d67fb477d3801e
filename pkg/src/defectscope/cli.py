"""Command-line pipeline: parse -> forward/carry -> filter -> vols -> MAP ->
MCMC -> summary, plus standalone subcommands for each stage and for the
closed-form/simulation oracles.

All artifacts are machine-readable (JSON/CSV), written atomically, and
byte-reproducible for a fixed configuration and seed.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .bayes import (
    McmcChain,
    PosteriorSpec,
    adaptive_mcmc_run,
    cumulative_averages,
    log_posterior,
    nelder_mead_map,
    summarize_posterior,
)
from .defect import (
    TAU_MIN,
    absorption_mc_oracle,
    defect_finite_T,
    indicator,
)
from .errors import DefectscopeError
from .market_data import (
    ChainSlice,
    ForwardEstimate,
    VolObservation,
    estimate_forward_and_carry,
    filter_liquidity,
    parse_chain_csv,
    quotes_to_vol_observations,
    write_chain_csv,
)
from .pricing import FdGrid, OptionSide
from .sabr import McConfig, SabrParams, default_steps, sabr_simulate_forward

SCHEMA_VERSION = 1
DEFAULT_SEED = 20180420
SEED_ENV_VAR = "DEFECTSCOPE_SEED"

# Exit codes, one per failing pipeline stage.
EXIT_PARSE = 10
EXIT_FILTER = 11
EXIT_FORWARD = 12
EXIT_VOLS = 13
EXIT_MAP = 14
EXIT_MCMC = 15
EXIT_SUMMARY = 16


@dataclass
class RunConfig:
    chain_file: Path
    rate: float | None = None
    samples: int = 100_000
    burn_in: float = 0.25
    seed: int = DEFAULT_SEED
    obs_sigma: float = 1.0
    spread_overrides: dict[float, float] = field(default_factory=dict)
    output_dir: Path = Path("defectscope-out")
    mc_paths: int = 1_000_000
    q_init: float = 0.0

    def __post_init__(self):
        if self.samples < 1000:
            raise ValueError("samples must be >= 1000")
        if not 0.0 <= self.burn_in < 1.0:
            raise ValueError("burn_in must lie in [0, 1)")


class _StageFailure(Exception):
    def __init__(self, stage: str, code: int, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.code = code
        self.cause = cause


def _atomic_write(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _load_chain(config: RunConfig) -> ChainSlice:
    try:
        text = Path(config.chain_file).read_text(encoding="utf-8")
        chain = parse_chain_csv(text)
    except (OSError, DefectscopeError) as exc:
        raise _StageFailure("parse", EXIT_PARSE, exc)
    if config.rate is not None:
        chain = ChainSlice(chain.spot, chain.valuation_date, chain.expiry_date,
                           chain.maturity, config.rate, chain.quotes)
    return chain


def _forward_dict(fe: ForwardEstimate) -> dict:
    return {"schema_version": SCHEMA_VERSION, "forward": fe.forward,
            "carry_yield": fe.carry_yield, "iterations": fe.iterations,
            "converged": fe.converged}


def _vols_text(chain: ChainSlice, fe: ForwardEstimate,
               observations: list[VolObservation]) -> str:
    lines = [
        f"#spot={chain.spot!r}",
        f"#rate={chain.rate!r}",
        f"#maturity={chain.maturity!r}",
        f"#forward={fe.forward!r}",
        f"#carry={fe.carry_yield!r}",
        "strike,side,mid_vol,spread_vol",
    ]
    for o in observations:
        side = "C" if o.side is OptionSide.CALL else "P"
        lines.append(f"{o.strike!r},{side},{o.mid_vol!r},{o.spread_vol!r}")
    return "\n".join(lines) + "\n"


def read_vols_csv(text: str) -> tuple[PosteriorSpec, dict]:
    """Rebuild a PosteriorSpec (obs_sigma left at its default) from vols.csv."""
    meta: dict[str, float] = {}
    rows: list[VolObservation] = []
    header_seen = False
    for i, ln in enumerate(text.splitlines()):
        ln = ln.strip()
        if not ln:
            continue
        if ln.startswith("#"):
            key, _, value = ln[1:].partition("=")
            meta[key.strip()] = float(value)
            continue
        if not header_seen:
            header_seen = True
            continue
        strike_s, side_s, mid_s, spread_s = ln.split(",")
        side = OptionSide.CALL if side_s.strip().upper() == "C" else OptionSide.PUT
        rows.append(VolObservation(float(strike_s), float(mid_s),
                                   float(spread_s), side))
    for key in ("forward", "maturity"):
        if key not in meta:
            raise DefectscopeError(f"vols file missing '#{key}=' metadata")
    spec = PosteriorSpec(observations=tuple(rows), forward=meta["forward"],
                         maturity=meta["maturity"])
    return spec, meta


def _chain_csv(chain: McmcChain) -> str:
    lines = ["iter,alpha,rho,nu,A,accepted_alpha,accepted_rho,accepted_nu"]
    p = chain.params
    a = chain.indicator_values
    acc = chain.accepted
    for j in range(chain.length):
        lines.append(f"{j + 1},{p[j, 0]!r},{p[j, 1]!r},{p[j, 2]!r},{a[j]!r},"
                     f"{acc[j, 0]},{acc[j, 1]},{acc[j, 2]}")
    return "\n".join(lines) + "\n"


def _series_csv(header: str, columns: list[np.ndarray]) -> str:
    lines = [header]
    n = columns[0].shape[0]
    for i in range(n):
        lines.append(",".join(repr(float(c[i])) for c in columns))
    return "\n".join(lines) + "\n"


def _write_mcmc_artifacts(out: Path, chain: McmcChain, summary, spec,
                          fe_meta: dict, config: RunConfig,
                          map_params: SabrParams) -> None:
    _atomic_write(out / "chain.csv", _chain_csv(chain))

    n = chain.length
    it = np.arange(1, n + 1, dtype=float)
    _atomic_write(out / "cumavg.csv", _series_csv(
        "iter,alpha,rho,nu,A",
        [it, cumulative_averages(chain.alphas), cumulative_averages(chain.rhos),
         cumulative_averages(chain.nus),
         cumulative_averages(chain.indicator_values)]))

    for name, curve in summary.kde_curves.items():
        if curve is None:
            continue
        _atomic_write(out / f"kde_{name}.csv",
                      _series_csv("value,density", [curve[0], curve[1]]))

    mean_params = SabrParams(alpha=summary.cond_means["alpha"],
                             nu=max(summary.cond_means["nu"], 1e-12),
                             rho=min(max(summary.cond_means["rho"], -1.0), 1.0))
    model_vols = kernels.hagan_vol_array(
        mean_params.alpha, mean_params.nu, mean_params.rho, spec.forward,
        spec.strikes, spec.maturity)
    _atomic_write(out / "smile.csv", _series_csv(
        "strike,mid_vol,vol_bid,vol_ask,model_vol",
        [spec.strikes, spec.mid_vols, spec.mid_vols - spec.half_spreads,
         spec.mid_vols + spec.half_spreads, model_vols]))

    doc = summary.to_dict()
    doc.update({
        "schema_version": SCHEMA_VERSION,
        "seed": config.seed,
        "samples": chain.length,
        "obs_sigma": config.obs_sigma,
        "acceptance_rates": [float(c) / chain.length
                             for c in chain.acceptance_counts],
        "proposal_scales": list(chain.proposal_scales),
        "map": {"alpha": map_params.alpha, "rho": map_params.rho,
                "nu": map_params.nu},
        "forward": fe_meta.get("forward"),
        "carry_yield": fe_meta.get("carry"),
    })
    _atomic_write(out / "summary.json", _json_text(doc))


def analyze_pipeline(config: RunConfig) -> int:
    """Run the full pipeline; returns 0 or a stage-specific exit code."""
    out = Path(config.output_dir)
    try:
        chain = _load_chain(config)

        try:
            fe = estimate_forward_and_carry(chain, q_init=config.q_init)
            _atomic_write(out / "forward.json", _json_text(_forward_dict(fe)))
        except DefectscopeError as exc:
            raise _StageFailure("forward", EXIT_FORWARD, exc)

        try:
            filtered = filter_liquidity(chain, fe.forward)
            _atomic_write(out / "filtered_chain.csv", write_chain_csv(filtered))
        except DefectscopeError as exc:
            raise _StageFailure("filter", EXIT_FILTER, exc)

        try:
            observations, warnings = quotes_to_vol_observations(
                filtered, fe, spread_overrides=config.spread_overrides)
            for w in warnings:
                print(f"warning: {w}", file=sys.stderr)
            spec = PosteriorSpec(observations=tuple(observations),
                                 forward=fe.forward, maturity=chain.maturity,
                                 obs_sigma=config.obs_sigma)
            _atomic_write(out / "vols.csv", _vols_text(chain, fe, observations))
        except (DefectscopeError, ValueError) as exc:
            raise _StageFailure("vols", EXIT_VOLS, exc)

        try:
            map_params = nelder_mead_map(spec)
            _atomic_write(out / "map.json", _json_text({
                "schema_version": SCHEMA_VERSION,
                "alpha": map_params.alpha, "rho": map_params.rho,
                "nu": map_params.nu,
                "log_posterior": log_posterior(map_params, spec),
                "indicator": indicator(map_params) if map_params.nu > 0 else None,
            }))
        except DefectscopeError as exc:
            raise _StageFailure("map", EXIT_MAP, exc)

        try:
            mcmc = adaptive_mcmc_run(spec, map_params, config.samples,
                                     config.seed)
        except DefectscopeError as exc:
            raise _StageFailure("mcmc", EXIT_MCMC, exc)

        try:
            summary = summarize_posterior(mcmc, config.burn_in)
            _write_mcmc_artifacts(out, mcmc, summary, spec,
                                  {"forward": fe.forward, "carry": fe.carry_yield},
                                  config, map_params)
        except DefectscopeError as exc:
            raise _StageFailure("summary", EXIT_SUMMARY, exc)

    except _StageFailure as failure:
        print(f"error in stage '{failure.stage}': {failure.cause}",
              file=sys.stderr)
        return failure.code
    print(f"analysis complete: prob_bubble={summary.prob_bubble!r} "
          f"mean(A)={summary.cond_means['A']!r}")
    print(f"artifacts written to {out}")
    return 0


def _add_common(parser, *names):
    if "chain-file" in names:
        parser.add_argument("--chain-file", type=Path, required=True)
        parser.add_argument("--rate", type=float, default=None,
                            help="override the chain file's #rate metadata")
    if "seed" in names:
        parser.add_argument("--seed", type=int, default=None,
                            help=f"RNG seed (default ${SEED_ENV_VAR} or "
                                 f"{DEFAULT_SEED})")
    if "output-dir" in names:
        parser.add_argument("--output-dir", type=Path,
                            default=Path("defectscope-out"))


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env else DEFAULT_SEED


def _parse_overrides(pairs: list[str]) -> dict[float, float]:
    overrides = {}
    for pair in pairs:
        strike_s, _, mult_s = pair.partition("=")
        overrides[float(strike_s)] = float(mult_s)
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="defectscope",
        description="Detect option-implied price bubbles via Bayesian SABR "
                    "calibration of the martingale defect.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="full pipeline on one chain file")
    _add_common(p, "chain-file", "seed", "output-dir")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--burn-in", type=float, default=0.25)
    p.add_argument("--obs-sigma", type=float, default=1.0)
    p.add_argument("--q-init", type=float, default=0.0)
    p.add_argument("--spread-override", action="append", default=[],
                   metavar="STRIKE=MULT",
                   help="multiply the vol spread at one strike")

    p = sub.add_parser("filter", help="apply the liquidity filters")
    _add_common(p, "chain-file", "output-dir")
    p.add_argument("--forward", type=float, default=None,
                   help="moneyness reference (default: spot)")

    p = sub.add_parser("forward", help="estimate implied forward and carry")
    _add_common(p, "chain-file", "output-dir")
    p.add_argument("--q-init", type=float, default=0.0)

    p = sub.add_parser("vols", help="emit the implied-vol observation vector")
    _add_common(p, "chain-file", "output-dir")
    p.add_argument("--q-init", type=float, default=0.0)
    p.add_argument("--spread-override", action="append", default=[],
                   metavar="STRIKE=MULT")

    p = sub.add_parser("map", help="MAP calibration from a vols.csv")
    p.add_argument("--vols-file", type=Path, required=True)
    _add_common(p, "output-dir")
    p.add_argument("--obs-sigma", type=float, default=1.0)

    p = sub.add_parser("mcmc", help="posterior sampling from a vols.csv")
    p.add_argument("--vols-file", type=Path, required=True)
    _add_common(p, "seed", "output-dir")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--burn-in", type=float, default=0.25)
    p.add_argument("--obs-sigma", type=float, default=1.0)

    p = sub.add_parser("indicator", help="closed-form defect quantities")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--maturity", type=float, default=None)

    p = sub.add_parser("simulate", help="Monte Carlo oracles")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--nu", type=float, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--maturity", type=float, default=None)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--steps", type=int, default=None)
    _add_common(p, "seed")
    return parser


def _cmd_filter(args) -> int:
    try:
        chain = parse_chain_csv(Path(args.chain_file).read_text(encoding="utf-8"))
    except (OSError, DefectscopeError) as exc:
        print(f"error in stage 'parse': {exc}", file=sys.stderr)
        return EXIT_PARSE
    if args.rate is not None:
        chain = ChainSlice(chain.spot, chain.valuation_date, chain.expiry_date,
                           chain.maturity, args.rate, chain.quotes)
    try:
        filtered = filter_liquidity(chain, args.forward or chain.spot)
    except DefectscopeError as exc:
        print(f"error in stage 'filter': {exc}", file=sys.stderr)
        return EXIT_FILTER
    _atomic_write(Path(args.output_dir) / "filtered_chain.csv",
                  write_chain_csv(filtered))
    print(f"{len(filtered.quotes)} quotes kept")
    return 0


def _cmd_forward(args) -> int:
    try:
        chain = parse_chain_csv(Path(args.chain_file).read_text(encoding="utf-8"))
    except (OSError, DefectscopeError) as exc:
        print(f"error in stage 'parse': {exc}", file=sys.stderr)
        return EXIT_PARSE
    if args.rate is not None:
        chain = ChainSlice(chain.spot, chain.valuation_date, chain.expiry_date,
                           chain.maturity, args.rate, chain.quotes)
    try:
        fe = estimate_forward_and_carry(chain, q_init=args.q_init)
    except DefectscopeError as exc:
        print(f"error in stage 'forward': {exc}", file=sys.stderr)
        return EXIT_FORWARD
    _atomic_write(Path(args.output_dir) / "forward.json",
                  _json_text(_forward_dict(fe)))
    print(f"forward={fe.forward!r} carry={fe.carry_yield!r} "
          f"iterations={fe.iterations} converged={fe.converged}")
    return 0


def _cmd_vols(args) -> int:
    config = RunConfig(chain_file=args.chain_file, rate=args.rate,
                       output_dir=args.output_dir, q_init=args.q_init,
                       spread_overrides=_parse_overrides(args.spread_override))
    try:
        chain = _load_chain(config)
        fe = estimate_forward_and_carry(chain, q_init=config.q_init)
        filtered = filter_liquidity(chain, fe.forward)
        observations, warnings = quotes_to_vol_observations(
            filtered, fe, spread_overrides=config.spread_overrides)
        for w in warnings:
            print(f"warning: {w}", file=sys.stderr)
    except _StageFailure as failure:
        print(f"error in stage '{failure.stage}': {failure.cause}", file=sys.stderr)
        return failure.code
    except DefectscopeError as exc:
        print(f"error in stage 'vols': {exc}", file=sys.stderr)
        return EXIT_VOLS
    _atomic_write(Path(args.output_dir) / "forward.json",
                  _json_text(_forward_dict(fe)))
    _atomic_write(Path(args.output_dir) / "vols.csv",
                  _vols_text(chain, fe, observations))
    print(f"{len(observations)} vol observations written")
    return 0


def _cmd_map(args) -> int:
    try:
        spec, _ = read_vols_csv(Path(args.vols_file).read_text(encoding="utf-8"))
        spec = PosteriorSpec(spec.observations, spec.forward, spec.maturity,
                             obs_sigma=args.obs_sigma)
        map_params = nelder_mead_map(spec)
    except (OSError, DefectscopeError, ValueError) as exc:
        print(f"error in stage 'map': {exc}", file=sys.stderr)
        return EXIT_MAP
    _atomic_write(Path(args.output_dir) / "map.json", _json_text({
        "schema_version": SCHEMA_VERSION,
        "alpha": map_params.alpha, "rho": map_params.rho, "nu": map_params.nu,
        "log_posterior": log_posterior(map_params, spec),
        "indicator": indicator(map_params) if map_params.nu > 0 else None,
    }))
    print(f"MAP: alpha={map_params.alpha!r} rho={map_params.rho!r} "
          f"nu={map_params.nu!r}")
    return 0


def _cmd_mcmc(args) -> int:
    seed = _resolve_seed(args.seed)
    try:
        spec, meta = read_vols_csv(Path(args.vols_file).read_text(encoding="utf-8"))
        spec = PosteriorSpec(spec.observations, spec.forward, spec.maturity,
                             obs_sigma=args.obs_sigma)
        map_params = nelder_mead_map(spec)
        chain = adaptive_mcmc_run(spec, map_params, args.samples, seed)
        summary = summarize_posterior(chain, args.burn_in)
    except (OSError, DefectscopeError, ValueError) as exc:
        print(f"error in stage 'mcmc': {exc}", file=sys.stderr)
        return EXIT_MCMC
    config = RunConfig(chain_file=Path(args.vols_file), samples=args.samples,
                       burn_in=args.burn_in, seed=seed,
                       obs_sigma=args.obs_sigma, output_dir=args.output_dir)
    _write_mcmc_artifacts(Path(args.output_dir), chain, summary, spec, meta,
                          config, map_params)
    print(f"prob_bubble={summary.prob_bubble!r} mean(A)="
          f"{summary.cond_means['A']!r}")
    return 0


def _cmd_indicator(args) -> int:
    try:
        params = SabrParams(alpha=args.alpha, nu=args.nu, rho=args.rho)
        value = indicator(params)
    except (DefectscopeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"A = {value:.7f}")
    if args.maturity is not None:
        d = defect_finite_T(params, args.maturity)
        print(f"d(T={args.maturity!r}) = {d:.7f}")
    return 0


def _cmd_simulate(args) -> int:
    seed = _resolve_seed(args.seed)
    if args.gamma is not None:
        if args.tau is None:
            print("error: --gamma requires --tau", file=sys.stderr)
            return 1
        steps = args.steps or 5000
        mc = McConfig(n_paths=args.paths, n_steps=steps, seed=seed)
        prob, se = absorption_mc_oracle(args.gamma, args.tau, mc)
        print(f"hit_probability = {prob!r} (se {se!r})")
        if args.tau >= TAU_MIN:
            from .defect import a_c
            closed = 1.0 - math.exp(-2.0 * args.gamma) - a_c(args.gamma, args.tau)
            print(f"closed_form = {closed!r}")
        else:
            print("closed_form = 0.0 (small-tau branch)")
        return 0
    if None in (args.alpha, args.nu, args.rho, args.maturity):
        print("error: simulate needs either --gamma/--tau or "
              "--alpha/--nu/--rho/--maturity", file=sys.stderr)
        return 1
    params = SabrParams(alpha=args.alpha, nu=args.nu, rho=args.rho)
    steps = args.steps or default_steps(args.maturity)
    mc = McConfig(n_paths=args.paths, n_steps=steps, seed=seed)
    terminal = sabr_simulate_forward(params, args.maturity, mc)
    mean = float(np.mean(terminal))
    se = float(np.std(terminal) / math.sqrt(args.paths))
    print(f"mean_forward_ratio = {mean!r} (se {se!r})")
    print(f"one_minus_defect = {1.0 - defect_finite_T(params, args.maturity)!r}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "analyze":
        config = RunConfig(
            chain_file=args.chain_file, rate=args.rate, samples=args.samples,
            burn_in=args.burn_in, seed=_resolve_seed(args.seed),
            obs_sigma=args.obs_sigma,
            spread_overrides=_parse_overrides(args.spread_override),
            output_dir=args.output_dir, q_init=args.q_init)
        return analyze_pipeline(config)
    return {
        "filter": _cmd_filter,
        "forward": _cmd_forward,
        "vols": _cmd_vols,
        "map": _cmd_map,
        "mcmc": _cmd_mcmc,
        "indicator": _cmd_indicator,
        "simulate": _cmd_simulate,
    }[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
