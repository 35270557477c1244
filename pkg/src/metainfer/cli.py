"""Command-line interface for the meta-analysis pipeline.

Subcommands cover each analysis stage plus a one-shot ``full`` pipeline
that chains them in the canonical order: outlier filter, descriptives,
pooling, publication-bias ensemble, moderator screen, meta-regression.
Every run writes a ``manifest.json`` recording the command, a content
digest of inputs and settings, the seed, and timestamps.

Exit codes: 0 on success, 1 for input or usage problems, 2 when a
numerical routine fails to converge.
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .dataset import (
    MetaDataset,
    ModeratorSchema,
    describe,
    filter_outliers,
    load_csv,
    load_schema,
    write_csv,
)
from .errors import NumericalError, ValidationError
from .metareg import fit_metareg
from .pooling import funnel_data, uwls
from .report import (
    config_digest,
    describe_rows,
    ensemble_report,
    funnel_rows,
    metareg_report,
    metareg_rows,
    pool_report,
    screen_rows,
    weightfn_rows,
    write_csv_rows,
    write_json,
)
from .screen import ScreenConfig, screen_moderators
from .selection import EnsembleConfig, SamplerConfig, average_ensemble, fit_ensemble
from .simulate import SimConfig, sim_config_from_dict, sim_config_to_dict, simulate

__all__ = ["main"]

#: datasets smaller than this pass the outlier filter untouched
_MIN_FILTER_SIZE = 4


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage failures exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="metainfer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"metainfer {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text, needs_input=True):
        p = sub.add_parser(name, help=help_text)
        if needs_input:
            p.add_argument("--input", required=True, help="dataset CSV path")
            p.add_argument("--schema", default=None,
                           help="moderator schema JSON (array of {name, kind})")
            p.add_argument("--no-outlier-filter", action="store_true",
                           help="skip the 10x-IQR outlier filter applied by default")
        p.add_argument("--out-dir", default=".", help="output directory (default: .)")
        p.add_argument("--seed", type=int, default=0, help="master random seed (default: 0)")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker cap for parallel sections (default: 1)")
        return p

    add("pool", "inverse-variance pooled effect with cluster-robust inference")
    add("funnel", "funnel-plot data: estimates plus pseudo-95%% band")

    p = add("bias", "publication-bias model ensemble")
    p.add_argument("--chains", type=int, default=4, help="MCMC chains per model (default: 4)")
    p.add_argument("--iters", type=int, default=5000,
                   help="post-burn-in iterations per chain (default: 5000)")

    p = add("metareg", "multilevel REML meta-regression")
    p.add_argument("--moderators", default="",
                   help="comma-separated design columns (beyond the intercept)")

    p = add("screen", "moderator screen by exhaustive Bayesian model averaging")
    p.add_argument("--moderators", default="", help="comma-separated candidate columns")
    p.add_argument("--forced", default="se",
                   help="comma-separated always-included columns (default: se)")
    p.add_argument("--threshold", type=float, default=0.1,
                   help="inclusion-probability threshold (default: 0.1)")

    p = add("simulate", "generate a synthetic dataset", needs_input=False)
    p.add_argument("--config", default=None, help="simulation config JSON path")

    p = add("full", "outlier filter, descriptives, pooling, ensemble, screen, regression")
    p.add_argument("--chains", type=int, default=4, help="MCMC chains per model (default: 4)")
    p.add_argument("--iters", type=int, default=5000,
                   help="post-burn-in iterations per chain (default: 5000)")
    p.add_argument("--moderators", default="", help="comma-separated candidate columns")
    p.add_argument("--forced", default="se",
                   help="comma-separated always-included columns (default: se)")
    p.add_argument("--threshold", type=float, default=0.1,
                   help="inclusion-probability threshold (default: 0.1)")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handler = {
        "pool": _cmd_pool,
        "funnel": _cmd_funnel,
        "bias": _cmd_bias,
        "metareg": _cmd_metareg,
        "screen": _cmd_screen,
        "simulate": _cmd_simulate,
        "full": _cmd_full,
    }[args.command]
    started = _now()
    try:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        handler(args, out_dir)
    except ValidationError as exc:
        print(f"metainfer {args.command}: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"metainfer {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2
    _write_manifest(args, out_dir, started)
    return 0


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def _split_list(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _load_data(args) -> MetaDataset:
    schema = load_schema(args.schema) if args.schema else ModeratorSchema(())
    data = load_csv(args.input, schema)
    if not args.no_outlier_filter and len(data.estimates) >= _MIN_FILTER_SIZE:
        data, excluded = filter_outliers(data)
        if excluded:
            print(f"outlier filter removed {len(excluded)} estimate(s): "
                  + ", ".join(excluded), file=sys.stderr)
    return data


def _write_manifest(args, out_dir: Path, started: str) -> None:
    settings = {
        k: v for k, v in sorted(vars(args).items())
        if k not in ("command",) and not callable(v)
    }
    inputs = [p for p in (getattr(args, "input", None), getattr(args, "schema", None),
                          getattr(args, "config", None)) if p]
    manifest = {
        "command": args.command,
        "config_digest": config_digest(settings, inputs),
        "seed": args.seed,
        "tool_version": __version__,
        "started_at": started,
        "finished_at": _now(),
    }
    write_json(manifest, out_dir / "manifest.json")


def _ensemble_config(args) -> EnsembleConfig:
    return EnsembleConfig(
        sampler=SamplerConfig(chains=args.chains, iterations=args.iters),
        jobs=args.jobs,
    )


def _cmd_pool(args, out_dir: Path) -> None:
    data = _load_data(args)
    pooled = uwls(data)
    write_json(pool_report(pooled), out_dir / "pool.json")
    print(f"pooled effect {pooled.mu_hat:.6g} "
          f"(cluster-robust se {pooled.se_cluster:.6g}, p {pooled.p_value_cluster:.4g})")


def _cmd_funnel(args, out_dir: Path) -> None:
    data = _load_data(args)
    pooled = uwls(data)
    funnel = funnel_data(data, pooled.mu_hat)
    write_csv_rows(out_dir / "funnel.csv", ("kind", "theta", "se"), funnel_rows(funnel))
    print(f"funnel data for {pooled.n_estimates} estimates written")


def _cmd_bias(args, out_dir: Path) -> None:
    data = _load_data(args)
    result = fit_ensemble(data, _ensemble_config(args), seed=args.seed)
    averaged = average_ensemble(result)
    write_json(ensemble_report(result, averaged), out_dir / "ensemble.json")
    write_csv_rows(out_dir / "weightfn.csv", ("p", "mean", "ci_low", "ci_high"),
                   weightfn_rows(averaged))
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"bias-adjusted effect {averaged.mean('mu'):.6g}; "
          f"P(bias) = {result.component_probability('bias'):.4f}")


def _cmd_metareg(args, out_dir: Path) -> None:
    data = _load_data(args)
    result = fit_metareg(data, _split_list(args.moderators))
    _write_metareg(result, out_dir)
    print(f"meta-regression fitted on {result.n_estimates} estimates, "
          f"{result.n_studies} studies")


def _write_metareg(result, out_dir: Path) -> None:
    write_csv_rows(out_dir / "metareg.csv",
                   ("name", "estimate", "se", "z", "p_value", "stars"),
                   metareg_rows(result))
    write_json(metareg_report(result), out_dir / "metareg.json")


def _cmd_screen(args, out_dir: Path) -> None:
    data = _load_data(args)
    result = _run_screen(args, data)
    write_csv_rows(out_dir / "screen.csv",
                   ("moderator", "pip", "post_mean", "forced", "included"),
                   screen_rows(result))
    print(f"screened {len(result.rows)} regressors over {result.n_models} models; "
          f"included: {', '.join(result.included_names) or 'none'}")


def _run_screen(args, data: MetaDataset):
    candidates = _split_list(args.moderators)
    if not candidates:
        raise ValidationError("screen needs at least one candidate via --moderators")
    forced = _split_list(args.forced)
    return screen_moderators(data, candidates, forced,
                             ScreenConfig(threshold=args.threshold))


def _cmd_simulate(args, out_dir: Path) -> None:
    if args.config:
        import json

        try:
            obj = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read simulation config: {exc}") from None
        config = sim_config_from_dict(obj)
    else:
        config = SimConfig()
    data = simulate(config, seed=args.seed)
    write_csv(data, out_dir / "simulated.csv")
    write_json(sim_config_to_dict(config), out_dir / "sim_config.json")
    print(f"simulated {len(data.estimates)} estimates across {data.n_studies} studies")


def _cmd_full(args, out_dir: Path) -> None:
    data = _load_data(args)
    write_csv_rows(out_dir / "describe.csv",
                   ("column", "count", "mean", "sd", "min", "max"),
                   describe_rows(describe(data)))
    pooled = uwls(data)
    write_json(pool_report(pooled), out_dir / "pool.json")
    funnel = funnel_data(data, pooled.mu_hat)
    write_csv_rows(out_dir / "funnel.csv", ("kind", "theta", "se"), funnel_rows(funnel))
    result = fit_ensemble(data, _ensemble_config(args), seed=args.seed)
    averaged = average_ensemble(result)
    write_json(ensemble_report(result, averaged), out_dir / "ensemble.json")
    write_csv_rows(out_dir / "weightfn.csv", ("p", "mean", "ci_low", "ci_high"),
                   weightfn_rows(averaged))
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)

    design: tuple[str, ...] = ()
    if _split_list(args.moderators):
        screen_result = _run_screen(args, data)
        write_csv_rows(out_dir / "screen.csv",
                       ("moderator", "pip", "post_mean", "forced", "included"),
                       screen_rows(screen_result))
        design = screen_result.included_names
    regression = fit_metareg(data, design)
    _write_metareg(regression, out_dir)
    print(f"full pipeline complete: pooled {pooled.mu_hat:.6g}, "
          f"bias-adjusted {averaged.mean('mu'):.6g}, "
          f"P(bias) = {result.component_probability('bias'):.4f}")
