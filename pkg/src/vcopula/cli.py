"""Command-line pipeline: gen-data, fit, simulate, report.

One JSON config drives every subcommand. Input paths in the config are
resolved against the config file's directory; outputs go to ``--out``.
Every output is a deterministic function of the config and seeds: JSON is
written with sorted keys and no timestamps.

Exit codes: 0 success (including non-converged fits), 2 configuration or
I/O error, 3 inconsistent data, 4 numerical infeasibility.
"""

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .dataset import (
    PUBLISHED_BUCKET_COUNTS,
    PUBLISHED_HOT_COUNTS,
    DealFileError,
    InconsistentTablesError,
    PopulationInfeasibleError,
    bucket_report,
    derive_cooccurrence,
    generate_population,
    load_deals,
    save_deals,
    verify_population,
)
from .estimation import (
    FitConfig,
    MissingOutcomeError,
    fit,
    fit_metrics,
    model_joint_table,
    outcomes_from_deals,
    params_from_report_dict,
)
from .fixtures import (
    TableFormatError,
    load_sigma_params,
    published_marginals,
    published_pair_counts,
    published_params,
    read_marginals,
    read_square_table,
    write_square_table,
)
from .model import ATTRIBUTE_LABELS, InfeasibleVarianceError, encode_many
from .simulation import (
    InsufficientDealsError,
    PortfolioSpec,
    Setting,
    SimulationSummary,
    build_portfolio,
    correlation_histograms,
    sample_outcomes,
    simulate,
    standard_portfolios,
)

log = logging.getLogger("vcopula")

SCHEMA_VERSION = 1
BUILTIN = "builtin-published"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INFEASIBLE = 4

DEFAULT_THRESHOLDS = {20: (1, 2, 3, 5, 10), 40: (1, 2, 3, 10, 20), 80: (1, 2, 3, 20, 40)}
ROW_ORDER = [s.name for s in standard_portfolios(40)]


class ConfigError(Exception):
    pass


class _Run:
    def __init__(self, config_path, out_dir, seed=None, reps=None):
        self.config_path = Path(config_path)
        try:
            self.config = json.loads(self.config_path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: invalid JSON ({exc})") from None
        if self.config.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")
        self.base = self.config_path.parent
        self.out = Path(out_dir)
        self.seed_override = seed
        self.reps_override = reps

    def block(self, name):
        if name not in self.config:
            raise ConfigError(f"config has no '{name}' block")
        return self.config[name]

    def path(self, value, what):
        if not isinstance(value, str):
            raise ConfigError(f"{what} must be a path string")
        p = Path(value)
        p = p if p.is_absolute() else self.base / p
        if not p.exists():
            raise ConfigError(f"{what} not found: {p}")
        return p

    def seed(self, block, default=0):
        if self.seed_override is not None:
            return self.seed_override
        seed = block.get("seed", self.config.get("seed", default))
        if not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ConfigError("seeds must be integers in [0, 2^64)")
        return seed

    def output(self, name):
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name


def _write_json(path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _pct(x):
    return "" if x is None else f"{100.0 * x:.2f}%"


def _num(x):
    return "" if x is None else f"{x:.2f}"


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(run: _Run) -> int:
    cfg = run.block("gen_data")
    source = cfg.get("source", BUILTIN)
    if source == BUILTIN:
        marginals, pairs = published_marginals(), published_pair_counts()
        default_hot, buckets = list(PUBLISHED_HOT_COUNTS), PUBLISHED_BUCKET_COUNTS
    elif isinstance(source, dict):
        marginals = read_marginals(run.path(source.get("marginals"), "marginals file"))
        pairs = read_square_table(run.path(source.get("pairs"), "pair-count file"), dtype=int)
        default_hot, buckets = None, None
    else:
        raise ConfigError("gen_data.source must be 'builtin-published' or {marginals, pairs}")
    hot = cfg.get("hot_counts", default_hot)
    feasible = None
    exclude = cfg.get("exclude_infeasible", BUILTIN if source == BUILTIN else None)
    if exclude is not None:
        feasible = _sigma_params({"sigma": exclude, "alpha0": cfg.get("alpha0", 0.0)}, run)

    cooc = derive_cooccurrence(marginals, pairs)
    deals = generate_population(
        marginals, cooc, seed=run.seed(cfg), hot_counts=hot, feasible_under=feasible
    )
    save_deals(deals, run.output("deals.csv"))
    report = verify_population(deals, marginals, pairs, buckets)
    report["buckets"] = bucket_report(deals)
    _write_json(run.output("gen_report.json"), report)
    diff = np.array([[report["pair_count_diff"][a][b] for b in ATTRIBUTE_LABELS] for a in ATTRIBUTE_LABELS])
    write_square_table(run.output("pair_count_diff.csv"), diff)

    print(f"deals: {len(deals)}")
    print(f"marginals match: {report['marginals_match']}")
    print(f"pair counts match: {report['pair_counts_match']} (max |diff| = {int(np.abs(diff).max())})")
    print(f"{'bucket':<18}{'first':>8}{'repeat':>8}{'first p':>10}{'repeat p':>10}")
    for row in report["buckets"]:
        print(
            f"{row['bucket']:<18}{row['first_count']:>8}{row['repeat_count']:>8}"
            f"{_pct(row['first_mean_p']):>10}{_pct(row['repeat_mean_p']):>10}"
        )
    ok = report["marginals_match"] and report["pair_counts_match"]
    if buckets is not None:
        ok = ok and report["bucket_counts_match"]
    return EXIT_OK if ok else EXIT_DATA


# ---------------------------------------------------------------------------
# fit


def _sigma_params(spec, run):
    sigma = spec.get("sigma", BUILTIN)
    alpha0 = float(spec.get("alpha0", 0.0))
    rank = spec.get("rank")
    if sigma == BUILTIN:
        base = published_params(rank)
        return type(base).from_sigma(base.sigma, alpha0=alpha0, rank=rank)
    return load_sigma_params(run.path(sigma, "sigma table"), alpha0=alpha0, rank=rank)


def _fit_config(block):
    known = {f.name for f in fields(FitConfig)}
    unknown = set(block) - known
    if unknown:
        raise ConfigError(f"unknown fit.config keys: {sorted(unknown)}")
    try:
        return FitConfig(**block)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"fit.config: {exc}") from None


def cmd_fit(run: _Run) -> int:
    cfg = run.block("fit")
    deals = load_deals(run.path(cfg.get("deals"), "deals file"))
    fit_cfg = _fit_config(dict(cfg.get("config", {}), seed=run.seed(cfg)))
    src = cfg.get("outcomes", {"source": "deals"})
    truth = None
    if src.get("source") == "model":
        truth = _sigma_params(src, run)
        worlds = int(run.reps_override or src.get("worlds", 200))
        outcomes = sample_outcomes(
            encode_many(deals), [d.p for d in deals], truth, worlds, int(src.get("seed", 0))
        )
    elif src.get("source") == "deals":
        outcomes = outcomes_from_deals(deals)
    elif src.get("source") == "file":
        by_id = {d.id: d.outcome for d in load_deals(run.path(src.get("path"), "outcome file"))}
        missing = [d.id for d in deals if by_id.get(d.id) is None]
        if missing:
            raise MissingOutcomeError(f"no outcome for deal {missing[0]}")
        outcomes = np.array([by_id[d.id] for d in deals], dtype=np.uint8)
    else:
        raise ConfigError("fit.outcomes.source must be 'model', 'deals' or 'file'")

    if not np.asarray(outcomes).any():
        log.warning("all outcomes are zero; the fit is degenerate")
    report = fit(deals, outcomes, fit_cfg)
    data = report.to_dict()
    if truth is not None:
        ref_cfg = FitConfig(**{**data["config"], "phi2_mode": "exact"})
        true_table = model_joint_table(deals, truth, ref_cfg)
        fitted_table = model_joint_table(deals, report.params, ref_cfg)
        _, ref_rmse = fit_metrics(true_table, fitted_table, fit_cfg.mse_cells)
        data["metrics"]["reference_rmse"] = ref_rmse
    _write_json(run.output("fit_report.json"), data)
    write_square_table(run.output("sigma_hat.csv"), np.asarray(report.params.sigma), "{:.6f}")

    print(f"MSE = {report.mse:.6g}")
    print(f"RMSE = {report.rmse:.6f} ({100 * report.rmse:.4f}%)")
    print(f"alpha0 = {report.params.alpha0:.4f}, iterations = {report.iterations}, converged = {report.converged}")
    if truth is not None:
        print(f"reference RMSE (fitted vs generating model) = {data['metrics']['reference_rmse']:.6f}")
    if not report.converged:
        log.warning("fit did not converge within %d iterations", fit_cfg.max_iters)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _portfolio_specs(cfg):
    specs = cfg.get("portfolios", "standard")
    if specs == "standard":
        out = []
        for n in cfg.get("sizes", [20, 40, 80]):
            out += standard_portfolios(int(n), seed=int(cfg.get("portfolio_seed", 0)))
        return out
    try:
        return [PortfolioSpec(**s) for s in specs]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"simulate.portfolios: {exc}") from None


def _thresholds(cfg, n):
    given = cfg.get("thresholds", {})
    if str(n) in given:
        return tuple(int(m) for m in given[str(n)])
    return DEFAULT_THRESHOLDS.get(n, (1, 2, 3, max(1, n // 4), max(1, n // 2)))


def _slug(text):
    return "".join(c if c.isalnum() else "_" for c in text).strip("_").lower()


def cmd_simulate(run: _Run) -> int:
    cfg = run.block("simulate")
    psrc = cfg.get("params", {"source": "sigma"})
    if psrc.get("source") == "fit-report":
        with open(run.path(psrc.get("path"), "fit report"), encoding="utf-8") as fh:
            params = params_from_report_dict(json.load(fh))
    elif psrc.get("source") == "sigma":
        params = _sigma_params(psrc, run)
    else:
        raise ConfigError("simulate.params.source must be 'sigma' or 'fit-report'")
    population = load_deals(run.path(cfg.get("deals"), "deals file"))
    R = int(run.reps_override or cfg.get("R", 50000))
    seed = run.seed(cfg)
    workers = int(cfg.get("workers", 1))

    summaries = []
    for spec in _portfolio_specs(cfg):
        portfolio = build_portfolio(spec, population)
        thresholds = _thresholds(cfg, spec.n)
        for setting in (Setting.INDEPENDENT, Setting.CORRELATED):
            s = simulate(portfolio, params, setting, R, seed, workers=workers)
            summaries.append(s.to_dict(thresholds))
            _write_histogram(run.output(f"histograms/{_slug(s.name)}_n{s.n}_{setting.value.lower()}.csv"), s)
            tails = "  ".join(f"P(K>={m})={_pct(s.tail(m))}" for m in thresholds)
            print(
                f"{s.name:<28} n={s.n:<3} {setting.value:<12} mean={_num(s.mean)} "
                f"std={_num(s.std)} skew={_num(s.skew)} kurt={_num(s.kurt)}  {tails}"
            )
    _write_json(run.output("summaries.json"), {"R": R, "seed": seed, "summaries": summaries})

    hcfg = cfg.get("correlation_histograms")
    if hcfg:
        hist = correlation_histograms(
            population, params, int(hcfg.get("pairs", 100000)), int(hcfg.get("seed", seed)),
            bins=int(hcfg.get("bins", 200)),
        )
        with open(run.output("correlation_histogram.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "latent_count", "bernoulli_count"])
            for lo, hi, a, b in hist.rows():
                w.writerow([f"{lo:.4f}", f"{hi:.4f}", a, b])
        stats = {
            "pairs": len(hist.latent),
            "latent_std": float(np.std(hist.latent)),
            "bernoulli_std": float(np.std(hist.bernoulli)),
            "latent_mean": float(np.mean(hist.latent)),
            "bernoulli_mean": float(np.mean(hist.bernoulli)),
        }
        _write_json(run.output("correlation_stats.json"), stats)
        print(f"latent correlation std = {stats['latent_std']:.4f}, "
              f"indicator correlation std = {stats['bernoulli_std']:.4f}")
    return EXIT_OK


def _write_histogram(path, summary: SimulationSummary):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "count", "mass"])
        for k, (c, m) in enumerate(zip(summary.counts, summary.mass)):
            w.writerow([k, int(c), f"{m:.6f}"])


# ---------------------------------------------------------------------------
# report


def _row_key(name):
    return (ROW_ORDER.index(name) if name in ROW_ORDER else len(ROW_ORDER), name)


def build_tables(summaries, n, thresholds):
    """Moment and tail rows for one portfolio size, in reference row order."""
    by_name = {}
    for s in summaries:
        if s["n"] != n:
            raise ConfigError(f"table for n={n} received a summary with n={s['n']} ({s['name']})")
        by_name.setdefault(s["name"], {})[s["setting"]] = SimulationSummary.from_dict(s)
    moment_rows, tail_rows = [], []
    for name in sorted(by_name, key=_row_key):
        for setting in (Setting.INDEPENDENT, Setting.CORRELATED):
            s = by_name[name].get(setting.value)
            if s is None:
                log.warning("%s (n=%d) has no %s summary", name, n, setting.value)
                moment_rows.append([name, setting.value, "", "", "", ""])
                tail_rows.append([name, setting.value] + [""] * len(thresholds))
                continue
            moment_rows.append([name, setting.value, _num(s.mean), _num(s.std), _num(s.skew), _num(s.kurt)])
            tail_rows.append([name, setting.value] + [_pct(s.tail(m)) for m in thresholds])
    return moment_rows, tail_rows


def _aligned(header, rows):
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = []
    for row in [header] + rows:
        cells = [str(x).ljust(w) if i < 2 else str(x).rjust(w) for i, (x, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def _emit_table(run, stem, header, rows):
    with open(run.output(stem + ".csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    text = _aligned(header, rows)
    run.output(stem + ".txt").write_text(text, encoding="utf-8")
    print(text)


def cmd_report(run: _Run) -> int:
    cfg = run.block("report")
    summaries = []
    for p in cfg.get("inputs", []):
        with open(run.path(p, "summary file"), encoding="utf-8") as fh:
            summaries += json.load(fh)["summaries"]
    requests = cfg.get("tables")
    if requests is None:
        requests = [{"n": n} for n in sorted({s["n"] for s in summaries})]
    for req in requests:
        n = int(req["n"])
        chosen = summaries if "inputs" not in req else [
            s for p in req["inputs"] for s in json.loads(run.path(p, "summary file").read_text("utf-8"))["summaries"]
        ]
        if "inputs" not in req:
            chosen = [s for s in chosen if s["n"] == n]
        thresholds = tuple(int(m) for m in req.get("thresholds", DEFAULT_THRESHOLDS.get(n, (1, 2, 3))))
        moment_rows, tail_rows = build_tables(chosen, n, thresholds)
        print(f"Summary statistics of K, {n}-deal portfolios")
        _emit_table(run, f"moments_n{n}", ["Portfolio", "Setting", "Mean", "Std", "Skew", "Kurt"], moment_rows)
        print(f"Tail probabilities, {n}-deal portfolios")
        _emit_table(
            run, f"tails_n{n}", ["Portfolio", "Setting"] + [f"P(K>={m})" for m in thresholds], tail_rows
        )
    return EXIT_OK


# ---------------------------------------------------------------------------

COMMANDS = {"gen-data": cmd_gen_data, "fit": cmd_fit, "simulate": cmd_simulate, "report": cmd_report}


def build_parser():
    parser = argparse.ArgumentParser(prog="vcopula", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override every seed in the config block")
        p.add_argument("--reps", type=int, help="override replications (simulate R, fit worlds)")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        if args.reps is not None and args.reps < 1:
            raise ConfigError("--reps must be >= 1")
        run = _Run(args.config, args.out, seed=args.seed, reps=args.reps)
        return COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleVarianceError, PopulationInfeasibleError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (
        InconsistentTablesError,
        TableFormatError,
        DealFileError,
        MissingOutcomeError,
        InsufficientDealsError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
