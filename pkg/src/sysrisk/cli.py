"""Command-line pipeline: simulate -> measure -> rank -> panel / did -> report.

Every stage reads its inputs from and writes its outputs to the ``--out``
directory, so stages can be rerun independently::

    sysrisk simulate --seed 7 --out run
    sysrisk measure --out run --threads 4
    sysrisk rank --out run
    sysrisk panel --out run
    sysrisk did --out run
    sysrisk report --out run

Exit codes: 0 ok, 1 usage, 2 data validation (including missing upstream
files), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import ingest, panelreg, pipeline
from .corisk import RiskSeries
from .errors import (
    DegenerateResponseError,
    FeasibilityError,
    SampleSizeError,
    SingularDesignError,
    ValidationError,
)
from .ranking import build_iev, score_measures
from .shapley import MAX_SYSTEM, MODES, CharacteristicCache

log = logging.getLogger("sysrisk")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MEASURE_FLAGS = {"nsv": "NSV", "gsv": "GSV", "dcovar": "dCoVaR", "dcoes": "dCoES", "adcovar": "adCoVaR"}
REFERENCE_DID = (("2007Q2", "2007Q3"), "2007Q4", "2008Q4")
CACHE_ENV = "SYSRISK_CACHE"


class UsageError(Exception):
    pass


class DependencyError(ValidationError):
    pass


@dataclass
class RunConfig:
    seed: int = 7
    n_banks: int = 8
    n_weeks: int = 300
    q: float = 0.01
    system_size: int = 16
    mode: str = "core_plus_target"
    measures: tuple[str, ...] = pipeline.ALL_MEASURES
    criterion: str = "both"
    lag_reduce: str = "max"
    include_actions: bool = True
    quarterly: str = "last"
    dependent: str = "NSV"
    threads: int = 1
    out: str = "sysrisk-out"
    # optional input files; the simulated data under <out>/data otherwise
    market: str = ""
    state: str = ""
    quarters: str = ""
    events: str = ""
    did_treatment: tuple[str, ...] = ingest.DERIVATIVE_FIELDS
    did_rank: tuple[str, ...] = ()  # empty: derived, see _did_dates
    did_pre: str = ""
    did_post: str = ""
    did_controls: str = "auto"

    def validate(self) -> "RunConfig":
        if not 0.0 < self.q < 1.0:
            raise UsageError(f"q must lie in (0, 1), got {self.q}")
        if not 1 <= self.system_size <= MAX_SYSTEM:
            raise UsageError(f"system size must be between 1 and {MAX_SYSTEM}, got {self.system_size}")
        if self.mode not in MODES:
            raise UsageError(f"unknown system mode {self.mode!r}")
        bad = set(self.measures) - set(pipeline.ALL_MEASURES)
        if bad or not self.measures:
            raise UsageError(f"unknown measures {sorted(bad)}")
        if self.criterion not in ("mcfadden", "granger", "both"):
            raise UsageError(f"unknown ranking criterion {self.criterion!r}")
        if self.lag_reduce not in ("max", "mean", "first"):
            raise UsageError(f"unknown lag reduction {self.lag_reduce!r}")
        if self.quarterly not in ("last", "sum"):
            raise UsageError(f"--quarterly must be last or sum, got {self.quarterly!r}")
        if self.threads < 1:
            raise UsageError("thread count must be positive")
        if self.did_controls not in ("auto", "none", "full"):
            raise UsageError(f"did_controls must be auto, none or full, got {self.did_controls!r}")
        bad = set(self.did_treatment) - set(ingest.DERIVATIVE_FIELDS)
        if bad:
            raise UsageError(f"unknown derivative fields {sorted(bad)}")
        return self


def _coerce(name: str, text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{name}: expected a boolean, got {text!r}")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise UsageError(f"{name}: expected an integer, got {text!r}") from None
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise UsageError(f"{name}: expected a number, got {text!r}") from None
    if isinstance(default, tuple):
        return tuple(p.strip() for p in text.split(",") if p.strip())
    return text


def load_config(path) -> RunConfig:
    """Read ``key = value`` pairs from any section of an INI-style file."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except configparser.Error as exc:
        raise UsageError(f"config file {path}: {exc}") from None
    cfg = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    updates = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key not in known:
                raise UsageError(f"config file {path}: unknown key {key!r}")
            if key == "measures":
                updates[key] = _measure_list(value)
            else:
                updates[key] = _coerce(key, value, getattr(cfg, key))
    return replace(cfg, **updates)


def _measure_list(text: str) -> tuple[str, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    out = []
    for p in parts:
        if p.lower() == "all":
            return pipeline.ALL_MEASURES
        kind = MEASURE_FLAGS.get(p.lower(), p if p in pipeline.ALL_MEASURES else None)
        if kind is None:
            raise UsageError(f"unknown measure {p!r}; choose from {', '.join(MEASURE_FLAGS)} or all")
        out.append(kind)
    return tuple(k for k in pipeline.ALL_MEASURES if k in out)


# ------------------------------------------------------------------- paths

class Layout:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = Path(cfg.out)

    @property
    def data(self) -> Path:
        return self.root / "data"

    def input(self, kind: str) -> Path:
        given = getattr(self.cfg, kind)
        return Path(given) if given else self.data / f"{kind}.csv"

    def measure_file(self, bank: str) -> Path:
        return self.root / "measures" / f"{bank}.csv"

    def stage(self, name: str) -> Path:
        p = self.root / name
        p.mkdir(parents=True, exist_ok=True)
        return p


def _require(paths, stage: str) -> None:
    missing = [str(p) for p in paths if not Path(p).is_file()]
    if missing:
        raise DependencyError(f"{stage}: missing upstream file(s): {', '.join(missing)}")


def _fmt(v) -> str:
    v = float(v)
    return "" if np.isnan(v) else repr(v)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


# ------------------------------------------------------------------ loaders

def _load_market(layout: Layout, stage: str) -> ingest.MarketPanel:
    _require([layout.input("market")], stage)
    return ingest.load_market_panel(layout.input("market"))


def _load_state(layout: Layout, stage: str) -> ingest.StateSeries:
    _require([layout.input("state")], stage)
    return ingest.load_state_series(layout.input("state"))


def _load_quarters(layout: Layout, stage: str) -> ingest.QuarterPanel:
    _require([layout.input("quarters")], stage)
    return ingest.load_quarter_panel(layout.input("quarters"))


def _load_events(layout: Layout, stage: str) -> ingest.EventTimeline:
    _require([layout.input("events")], stage)
    return ingest.load_events(layout.input("events"))


def write_measures(measures, layout: Layout) -> list[Path]:
    out = layout.stage("measures")
    paths = []
    for bank, per in measures.items():
        kinds = list(per)
        dates = np.unique(np.concatenate([np.asarray(s.dates) for s in per.values()]))
        cols = []
        for k in kinds:
            col = np.full(dates.size, np.nan)
            col[np.searchsorted(dates, per[k].dates)] = per[k].values
            cols.append(col)
        path = out / f"{bank}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date"] + kinds)
            for t, d in enumerate(dates):
                w.writerow([str(d)] + [_fmt(c[t]) for c in cols])
        paths.append(path)
    return paths


def read_measures(layout: Layout, banks, stage: str, kinds=None) -> dict:
    paths = [layout.measure_file(b) for b in banks]
    _require(paths, stage)
    out = {}
    for b, path in zip(banks, paths):
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        dates = np.array([r[0] for r in body], dtype="datetime64[D]")
        per = {}
        for j, kind in enumerate(header[1:], start=1):
            if kinds is not None and kind not in kinds:
                continue
            raw = np.array([float(r[j]) if r[j] else np.nan for r in body])
            ok = ~np.isnan(raw)
            per[kind] = RiskSeries(b, kind, dates[ok], raw[ok])
        if kinds is not None:
            missing = [k for k in kinds if k not in per]
            if missing:
                raise DependencyError(f"{stage}: {path} lacks measure column(s) {', '.join(missing)}")
        out[b] = per
    return out


# ------------------------------------------------------------------- stages

def cmd_simulate(cfg: RunConfig) -> None:
    sim = ingest.SimConfig(n_banks=cfg.n_banks, n_weeks=cfg.n_weeks)
    panel, state, qp, events = ingest.simulate_system(sim, cfg.seed)
    layout = Layout(cfg)
    d = layout.stage("data")
    ingest.write_market_panel(panel, d / "market.csv")
    ingest.write_state_series(state, d / "state.csv")
    ingest.write_quarter_panel(qp, d / "quarters.csv")
    ingest.write_events(events, d / "events.csv")
    log.info("simulated %d banks x %d weeks into %s", cfg.n_banks, cfg.n_weeks, d)


def _cache_path() -> Path | None:
    loc = os.environ.get(CACHE_ENV)
    if not loc:
        return None
    p = Path(loc)
    if p.suffix != ".npz":
        p.mkdir(parents=True, exist_ok=True)
        p = p / "characteristic.npz"
    return p


def cmd_measure(cfg: RunConfig) -> None:
    layout = Layout(cfg)
    panel = _load_market(layout, "measure")
    state = _load_state(layout, "measure")
    growth = ingest.compute_growth(panel)
    cache = None
    cache_file = _cache_path()
    if {"NSV", "GSV"} & set(cfg.measures):
        m = state.aligned(growth.dates)
        cache = CharacteristicCache(panel, m, cfg.q, threads=cfg.threads)
        if cache_file is not None:
            log.info("loaded %d cached coalition values", cache.load(cache_file))
    measures = pipeline.compute_measures(
        panel, state, cfg.measures, growth=growth, system_size=cfg.system_size,
        mode=cfg.mode, q=cfg.q, cache=cache, threads=cfg.threads)
    if cache is not None and cache_file is not None:
        cache.save(cache_file)
    paths = write_measures(measures, layout)
    log.info("wrote %d measure files", len(paths))


def cmd_rank(cfg: RunConfig) -> None:
    layout = Layout(cfg)
    banks = _load_market(layout, "rank").bank_ids
    events = _load_events(layout, "rank")
    measures = read_measures(layout, banks, "rank", cfg.measures)
    dates = np.unique(np.concatenate([np.asarray(s.dates) for per in measures.values() for s in per.values()]))
    iev = build_iev(events, dates, cfg.include_actions)
    board = score_measures(measures, iev if cfg.criterion != "granger" else None,
                           criterion=cfg.criterion, order=cfg.measures, lag_reduce=cfg.lag_reduce)
    out = layout.stage("rank")
    board.to_csv(out / "scoreboard.csv")
    _write_json(out / "scoreboard.json", {
        "measures": board.measures, "mcfadden": board.mcfadden, "granger": board.granger,
        "total": board.total, "average_mcfadden_r2": board.average_r2, "n_banks": board.n_banks,
    })


def _risk_matrix(cfg, layout, qp, stage):
    measures = read_measures(layout, qp.bank_ids, stage, (cfg.dependent,))
    return pipeline.quarterly_matrix(measures, cfg.dependent, qp, cfg.quarterly)


def _to_matrix(values, data: panelreg.PanelData, qp: ingest.QuarterPanel) -> np.ndarray:
    out = np.full((len(qp.quarters), len(qp.bank_ids)), np.nan)
    col = {b: j for j, b in enumerate(qp.bank_ids)}
    for v, g, t in zip(values, data.groups, data.periods):
        out[t, col[str(g)]] = v
    return out


def cmd_panel(cfg: RunConfig) -> None:
    layout = Layout(cfg)
    qp = _load_quarters(layout, "panel")
    sr = _risk_matrix(cfg, layout, qp, "panel")
    spec = panelreg.PanelSpec(dependent=cfg.dependent)
    data = panelreg.assemble_panel(sr, qp, spec)
    res = panelreg.prais_winsten_pcse(data)
    imp = panelreg.impacts(res, data)
    out = layout.stage("panel")
    res.to_csv(out / "determinants.csv", impacts=imp)
    (out / "determinants.txt").write_text(res.summary() + "\n", encoding="utf-8")
    deriv = [n for n in spec.x_vars if n in res.names]
    F, Fp = panelreg.f_test(res, deriv)
    W, Wp = panelreg.wald_test(res, deriv)
    # endogeneity chain per derivative on the risk adjusted for the other regressors
    adj = _to_matrix(panelreg.adjusted_risk(data, spec.x_vars), data, qp)
    chain = {}
    with (out / "endogeneity.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["derivative", "omega", "omega_se", "omega_p", "significant",
                    "beta_naive", "beta_adjusted", "rho", "rho_adjusted", "n_obs"])
        for d in spec.x_vars:
            r = panelreg.endogeneity_chain(adj, qp.get(d), d)
            chain[d] = {"omega": r.omega, "omega_p": r.omega_p, "significant": r.significant,
                        "beta_naive": r.beta_naive, "beta_adjusted": r.beta_adjusted}
            w.writerow([d, _fmt(r.omega), _fmt(r.omega_se), _fmt(r.omega_p), int(r.significant),
                        _fmt(r.beta_naive), _fmt(r.beta_adjusted), _fmt(r.rho), _fmt(r.rho_adjusted), r.n_obs])
    _write_json(out / "determinants.json", {
        "dependent": cfg.dependent, "names": res.names, "coef": res.coef, "se": res.se,
        "p_values": res.p_values, "rho": res.rho, "r_squared": res.r_squared, "n_obs": res.n_obs,
        "n_groups": res.n_groups, "min_obs": res.min_obs, "avg_obs": res.avg_obs, "max_obs": res.max_obs,
        "impacts": imp, "derivatives_f": {"F": F, "p": Fp}, "derivatives_wald": {"chi2": W, "p": Wp},
        "endogeneity": chain,
    })


def _did_dates(cfg: RunConfig, qp: ingest.QuarterPanel, events: ingest.EventTimeline):
    """Configured dates, else the reference crisis dates if the panel covers
    them, else dates placed around the first and last event."""
    if cfg.did_pre and cfg.did_post:
        rank = cfg.did_rank
        if not rank:
            k = qp.quarters.index(cfg.did_pre) if cfg.did_pre in qp.quarters else -1
            if k < 2:
                raise UsageError("did_rank is required when did_pre has fewer than two earlier quarters")
            rank = qp.quarters[k - 2:k]
        return tuple(rank), cfg.did_pre, cfg.did_post
    rank, pre, post = REFERENCE_DID
    if all(q in qp.quarters for q in (*rank, pre, post)):
        return rank, pre, post
    if not events.entries:
        raise UsageError("no event timeline to place the difference-in-differences dates; set did_pre/did_post")
    qs = qp.quarters
    first = ingest.quarter_label(events.entries[0][0])
    last = ingest.quarter_label(events.entries[-1][0])
    if first not in qs or qs.index(first) < 3:
        raise UsageError("events fall outside the quarterly panel; set did_pre/did_post")
    k = qs.index(first)
    post_k = max(qs.index(last) if last in qs else k, k) + 1
    if post_k >= len(qs):
        raise UsageError("no quarter after the last event; set did_post")
    return qs[k - 3:k - 1], qs[k - 1], qs[post_k]


def cmd_did(cfg: RunConfig) -> None:
    layout = Layout(cfg)
    qp = _load_quarters(layout, "did")
    events = _load_events(layout, "did")
    sr = _risk_matrix(cfg, layout, qp, "did")
    rank, pre, post = _did_dates(cfg, qp, events)
    full = panelreg.SIZE_CONNECT_SUBST + panelreg.BALANCE_SHEET
    out = layout.stage("did")
    summary = {"rank_quarters": rank, "pre": pre, "post": post, "results": {}}
    for d in cfg.did_treatment:
        controls = full
        if cfg.did_controls == "none":
            controls = ()
        elif cfg.did_controls == "auto":
            try:
                probe = panelreg.diff_in_diff(sr, qp, d, rank_quarters=rank, pre=pre, post=post, controls=())
            except SingularDesignError:
                probe = None
            # full controls only when the two-date sample leaves residual degrees of freedom
            if probe is None or probe.n_obs < len(full) + 4 + 10:
                controls = ()
        res = panelreg.diff_in_diff(sr, qp, d, rank_quarters=rank, pre=pre, post=post, controls=controls)
        res.to_csv(out / f"{d}.csv")
        summary["results"][d] = {
            "interaction": res["post_x_top"], "se": res.stderr("post_x_top"),
            "p_value": res.p_value("post_x_top"), "n_obs": res.n_obs, "controls": list(controls)}
    _write_json(out / "summary.json", summary)


def _figure_files(cfg, layout, qp, events) -> list[str]:
    """One file per derivative: lagged mean holdings (%) next to mean risk."""
    sr = _risk_matrix(cfg, layout, qp, "report")
    ev_q = [ingest.quarter_label(d) for d, k in events.entries if k == "event"]
    act_q = [ingest.quarter_label(d) for d, k in events.entries if k == "policy_action"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        avg_sr = np.nanmean(sr, axis=1)
    out = layout.stage("report")
    written = []
    for d in ingest.DERIVATIVE_FIELDS:
        fv = 100.0 * _nanmean_rows(qp.get(d))
        notional_key = "notional_" + d
        nt = 100.0 * _nanmean_rows(qp.fields[notional_key]) if notional_key in qp.fields else None
        path = out / f"figure_{d}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            head = ["quarter", "fair_value_pct_lag1"] + (["notional_pct_lag1"] if nt is not None else [])
            w.writerow(head + [f"mean_{cfg.dependent}", "events", "policy_actions"])
            for k, q in enumerate(qp.quarters):
                lag = [_fmt(fv[k - 1]) if k else ""]
                if nt is not None:
                    lag.append(_fmt(nt[k - 1]) if k else "")
                w.writerow([q] + lag + [_fmt(avg_sr[k]), ev_q.count(q), act_q.count(q)])
        written.append(path.name)
    return written


def _nanmean_rows(a: np.ndarray) -> np.ndarray:
    ok = np.isfinite(a)
    s = np.where(ok, a, 0.0).sum(axis=1)
    n = ok.sum(axis=1)
    return np.where(n > 0, s / np.maximum(n, 1), np.nan)


def cmd_report(cfg: RunConfig) -> None:
    layout = Layout(cfg)
    sidecars = {
        "ranking": layout.root / "rank" / "scoreboard.json",
        "determinants": layout.root / "panel" / "determinants.json",
        "diff_in_diff": layout.root / "did" / "summary.json",
    }
    _require(sidecars.values(), "report")
    qp = _load_quarters(layout, "report")
    events = _load_events(layout, "report")
    report = {name: _read_json(p) for name, p in sidecars.items()}
    report["figures"] = _figure_files(cfg, layout, qp, events)
    report["config"] = {f.name: getattr(cfg, f.name) for f in fields(RunConfig)
                        if f.name not in ("out", "threads")}
    _write_json(layout.stage("report") / "report.json", report)


HELP = {
    "simulate": "generate a synthetic system into <out>/data",
    "measure": "per-bank risk measure files",
    "rank": "score the measures against the event timeline",
    "panel": "determinants regression and endogeneity chain",
    "did": "difference-in-differences around the crisis dates",
    "report": "consolidated JSON and plot-data files",
}

COMMANDS = {
    "simulate": cmd_simulate,
    "measure": cmd_measure,
    "rank": cmd_rank,
    "panel": cmd_panel,
    "did": cmd_did,
    "report": cmd_report,
}


# --------------------------------------------------------------------- main

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI file of key = value settings")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--measure", metavar="{nsv,gsv,dcovar,dcoes,adcovar,all}",
                        help="comma-separated measures (default all)")
    common.add_argument("--quarterly", choices=("last", "sum"))
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="sysrisk", description="Bank contributions to systemic risk.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for key in ("seed", "threads", "out", "quarterly"):
        v = getattr(args, key)
        if v is not None:
            cfg = replace(cfg, **{key: v})
    if args.measure:
        cfg = replace(cfg, measures=_measure_list(args.measure))
    return cfg.validate()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        if not os.access(cfg.out, os.W_OK):
            raise UsageError(f"output directory {cfg.out} is not writable")
        COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"sysrisk: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SingularDesignError, SampleSizeError, DegenerateResponseError,
            FeasibilityError, np.linalg.LinAlgError) as exc:
        print(f"sysrisk: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, ValueError, KeyError, OSError) as exc:
        print(f"sysrisk: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
