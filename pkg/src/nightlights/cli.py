"""Command-line entry point: ``nightlights <subcommand> [options]``.

Exit codes: 0 success, 2 fatal input or configuration error, 3 finished
with per-scope failures (artifacts for the other scopes are still written).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, parse_periods, parse_scopes, period_tag
from .errors import ConfigError, NightLightsError
from .grid import Panel, import_ascii_grid, write_raster
from .growth import aggregate_all, estimate_growth, fit_year_effects, zero_effects
from .markov import gap, markov_series, period_means
from .pipeline import (_select, cumulative_change, demean_or_none, dump_demeaned, export_sparse_csv,
                       panel_diffs, period_average)
from .regions import WORLD, Scope, load_mask
from .render import Palette, render_change_map, write_image
from .report import ReportRow, fmt, write_report
from .stats import (MomentAccumulator, correlate_series, growth_scatter, qq_data, read_series_csv,
                    sigma_series)
from .synth import parse_panel_spec, write_panel

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 2, 3


def _num(v: float) -> str:
    """Shortest round-trip text for a float; ``NaN`` for non-finite values."""
    return repr(float(v)) if math.isfinite(v) else "NaN"


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_") or "scope"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


@dataclass
class Failure:
    scope: str
    stage: str
    message: str


@dataclass
class ScopeResult:
    scope: Scope
    name: str
    sigma: list = field(default_factory=list)
    markov: list = field(default_factory=list)
    error: Exception | None = None


def _default_table(mask: Path) -> Path:
    """``<mask>.csv`` if present, else ``regions.csv`` beside the mask."""
    own = mask.with_suffix(".csv")
    shared = mask.parent / "regions.csv"
    return own if own.is_file() or not shared.is_file() else shared


class Runner:
    """Loads inputs once and produces each artifact on demand."""

    def __init__(self, cfg: RunConfig, log=sys.stderr):
        self.cfg = cfg
        self.log = log
        self.failures: list[Failure] = []
        if cfg.panel_dir is None:
            raise ConfigError("no panel directory given (panel_dir in the config or --panel)")
        try:
            self.panel = Panel.from_dir(cfg.panel_dir, lazy=True)
        except FileNotFoundError as exc:
            raise ConfigError(f"{cfg.panel_dir}: {exc}") from None
        self.mask = None
        if cfg.mask is not None:
            table = cfg.table or _default_table(cfg.mask)
            for p in (cfg.mask, table):
                if not Path(p).is_file():
                    raise ConfigError(f"{p}: cannot read region input")
            self.mask = load_mask(cfg.mask, table)
            if self.mask.geometry != self.panel.geometry:
                raise ConfigError(f"{cfg.mask}: mask geometry differs from the panel")
        cfg.check_periods(self.panel.years)
        self.scopes = self._resolve_scopes()
        self.out = Path(cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)

    def _resolve_scopes(self) -> list[Scope]:
        if self.cfg.scopes is None:
            regions = self.mask.scopes() if self.mask is not None else []
            return [WORLD] + regions
        out = []
        for name in self.cfg.scopes:
            if name == "World":
                out.append(WORLD)
                continue
            if self.mask is None:
                raise ConfigError(f"scope {name!r} needs a region mask")
            try:
                out.append(Scope(self.mask.find(name).id))
            except KeyError:
                raise ConfigError(f"scope {name!r} is not in the region table") from None
        return out

    def name(self, scope: Scope) -> str:
        return "World" if scope.is_world else self.mask.scope_name(scope)

    def fail(self, scope: Scope, stage: str, exc: Exception) -> None:
        f = Failure(self.name(scope), stage, str(exc))
        self.failures.append(f)
        print(f"warning: {f.scope}: {stage}: {f.message}", file=self.log)

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.failures else EXIT_OK

    @property
    def _kw(self):
        return {"chunk_rows": self.cfg.chunk_rows, "threads": self.cfg.threads}

    @cached_property
    def diffs(self):
        return panel_diffs(self.panel, **self._kw)

    def _per_scope(self, fn):
        # scopes are independent; results come back in scope order
        with ThreadPoolExecutor(max_workers=self.cfg.threads) as pool:
            return list(pool.map(fn, self.scopes))

    @cached_property
    def scope_results(self) -> list[ScopeResult]:
        def run(scope):
            res = ScopeResult(scope, self.name(scope))
            res.sigma = list(sigma_series(self.diffs, self.mask, scope).entries)
            try:
                res.markov = markov_series(self.diffs, self.mask, scope)
            except NightLightsError as exc:
                res.markov = None
                res.error = exc
            return res

        results = self._per_scope(run)
        for r in results:
            if r.markov is None:
                self.fail(r.scope, "markov", r.error)
                r.markov = []
        return results

    # growth ----------------------------------------------------------------

    @cached_property
    def aggregates(self):
        return aggregate_all(self.panel, self.mask, **self._kw)

    @cached_property
    def year_effects(self):
        regional = [s for sc, s in self.aggregates.items() if not sc.is_world]
        try:
            return fit_year_effects(regional)
        except NightLightsError as exc:
            print(f"note: year effects not estimated ({exc}); growth uses raw log changes",
                  file=self.log)
            return zero_effects(self.panel.years)

    @cached_property
    def growth(self) -> dict[Scope, list]:
        out = {}
        for scope in self.scopes:
            row = []
            for period in self.cfg.periods:
                try:
                    row.append(estimate_growth(self.aggregates[scope], self.year_effects, period))
                except NightLightsError as exc:
                    self.fail(scope, f"growth {period[0]}-{period[1]}", exc)
                    row.append(None)
            out[scope] = row
        return out

    # artifacts -------------------------------------------------------------

    def write_sigma(self):
        rows = [(r.name, e.year, _num(e.sigma), e.n) for r in self.scope_results for e in r.sigma]
        _write_csv(self.out / "sigma_series.csv", ["scope", "year", "sigma", "n"], rows)

    def write_markov(self):
        rows = []
        for r in self.scope_results:
            for s in r.markov:
                rows.append((r.name, s.year, fmt(100 * s.a_pp, 1), fmt(100 * s.a_00, 1),
                             fmt(100 * s.a_mm, 1), fmt(100 * gap(s), 1), int(s.converged),
                             s.n_transitions))
        _write_csv(self.out / "markov.csv",
                   ["scope", "year", "a_pp", "a_00", "a_mm", "gap", "converged", "n_transitions"], rows)

    def write_growth(self):
        rows = []
        for scope in self.scopes:
            for period, est in zip(self.cfg.periods, self.growth[scope]):
                label = f"{period[0]}-{period[1]}"
                if est is None:
                    rows.append((self.name(scope), label, "NaN", "NaN", 0))
                else:
                    rows.append((self.name(scope), label, fmt(est.y_hat, 2), fmt(est.sigma_y, 2), est.n_years))
        _write_csv(self.out / "growth.csv", ["scope", "period", "y_hat", "sigma_y", "n_years"], rows)
        if self.cfg.external_series is not None:
            self.write_correlation()

    def write_correlation(self):
        path = self.cfg.external_series
        try:
            ext = read_series_csv(path)
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        world = self.aggregates[WORLD].changes()
        lights = {y: 100.0 * v for y, v in world.items()}
        try:
            r, n = correlate_series(lights, ext)
        except NightLightsError as exc:
            self.fail(WORLD, "correlation", exc)
            r, n = math.nan, 0
        doc = {"series": str(path), "r": r if math.isfinite(r) else None, "n": n}
        (self.out / "correlation.json").write_text(json.dumps(doc, indent=2) + "\n")

    def _period_values(self, period):
        parts = []
        for d in _select(self.diffs, period):
            dm = demean_or_none(d, self.mask, WORLD)
            if dm is not None:
                parts.append(dm.values)
        return np.concatenate(parts) if parts else np.empty(0)

    def write_moments(self):
        doc = {}
        spans = [("all", (self.panel.diff_years[0], self.panel.diff_years[-1]))]
        spans += [(f"{a}-{b}", (a, b)) for a, b in self.cfg.periods]
        for label, span in spans:
            acc = MomentAccumulator()
            for d in _select(self.diffs, span):
                dm = demean_or_none(d, self.mask, WORLD)
                if dm is not None:
                    acc.update(dm.values)
            try:
                s = acc.summary()
                doc[label] = {"n": s.n, "mean": s.mean, "std": s.std, "skewness": s.skewness,
                              "excess_kurtosis": s.excess_kurtosis}
            except NightLightsError as exc:
                self.fail(WORLD, f"moments {label}", exc)
                doc[label] = {"n": acc.n, "mean": None, "std": None, "skewness": None,
                              "excess_kurtosis": None}
        clean = json.loads(json.dumps(doc), parse_constant=lambda c: None)
        (self.out / "moments.json").write_text(json.dumps(clean, indent=2, sort_keys=True) + "\n")

    def write_qq(self):
        header = ["p", "q_" + period_tag(self.cfg.periods[0]),
                  "q_" + period_tag(self.cfg.periods[-1])]
        rows = []
        if len(self.cfg.periods) >= 2:
            a = self._period_values(self.cfg.periods[0])
            b = self._period_values(self.cfg.periods[-1])
            if a.size and b.size:
                q = self.cfg.qq_points
                p = (np.arange(1, q + 1) - 0.5) / q
                rows = [(_num(pk), _num(x), _num(y)) for pk, (x, y) in zip(p, qq_data(a, b, q))]
            else:
                self.fail(WORLD, "qq", ValueError("a period has no active pixels"))
        _write_csv(self.out / "qq.csv", header, rows)

    def write_scatter(self):
        rows = []
        if len(self.cfg.periods) >= 2:
            try:
                sc = growth_scatter(self.diffs, self.mask, WORLD, self.cfg.periods[0], self.cfg.periods[-1])
            except NightLightsError as exc:
                self.fail(WORLD, "scatter", exc)
            else:
                w = self.panel.geometry.width
                stride = max(1, -(-len(sc) // self.cfg.scatter_max_points))
                for k in range(0, len(sc), stride):
                    i = int(sc.index[k])
                    rows.append((i % w, i // w, _num(sc.x[k]), _num(sc.y[k]), _num(sc.color[k])))
        _write_csv(self.out / "scatter.csv", ["i", "j", "x", "y", "color"], rows)

    def write_maps(self):
        maps = self.out / "maps"
        maps.mkdir(exist_ok=True)
        palette = Palette(clamp=self.cfg.clamp)
        ext = self.cfg.image_format
        for scope in self.scopes:
            window = None if scope.is_world or self.mask is None else self.mask.bbox(scope)
            jobs = [("cumulative", lambda s=scope: cumulative_change(self.diffs, self.mask, s))]
            for period in self.cfg.periods:
                jobs.append((period_tag(period),
                             lambda s=scope, p=period: period_average(self.diffs, self.mask, s, p)))
            for label, make in jobs:
                try:
                    img = render_change_map(make(), palette, self.cfg.max_width, window)
                except NightLightsError as exc:
                    self.fail(scope, f"map {label}", exc)
                    continue
                write_image(img, maps / f"{_slug(self.name(scope))}_{label}.{ext}", ext)

    def report_rows(self) -> list[ReportRow]:
        by_scope = {r.scope: r for r in self.scope_results}
        rows = []
        for scope in self.scopes:
            est = self.growth[scope]
            means = [period_means(by_scope[scope].markov, p) for p in self.cfg.periods]
            pct = lambda v: 100.0 * v
            rows.append(ReportRow(
                self.name(scope),
                [e.y_hat if e else math.nan for e in est],
                [e.sigma_y if e else math.nan for e in est],
                [pct(m.a_pp) for m in means],
                [pct(m.a_mm) for m in means],
                [pct(m.a_00) for m in means],
            ))
        rows.sort(key=lambda r: r.name)
        return rows

    def write_report(self):
        write_report(self.out / "report.csv", self.report_rows(), self.cfg.periods)

    def write_diffs(self, fmt_: str = "csv"):
        root = self.out / "demeaned"
        root.mkdir(exist_ok=True)
        for scope in self.scopes:
            for d in self.diffs:
                dm = demean_or_none(d, self.mask, scope)
                if dm is None:
                    continue
                stem = root / f"{_slug(self.name(scope))}_{dm.year}"
                if fmt_ == "csv":
                    export_sparse_csv(dm, stem.with_suffix(".csv"))
                else:
                    dump_demeaned(dm, stem.with_suffix(".nld"))


# commands --------------------------------------------------------------------

def cmd_report(cfg: RunConfig) -> int:
    r = Runner(cfg)
    r.write_report()
    return r.exit_code


def cmd_run(cfg: RunConfig) -> int:
    r = Runner(cfg)
    r.write_sigma()
    r.write_markov()
    r.write_growth()
    r.write_moments()
    r.write_qq()
    r.write_scatter()
    r.write_maps()
    r.write_report()
    return r.exit_code


def cmd_metrics(cfg: RunConfig) -> int:
    r = Runner(cfg)
    r.write_sigma()
    r.write_moments()
    r.write_qq()
    r.write_scatter()
    return r.exit_code


def _single(method):
    def cmd(cfg: RunConfig, **kw) -> int:
        r = Runner(cfg)
        getattr(r, method)(**kw)
        return r.exit_code
    return cmd


cmd_markov = _single("write_markov")
cmd_growth = _single("write_growth")
cmd_render = _single("write_maps")
cmd_diff = _single("write_diffs")


def cmd_ingest(files, out_dir: Path, year: int | None = None) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    if year is not None and len(files) != 1:
        raise ConfigError("--year applies to a single input file")
    for f in files:
        y = year
        if y is None:
            m = re.search(r"(?<!\d)(\d{4})(?!\d)", Path(f).name)
            if not m:
                raise ConfigError(f"{f}: no four-digit year in the file name; pass --year")
            y = int(m.group(1))
        if not Path(f).is_file():
            raise ConfigError(f"{f}: no such file")
        write_raster(import_ascii_grid(f, y), out_dir / f"{y}.nlg")
    return EXIT_OK


def cmd_synth(spec_path: Path, out_dir: Path, chunk_rows: int) -> int:
    if not Path(spec_path).is_file():
        raise ConfigError(f"{spec_path}: no such spec file")
    truth = write_panel(parse_panel_spec(spec_path), out_dir, chunk_rows=chunk_rows)
    print(f"wrote panel to {out_dir} (clipping rate {truth.clip_rate:.4%})")
    return EXIT_OK


# argument parsing ------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value run configuration")
    common.add_argument("--threads", type=int, help="worker threads (default 1)")
    common.add_argument("--chunk-rows", type=int, help="rows per processing band (default 256)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--panel", type=Path, help="directory of .nlg yearly rasters")
    common.add_argument("--mask", type=Path, help="region mask raster (.rmsk)")
    common.add_argument("--table", type=Path, help="region table CSV (id,name,kind)")
    common.add_argument("--series", type=Path, help="external year,value series to correlate")
    common.add_argument("--scopes", help="comma-separated region names, 'all' or 'none'")
    common.add_argument("--periods", help="comma-separated periods such as 1993-2006,2007-2013")

    p = argparse.ArgumentParser(prog="nightlights", description="Night-light panel analytics.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    ing = sub.add_parser("ingest", parents=[common], help="convert ESRI ASCII grids to NLG1 rasters")
    ing.add_argument("files", nargs="+", type=Path)
    ing.add_argument("--year", type=int, help="year of a single input grid")
    syn = sub.add_parser("synth", parents=[common], help="write a synthetic panel from a spec file")
    syn.add_argument("--spec", type=Path, help="synthetic panel description (key = value)")
    dif = sub.add_parser("diff", parents=[common], help="write demeaned changes per scope and year")
    dif.add_argument("--format", choices=("csv", "nld"), default="csv",
                     help="csv rows or sparse NLD1 files (default csv)")
    for name, text in (("metrics", "dispersion series, moments, QQ and scatter data"),
                       ("markov", "persistence probabilities per year"),
                       ("growth", "fixed-effects growth per period"),
                       ("render", "change maps"),
                       ("report", "summary table per scope"),
                       ("run", "every artifact")):
        sub.add_parser(name, parents=[common], help=text)
    return p


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg = cfg.with_overrides(
        threads=args.threads, chunk_rows=args.chunk_rows, out_dir=args.out,
        panel_dir=args.panel, mask=args.mask, table=args.table, external_series=args.series,
        periods=parse_periods(args.periods) if args.periods else None,
    )
    if args.scopes is not None:
        cfg = replace(cfg, scopes=parse_scopes(args.scopes))
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "ingest":
            return cmd_ingest(args.files, args.out or Path("."), args.year)
        cfg = _config(args)
        if args.command == "synth":
            spec = args.spec or cfg.synth_spec
            if spec is None:
                raise ConfigError("synth needs --spec or synth_spec in the config")
            return cmd_synth(spec, args.out or cfg.out_dir, cfg.chunk_rows)
        if args.command == "diff":
            return cmd_diff(cfg, fmt_=args.format)
        return {"metrics": cmd_metrics, "markov": cmd_markov, "growth": cmd_growth,
                "render": cmd_render, "report": cmd_report, "run": cmd_run}[args.command](cfg)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except NightLightsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
