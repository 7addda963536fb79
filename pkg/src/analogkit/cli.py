"""Experiment runner: ingest, synth, train, predict, verify, and the
search-length sensitivity experiment.

Every command takes ``--config <path>`` and ``--out <dir>`` (plus an
optional ``--seed`` override) and echoes the full config into a provenance
header of its outputs. Exit codes: 0 success, 1 config error, 2 data
error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import archive as ar
from .config import ExperimentConfig, load_config
from .ensemble import AnalogQuery, EnsembleForecast, build_ensemble, search_classic, search_latent
from .errors import (
    AnalogkitError,
    ConfigError,
    DataError,
    DivergenceError,
    InsufficientAnalogs,
    SchemaError,
    WindowUnavailable,
)
from .metric import MetricConfig
from .network import ModelCheckpoint, embed_block, load_checkpoint, save_checkpoint
from .synthetic import SynthSpec, generate, write_manifest
from .training import train, write_train_log
from .verification import (
    VerificationSet,
    build_report,
    error_interval_rmse,
    rmse as vset_rmse,
    brier as vset_brier,
)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _cycle_indices(fcst: ar.ForecastArchive, start: int, end: int) -> np.ndarray:
    """Indices of cycles with start <= cycle time < end."""
    return np.nonzero((fcst.cycles >= start) & (fcst.cycles < end))[0]


def _selected_stations(cfg: ExperimentConfig, fcst: ar.ForecastArchive) -> list[str]:
    if cfg.stations is None:
        return list(fcst.stations)
    for s in cfg.stations:
        fcst.station_index(s)  # raises KeyError for unknown stations
    return list(cfg.stations)


def _selected_leads(cfg: ExperimentConfig, fcst: ar.ForecastArchive) -> list[int]:
    """Lead indices, from configured lead seconds or all leads."""
    if cfg.leads is None:
        return list(range(fcst.n_leads))
    lead_list = fcst.leads.tolist()
    out = []
    for lead_s in cfg.leads:
        if lead_s not in lead_list:
            raise ConfigError(f"lead {lead_s}s not present in the forecast archive")
        out.append(lead_list.index(lead_s))
    return out


def _effective_weights(cfg: ExperimentConfig, fcst: ar.ForecastArchive) -> np.ndarray:
    """Per-variable metric weights for the classic methods.

    anen_equal gives every variable weight 1; anen_weighted takes the
    ``weight.<variable>`` config keys, with unlisted variables at 0.
    """
    if cfg.method == "anen_equal":
        return np.ones(fcst.n_variables)
    weights = np.zeros(fcst.n_variables)
    for variable, w in cfg.weights.items():
        try:
            weights[fcst.variable_index(variable)] = w
        except KeyError:
            raise ConfigError(f"weight.{variable}: variable not in the archive") from None
    if not np.any(weights > 0):
        raise ConfigError("anen_weighted needs at least one positive weight.<variable> key")
    return weights


def _provenance(cfg: ExperimentConfig, command: str, extra: list[str] | None = None) -> list[str]:
    lines = [f"# analogkit {command}"] + cfg.provenance_lines()
    if extra:
        lines.extend(f"# {e}" for e in extra)
    return lines


def _load_archives(cfg: ExperimentConfig):
    cfg.require("forecast_csv", "observation_csv")
    fcst = ar.load_forecasts(cfg.forecast_csv)
    obs = ar.load_observations(cfg.observation_csv)
    return fcst, obs


# ---------------------------------------------------------------------------
# prediction core (shared by cmd_predict and the search-length experiment)
# ---------------------------------------------------------------------------


class PredictionRow:
    __slots__ = ("station", "cycle", "lead", "ensemble")

    def __init__(self, station: str, cycle: int, lead: int, ensemble: EnsembleForecast):
        self.station = station
        self.cycle = cycle
        self.lead = lead
        self.ensemble = ensemble


def run_predictions(
    cfg: ExperimentConfig,
    fcst: ar.ForecastArchive,
    obs: ar.ObservationArchive,
    stations: list[str],
    leads: list[int],
    search_cycles: np.ndarray,
    test_cycles: np.ndarray,
    model: ModelCheckpoint | None,
) -> tuple[list[PredictionRow], list[tuple[str, int, int, str]]]:
    """Ensembles for every (station, test cycle, lead) with a target window.

    Iteration order is fixed (stations as given, leads ascending, cycles
    ascending), so output is deterministic. Returns the prediction rows and
    the skipped targets with reasons.
    """
    t_half = model.t_half if model is not None else cfg.t_half
    rows: list[PredictionRow] = []
    skipped: list[tuple[str, int, int, str]] = []
    for station in stations:
        s = fcst.station_index(station)
        for lead in sorted(leads):
            if cfg.method == "deep_anen":
                all_cycles = np.union1d(search_cycles, test_cycles)
                block = embed_block(model, fcst, s, lead, all_cycles)
            else:
                stats = ar.climatology_stats(fcst, s, lead, search_cycles)
                metric_cfg = MetricConfig(
                    weights=_effective_weights(cfg, fcst), sigma=stats.sigma, t_half=t_half
                )
            for c in sorted(int(x) for x in test_cycles):
                query = AnalogQuery(
                    station=s,
                    target_cycle=c,
                    lead=lead,
                    t_half=t_half,
                    search_cycles=search_cycles,
                    m=cfg.m,
                )
                try:
                    if cfg.method == "deep_anen":
                        ranked = search_latent(query, block, obs)
                    else:
                        ranked = search_classic(query, fcst, obs, metric_cfg)
                    ensemble = build_ensemble(ranked, query, allow_short=cfg.allow_short)
                except WindowUnavailable as err:
                    skipped.append((station, c, lead, str(err)))
                    continue
                except InsufficientAnalogs as err:
                    skipped.append((station, c, lead, str(err)))
                    continue
                except DataError as err:
                    skipped.append((station, c, lead, str(err)))
                    continue
                rows.append(PredictionRow(station, c, lead, ensemble))
    return rows, skipped


def write_predictions(
    rows: list[PredictionRow], fcst: ar.ForecastArchive, path, header_lines: list[str]
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        fh.write("station,cycle_time,lead_s,member_rank,member_value,source_cycle_time,score\n")
        for row in rows:
            cycle_time = ar.format_time(int(fcst.cycles[row.cycle]))
            lead_s = int(fcst.leads[row.lead])
            for rank, (member, (src_cycle, score)) in enumerate(
                zip(row.ensemble.members, row.ensemble.sources), start=1
            ):
                src_time = ar.format_time(int(fcst.cycles[src_cycle]))
                fh.write(
                    f"{row.station},{cycle_time},{lead_s},{rank},"
                    f"{ar.format_float(member)},{src_time},{ar.format_float(score)}\n"
                )


def pairs_from_rows(
    rows: list[PredictionRow], fcst: ar.ForecastArchive, obs: ar.ObservationArchive
) -> tuple[VerificationSet, int]:
    """Verification pairs for in-memory prediction rows.

    Counts rows excluded for a missing observation or (under allow_short)
    an incomplete ensemble, which the set's shared member count forbids.
    """
    full_m = max((row.ensemble.m for row in rows), default=0)
    members, observations, lead_s = [], [], []
    excluded = 0
    for row in rows:
        if row.ensemble.m < full_m:
            excluded += 1
            continue
        t = ar.valid_time(fcst, row.cycle, row.lead)
        try:
            o = obs.station_index(row.station)
        except KeyError:
            excluded += 1
            continue
        y = obs.value_at(o, t)
        if not np.isfinite(y):
            excluded += 1
            continue
        members.append(row.ensemble.members)
        observations.append(y)
        lead_s.append(int(fcst.leads[row.lead]))
    if not members:
        raise DataError("no verifiable prediction/observation pairs")
    return (
        VerificationSet(
            members=np.array(members),
            observations=np.array(observations),
            lead_s=np.array(lead_s, dtype=np.int64),
        ),
        excluded,
    )


def _brier_threshold(cfg: ExperimentConfig, obs: ar.ObservationArchive, stations: list[str]) -> float:
    """Configured quantile of the observed distribution (linear interpolation)."""
    rows = []
    for station in stations:
        try:
            o = obs.station_index(station)
        except KeyError:
            continue
        values = obs.values[o]
        if cfg.test_start is not None:
            mask = (obs.times >= cfg.test_start) & (obs.times < cfg.test_end)
            values = values[mask]
        rows.append(values[np.isfinite(values)])
    pooled = np.concatenate(rows) if rows else np.array([])
    if pooled.size == 0:
        raise DataError("no observations available to compute the Brier threshold")
    return float(np.quantile(pooled, cfg.brier_quantile))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(cfg: ExperimentConfig, out: Path) -> int:
    fcst, obs = _load_archives(cfg)
    n_missing_fcst = int(np.isnan(fcst.values).sum())
    n_missing_obs = int(np.isnan(obs.values).sum())
    with open(out / "ingest_summary.txt", "w", encoding="utf-8") as fh:
        for line in _provenance(cfg, "ingest"):
            fh.write(line + "\n")
        fh.write(f"stations={len(fcst.stations)}\n")
        fh.write(f"variables={len(fcst.variables)}\n")
        fh.write(f"cycles={fcst.n_cycles}\n")
        fh.write(f"leads={fcst.n_leads}\n")
        fh.write(f"first_cycle={ar.format_time(int(fcst.cycles[0]))}\n")
        fh.write(f"last_cycle={ar.format_time(int(fcst.cycles[-1]))}\n")
        fh.write(f"forecast_cells_missing={n_missing_fcst}\n")
        fh.write(f"observation_times={len(obs.times)}\n")
        fh.write(f"observation_cells_missing={n_missing_obs}\n")
    return 0


def cmd_synth(cfg: ExperimentConfig, out: Path) -> int:
    spec = SynthSpec(
        n_stations=cfg.synth_stations,
        n_cycles=cfg.synth_cycles,
        n_leads=cfg.synth_leads,
        n_variables=cfg.synth_variables,
        seed=cfg.seed,
        hidden=tuple(cfg.synth_hidden),
        g_name=cfg.synth_g,
        sigma_noise=cfg.synth_sigma_noise,
    )
    fcst, obs, manifest = generate(spec)
    ar.write_forecasts(fcst, out / "forecasts.csv")
    ar.write_observations(obs, out / "observations.csv")
    write_manifest(manifest, out / "manifest.txt")
    return 0


def cmd_train(cfg: ExperimentConfig, out: Path) -> int:
    cfg.require("train_start", "train_end")
    fcst, obs = _load_archives(cfg)
    stations = cfg.train_stations or _selected_stations(cfg, fcst)
    cycles = _cycle_indices(fcst, cfg.train_start, cfg.train_end)
    if cycles.size == 0:
        raise DataError("no forecast cycles inside the training range")
    if cfg.train_leads is not None:
        lead_list = fcst.leads.tolist()
        leads = [lead_list.index(l) for l in cfg.train_leads if l in lead_list]
        if not leads:
            raise ConfigError("train_leads matched no leads in the archive")
    else:
        leads = [
            l
            for l in range(fcst.n_leads)
            if l - cfg.t_half >= 0 and l + cfg.t_half < fcst.n_leads
        ]
    checkpoint_path = out / "checkpoint.txt"
    model, log = train(
        fcst,
        obs,
        stations,
        leads,
        cycles,
        cfg.train_config(),
        on_divergence_save=str(checkpoint_path),
    )
    save_checkpoint(model, checkpoint_path)
    write_train_log(log, out / "train_log.csv")
    return 0


def cmd_predict(cfg: ExperimentConfig, out: Path) -> int:
    cfg.require("search_start", "search_end", "test_start", "test_end")
    fcst, obs = _load_archives(cfg)
    stations = _selected_stations(cfg, fcst)
    leads = _selected_leads(cfg, fcst)
    search_cycles = _cycle_indices(fcst, cfg.search_start, cfg.search_end)
    test_cycles = _cycle_indices(fcst, cfg.test_start, cfg.test_end)
    if search_cycles.size == 0:
        raise DataError("no forecast cycles inside the search range")
    if test_cycles.size == 0:
        raise DataError("no forecast cycles inside the test range")
    model = None
    extra = []
    if cfg.method == "deep_anen":
        cfg.require("checkpoint")
        if not Path(cfg.checkpoint).exists():
            raise DataError(f"checkpoint not found: {cfg.checkpoint}")
        model = load_checkpoint(cfg.checkpoint)
    else:
        weights = _effective_weights(cfg, fcst)
        extra = [
            f"effective_weight.{v}={ar.format_float(w)}"
            for v, w in zip(fcst.variables, weights)
        ]
    rows, skipped = run_predictions(
        cfg, fcst, obs, stations, leads, search_cycles, test_cycles, model
    )
    write_predictions(rows, fcst, out / "predictions.csv", _provenance(cfg, "predict", extra))
    with open(out / "skipped.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("station,cycle_time,lead_s,reason\n")
        for station, cycle, lead, reason in skipped:
            fh.write(
                f"{station},{ar.format_time(int(fcst.cycles[cycle]))},"
                f"{int(fcst.leads[lead])},{reason.replace(',', ';')}\n"
            )
    if not rows:
        raise DataError("all prediction targets failed; see skipped.csv")
    return 0


def read_predictions(path):
    """Parse a predictions CSV into per-target member lists.

    Returns (groups, short_groups) where groups is an ordered dict-like
    list of ((station, cycle_time, lead_s), members ordered by rank).
    """
    groups: dict[tuple[str, str, int], list[tuple[int, float]]] = {}
    order: list[tuple[str, str, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = [l for l in fh.read().splitlines() if l and not l.startswith("#")]
    if not lines:
        raise SchemaError(f"{path}: no records")
    header = "station,cycle_time,lead_s,member_rank,member_value,source_cycle_time,score"
    if lines[0] != header:
        raise SchemaError(f"{path}: bad prediction header")
    for line in lines[1:]:
        fields = line.split(",")
        if len(fields) != 7:
            raise SchemaError(f"{path}: bad prediction row {line!r}")
        station, cycle_time, lead_s, rank, value = (
            fields[0],
            fields[1],
            int(fields[2]),
            int(fields[3]),
            float(fields[4]),
        )
        key = (station, cycle_time, lead_s)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append((rank, value))
    return [(key, [v for _, v in sorted(groups[key])]) for key in order]


def cmd_verify(cfg: ExperimentConfig, out: Path, predictions_path=None) -> int:
    cfg.require("observation_csv")
    obs = ar.load_observations(cfg.observation_csv)
    if predictions_path is None:
        predictions_path = cfg.predictions_csv or (out / "predictions.csv")
    groups = read_predictions(predictions_path)

    m = max(len(members) for _, members in groups)
    members_rows, obs_rows, lead_rows = [], [], []
    excluded_missing_obs = 0
    excluded_short = 0
    stations_seen: list[str] = []
    for (station, cycle_time, lead_s), members in groups:
        if station not in stations_seen:
            stations_seen.append(station)
        if len(members) < m:
            excluded_short += 1
            continue
        valid = ar.parse_time(cycle_time) + lead_s
        try:
            o = obs.station_index(station)
        except KeyError:
            excluded_missing_obs += 1
            continue
        y = obs.value_at(o, valid)
        if not np.isfinite(y):
            excluded_missing_obs += 1
            continue
        members_rows.append(members)
        obs_rows.append(y)
        lead_rows.append(lead_s)
    if not members_rows:
        raise DataError("no verifiable prediction/observation pairs")
    vset = VerificationSet(
        members=np.array(members_rows),
        observations=np.array(obs_rows),
        lead_s=np.array(lead_rows, dtype=np.int64),
    )
    threshold = _brier_threshold(cfg, obs, stations_seen)
    report = build_report(
        vset, brier_threshold=threshold, n_spread_bins=cfg.spread_bins, seed=cfg.seed
    )

    extra = [
        f"brier_threshold={ar.format_float(threshold)}",
        f"pairs={report.n_pairs}",
        f"excluded_missing_obs={excluded_missing_obs}",
        f"excluded_short_ensembles={excluded_short}",
    ]
    with open(out / "report.csv", "w", encoding="utf-8", newline="") as fh:
        for line in _provenance(cfg, "verify", extra):
            fh.write(line + "\n")
        fh.write("lead_s,metric,value,bin,lo,hi,count\n")
        fh.write(f"all,brier_threshold,{ar.format_float(threshold)},,,,\n")
        for lead in sorted(report.per_lead):
            for name, value in report.per_lead[lead].items():
                fh.write(f"{lead},{name},{ar.format_float(value)},,,,\n")
        for name, value in report.aggregate.items():
            fh.write(f"all,{name},{ar.format_float(value)},,,,\n")
        for i, b in enumerate(report.spread_bins):
            fh.write(
                f"all,spread_error_rmse,{ar.format_float(b.rmse)},{i},"
                f"{ar.format_float(b.rmse_lo)},{ar.format_float(b.rmse_hi)},{b.count}\n"
            )
            fh.write(
                f"all,spread_error_mean_spread,{ar.format_float(b.mean_spread)},{i},,,{b.count}\n"
            )
        if cfg.error_intervals is not None and cfg.baseline_variable is not None:
            intervals, excluded = _baseline_intervals(cfg, vset, groups, m)
            fh.write(f"all,interval_excluded,{excluded},,,,\n")
            for i, stat in enumerate(intervals):
                value = "" if stat.rmse is None else ar.format_float(stat.rmse)
                hi = "inf" if np.isinf(stat.hi) else ar.format_float(stat.hi)
                fh.write(
                    f"all,interval_rmse,{value},{i},"
                    f"{ar.format_float(stat.lo)},{hi},{stat.count}\n"
                )
    with open(out / "rank_histogram.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("rank,count\n")
        for rank, count in enumerate(report.rank_counts, start=1):
            fh.write(f"{rank},{count}\n")
    return 0


def _baseline_intervals(cfg: ExperimentConfig, vset: VerificationSet, groups, m: int):
    """Group verified pairs by the baseline forecast's own error magnitude."""
    cfg.require("forecast_csv")
    fcst = ar.load_forecasts(cfg.forecast_csv)
    obs = ar.load_observations(cfg.observation_csv)
    vi = fcst.variable_index(cfg.baseline_variable)
    lead_list = fcst.leads.tolist()
    cycle_list = fcst.cycles.tolist()
    baseline = []
    for (station, cycle_time, lead_s), members in groups:
        if len(members) < m:
            continue
        valid = ar.parse_time(cycle_time) + lead_s
        try:
            o = obs.station_index(station)
        except KeyError:
            continue
        y = obs.value_at(o, valid)
        if not np.isfinite(y):
            continue
        cycle = ar.parse_time(cycle_time)
        if cycle in cycle_list and lead_s in lead_list:
            f = fcst.values[
                fcst.station_index(station), vi, cycle_list.index(cycle), lead_list.index(lead_s)
            ]
            baseline.append(f - y if np.isfinite(f) else np.nan)
        else:
            baseline.append(np.nan)
    return error_interval_rmse(vset, np.array(baseline), list(cfg.error_intervals))


def cmd_experiment_search_length(cfg: ExperimentConfig, out: Path) -> int:
    """Predict and verify with nested suffixes of the search range.

    Splits are fractions of the full search range anchored at its end:
    split k of max(splits) covers the most recent k/max of the range. A
    deep model, when needed, is trained once on the full training range
    (or loaded from the configured checkpoint).
    """
    cfg.require("search_start", "search_end", "test_start", "test_end")
    methods = cfg.methods or [cfg.method]
    fcst, obs = _load_archives(cfg)
    stations = _selected_stations(cfg, fcst)
    leads = _selected_leads(cfg, fcst)
    test_cycles = _cycle_indices(fcst, cfg.test_start, cfg.test_end)
    if test_cycles.size == 0:
        raise DataError("no forecast cycles inside the test range")
    splits = sorted(cfg.search_splits)
    if not splits or splits[0] < 1:
        raise ConfigError("search_splits must be positive integers")
    model = None
    if "deep_anen" in methods:
        if cfg.checkpoint is not None and Path(cfg.checkpoint).exists():
            model = load_checkpoint(cfg.checkpoint)
        else:
            cfg.require("train_start", "train_end")
            train_cycles = _cycle_indices(fcst, cfg.train_start, cfg.train_end)
            lead_choices = [
                l
                for l in leads
                if l - cfg.t_half >= 0 and l + cfg.t_half < fcst.n_leads
            ]
            model, log = train(
                fcst, obs, stations, lead_choices, train_cycles, cfg.train_config()
            )
            save_checkpoint(model, out / "checkpoint.txt")
            write_train_log(log, out / "train_log.csv")
    threshold = _brier_threshold(cfg, obs, stations)

    span = cfg.search_end - cfg.search_start
    max_split = splits[-1]
    results = []
    for method in methods:
        run_cfg = ExperimentConfig(
            values={**cfg.values, "method": method},
            weights=cfg.weights,
            raw_lines=cfg.raw_lines,
        )
        for split in splits:
            start = cfg.search_end - span * split // max_split
            search_cycles = _cycle_indices(fcst, start, cfg.search_end)
            if search_cycles.size == 0:
                raise DataError(f"split {split}: empty search range")
            rows, _skipped = run_predictions(
                run_cfg,
                fcst,
                obs,
                stations,
                leads,
                search_cycles,
                test_cycles,
                model if method == "deep_anen" else None,
            )
            if not rows:
                raise DataError(f"split {split}: all prediction targets failed")
            vset, _excluded = pairs_from_rows(rows, fcst, obs)
            results.append(
                (
                    method,
                    split,
                    start,
                    cfg.search_end,
                    int(search_cycles.size),
                    vset.n_pairs,
                    vset_rmse(vset),
                    vset_brier(vset, threshold),
                )
            )
    with open(out / "search_length.csv", "w", encoding="utf-8", newline="") as fh:
        for line in _provenance(
            cfg, "experiment-search-length", [f"brier_threshold={ar.format_float(threshold)}"]
        ):
            fh.write(line + "\n")
        fh.write("method,split,search_start,search_end,n_search_cycles,n_pairs,rmse,brier\n")
        for method, split, start, end, n_cycles, n_pairs, r, b in results:
            fh.write(
                f"{method},{split},{ar.format_time(start)},{ar.format_time(end)},"
                f"{n_cycles},{n_pairs},{ar.format_float(r)},{ar.format_float(b)}\n"
            )
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="analogkit",
        description="Analog ensemble forecasting with classical and learned metrics",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ingest", "synth", "train", "predict", "verify", "experiment-search-length"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key=value experiment config")
        p.add_argument("--out", required=True, help="output directory (created if absent)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if name == "verify":
            p.add_argument("--predictions", default=None, help="predictions CSV to verify")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "ingest":
            return cmd_ingest(cfg, out)
        if args.command == "synth":
            return cmd_synth(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "predict":
            return cmd_predict(cfg, out)
        if args.command == "verify":
            return cmd_verify(cfg, out, predictions_path=args.predictions)
        if args.command == "experiment-search-length":
            return cmd_experiment_search_length(cfg, out)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except DivergenceError as err:
        print(f"divergence: {err}", file=sys.stderr)
        return 3
    except (SchemaError, DataError, KeyError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except AnalogkitError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
