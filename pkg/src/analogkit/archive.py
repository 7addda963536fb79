"""Forecast and observation archives with CSV ingest.

File formats
------------
Forecast CSV: header ``station,variable,cycle_time,lead_s,value``.
``cycle_time`` is ISO-8601 UTC (``YYYY-MM-DDTHH:MM:SSZ``), ``lead_s`` an
integer offset in seconds, and ``value`` a decimal number or empty for
missing. Observation CSV: header ``station,valid_time,value``.

Archives are dense: every combination of the index lists owns a cell, and
cells without a value (absent rows or empty values) hold NaN. Index lists
are the sorted distinct values found in the file. Archives are treated as
immutable after load and are safe to read concurrently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Sequence

import numpy as np

from .errors import SchemaError, WindowUnavailable

TIME_FORMAT = "%Y-%m-%dT%H:%M:%SZ"

FORECAST_HEADER = ["station", "variable", "cycle_time", "lead_s", "value"]
OBSERVATION_HEADER = ["station", "valid_time", "value"]


def parse_time(text: str) -> int:
    """Parse an ISO-8601 UTC timestamp to integer seconds since epoch."""
    dt = datetime.strptime(text, TIME_FORMAT).replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_time(seconds: int) -> str:
    """Format integer seconds since epoch as ISO-8601 UTC."""
    return datetime.fromtimestamp(int(seconds), tz=timezone.utc).strftime(TIME_FORMAT)


def format_float(x: float) -> str:
    """Format a float with 17 significant digits (exact float64 round-trip)."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class ForecastArchive:
    """Dense deterministic-forecast archive indexed (station, variable, cycle, lead)."""

    stations: list[str]
    variables: list[str]
    cycles: np.ndarray  # int64 seconds since epoch, strictly increasing
    leads: np.ndarray  # int64 second offsets, strictly increasing
    values: np.ndarray  # float64 [station, variable, cycle, lead], NaN = missing

    def __post_init__(self):
        if len(set(self.stations)) != len(self.stations):
            raise SchemaError("station ids must be unique")
        if len(set(self.variables)) != len(self.variables):
            raise SchemaError("variable names must be unique")
        for name, axis in (("cycles", self.cycles), ("leads", self.leads)):
            if len(axis) > 1 and not np.all(np.diff(axis) > 0):
                raise SchemaError(f"{name} must be strictly increasing")
        expected = (len(self.stations), len(self.variables), len(self.cycles), len(self.leads))
        if self.values.shape != expected:
            raise SchemaError(
                f"values shape {self.values.shape} does not match index lists {expected}"
            )

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @property
    def n_cycles(self) -> int:
        return len(self.cycles)

    @property
    def n_leads(self) -> int:
        return len(self.leads)

    def station_index(self, station: str) -> int:
        try:
            return self.stations.index(station)
        except ValueError:
            raise KeyError(f"unknown station {station!r}") from None

    def variable_index(self, variable: str) -> int:
        try:
            return self.variables.index(variable)
        except ValueError:
            raise KeyError(f"unknown variable {variable!r}") from None


@dataclass(frozen=True)
class ObservationArchive:
    """Observed predictand values indexed (station, valid time)."""

    stations: list[str]
    times: np.ndarray  # int64 seconds since epoch, strictly increasing
    values: np.ndarray  # float64 [station, time], NaN = missing

    def __post_init__(self):
        if len(set(self.stations)) != len(self.stations):
            raise SchemaError("station ids must be unique")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise SchemaError("times must be strictly increasing")
        expected = (len(self.stations), len(self.times))
        if self.values.shape != expected:
            raise SchemaError(
                f"values shape {self.values.shape} does not match index lists {expected}"
            )

    def station_index(self, station: str) -> int:
        try:
            return self.stations.index(station)
        except ValueError:
            raise KeyError(f"unknown station {station!r}") from None

    def value_at(self, station: int, time: int) -> float:
        """Observation at an exact valid time, NaN when absent or missing."""
        i = np.searchsorted(self.times, time)
        if i < len(self.times) and self.times[i] == time:
            return float(self.values[station, i])
        return float("nan")

    def values_at(self, station: int, times: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`value_at` over an array of valid times."""
        times = np.asarray(times)
        idx = np.searchsorted(self.times, times)
        idx_clip = np.minimum(idx, len(self.times) - 1)
        hit = self.times[idx_clip] == times
        out = np.where(hit, self.values[station, idx_clip], np.nan)
        return out.astype(float)


@dataclass(frozen=True)
class ForecastWindow:
    """Multivariate slice of one forecast around a lead time.

    ``data[i][j]`` holds variable ``i`` at window position ``j``, where
    positions span lead offsets ``-t_half .. +t_half``. Windows never
    contain missing values: they are refused at construction instead.
    """

    data: np.ndarray  # float64 [variable, 2*t_half + 1]
    origin: tuple[int, int, int]  # (station index, cycle index, lead index)

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] % 2 != 1:
            raise ValueError(f"window must be [n_variables, odd width], got {self.data.shape}")
        if np.isnan(self.data).any():
            raise WindowUnavailable(f"incomplete window at origin {self.origin}")

    @property
    def n_variables(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ClimatologyStats:
    """Per-variable mean and population standard deviation over a cycle range.

    ``flagged`` marks variables whose sigma is zero, either because the
    series is constant or because fewer than two non-missing samples were
    available. ``population`` is the smallest per-variable sample count.
    """

    mean: np.ndarray
    sigma: np.ndarray
    population: int
    flagged: np.ndarray  # bool per variable

    def __post_init__(self):
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be nonnegative")


def _read_rows(path, header: list[str]):
    """Yield (line_number, fields) for a CSV file, validating the header."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty file, expected header {','.join(header)}")
    got = lines[0].split(",")
    if got != header:
        raise SchemaError(f"{path}: line 1: bad header {lines[0]!r}")
    n_records = 0
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split(",")
        if len(fields) != len(header):
            raise SchemaError(
                f"{path}: line {lineno}: expected {len(header)} columns, got {len(fields)}"
            )
        n_records += 1
        yield lineno, fields
    if n_records == 0:
        raise SchemaError(f"{path}: no records")


def _parse_value(text: str, path, lineno: int) -> float:
    """Parse a value field: empty means missing, otherwise a finite decimal."""
    if text == "":
        return float("nan")
    try:
        v = float(text)
    except ValueError:
        raise SchemaError(f"{path}: line {lineno}: unparsable value {text!r}") from None
    if not np.isfinite(v):
        raise SchemaError(f"{path}: line {lineno}: non-finite value {text!r}")
    return v


def _parse_time_field(text: str, path, lineno: int) -> int:
    try:
        return parse_time(text)
    except ValueError:
        raise SchemaError(f"{path}: line {lineno}: unparsable timestamp {text!r}") from None


def load_forecasts(path) -> ForecastArchive:
    """Load a forecast CSV into a dense archive.

    Index lists are the sorted distinct values found in the file; cells not
    present in the file are missing. Duplicate (station, variable, cycle,
    lead) keys and malformed rows are errors naming the offending line.
    """
    records = []
    seen = set()
    for lineno, (station, variable, cycle_text, lead_text, value_text) in _read_rows(
        path, FORECAST_HEADER
    ):
        cycle = _parse_time_field(cycle_text, path, lineno)
        try:
            lead = int(lead_text)
        except ValueError:
            raise SchemaError(f"{path}: line {lineno}: unparsable lead_s {lead_text!r}") from None
        key = (station, variable, cycle, lead)
        if key in seen:
            raise SchemaError(
                f"{path}: line {lineno}: duplicate key "
                f"({station},{variable},{cycle_text},{lead})"
            )
        seen.add(key)
        records.append((key, _parse_value(value_text, path, lineno)))

    stations = sorted({k[0] for k, _ in records})
    variables = sorted({k[1] for k, _ in records})
    cycles = np.array(sorted({k[2] for k, _ in records}), dtype=np.int64)
    leads = np.array(sorted({k[3] for k, _ in records}), dtype=np.int64)
    s_idx = {s: i for i, s in enumerate(stations)}
    v_idx = {v: i for i, v in enumerate(variables)}
    c_idx = {c: i for i, c in enumerate(cycles.tolist())}
    l_idx = {l: i for i, l in enumerate(leads.tolist())}

    values = np.full((len(stations), len(variables), len(cycles), len(leads)), np.nan)
    for (station, variable, cycle, lead), v in records:
        values[s_idx[station], v_idx[variable], c_idx[cycle], l_idx[lead]] = v
    return ForecastArchive(stations, variables, cycles, leads, values)


def write_forecasts(archive: ForecastArchive, path) -> None:
    """Write a forecast archive back to the CSV format (all cells, missing as empty)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(FORECAST_HEADER) + "\n")
        for si, station in enumerate(archive.stations):
            for vi, variable in enumerate(archive.variables):
                for ci, cycle in enumerate(archive.cycles.tolist()):
                    for li, lead in enumerate(archive.leads.tolist()):
                        v = archive.values[si, vi, ci, li]
                        text = "" if np.isnan(v) else format_float(v)
                        fh.write(f"{station},{variable},{format_time(cycle)},{lead},{text}\n")


def load_observations(path) -> ObservationArchive:
    """Load an observation CSV into a dense (station, time) archive."""
    records = []
    seen = set()
    for lineno, (station, time_text, value_text) in _read_rows(path, OBSERVATION_HEADER):
        t = _parse_time_field(time_text, path, lineno)
        key = (station, t)
        if key in seen:
            raise SchemaError(f"{path}: line {lineno}: duplicate key ({station},{time_text})")
        seen.add(key)
        records.append((key, _parse_value(value_text, path, lineno)))

    stations = sorted({k[0] for k, _ in records})
    times = np.array(sorted({k[1] for k, _ in records}), dtype=np.int64)
    s_idx = {s: i for i, s in enumerate(stations)}
    t_idx = {t: i for i, t in enumerate(times.tolist())}
    values = np.full((len(stations), len(times)), np.nan)
    for (station, t), v in records:
        values[s_idx[station], t_idx[t]] = v
    return ObservationArchive(stations, times, values)


def write_observations(obs: ObservationArchive, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(OBSERVATION_HEADER) + "\n")
        for si, station in enumerate(obs.stations):
            for ti, t in enumerate(obs.times.tolist()):
                v = obs.values[si, ti]
                text = "" if np.isnan(v) else format_float(v)
                fh.write(f"{station},{format_time(t)},{text}\n")


def valid_time(archive: ForecastArchive, cycle: int, lead: int) -> int:
    """Valid time of (cycle index, lead index): initialization plus offset."""
    if not 0 <= cycle < archive.n_cycles:
        raise IndexError(f"cycle index {cycle} out of range [0, {archive.n_cycles})")
    if not 0 <= lead < archive.n_leads:
        raise IndexError(f"lead index {lead} out of range [0, {archive.n_leads})")
    return int(archive.cycles[cycle]) + int(archive.leads[lead])


def extract_window(
    archive: ForecastArchive, station: int, cycle: int, lead: int, t_half: int
) -> ForecastWindow:
    """Extract the [variable, 2*t_half+1] window centered on a lead index.

    Raises :class:`WindowUnavailable` when the window extends past the lead
    axis or contains any missing value.
    """
    if t_half < 0:
        raise ValueError("t_half must be nonnegative")
    if not 0 <= station < archive.n_stations:
        raise IndexError(f"station index {station} out of range")
    if not 0 <= cycle < archive.n_cycles:
        raise IndexError(f"cycle index {cycle} out of range")
    if not 0 <= lead < archive.n_leads:
        raise IndexError(f"lead index {lead} out of range")
    if lead - t_half < 0 or lead + t_half >= archive.n_leads:
        raise WindowUnavailable(
            f"window out of bounds: lead {lead} with t_half {t_half} "
            f"exceeds lead axis [0, {archive.n_leads})"
        )
    data = archive.values[station, :, cycle, lead - t_half : lead + t_half + 1].copy()
    return ForecastWindow(data=data, origin=(station, cycle, lead))


def window_block(
    archive: ForecastArchive,
    station: int,
    lead: int,
    cycles: Sequence[int] | np.ndarray,
    t_half: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Windows for many cycles at once.

    Returns ``(data, available)`` where ``data`` is
    [n_cycles, n_variables, 2*t_half+1] and ``available`` marks rows whose
    window is complete. Raises :class:`WindowUnavailable` when the lead
    slice itself is out of bounds (then no cycle has a window).
    """
    cycles = np.asarray(cycles, dtype=int)
    if lead - t_half < 0 or lead + t_half >= archive.n_leads:
        raise WindowUnavailable(
            f"window out of bounds: lead {lead} with t_half {t_half} "
            f"exceeds lead axis [0, {archive.n_leads})"
        )
    # [n_var, n_cycles, width] -> [n_cycles, n_var, width]
    data = archive.values[station, :, :, lead - t_half : lead + t_half + 1][:, cycles, :]
    data = np.transpose(data, (1, 0, 2))
    available = ~np.isnan(data).any(axis=(1, 2))
    return data, available


def climatology_stats(
    archive: ForecastArchive, station: int, lead: int, cycles: Sequence[int] | np.ndarray
) -> ClimatologyStats:
    """Per-variable mean and population standard deviation at (station, lead).

    Computed over the non-missing values at the given cycle indices.
    Variables with fewer than two non-missing samples get sigma 0 and are
    flagged; the result is invariant to the order of the cycle indices.
    """
    cycles = np.asarray(cycles, dtype=int)
    if cycles.size == 0:
        raise ValueError("empty cycle range")
    block = archive.values[station, :, :, lead][:, cycles]  # [n_var, n_cycles]
    counts = np.sum(~np.isnan(block), axis=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN rows
        mean = np.nanmean(block, axis=1)
        var = np.nanmean((block - mean[:, None]) ** 2, axis=1)
    var = np.where(np.isnan(var), 0.0, var)
    sigma = np.sqrt(np.where(counts >= 2, var, 0.0))
    flagged = (sigma == 0) | (counts < 2)
    return ClimatologyStats(
        mean=mean,
        sigma=sigma,
        population=int(counts.min()),
        flagged=flagged,
    )
