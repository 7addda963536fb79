"""Analog search and ensemble construction.

A search ranks the historical cycles of one (station, lead) against a
target forecast, under either the weighted-Euclidean window metric or
Euclidean distance between precomputed embeddings. The observations paired
with the best-ranked candidates become the ensemble members.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .archive import ForecastArchive, ObservationArchive, extract_window, window_block
from .errors import DataError, InsufficientAnalogs
from .metric import MetricConfig, block_dissimilarity
from .network import EmbeddingBlock


@dataclass(frozen=True)
class AnalogQuery:
    """One analog search: which target, where to look, how many members."""

    station: int  # forecast archive station index
    target_cycle: int
    lead: int
    t_half: int
    search_cycles: np.ndarray  # cycle indices, target excluded
    m: int = 11

    def __post_init__(self):
        search = np.asarray(self.search_cycles, dtype=int)
        object.__setattr__(self, "search_cycles", search)
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.target_cycle in search:
            raise ValueError("target cycle must not be part of the search range")


class Candidate(NamedTuple):
    """One ranked analog: its cycle index, score, and paired observation."""

    cycle: int
    score: float
    member: float


@dataclass(frozen=True)
class EnsembleForecast:
    """M member observations plus the provenance of each member."""

    members: np.ndarray
    sources: list[tuple[int, float]]  # (cycle index, score), scores non-decreasing
    short: bool = False

    def __post_init__(self):
        scores = [s for _, s in self.sources]
        if any(b < a for a, b in zip(scores, scores[1:])):
            raise ValueError("sources must be sorted by non-decreasing score")
        if len(self.members) != len(self.sources):
            raise ValueError("one source per member required")

    @property
    def m(self) -> int:
        return len(self.members)

    @property
    def mean(self) -> float:
        return float(np.mean(self.members))


def _rank(scores: np.ndarray, eligible: np.ndarray) -> np.ndarray:
    """Ascending order of eligible positions; ties broken by earlier cycle."""
    pos = np.nonzero(eligible)[0]
    # pos is in ascending cycle order already, so a stable sort on score
    # resolves ties in favor of the earlier cycle.
    return pos[np.argsort(scores[pos], kind="stable")]


def search_classic(
    query: AnalogQuery,
    fcst: ForecastArchive,
    obs: ObservationArchive,
    cfg: MetricConfig,
) -> list[Candidate]:
    """Rank search-range cycles by window dissimilarity against the target.

    Candidates need a complete window and a non-missing observation at the
    member valid time. Raises when the target window is unavailable or no
    candidate survives.
    """
    target = extract_window(fcst, query.station, query.target_cycle, query.lead, query.t_half)
    block, avail = window_block(fcst, query.station, query.lead, query.search_cycles, query.t_half)
    obs_vals = _member_values(query, fcst, obs)
    eligible = avail & np.isfinite(obs_vals)
    if not eligible.any():
        raise DataError("no analog candidates available for this target")
    scores = block_dissimilarity(target.data, block, cfg)
    order = _rank(scores, eligible)
    return [
        Candidate(int(query.search_cycles[i]), float(scores[i]), float(obs_vals[i]))
        for i in order
    ]


def search_latent(
    query: AnalogQuery,
    embeddings: EmbeddingBlock,
    obs: ObservationArchive,
) -> list[Candidate]:
    """Rank search-range cycles by Euclidean distance in embedding space.

    Same eligibility, ordering, and tie rules as :func:`search_classic`;
    candidates with a masked embedding row are excluded.
    """
    t_pos = embeddings.position(query.target_cycle)
    if not embeddings.available[t_pos]:
        raise DataError("target window unavailable: no embedding for the target cycle")
    positions = np.array([embeddings.position(int(c)) for c in query.search_cycles], dtype=int)
    try:
        station = obs.station_index(embeddings.station)
    except KeyError:
        raise DataError("no analog candidates available for this target") from None
    obs_vals = obs.values_at(station, embeddings.valid_times[positions])
    eligible = embeddings.available[positions] & np.isfinite(obs_vals)
    if not eligible.any():
        raise DataError("no analog candidates available for this target")
    diff = embeddings.vectors[positions] - embeddings.vectors[t_pos][None, :]
    scores = np.sqrt(np.sum(diff * diff, axis=1))
    order = _rank(scores, eligible)
    return [
        Candidate(int(query.search_cycles[i]), float(scores[i]), float(obs_vals[i]))
        for i in order
    ]


def build_ensemble(
    ranked: list[Candidate], query: AnalogQuery, allow_short: bool = False
) -> EnsembleForecast:
    """Top-M members from a ranked candidate list.

    With fewer than M candidates the ensemble is refused unless
    ``allow_short`` is set, in which case all candidates are used and the
    result is flagged short.
    """
    if len(ranked) < query.m and not allow_short:
        raise InsufficientAnalogs(available=len(ranked), requested=query.m)
    chosen = ranked[: query.m]
    return EnsembleForecast(
        members=np.array([c.member for c in chosen]),
        sources=[(c.cycle, c.score) for c in chosen],
        short=len(chosen) < query.m,
    )


def _member_values(query: AnalogQuery, fcst: ForecastArchive, obs: ObservationArchive) -> np.ndarray:
    """Observations at the candidates' valid times for the query lead."""
    times = fcst.cycles[query.search_cycles] + int(fcst.leads[query.lead])
    try:
        station = obs.station_index(fcst.stations[query.station])
    except KeyError:
        return np.full(len(times), np.nan)
    return obs.values_at(station, times)
