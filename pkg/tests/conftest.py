"""Shared builders for small in-memory archives and CSV files."""

import numpy as np
import pytest

from analogkit.archive import ForecastArchive, ObservationArchive


def make_forecasts(values, cycles=None, leads=None, stations=None, variables=None):
    """Dense forecast archive from a [station, variable, cycle, lead] array."""
    values = np.asarray(values, dtype=float)
    ns, nv, nc, nl = values.shape
    return ForecastArchive(
        stations=stations or [f"S{i:02d}" for i in range(ns)],
        variables=variables or [f"v{i + 1}" for i in range(nv)],
        cycles=np.asarray(cycles if cycles is not None else 86400 * np.arange(nc), dtype=np.int64),
        leads=np.asarray(leads if leads is not None else 3600 * np.arange(nl), dtype=np.int64),
        values=values,
    )


def make_observations(values, times, stations=None):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return ObservationArchive(
        stations=stations or [f"S{i:02d}" for i in range(values.shape[0])],
        times=np.asarray(times, dtype=np.int64),
        values=values,
    )


def obs_matching(fcst: ForecastArchive, obs_grid):
    """Observation archive whose times cover every (cycle, lead) valid time.

    ``obs_grid`` is [station, cycle, lead]; valid times must be collision
    free (lead span smaller than the cycle step).
    """
    obs_grid = np.asarray(obs_grid, dtype=float)
    valid = (fcst.cycles[:, None] + fcst.leads[None, :]).ravel()
    order = np.argsort(valid, kind="stable")
    times = valid[order]
    values = np.stack([obs_grid[s].ravel()[order] for s in range(obs_grid.shape[0])])
    return ObservationArchive(stations=list(fcst.stations), times=times, values=values)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
