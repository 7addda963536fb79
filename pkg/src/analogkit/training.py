"""Metric learning on reverse-analog triplets.

Triplets are labeled from observations rather than forecasts: for an anchor
forecast, the positive is drawn from the historical forecasts whose paired
observations are closest to the anchor's observation, and the negative from
the rest. The embedding network is then trained so that anchor-positive
embedding distances undercut anchor-negative distances by a margin, using
a hinged triplet loss, backpropagation through time, and ADAM updates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .archive import ForecastArchive, ForecastWindow, ObservationArchive, format_float, window_block
from .errors import DataError, DivergenceError
from .network import (
    ModelCheckpoint,
    _backprop_sequence,
    _run_sequence,
    init_model,
    named_parameters,
    save_checkpoint,
    standardize,
    zero_gradients,
)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for triplet training."""

    alpha: float = 1.0  # hinge margin
    learning_rate: float = 0.005
    dropout_rate: float = 0.015
    max_iterations: int = 200_000
    batch_size: int = 32
    k_pos: int = 11
    seed: int = 0
    t_half: int = 1  # window half-width used for triplet windows
    early_stop_patience: int = 2_000  # iterations without improvement
    early_stop_min_improvement: float = 1e-3  # relative
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    eval_interval: int = 200
    val_fraction: float = 0.10
    hidden_sizes: tuple[int, ...] = (20, 20, 20)
    embed_dim: int = 20

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.k_pos < 1:
            raise ValueError("k_pos must be >= 1")
        if self.t_half < 0:
            raise ValueError("t_half must be nonnegative")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")


@dataclass(frozen=True)
class Triplet:
    """Anchor/positive/negative windows with the observation-space gap."""

    anchor: ForecastWindow
    positive: ForecastWindow
    negative: ForecastWindow
    obs_gap: float  # |O_a - O_n| - |O_a - O_p|, strictly positive

    def __post_init__(self):
        if not self.obs_gap > 0:
            raise ValueError(f"obs_gap must be positive, got {self.obs_gap}")


@dataclass
class AdamState:
    """First/second moment accumulators mirroring the model parameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_adam_state(model: ModelCheckpoint) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(p) for name, p in named_parameters(model)},
        v={name: np.zeros_like(p) for name, p in named_parameters(model)},
        step=0,
    )


@dataclass
class SamplingStats:
    """Bookkeeping from one sampling sweep."""

    anchors_seen: int = 0
    anchors_skipped: int = 0


def sample_triplets(
    fcst: ForecastArchive,
    obs: ObservationArchive,
    stations: list[str],
    lead: int,
    cycles,
    cfg: TrainConfig,
    rng: np.random.Generator,
    anchor_cycles=None,
    stats: SamplingStats | None = None,
) -> list[Triplet]:
    """One triplet per eligible anchor at (station, lead) over a cycle range.

    For each anchor cycle with a complete window and a non-missing
    observation, all other eligible cycles are ranked by the absolute
    difference between their observation and the anchor's. The positive is
    chosen by roulette over the ``k_pos`` closest with fitness 1/rank, the
    negative uniformly over the ranks beyond ``k_pos`` (restricted to
    strictly larger observation distances, so the gap is always positive).
    Anchors with fewer than ``k_pos + 1`` candidates are skipped and
    counted. Consumes ``rng`` deterministically.

    ``anchor_cycles`` restricts which cycles may anchor a triplet; the
    candidate pool always spans the full range.
    """
    cycles = np.asarray(sorted(set(int(c) for c in np.asarray(cycles, dtype=int))), dtype=int)
    if anchor_cycles is None:
        anchor_set = None
    else:
        anchor_set = set(int(c) for c in np.asarray(anchor_cycles, dtype=int))
    if stats is None:
        stats = SamplingStats()
    triplets: list[Triplet] = []
    for station in stations:
        s = fcst.station_index(station)
        try:
            o = obs.station_index(station)
        except KeyError:
            continue
        data, avail = window_block(fcst, s, lead, cycles, cfg.t_half)
        times = fcst.cycles[cycles] + int(fcst.leads[lead])
        obs_vals = obs.values_at(o, times)
        eligible = avail & np.isfinite(obs_vals)
        elig_pos = np.nonzero(eligible)[0]
        for ai in elig_pos:
            if anchor_set is not None and int(cycles[ai]) not in anchor_set:
                continue
            stats.anchors_seen += 1
            cand = elig_pos[elig_pos != ai]
            if cand.size < cfg.k_pos + 1:
                stats.anchors_skipped += 1
                continue
            dists = np.abs(obs_vals[cand] - obs_vals[ai])
            order = np.argsort(dists, kind="stable")  # ties -> earlier cycle
            top = order[: cfg.k_pos]
            fitness = 1.0 / np.arange(1, cfg.k_pos + 1)
            probs = fitness / fitness.sum()
            pos_pick = top[_roulette(probs, rng)]
            pos_dist = dists[pos_pick]
            rest = order[cfg.k_pos :]
            rest = rest[dists[rest] > pos_dist]  # keeps obs_gap strictly positive
            if rest.size == 0:
                stats.anchors_skipped += 1
                continue
            neg_pick = rest[int(rng.integers(rest.size))]
            triplets.append(
                Triplet(
                    anchor=ForecastWindow(
                        data=data[ai].copy(), origin=(s, int(cycles[ai]), lead)
                    ),
                    positive=ForecastWindow(
                        data=data[cand[pos_pick]].copy(),
                        origin=(s, int(cycles[cand[pos_pick]]), lead),
                    ),
                    negative=ForecastWindow(
                        data=data[cand[neg_pick]].copy(),
                        origin=(s, int(cycles[cand[neg_pick]]), lead),
                    ),
                    obs_gap=float(dists[neg_pick] - pos_dist),
                )
            )
    return triplets


def _roulette(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Fitness-proportionate draw from normalized probabilities."""
    edges = np.cumsum(probs)
    return int(np.searchsorted(edges, rng.random() * edges[-1], side="right").clip(0, len(probs) - 1))


def triplet_loss(e_a: np.ndarray, e_p: np.ndarray, e_n: np.ndarray, alpha: float) -> float:
    """Hinged triplet loss max(0, ||e_a - e_p|| - ||e_a - e_n|| + alpha)."""
    if e_a.shape != e_p.shape or e_a.shape != e_n.shape:
        raise ValueError("embedding dimensions must agree")
    d_ap = float(np.linalg.norm(e_a - e_p))
    d_an = float(np.linalg.norm(e_a - e_n))
    return max(0.0, d_ap - d_an + alpha)


def _draw_masks(model: ModelCheckpoint, rate: float, rng: np.random.Generator):
    """One mask per layer boundary (inter-layer plus pre-head)."""
    if rate <= 0:
        return None
    return [
        (rng.random(layer.hidden_size) >= rate).astype(float) for layer in model.layers
    ]


def backward(
    model: ModelCheckpoint,
    batch: list[Triplet],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[dict[str, np.ndarray], float]:
    """Mean hinge loss over a batch and its exact parameter gradients.

    The three passes of each triplet share the model parameters and, when
    dropout is active, the same per-triplet masks. Triplets whose hinge is
    zero contribute zero gradient. Raises :class:`DivergenceError` when any
    loss or gradient comes out non-finite.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    grads = zero_gradients(model)
    total = 0.0
    inv_n = 1.0 / len(batch)
    keep = 1.0 - cfg.dropout_rate
    for triplet in batch:
        masks = _draw_masks(model, cfg.dropout_rate, rng)
        seqs = [
            standardize(model, w.data).T
            for w in (triplet.anchor, triplet.positive, triplet.negative)
        ]
        (e_a, cache_a) = _run_sequence(model, seqs[0], masks, keep)
        (e_p, cache_p) = _run_sequence(model, seqs[1], masks, keep)
        (e_n, cache_n) = _run_sequence(model, seqs[2], masks, keep)
        d_ap = np.linalg.norm(e_a - e_p)
        d_an = np.linalg.norm(e_a - e_n)
        hinge = d_ap - d_an + cfg.alpha
        if hinge <= 0:
            continue
        total += hinge
        u_ap = (e_a - e_p) / d_ap if d_ap > 0 else np.zeros_like(e_a)
        u_an = (e_a - e_n) / d_an if d_an > 0 else np.zeros_like(e_a)
        _backprop_sequence(model, cache_a, (u_ap - u_an) * inv_n, grads)
        _backprop_sequence(model, cache_p, -u_ap * inv_n, grads)
        _backprop_sequence(model, cache_n, u_an * inv_n, grads)
    loss = total * inv_n
    if not np.isfinite(loss) or any(not np.all(np.isfinite(g)) for g in grads.values()):
        raise DivergenceError(iteration=-1)
    return grads, loss


def evaluate_loss(model: ModelCheckpoint, triplets: list[Triplet], alpha: float) -> float:
    """Mean hinge loss without dropout (evaluation mode)."""
    if not triplets:
        raise ValueError("no triplets to evaluate")
    total = 0.0
    for t in triplets:
        embeddings = [
            _run_sequence(model, standardize(model, w.data).T)[0]
            for w in (t.anchor, t.positive, t.negative)
        ]
        total += triplet_loss(*embeddings, alpha)
    return total / len(triplets)


def adam_step(
    model: ModelCheckpoint,
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[ModelCheckpoint, AdamState]:
    """One ADAM update; returns a new model and state, inputs untouched."""
    new_model = model.clone()
    t = state.step + 1
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon
    new_m, new_v = {}, {}
    for name, p in named_parameters(new_model):
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_model, AdamState(m=new_m, v=new_v, step=t)


@dataclass
class TrainLogRow:
    iteration: int
    train_loss: float
    val_loss: float


def train(
    fcst: ForecastArchive,
    obs: ObservationArchive,
    stations: list[str],
    leads: list[int],
    cycles,
    cfg: TrainConfig,
    on_divergence_save=None,
) -> tuple[ModelCheckpoint, list[TrainLogRow]]:
    """Train an embedding model on reverse-analog triplets.

    Anchors from the last ``val_fraction`` of the cycle range (by cycle
    time) are held out for validation and never anchor a training triplet.
    The loop samples batches, backpropagates, applies ADAM, and evaluates
    the held-out loss every ``eval_interval`` iterations; it stops at
    ``max_iterations`` or when ``early_stop_patience`` iterations pass
    without relative improvement ``early_stop_min_improvement``. Returns
    the best-validation checkpoint and the evaluation log.
    """
    cycles = np.asarray(sorted(set(int(c) for c in np.asarray(cycles, dtype=int))), dtype=int)
    if cycles.size < 2:
        raise DataError("training needs at least two cycles")
    rng = np.random.default_rng(cfg.seed)

    s_indices = [fcst.station_index(st) for st in stations]
    norm_mean, norm_sigma = _pooled_norm(fcst, s_indices, cycles)
    model = init_model(
        variables=list(fcst.variables),
        t_half=cfg.t_half,
        hidden_sizes=cfg.hidden_sizes,
        embed_dim=cfg.embed_dim,
        seed=cfg.seed,
        norm_mean=norm_mean,
        norm_sigma=norm_sigma,
    )

    n_val = max(1, int(round(cfg.val_fraction * cycles.size)))
    train_cycles = cycles[:-n_val]
    val_cycles = cycles[-n_val:]

    def sample_training_pool():
        pool = []
        for lead in leads:
            pool.extend(sample_triplets(fcst, obs, stations, lead, train_cycles, cfg, rng))
        return pool

    val_triplets = []
    for lead in leads:
        val_triplets.extend(
            sample_triplets(fcst, obs, stations, lead, cycles, cfg, rng, anchor_cycles=val_cycles)
        )
    pool = sample_training_pool()
    if not pool:
        raise DataError("no training triplets could be sampled")
    if not val_triplets:
        raise DataError("no validation triplets could be sampled")

    order = rng.permutation(len(pool))
    cursor = 0

    def next_batch():
        nonlocal pool, order, cursor
        batch = []
        while len(batch) < cfg.batch_size:
            if cursor >= len(order):
                pool = sample_training_pool()
                if not pool:
                    raise DataError("triplet pool dried up during training")
                order = rng.permutation(len(pool))
                cursor = 0
            batch.append(pool[order[cursor]])
            cursor += 1
        return batch

    adam = init_adam_state(model)
    log: list[TrainLogRow] = []
    init_train_loss = evaluate_loss(model, pool[: cfg.batch_size], cfg.alpha)
    best_val = evaluate_loss(model, val_triplets, cfg.alpha)
    best_model = model.clone()
    best_iteration = 0
    last_improved = 0
    log.append(TrainLogRow(0, init_train_loss, best_val))

    interval_losses: list[float] = []
    iteration = 0
    try:
        while iteration < cfg.max_iterations:
            iteration += 1
            batch = next_batch()
            grads, loss = backward(model, batch, cfg, rng)
            model, adam = adam_step(model, grads, adam, cfg)
            interval_losses.append(loss)
            if iteration % cfg.eval_interval == 0 or iteration == cfg.max_iterations:
                val_loss = evaluate_loss(model, val_triplets, cfg.alpha)
                if not np.isfinite(val_loss):
                    raise DivergenceError(iteration=iteration)
                log.append(TrainLogRow(iteration, float(np.mean(interval_losses)), val_loss))
                interval_losses = []
                if val_loss < best_val * (1.0 - cfg.early_stop_min_improvement):
                    last_improved = iteration
                if val_loss < best_val:
                    best_val = val_loss
                    best_model = model.clone()
                    best_iteration = iteration
                if iteration - last_improved >= cfg.early_stop_patience:
                    break
    except DivergenceError as err:
        path = None
        if on_divergence_save is not None:
            best_model.iterations = best_iteration
            save_checkpoint(best_model, on_divergence_save)
            path = on_divergence_save
        raise DivergenceError(
            iteration=err.iteration if err.iteration >= 0 else iteration,
            checkpoint_path=path,
        ) from None

    best_model.iterations = best_iteration
    return best_model, log


def _pooled_norm(fcst, station_indices, cycles):
    """Per-variable mean/sigma pooled over stations, cycles, and leads."""
    block = fcst.values[np.asarray(station_indices)][:, :, cycles, :]
    flat = np.transpose(block, (1, 0, 2, 3)).reshape(fcst.n_variables, -1)
    counts = np.sum(~np.isnan(flat), axis=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(flat, axis=1)
        var = np.nanmean((flat - mean[:, None]) ** 2, axis=1)
    mean = np.where(counts > 0, mean, 0.0)
    sigma = np.sqrt(np.where(counts >= 2, np.where(np.isnan(var), 0.0, var), 0.0))
    return mean, sigma


def write_train_log(log: list[TrainLogRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("iteration,train_loss,val_loss\n")
        for row in log:
            fh.write(
                f"{row.iteration},{format_float(row.train_loss)},{format_float(row.val_loss)}\n"
            )
