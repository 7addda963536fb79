"""Stacked-LSTM encoder with a dense head producing fixed-size embeddings.

Each LSTM cell step computes, with z = [a_prev; x] (previous activation
concatenated above the current input):

    update gate   G_u = sigmoid(W_u z + b_u)
    forget gate   G_f = sigmoid(W_f z + b_f)
    output gate   G_o = sigmoid(W_o z + b_o)
    candidate     ct  = tanh(W_c z + b_c)
    cell state    c   = G_u * ct + G_f * c_prev
    activation    a   = G_o * tanh(c)

Layers are stacked in depth: layer k consumes layer k-1's activation at
each timestep. The top layer's activation at the final timestep feeds a
linear head, whose output is the embedding. Inputs are standardized per
variable with statistics stored on the checkpoint; initial states are zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .archive import ForecastArchive, ForecastWindow, format_float, window_block
from .errors import SchemaError, WindowUnavailable


@dataclass
class LstmLayerParams:
    """Gate weight matrices [hidden, hidden + input] and bias vectors [hidden]."""

    w_u: np.ndarray
    w_f: np.ndarray
    w_o: np.ndarray
    w_c: np.ndarray
    b_u: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    def __post_init__(self):
        shapes = {m.shape for m in (self.w_u, self.w_f, self.w_o, self.w_c)}
        if len(shapes) != 1:
            raise ValueError(f"gate weight matrices must share one shape, got {shapes}")
        lengths = {b.shape for b in (self.b_u, self.b_f, self.b_o, self.b_c)}
        if lengths != {(self.hidden_size,)}:
            raise ValueError("gate biases must all have length hidden_size")
        if self.w_u.shape[1] <= self.hidden_size:
            raise ValueError("weight matrices must have hidden + input columns")

    @property
    def hidden_size(self) -> int:
        return self.w_u.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_u.shape[1] - self.hidden_size


@dataclass
class LstmState:
    """Activation and cell state of one layer at one timestep."""

    a: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if self.a.shape != self.c.shape or self.a.ndim != 1:
            raise ValueError("state vectors must be equal-length 1-D arrays")


@dataclass
class ModelCheckpoint:
    """Full embedding model: LSTM stack, linear head, and input normalization."""

    layers: list[LstmLayerParams]
    head_w: np.ndarray  # [embed_dim, hidden_top]
    head_b: np.ndarray  # [embed_dim]
    norm_mean: np.ndarray  # per variable
    norm_sigma: np.ndarray  # per variable
    variables: list[str]
    t_half: int
    seed: int
    iterations: int

    def __post_init__(self):
        if not self.layers:
            raise ValueError("at least one LSTM layer required")
        if self.layers[0].input_size != len(self.variables):
            raise ValueError(
                f"layer 0 input size {self.layers[0].input_size} != "
                f"{len(self.variables)} variables"
            )
        for k in range(1, len(self.layers)):
            if self.layers[k].input_size != self.layers[k - 1].hidden_size:
                raise ValueError(f"layer {k} input size does not chain from layer {k - 1}")
        if self.head_w.shape != (self.head_b.size, self.layers[-1].hidden_size):
            raise ValueError("head shape does not match top layer hidden size")
        if self.norm_mean.shape != (len(self.variables),) or self.norm_sigma.shape != (
            len(self.variables),
        ):
            raise ValueError("normalization statistics must cover every variable")

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @property
    def embed_dim(self) -> int:
        return self.head_b.size

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(layer.hidden_size for layer in self.layers)

    @property
    def zero_sigma_variables(self) -> list[str]:
        """Variables that standardize to 0 because their training sigma is 0."""
        return [v for v, s in zip(self.variables, self.norm_sigma) if s <= 0]

    def clone(self) -> "ModelCheckpoint":
        return ModelCheckpoint(
            layers=[
                LstmLayerParams(
                    *(getattr(l, f).copy() for f in ("w_u", "w_f", "w_o", "w_c",
                                                     "b_u", "b_f", "b_o", "b_c"))
                )
                for l in self.layers
            ],
            head_w=self.head_w.copy(),
            head_b=self.head_b.copy(),
            norm_mean=self.norm_mean.copy(),
            norm_sigma=self.norm_sigma.copy(),
            variables=list(self.variables),
            t_half=self.t_half,
            seed=self.seed,
            iterations=self.iterations,
        )


GATES = ("u", "f", "o", "c")


def named_parameters(model: ModelCheckpoint) -> list[tuple[str, np.ndarray]]:
    """Canonical (name, array) pairs; arrays are live views into the model."""
    out = []
    for k, layer in enumerate(model.layers):
        for g in GATES:
            out.append((f"layer{k}.w_{g}", getattr(layer, f"w_{g}")))
            out.append((f"layer{k}.b_{g}", getattr(layer, f"b_{g}")))
    out.append(("head.w", model.head_w))
    out.append(("head.b", model.head_b))
    return out


def zero_gradients(model: ModelCheckpoint) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(p) for name, p in named_parameters(model)}


def init_model(
    variables: list[str],
    t_half: int,
    hidden_sizes: tuple[int, ...] = (20, 20, 20),
    embed_dim: int = 20,
    seed: int = 0,
    norm_mean: np.ndarray | None = None,
    norm_sigma: np.ndarray | None = None,
) -> ModelCheckpoint:
    """Seeded uniform initialization in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per matrix."""
    rng = np.random.default_rng(seed)
    n_var = len(variables)
    layers = []
    in_size = n_var
    for h in hidden_sizes:
        bound = 1.0 / np.sqrt(h + in_size)
        mats = [rng.uniform(-bound, bound, size=(h, h + in_size)) for _ in GATES]
        biases = [rng.uniform(-bound, bound, size=h) for _ in GATES]
        layers.append(LstmLayerParams(*mats, *biases))
        in_size = h
    bound = 1.0 / np.sqrt(in_size)
    head_w = rng.uniform(-bound, bound, size=(embed_dim, in_size))
    head_b = rng.uniform(-bound, bound, size=embed_dim)
    return ModelCheckpoint(
        layers=layers,
        head_w=head_w,
        head_b=head_b,
        norm_mean=np.zeros(n_var) if norm_mean is None else np.asarray(norm_mean, float),
        norm_sigma=np.ones(n_var) if norm_sigma is None else np.asarray(norm_sigma, float),
        variables=list(variables),
        t_half=t_half,
        seed=seed,
        iterations=0,
    )


def lstm_cell_step(layer: LstmLayerParams, x: np.ndarray, prev: LstmState) -> LstmState:
    """One cell step; concatenation order is [a_prev; x]."""
    x = np.asarray(x, dtype=float)
    if x.shape != (layer.input_size,):
        raise ValueError(f"input shape {x.shape}, layer expects ({layer.input_size},)")
    if prev.a.shape != (layer.hidden_size,):
        raise ValueError(
            f"state length {prev.a.shape[0]}, layer expects {layer.hidden_size}"
        )
    z = np.concatenate([prev.a, x])
    g_u = expit(layer.w_u @ z + layer.b_u)
    g_f = expit(layer.w_f @ z + layer.b_f)
    g_o = expit(layer.w_o @ z + layer.b_o)
    c_tilde = np.tanh(layer.w_c @ z + layer.b_c)
    c = g_u * c_tilde + g_f * prev.c
    a = g_o * np.tanh(c)
    return LstmState(a=a, c=c)


def standardize(model: ModelCheckpoint, data: np.ndarray) -> np.ndarray:
    """Per-variable (x - mean) / sigma; variables with sigma 0 map to 0."""
    safe = np.where(model.norm_sigma > 0, model.norm_sigma, 1.0)
    z = (data - model.norm_mean[:, None]) / safe[:, None]
    z[model.norm_sigma <= 0, :] = 0.0
    return z


class _Cache:
    """Intermediate values of one sequence pass, kept for backpropagation."""

    __slots__ = ("x", "a", "c", "g_u", "g_f", "g_o", "c_tilde", "h_in", "masks", "keep")

    def __init__(self):
        self.x = []  # [layer][t] input actually fed (post-dropout)
        self.a = []  # [layer][t] with index 0 = initial zero state
        self.c = []
        self.g_u = []
        self.g_f = []
        self.g_o = []
        self.c_tilde = []
        self.h_in = None  # head input (post-dropout)
        self.masks = None
        self.keep = 1.0


def _run_sequence(
    model: ModelCheckpoint,
    seq: np.ndarray,
    masks: list[np.ndarray] | None = None,
    keep: float = 1.0,
) -> tuple[np.ndarray, _Cache]:
    """Run a standardized sequence [T, n_variables] through the stack.

    ``masks`` holds one dropout mask per layer boundary: masks[k] scales the
    output of layer k before it feeds layer k+1 (or the head for the top
    layer). Masked activations are rescaled by 1/keep (inverted dropout).
    """
    cache = _Cache()
    cache.masks = masks
    cache.keep = keep
    T = seq.shape[0]
    inputs = [seq[t] for t in range(T)]
    for k, layer in enumerate(model.layers):
        h = layer.hidden_size
        a = [np.zeros(h)]
        c = [np.zeros(h)]
        g_u, g_f, g_o, c_tilde = [], [], [], []
        for t in range(T):
            z = np.concatenate([a[t], inputs[t]])
            gu = expit(layer.w_u @ z + layer.b_u)
            gf = expit(layer.w_f @ z + layer.b_f)
            go = expit(layer.w_o @ z + layer.b_o)
            ct = np.tanh(layer.w_c @ z + layer.b_c)
            c.append(gu * ct + gf * c[t])
            a.append(go * np.tanh(c[t + 1]))
            g_u.append(gu)
            g_f.append(gf)
            g_o.append(go)
            c_tilde.append(ct)
        cache.x.append(inputs)
        cache.a.append(a)
        cache.c.append(c)
        cache.g_u.append(g_u)
        cache.g_f.append(g_f)
        cache.g_o.append(g_o)
        cache.c_tilde.append(c_tilde)
        outputs = a[1:]
        if masks is not None and k < len(model.layers) - 1:
            inputs = [o * masks[k] / keep for o in outputs]
        else:
            inputs = outputs
    h_top = cache.a[-1][-1]
    if masks is not None:
        h_top = h_top * masks[-1] / keep
    cache.h_in = h_top
    embedding = model.head_w @ h_top + model.head_b
    return embedding, cache


def _backprop_sequence(
    model: ModelCheckpoint,
    cache: _Cache,
    d_embedding: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    """Accumulate gradients of (d_embedding . embedding) into ``grads``."""
    masks, keep = cache.masks, cache.keep
    T = len(cache.x[0])
    L = len(model.layers)
    grads["head.w"] += np.outer(d_embedding, cache.h_in)
    grads["head.b"] += d_embedding
    dh = model.head_w.T @ d_embedding
    if masks is not None:
        dh = dh * masks[-1] / keep
    # d_above[t]: gradient flowing into the current layer's activation a[t]
    # from layers above (or the head, for the top layer at the last step).
    d_above = [np.zeros(model.layers[-1].hidden_size) for _ in range(T)]
    d_above[T - 1] = dh
    for k in range(L - 1, -1, -1):
        layer = model.layers[k]
        h = layer.hidden_size
        da_rec = np.zeros(h)
        dc_next = np.zeros(h)
        dx = [None] * T
        for t in range(T - 1, -1, -1):
            da = d_above[t] + da_rec
            tc = np.tanh(cache.c[k][t + 1])
            gu, gf, go = cache.g_u[k][t], cache.g_f[k][t], cache.g_o[k][t]
            ct = cache.c_tilde[k][t]
            dz_o = da * tc * go * (1.0 - go)
            dc = da * go * (1.0 - tc * tc) + dc_next
            dz_u = dc * ct * gu * (1.0 - gu)
            dz_c = dc * gu * (1.0 - ct * ct)
            dz_f = dc * cache.c[k][t] * gf * (1.0 - gf)
            dc_next = dc * gf
            z = np.concatenate([cache.a[k][t], cache.x[k][t]])
            grads[f"layer{k}.w_u"] += np.outer(dz_u, z)
            grads[f"layer{k}.b_u"] += dz_u
            grads[f"layer{k}.w_f"] += np.outer(dz_f, z)
            grads[f"layer{k}.b_f"] += dz_f
            grads[f"layer{k}.w_o"] += np.outer(dz_o, z)
            grads[f"layer{k}.b_o"] += dz_o
            grads[f"layer{k}.w_c"] += np.outer(dz_c, z)
            grads[f"layer{k}.b_c"] += dz_c
            dz = (
                layer.w_u.T @ dz_u
                + layer.w_f.T @ dz_f
                + layer.w_o.T @ dz_o
                + layer.w_c.T @ dz_c
            )
            da_rec = dz[:h]
            dx[t] = dz[h:]
        if k > 0:
            if masks is not None:
                d_above = [dx[t] * masks[k - 1] / keep for t in range(T)]
            else:
                d_above = dx


def forward(model: ModelCheckpoint, window: ForecastWindow) -> np.ndarray:
    """Embedding of one forecast window (inference: dropout inactive)."""
    if window.n_variables != model.n_variables:
        raise ValueError(
            f"window has {window.n_variables} variables, model expects {model.n_variables}"
        )
    if window.width != 2 * model.t_half + 1:
        raise ValueError(
            f"window width {window.width}, model expects {2 * model.t_half + 1}"
        )
    seq = standardize(model, window.data).T  # [T, n_variables]
    embedding, _ = _run_sequence(model, seq)
    return embedding


@dataclass(frozen=True)
class EmbeddingBlock:
    """Precomputed embeddings for a run of cycles at one (station, lead)."""

    station: str
    lead_s: int
    cycles: np.ndarray  # cycle indices, ascending
    valid_times: np.ndarray  # seconds, aligned to cycles
    vectors: np.ndarray  # [n_cycles, embed_dim]; masked rows are zero
    available: np.ndarray  # bool per cycle

    def position(self, cycle: int) -> int:
        i = int(np.searchsorted(self.cycles, cycle))
        if i >= len(self.cycles) or self.cycles[i] != cycle:
            raise KeyError(f"cycle index {cycle} not covered by this block")
        return i


def embed_block(
    model: ModelCheckpoint,
    archive: ForecastArchive,
    station: int,
    lead: int,
    cycles,
) -> EmbeddingBlock:
    """Embeddings for every cycle in the range; unavailable windows are masked."""
    if list(archive.variables) != list(model.variables):
        raise ValueError("archive variables do not match model variables")
    cycles = np.asarray(sorted(set(int(c) for c in np.asarray(cycles, dtype=int))), dtype=int)
    n = len(cycles)
    vectors = np.zeros((n, model.embed_dim))
    try:
        data, available = window_block(archive, station, lead, cycles, model.t_half)
    except WindowUnavailable:
        # lead too close to the axis edge: no cycle has a window
        data, available = None, np.zeros(n, dtype=bool)
    for i in np.nonzero(available)[0]:
        seq = standardize(model, data[i]).T
        vectors[i], _ = _run_sequence(model, seq)
    return EmbeddingBlock(
        station=archive.stations[station],
        lead_s=int(archive.leads[lead]),
        cycles=cycles,
        valid_times=archive.cycles[cycles] + int(archive.leads[lead]),
        vectors=vectors,
        available=available,
    )


# ---------------------------------------------------------------------------
# Checkpoint file format: line-oriented text. `key=value` metadata lines,
# then named arrays as `@array <name> <dim...>` followed by one line of
# space-separated values with 17 significant digits (exact round-trip).
# ---------------------------------------------------------------------------

_MAGIC = "analogkit checkpoint v1"


def save_checkpoint(model: ModelCheckpoint, path) -> None:
    for v in model.variables:
        if any(ch in v for ch in ",=\n"):
            raise ValueError(f"variable name {v!r} cannot be stored in a checkpoint")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_MAGIC + "\n")
        fh.write(f"variables={','.join(model.variables)}\n")
        fh.write(f"t_half={model.t_half}\n")
        fh.write(f"seed={model.seed}\n")
        fh.write(f"iterations={model.iterations}\n")
        fh.write(f"hidden_sizes={','.join(str(h) for h in model.hidden_sizes)}\n")
        fh.write(f"embed_dim={model.embed_dim}\n")

        def write_array(name, arr):
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"@array {name} {dims}\n")
            fh.write(" ".join(format_float(v) for v in arr.ravel(order="C")) + "\n")

        write_array("norm.mean", model.norm_mean)
        write_array("norm.sigma", model.norm_sigma)
        for name, p in named_parameters(model):
            write_array(name, p)


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise SchemaError(f"{path}: not a checkpoint file")
    meta: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if line.startswith("@array "):
            parts = line.split()
            name = parts[1]
            shape = tuple(int(d) for d in parts[2:])
            i += 1
            flat = np.array([float(v) for v in lines[i].split()], dtype=float)
            if flat.size != int(np.prod(shape)):
                raise SchemaError(f"{path}: array {name} has {flat.size} values, "
                                  f"expected {np.prod(shape)}")
            arrays[name] = flat.reshape(shape)
        elif "=" in line:
            key, _, value = line.partition("=")
            meta[key] = value
        elif line.strip():
            raise SchemaError(f"{path}: unrecognized line {i + 1}")
        i += 1
    try:
        variables = meta["variables"].split(",")
        t_half = int(meta["t_half"])
        seed = int(meta["seed"])
        iterations = int(meta["iterations"])
        hidden_sizes = tuple(int(h) for h in meta["hidden_sizes"].split(","))
    except KeyError as missing:
        raise SchemaError(f"{path}: missing metadata key {missing}") from None
    layers = []
    for k in range(len(hidden_sizes)):
        fields = []
        for g in GATES:
            fields.append(arrays[f"layer{k}.w_{g}"])
        for g in GATES:
            fields.append(arrays[f"layer{k}.b_{g}"])
        layers.append(LstmLayerParams(*fields))
    return ModelCheckpoint(
        layers=layers,
        head_w=arrays["head.w"],
        head_b=arrays["head.b"],
        norm_mean=arrays["norm.mean"],
        norm_sigma=arrays["norm.sigma"],
        variables=variables,
        t_half=t_half,
        seed=seed,
        iterations=iterations,
    )
