"""The forecasting cell: input projection, memory-augmented attention,
synchronized gated memory update, output head, and the sequential forecast
loop that ties them together.

All step functions accept an optional leading batch axis; shapes below are
written for the unbatched (N x C) case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernel
from .config import ModelConfig
from .errors import ConfigError, ShapeError
from .graph import (
    AdjacencySample,
    edge_probabilities,
    gcn_forward,
    normalize_adjacency,
    sample_adjacency,
)
from .kernel import Tensor

Array = np.ndarray


class ParameterStore:
    """Ordered named learnable tensors, each carrying a gradient slot."""

    def __init__(self) -> None:
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, values: Array) -> Tensor:
        if name in self._tensors:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(values), requires_grad=True)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self) -> dict[str, Tensor]:
        return dict(self._tensors)

    def export(self) -> dict[str, Array]:
        """Copies of all parameter arrays, keyed by name."""
        return {name: t.data.copy() for name, t in self._tensors.items()}

    def load(self, arrays: dict[str, Array]) -> None:
        if set(arrays) != set(self._tensors):
            raise ConfigError(
                f"parameter names mismatch: have {sorted(self._tensors)}, "
                f"loading {sorted(arrays)}"
            )
        for name, values in arrays.items():
            current = self._tensors[name]
            if current.data.shape != values.shape:
                raise ConfigError(
                    f"shape mismatch for {name!r}: {current.data.shape} vs {values.shape}"
                )
            current.data = np.array(values, dtype=current.data.dtype)

    def total_size(self) -> int:
        return sum(t.data.size for t in self._tensors.values())


GATE_NAMES = ("w_update", "u_update", "w_reset", "u_reset", "w_cand", "u_cand")


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ParameterStore:
    """Initialize the full parameter set for the forecaster.

    Weight matrices draw uniform from [-1/sqrt(C'), 1/sqrt(C')], biases start
    at zero, and the node embedding is standard normal scaled by 1/sqrt(d),
    keeping pre-activations O(1).
    """
    cfg.validate()
    dtype = cfg.np_dtype
    c = cfg.hidden_dim
    bound = 1.0 / np.sqrt(c)

    def weight(shape: tuple[int, ...]) -> Array:
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    store = ParameterStore()
    embedding = rng.standard_normal((cfg.n_nodes, cfg.embed_dim)) / np.sqrt(cfg.embed_dim)
    store.add("node_embedding", embedding.astype(dtype))
    store.add("input_proj", weight((cfg.in_channels, c)))
    store.add("gcn_weight", weight((c, c)))
    if cfg.use_maa:
        store.add("attn_weight", weight((c, c)))
    for name in GATE_NAMES:
        store.add(name, weight((c, c)))
    store.add("head_w1", weight((c, c)))
    store.add("head_b1", np.zeros(c, dtype=dtype))
    store.add("head_w2", weight((c, cfg.horizon)))
    store.add("head_b2", np.zeros(cfg.horizon, dtype=dtype))
    return store


@dataclass
class AttentionContext:
    """Intermediate attention quantities; ``j_z`` is the aggregated context
    ``a_s + a_t`` and every row of ``p`` sums to one under the default
    feature-axis normalization."""

    m: Tensor
    p: Tensor
    p_s: Tensor
    p_t: Tensor
    a_s: Tensor
    a_t: Tensor
    j_z: Tensor


def project_input(x_raw: Tensor, proj: Tensor) -> Tensor:
    """Lift raw per-node channels into the hidden feature space."""
    if x_raw.cols != proj.rows:
        raise ShapeError(f"projection mismatch: input {x_raw.shape} vs weight {proj.shape}")
    return x_raw @ proj


def maa_forward(j_r: Tensor, h_prev: Tensor, psi: Tensor, axis: str = "feature") -> AttentionContext:
    """Memory-augmented attention.

    Stacks the graph-convolution output above the previous memory, scores the
    stack through a per-row linear map (a kernel-size-1 convolution over
    feature channels), normalizes with softmax, and uses the two halves of
    the scores as elementwise gates on their respective inputs.
    """
    if j_r.shape != h_prev.shape:
        raise ShapeError(f"attention inputs differ: {j_r.shape} vs {h_prev.shape}")
    n = j_r.rows
    m = kernel.concat_rows(j_r, h_prev)
    scores = m @ psi
    if axis == "feature":
        p = kernel.row_softmax(scores)
    elif axis == "node":
        p = kernel.transpose(kernel.row_softmax(kernel.transpose(scores)))
    else:
        raise ConfigError(f"unknown attention axis {axis!r}")
    p_s = kernel.slice_rows(p, 0, n)
    p_t = kernel.slice_rows(p, n, 2 * n)
    a_s = p_s * j_r
    a_t = p_t * h_prev
    j_z = a_s + a_t
    return AttentionContext(m=m, p=p, p_s=p_s, p_t=p_t, a_s=a_s, a_t=a_t, j_z=j_z)


def gru_update(x_t: Tensor, j_r: Tensor, j_z: Tensor, h_prev: Tensor, params: ParameterStore) -> Tensor:
    """One synchronized gated memory update.

    The update gate sees the aggregated context, the reset gate the graph
    output, and the candidate the projected input; the new memory is a convex
    combination of the previous memory and the candidate.
    """
    g = kernel.sigmoid(j_z @ params["w_update"] + h_prev @ params["u_update"])
    r = kernel.sigmoid(j_r @ params["w_reset"] + h_prev @ params["u_reset"])
    h_tilde = kernel.tanh(x_t @ params["w_cand"] + r * (h_prev @ params["u_cand"]))
    return g * h_prev + (1.0 - g) * h_tilde


def make_graph_sample(
    params: ParameterStore,
    cfg: ModelConfig,
    *,
    mode: str = "relaxed",
    rng: np.random.Generator | None = None,
    noise: tuple[Array, Array] | None = None,
) -> AdjacencySample:
    """Realize the propagation matrix for one forward pass.

    With sampling enabled this draws a Binary-Concrete adjacency from the
    embedding-derived edge probabilities; the ablated variant uses the dense
    row-softmax similarity graph instead.
    """
    embedding = params["node_embedding"]
    if cfg.use_gumbel:
        omega = edge_probabilities(embedding)
        return sample_adjacency(omega, cfg.tau, mode=mode, rng=rng, noise=noise)
    adjacency = kernel.row_softmax(embedding @ embedding.T)
    return AdjacencySample(
        adjacency=adjacency,
        propagation=normalize_adjacency(adjacency),
        temperature=cfg.tau,
        mode="dense",
    )


def cell_step(
    x_raw: Tensor,
    h_prev: Tensor,
    sample: AdjacencySample,
    params: ParameterStore,
    cfg: ModelConfig,
) -> Tensor:
    """project -> graph convolution -> attention -> gated update."""
    x_t = project_input(x_raw, params["input_proj"])
    j_r = gcn_forward(x_t, sample.propagation, params["gcn_weight"])
    if cfg.use_maa:
        j_z = maa_forward(j_r, h_prev, params["attn_weight"], cfg.attention_axis).j_z
    else:
        j_z = j_r
    return gru_update(x_t, j_r, j_z, h_prev, params)


def head_forward(h: Tensor, params: ParameterStore) -> Tensor:
    """Two fully connected layers mapping the final memory to the horizon."""
    hidden = kernel.relu(h @ params["head_w1"] + params["head_b1"])
    return hidden @ params["head_w2"] + params["head_b2"]


def initial_hidden(cfg: ModelConfig, batch: int, rng: np.random.Generator | None) -> Tensor:
    shape = (batch, cfg.n_nodes, cfg.hidden_dim)
    if cfg.hidden_init == "zeros":
        return Tensor(np.zeros(shape, dtype=cfg.np_dtype))
    if rng is None:
        raise ConfigError("hidden_init='gaussian' needs an rng for reproducibility")
    return Tensor((rng.standard_normal(shape) * cfg.hidden_init_sigma).astype(cfg.np_dtype))


def forecast(
    window,
    params: ParameterStore,
    cfg: ModelConfig,
    *,
    sample: AdjacencySample | None = None,
    mode: str = "relaxed",
    rng: np.random.Generator | None = None,
    noise: tuple[Array, Array] | None = None,
) -> Tensor:
    """Run the recurrence over one window and emit the horizon prediction.

    ``window`` is time-major, (T, N, C_in) or batched (B, T, N, C_in);
    the result is (N, T') or (B, N, T'). One graph sample is reused for all
    T steps (and, when batched, for every window in the batch).
    """
    x = window.data if isinstance(window, Tensor) else np.asarray(window, dtype=cfg.np_dtype)
    batched = x.ndim == 4
    if not batched:
        if x.ndim != 3:
            raise ShapeError(f"window must be (T, N, C) or (B, T, N, C), got {x.shape}")
        x = x[None]
    b, t, n, c = x.shape
    if t != cfg.window:
        raise ShapeError(f"window length {t} does not match configured length {cfg.window}")
    if n != cfg.n_nodes or c != cfg.in_channels:
        raise ShapeError(
            f"window is {n} nodes x {c} channels, model expects "
            f"{cfg.n_nodes} x {cfg.in_channels}"
        )
    if sample is None:
        sample = make_graph_sample(params, cfg, mode=mode, rng=rng, noise=noise)
    h = initial_hidden(cfg, b, rng)
    for step in range(t):
        h = cell_step(Tensor(x[:, step]), h, sample, params, cfg)
    y_hat = head_forward(h, params)
    if not batched:
        y_hat = kernel.reshape(y_hat, (cfg.n_nodes, cfg.horizon))
    return y_hat


def loss(y_hat: Tensor, y_true) -> Tensor:
    """Mean squared residual over every predicted element."""
    target = y_true if isinstance(y_true, Tensor) else Tensor(np.asarray(y_true))
    if y_hat.shape != target.shape:
        raise ShapeError(f"loss shape mismatch: {y_hat.shape} vs {target.shape}")
    residual = y_hat - target
    return kernel.mean_all(residual * residual)
