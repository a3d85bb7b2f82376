"""Graph structure learning and graph convolution.

Node embeddings induce edge probabilities; a Binary-Concrete relaxation turns
those into a (differentiable) sparse adjacency, which is degree-normalized
into the propagation matrix used by the graph convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernel
from .errors import DomainError, ShapeError
from .kernel import Tensor

Array = np.ndarray


@dataclass
class AdjacencySample:
    """One realized graph: edge probabilities, noise draws, adjacency, and the
    normalized propagation matrix ``I + D^-1/2 A D^-1/2``.

    ``mode`` is ``relaxed`` (differentiable Binary-Concrete values in (0, 1)),
    ``hard`` (deterministic 0/1 threshold, evaluation only), or ``dense``
    (row-softmax similarity graph used by the no-sampling ablation; ``omega``
    and ``noise`` are absent there).
    """

    adjacency: Tensor
    propagation: Tensor
    temperature: float
    mode: str
    omega: Tensor | None = None
    noise: tuple[Array, Array] | None = None


def edge_probabilities(embedding: Tensor) -> Tensor:
    """Edge-preservation probabilities from node embeddings.

    Returns the symmetric matrix sigmoid(E @ E^T), clamped one ulp inside
    (0, 1) so the downstream logit is always defined.
    """
    if embedding.ndim != 2:
        raise ShapeError(f"embedding must be N x d, got {embedding.shape}")
    scores = embedding @ embedding.T
    return kernel.clip_open_unit(kernel.sigmoid(scores))


def gumbel_noise(rng: np.random.Generator, shape: tuple[int, ...], dtype=np.float64) -> tuple[Array, Array]:
    """Two independent Gumbel(0, 1) draws of the given shape."""
    return (
        rng.gumbel(0.0, 1.0, size=shape).astype(dtype),
        rng.gumbel(0.0, 1.0, size=shape).astype(dtype),
    )


def sample_adjacency(
    omega: Tensor,
    tau: float,
    *,
    mode: str = "relaxed",
    rng: np.random.Generator | None = None,
    noise: tuple[Array, Array] | None = None,
) -> AdjacencySample:
    """Draw an adjacency from edge probabilities via the Binary-Concrete trick.

    Relaxed entries are sigmoid((logit(omega) + n1 - n2) / tau) and stay
    differentiable through ``omega``. Hard mode thresholds the relaxed value
    at 0.5; with no noise supplied that reduces to the deterministic rule
    A_ij = 1 iff omega_ij >= 0.5 used at evaluation time. Passing ``noise``
    freezes the draw so gradient checks are deterministic.
    """
    if mode not in ("relaxed", "hard"):
        raise ValueError(f"mode must be 'relaxed' or 'hard', got {mode!r}")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    probs = omega.data
    if np.any(probs <= 0.0) or np.any(probs >= 1.0):
        raise DomainError("omega entries must lie strictly inside (0, 1); "
                          "the logit is undefined at 0 or 1")
    if noise is None:
        if rng is not None:
            noise = gumbel_noise(rng, probs.shape, probs.dtype)
        else:
            zeros = np.zeros_like(probs)
            noise = (zeros, zeros.copy())
    n1, n2 = noise
    logits = kernel.log(omega) - kernel.log(1.0 - omega)
    relaxed = kernel.sigmoid((logits + Tensor(n1 - n2)) / tau)
    if mode == "hard":
        adjacency = Tensor((relaxed.data >= 0.5).astype(probs.dtype))
    else:
        adjacency = relaxed
    propagation = normalize_adjacency(adjacency)
    return AdjacencySample(
        adjacency=adjacency,
        propagation=propagation,
        temperature=tau,
        mode=mode,
        omega=omega,
        noise=noise,
    )


def normalize_adjacency(a: Tensor) -> Tensor:
    """Propagation matrix ``I + D^-1/2 A D^-1/2`` with D_ii the row sums of A.

    Zero-degree rows use the convention D_ii^-1/2 := 0; the identity term
    still propagates self-information.
    """
    if a.ndim != 2 or a.rows != a.cols:
        raise ShapeError(f"adjacency must be square, got {a.shape}")
    if np.any(a.data < 0):
        raise DomainError("adjacency entries must be nonnegative")
    n = a.rows
    ones = Tensor(np.ones((n, 1), dtype=a.data.dtype))
    degrees = a @ ones
    scale = kernel.rsqrt_or_zero(degrees)
    eye = Tensor(np.eye(n, dtype=a.data.dtype))
    return eye + a * scale * scale.T


def gcn_forward(x_t: Tensor, prop: Tensor, w: Tensor) -> Tensor:
    """Graph convolution (prop @ x_t) @ w; linear in ``x_t``."""
    if x_t.shape[-2] != prop.cols:
        raise ShapeError(
            f"node-count mismatch: propagation {prop.shape} vs features {x_t.shape}"
        )
    if w.rows != x_t.cols:
        raise ShapeError(f"feature mismatch: features {x_t.shape} vs weight {w.shape}")
    return (prop @ x_t) @ w
