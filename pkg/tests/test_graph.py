"""Graph-learner tests: edge probabilities, Binary-Concrete sampling
statistics, degree normalization, and the graph convolution."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from stlgru import kernel
from stlgru.errors import DomainError, ShapeError
from stlgru.graph import (
    edge_probabilities,
    gcn_forward,
    gumbel_noise,
    normalize_adjacency,
    sample_adjacency,
)
from stlgru.kernel import Tensor

embeddings = hnp.arrays(
    np.float64,
    hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=8),
    elements=st.floats(-50, 50),
)


class TestEdgeProbabilities:
    def test_zero_embedding_gives_half(self):
        out = edge_probabilities(Tensor(np.zeros((4, 3))))
        np.testing.assert_allclose(out.data, 0.5)

    def test_hand_computed_logistic(self):
        out = edge_probabilities(Tensor([[1.0], [-1.0]]))
        want = [[0.7311, 0.2689], [0.2689, 0.7311]]
        np.testing.assert_allclose(np.round(out.data, 4), want)

    @settings(max_examples=60)
    @given(embeddings)
    def test_symmetric_and_strictly_inside_unit_interval(self, e):
        out = edge_probabilities(Tensor(e)).data
        np.testing.assert_array_equal(out, out.T)
        assert np.all(out > 0.0)
        assert np.all(out < 1.0)

    def test_rejects_non_matrix(self):
        with pytest.raises(ShapeError):
            edge_probabilities(Tensor(np.zeros(3)))


class TestSampleAdjacency:
    def test_half_probability_equal_noise_gives_half(self):
        omega = Tensor(np.full((2, 2), 0.5))
        noise = (np.ones((2, 2)), np.ones((2, 2)))
        for tau in (0.1, 1.0, 7.0):
            s = sample_adjacency(omega, tau, noise=noise)
            np.testing.assert_allclose(s.adjacency.data, 0.5)

    def test_small_tau_limit_saturates(self):
        omega = Tensor(np.full((1, 1), 0.9))
        s = sample_adjacency(omega, 1e-6, mode="relaxed")
        assert s.adjacency.data[0, 0] >= 1.0 - 1e-9

    def test_monte_carlo_matches_edge_probability(self):
        # P(relaxed > 0.5) equals omega under the Binary-Concrete draw.
        rng = np.random.default_rng(42)
        omega = Tensor(np.full((100, 100), 0.3))
        hits = total = 0
        for _ in range(1):
            s = sample_adjacency(omega, 1.0, rng=rng)
            hits += (s.adjacency.data > 0.5).sum()
            total += s.adjacency.data.size
        assert abs(hits / total - 0.3) <= 0.02

    def test_domain_error_at_exact_bounds(self):
        for bad in (0.0, 1.0):
            omega = Tensor(np.array([[0.5, bad], [bad, 0.5]]))
            with pytest.raises(DomainError):
                sample_adjacency(omega, 1.0)

    def test_bad_tau_rejected(self):
        with pytest.raises(ValueError, match="tau"):
            sample_adjacency(Tensor(np.full((2, 2), 0.5)), 0.0)

    def test_bad_mode_rejected(self):
        with pytest.raises(ValueError, match="mode"):
            sample_adjacency(Tensor(np.full((2, 2), 0.5)), 1.0, mode="soft")

    def test_monotone_in_omega(self):
        rng = np.random.default_rng(1)
        noise = gumbel_noise(rng, (3, 3))
        relaxed = []
        for prob in np.linspace(0.05, 0.95, 7):
            s = sample_adjacency(Tensor(np.full((3, 3), prob)), 0.7, noise=noise)
            relaxed.append(s.adjacency.data.copy())
        stacked = np.stack(relaxed)
        assert np.all(np.diff(stacked, axis=0) > 0)

    def test_hard_mode_is_deterministic_threshold(self):
        omega = Tensor(np.array([[0.6, 0.4], [0.5, 0.1]]))
        s = sample_adjacency(omega, 0.5, mode="hard")
        np.testing.assert_array_equal(s.adjacency.data, [[1.0, 0.0], [1.0, 0.0]])
        assert np.all(np.diag(s.propagation.data) >= 1.0)

    def test_frozen_noise_reproducible(self):
        rng = np.random.default_rng(9)
        omega = Tensor(np.full((3, 3), 0.4))
        noise = gumbel_noise(rng, (3, 3))
        a = sample_adjacency(omega, 0.5, noise=noise).adjacency.data
        b = sample_adjacency(omega, 0.5, noise=noise).adjacency.data
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("prob", [0.1, 0.3, 0.5, 0.7, 0.9])
    def test_edge_frequency_converges(self, prob):
        rng = np.random.default_rng(int(prob * 1000))
        omega = Tensor(np.full((100, 100), prob))
        s = sample_adjacency(omega, 1.0, rng=rng)
        freq = (s.adjacency.data > 0.5).mean()
        assert abs(freq - prob) <= 0.02


def power_iteration_radius(m: np.ndarray, iters: int = 200) -> float:
    """Spectral radius estimate for symmetric matrices."""
    rng = np.random.default_rng(0)
    v = rng.standard_normal(m.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
        lam = norm
    return lam


class TestNormalizeAdjacency:
    def test_zero_adjacency_gives_identity(self):
        out = normalize_adjacency(Tensor(np.zeros((3, 3))))
        np.testing.assert_array_equal(out.data, np.eye(3))

    def test_two_cycle(self):
        out = normalize_adjacency(Tensor([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(out.data, np.ones((2, 2)))

    def test_three_node_path(self):
        a = np.zeros((3, 3))
        a[0, 1] = a[1, 0] = 1.0
        a[1, 2] = a[2, 1] = 1.0
        out = normalize_adjacency(Tensor(a)).data
        np.testing.assert_allclose(np.diag(out), 1.0)
        inv_sqrt2 = 1.0 / np.sqrt(2.0)
        np.testing.assert_allclose(out[0, 1], inv_sqrt2)
        np.testing.assert_allclose(out[1, 2], inv_sqrt2)
        np.testing.assert_allclose(out[0, 2], 0.0)

    def test_rejects_negative_entries(self):
        with pytest.raises(DomainError):
            normalize_adjacency(Tensor([[0.0, -1.0], [-1.0, 0.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ShapeError):
            normalize_adjacency(Tensor(np.zeros((2, 3))))

    @pytest.mark.parametrize("n", [2, 5, 10, 20])
    def test_spectral_radius_bound_random_hard_graphs(self, n):
        rng = np.random.default_rng(n)
        for _ in range(5):
            upper = np.triu(rng.random((n, n)) < 0.4, k=1)
            a = (upper | upper.T).astype(float)
            normalized = normalize_adjacency(Tensor(a)).data - np.eye(n)
            assert power_iteration_radius(normalized) <= 1.0 + 1e-9


class TestGcnForward:
    def test_identity_propagation_and_weight(self):
        x = np.arange(12.0).reshape(4, 3)
        out = gcn_forward(Tensor(x), Tensor(np.eye(4)), Tensor(np.eye(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_zero_features_give_zero(self):
        out = gcn_forward(Tensor(np.zeros((4, 3))), Tensor(np.eye(4)), Tensor(np.ones((3, 3))))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_matches_two_matmul_oracle(self):
        rng = np.random.default_rng(4)
        x, prop, w = rng.standard_normal((4, 3)), rng.standard_normal((4, 4)), rng.standard_normal((3, 3))
        got = gcn_forward(Tensor(x), Tensor(prop), Tensor(w)).data
        want = (prop @ x) @ w
        assert np.abs(got - want).max() <= 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            gcn_forward(Tensor(np.zeros((4, 3))), Tensor(np.eye(5)), Tensor(np.eye(3)))
        with pytest.raises(ShapeError):
            gcn_forward(Tensor(np.zeros((4, 3))), Tensor(np.eye(4)), Tensor(np.eye(4)))


def test_gradient_flows_from_gcn_output_to_embedding():
    """d(gcn output)/d(embedding) is nonzero through a frozen relaxed sample
    and matches finite differences."""
    rng = np.random.default_rng(17)
    n, d, c = 4, 3, 5
    e0 = rng.standard_normal((n, d)) / np.sqrt(d)
    x = rng.standard_normal((n, c))
    w = rng.standard_normal((c, c)) * 0.3
    noise = gumbel_noise(rng, (n, n))
    probe = rng.standard_normal((n, c))

    def forward(e_arr) -> kernel.Tensor:
        e = e_arr if isinstance(e_arr, Tensor) else Tensor(e_arr)
        omega = edge_probabilities(e)
        sample = sample_adjacency(omega, 0.5, noise=noise)
        out = gcn_forward(Tensor(x), sample.propagation, Tensor(w))
        return kernel.sum_all(out * Tensor(probe))

    e_t = Tensor(e0.copy(), requires_grad=True)
    analytic = kernel.gradient_of_scalar(forward(e_t), {"e": e_t})
    assert np.abs(analytic["e"]).max() > 0.0

    numeric = kernel.finite_difference_gradient(
        lambda params: forward(params["e"]).item(), {"e": e0}, eps=1e-5
    )
    err = kernel.gradient_relative_error(analytic, numeric)["e"]
    assert err <= 1e-4
