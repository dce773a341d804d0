"""Loss-term tests against closed forms and brute-force double-loop
oracles, plus finite-difference gradient checks."""

import math

import numpy as np
import pytest

from stmfg import autodiff as ad
from stmfg.autodiff import SparseMatrix, Tensor
from stmfg.errors import ContractError, DataError
from stmfg.losses import (
    LossBreakdown,
    contrastive_loss,
    spatial_reg_loss,
    total_loss,
    zinb_nll,
    zinb_pmf,
)


def cosine(u, v, eps=0.0):
    """Textbook cosine (eps=0) or the library's guarded variant (eps>0)."""
    nu = math.sqrt(sum(a * a for a in u) + eps)
    nv = math.sqrt(sum(b * b for b in v) + eps)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return sum(a * b for a, b in zip(u, v)) / (nu * nv)


def contrastive_oracle(zs, zf, tau, eps=0.0):
    """Literal double-loop evaluation of the inter-view objective."""
    n = len(zs)
    total = 0.0
    for i in range(n):
        for anchor, other in ((zs, zf), (zf, zs)):
            num = math.exp(cosine(anchor[i], other[i], eps) / tau)
            den = -math.exp(1.0 / tau)
            for k in range(n):
                den += math.exp(cosine(anchor[i], zs[k], eps) / tau)
                den += math.exp(cosine(anchor[i], zf[k], eps) / tau)
            total += math.log(num / den)
    return -total / (2.0 * n)


def spatial_reg_oracle(z, adj):
    n = len(z)
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            p = 1.0 / (1.0 + math.exp(-cosine(z[i], z[j])))
            total += math.log(p) if adj[i][j] else math.log(1.0 - p)
    return -total


def random_adjacency(n, rng, p=0.3):
    dense = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                dense[i, j] = dense[j, i] = 1.0
    rows, cols = np.nonzero(dense)
    return SparseMatrix(n, rows, cols, np.ones(rows.size), symmetric=True), dense


class TestContrastiveLoss:
    def test_single_spot_collapses_to_exactly_zero(self):
        rng = np.random.default_rng(0)
        for tau in (0.1, 0.5, 1.0, 2.0):
            loss = contrastive_loss(Tensor(rng.normal(size=(1, 5))),
                                    Tensor(rng.normal(size=(1, 5))), tau)
            assert loss.item() == 0.0

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_double_loop_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = int(rng.integers(2, 33))
        d = int(rng.integers(2, 9))
        zs = rng.normal(size=(n, d))
        zf = rng.normal(size=(n, d))
        loss = contrastive_loss(Tensor(zs), Tensor(zf), 0.5)
        assert loss.item() == pytest.approx(
            contrastive_oracle(zs.tolist(), zf.tolist(), 0.5), abs=1e-10)

    def test_row_scaling_invariance(self):
        rng = np.random.default_rng(3)
        zs = rng.normal(size=(10, 4))
        zf = rng.normal(size=(10, 4))
        base = contrastive_loss(Tensor(zs), Tensor(zf), 0.5).item()
        scaled = zs.copy()
        scaled[4] *= 3.0
        assert contrastive_loss(Tensor(scaled), Tensor(zf), 0.5).item() == pytest.approx(
            base, abs=1e-10)

    def test_symmetry_under_view_swap(self):
        rng = np.random.default_rng(4)
        zs = Tensor(rng.normal(size=(12, 5)))
        zf = Tensor(rng.normal(size=(12, 5)))
        a = contrastive_loss(zs, zf, 0.7).item()
        b = contrastive_loss(zf, zs, 0.7).item()
        assert a == pytest.approx(b, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(200 + seed)
        loss = contrastive_loss(Tensor(rng.normal(size=(6, 3))),
                                Tensor(rng.normal(size=(6, 3))), 0.5)
        assert loss.item() >= 0.0

    def test_invalid_temperature(self):
        z = Tensor(np.ones((2, 2)))
        with pytest.raises(ContractError):
            contrastive_loss(z, z, 0.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        zs = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        zf = Tensor(rng.normal(size=(5, 3)))
        err = ad.grad_check(lambda t: contrastive_loss(t, zf, 0.5), zs, 1e-5)
        assert err < 1e-5


class TestSpatialRegLoss:
    def test_two_spots_one_edge_closed_form(self):
        z = Tensor([[1.0, 0.0], [0.0, 1.0]])
        adj = SparseMatrix(2, [0, 1], [1, 0], [1.0, 1.0], symmetric=True)
        assert spatial_reg_loss(z, adj).item() == pytest.approx(-2 * math.log(0.5), abs=1e-12)

    def test_two_spots_no_edge_same_value(self):
        z = Tensor([[1.0, 0.0], [0.0, 1.0]])
        adj = SparseMatrix(2, [], [], [], symmetric=True)
        assert spatial_reg_loss(z, adj).item() == pytest.approx(-2 * math.log(0.5), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_double_loop_oracle(self, seed):
        rng = np.random.default_rng(300 + seed)
        n = int(rng.integers(3, 21))
        z = rng.normal(size=(n, 4))
        adj, dense = random_adjacency(n, rng)
        loss = spatial_reg_loss(Tensor(z), adj)
        assert loss.item() == pytest.approx(
            spatial_reg_oracle(z.tolist(), dense.tolist()), abs=1e-10)

    def test_orthogonal_embedding_closed_form(self):
        rng = np.random.default_rng(9)
        n = 7
        adj, _ = random_adjacency(n, rng)
        loss = spatial_reg_loss(Tensor(np.eye(n)), adj)
        assert loss.item() == pytest.approx(-(n * n - n) * math.log(0.5), abs=1e-9)

    def test_nonnegative_and_gradient(self):
        rng = np.random.default_rng(10)
        z = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
        adj, _ = random_adjacency(6, rng)
        assert spatial_reg_loss(z, adj).item() >= 0.0
        err = ad.grad_check(lambda t: spatial_reg_loss(t, adj), z, 1e-5)
        assert err < 1e-5


class TestZinbPmf:
    def test_zero_count_closed_form(self):
        assert zinb_pmf(0, 0.5, 1.0, 1.0) == pytest.approx(0.75, abs=1e-12)

    def test_positive_count_halves_nb(self):
        nb_only = zinb_pmf(3, 0.0, 2.0, 1.5)
        assert zinb_pmf(3, 0.5, 2.0, 1.5) == pytest.approx(0.5 * nb_only, abs=1e-12)

    def test_pure_nb_sums_to_one(self):
        total = sum(zinb_pmf(x, 0.0, 5.0, 2.0) for x in range(10001))
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_zero_inflated_sums_to_one(self):
        total = sum(zinb_pmf(x, 0.3, 4.0, 1.0) for x in range(10001))
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_domain_errors(self):
        with pytest.raises(ContractError):
            zinb_pmf(-1, 0.1, 1.0, 1.0)
        with pytest.raises(ContractError):
            zinb_pmf(0, 1.0, 1.0, 1.0)
        with pytest.raises(ContractError):
            zinb_pmf(0, 0.1, 0.0, 1.0)


class TestZinbNll:
    def test_single_entry_closed_form(self):
        loss = zinb_nll(np.array([[0.0]]), Tensor([[0.5]]), Tensor([[1.0]]), Tensor([[1.0]]))
        assert loss.item() == pytest.approx(-math.log(0.75), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_pmf_composition(self, seed):
        rng = np.random.default_rng(400 + seed)
        counts = rng.poisson(3.0, size=(5, 4)).astype(float)
        pi = rng.uniform(0.05, 0.9, size=(5, 4))
        mu = rng.uniform(0.2, 6.0, size=(5, 4))
        theta = rng.uniform(0.3, 4.0, size=(5, 4))
        loss = zinb_nll(counts, Tensor(pi), Tensor(mu), Tensor(theta))
        oracle = np.mean([
            -math.log(zinb_pmf(int(counts[i, j]), pi[i, j], mu[i, j], theta[i, j]))
            for i in range(5) for j in range(4)
        ])
        assert loss.item() == pytest.approx(oracle, abs=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(500 + seed)
        counts = rng.poisson(2.0, size=(4, 3)).astype(float)
        loss = zinb_nll(counts,
                        Tensor(rng.uniform(0.05, 0.9, size=(4, 3))),
                        Tensor(rng.uniform(0.2, 5.0, size=(4, 3))),
                        Tensor(rng.uniform(0.3, 3.0, size=(4, 3))))
        assert loss.item() >= 0.0

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        counts = rng.poisson(3.0, size=(4, 3)).astype(float)
        pi = Tensor(rng.uniform(0.1, 0.8, size=(4, 3)), requires_grad=True)
        mu = Tensor(rng.uniform(0.5, 4.0, size=(4, 3)), requires_grad=True)
        theta = Tensor(rng.uniform(0.5, 3.0, size=(4, 3)), requires_grad=True)
        assert ad.grad_check(lambda t: zinb_nll(counts, t, mu, theta), pi, 1e-5) < 1e-4
        assert ad.grad_check(lambda t: zinb_nll(counts, pi, t, theta), mu, 1e-5) < 1e-4
        assert ad.grad_check(lambda t: zinb_nll(counts, pi, mu, t), theta, 1e-5) < 1e-4

    def test_count_validation(self):
        good = (Tensor([[0.2]]), Tensor([[1.0]]), Tensor([[1.0]]))
        with pytest.raises(DataError):
            zinb_nll(np.array([[-1.0]]), *good)
        with pytest.raises(DataError):
            zinb_nll(np.array([[1.5]]), *good)
        # continuous targets allowed when integer validation is waived
        loss = zinb_nll(np.array([[1.5]]), *good, require_integer=False)
        assert np.isfinite(loss.item())


class TestTotalLoss:
    def _scalars(self):
        return Tensor([[0.8]]), Tensor([[0.3]]), Tensor([[2.5]])

    def test_masking(self):
        z, c, r = self._scalars()
        total, breakdown = total_loss(z, c, r, 1.0, 0.0, 0.0)
        assert total.item() == z.item()
        assert breakdown.total == breakdown.zinb

    def test_all_zero_weights(self):
        z, c, r = self._scalars()
        total, _ = total_loss(z, c, r, 0.0, 0.0, 0.0)
        assert total.item() == 0.0

    def test_weighted_sum_oracle(self):
        z, c, r = self._scalars()
        total, breakdown = total_loss(z, c, r, 1.0, 0.001, 0.01)
        expected = 1.0 * 0.8 + 0.001 * 0.3 + 0.01 * 2.5
        assert total.item() == pytest.approx(expected, abs=1e-12)
        assert breakdown.total == pytest.approx(
            breakdown.alpha * breakdown.zinb + breakdown.lam * breakdown.cl
            + breakdown.gamma * breakdown.reg, abs=1e-12)

    def test_disabled_components_record_zero(self):
        z, _, _ = self._scalars()
        total, breakdown = total_loss(z, None, None, 1.0, 0.001, 0.01)
        assert breakdown.cl == 0.0 and breakdown.reg == 0.0
        assert total.item() == z.item()

    def test_negative_weights_rejected(self):
        z, c, r = self._scalars()
        with pytest.raises(ContractError):
            total_loss(z, c, r, -1.0, 0.0, 0.0)

    def test_gradient_flows_through_weights(self):
        x = Tensor([[1.0, 2.0]], requires_grad=True)
        z = ad.mean_all(ad.hadamard(x, x))
        total, _ = total_loss(z, None, None, 2.0, 0.0, 0.0)
        ad.backward(total)
        np.testing.assert_allclose(x.grad, [[2.0, 4.0]], atol=1e-12)
