import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skelattack.optimizers import (CmaEs, CmaEsCore, OptimizerError,
                                   RandomSearch, Tpe, make_optimizer)

ALL_KINDS = ["random", "cmaes", "tpe"]


def drive(opt, losses):
    cands = []
    for loss in losses:
        c = opt.propose()
        opt.observe(c, loss)
        cands.append(c)
    return cands


class Testprotocol:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_reproducible_streams(self, kind):
        rng = np.random.default_rng(0)
        losses = rng.random(60).tolist()
        a = make_optimizer(kind, 4, 37, seed=123)
        b = make_optimizer(kind, 4, 37, seed=123)
        ca = drive(a, losses)
        cb = drive(b, losses)
        assert all((x == y).all() for x, y in zip(ca, cb))

    @pytest.mark.parametrize("kind", ALL_KINDS)
    @settings(max_examples=15, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 200), st.integers(0, 10_000))
    def test_domain_safety(self, kind, k, L, seed):
        opt = make_optimizer(kind, k, L, seed)
        rng = np.random.default_rng(seed)
        for _ in range(25):
            c = opt.propose()
            assert c.shape == (k,)
            assert c.min() >= 0 and c.max() < L
            opt.observe(c, float(rng.random()))

    def test_bad_dimensions_rejected(self):
        with pytest.raises(OptimizerError):
            RandomSearch(0, 10, seed=0)
        with pytest.raises(OptimizerError):
            RandomSearch(3, 0, seed=0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_optimizer("annealing", 2, 10, 0)

    def test_observe_rejects_nonfinite_loss(self):
        opt = RandomSearch(2, 10, seed=0)
        c = opt.propose()
        with pytest.raises(ValueError):
            opt.observe(c, float("nan"))
        with pytest.raises(ValueError):
            opt.observe(c, float("inf"))

    def test_observe_rejects_out_of_domain(self):
        opt = RandomSearch(2, 10, seed=0)
        with pytest.raises(ValueError):
            opt.observe([0, 10], 0.5)
        with pytest.raises(ValueError):
            opt.observe([0], 0.5)


class TestBestSoFar:
    def test_before_any_observation(self):
        with pytest.raises(OptimizerError):
            RandomSearch(1, 5, seed=0).best_so_far()

    def test_single_entry(self):
        opt = RandomSearch(1, 5, seed=0)
        c = opt.propose()
        opt.observe(c, 0.4)
        cand, loss = opt.best_so_far()
        assert (cand == c).all() and loss == 0.4

    def test_tie_breaks_to_earliest(self):
        opt = RandomSearch(1, 5, seed=0)
        first_tied = None
        for loss in (0.9, 0.7, 0.7):
            c = opt.propose()
            if loss == 0.7 and first_tied is None:
                first_tied = c
            opt.observe(c, loss)
        cand, loss = opt.best_so_far()
        assert loss == 0.7 and (cand == first_tied).all()

    def test_matches_linear_scan_oracle(self):
        rng = np.random.default_rng(8)
        opt = RandomSearch(3, 50, seed=8)
        seen = []
        for _ in range(1000):
            c = opt.propose()
            loss = float(rng.random())
            opt.observe(c, loss)
            seen.append((c, loss))
        best = min(range(len(seen)), key=lambda i: seen[i][1])
        cand, loss = opt.best_so_far()
        assert loss == seen[best][1] and (cand == seen[best][0]).all()


class TestRandomSearch:
    def test_uniformity_chi_square(self):
        from scipy import stats

        opt = RandomSearch(1, 16, seed=11)
        draws = np.concatenate([opt.propose() for _ in range(100_000)])
        p = stats.chisquare(np.bincount(draws, minlength=16)).pvalue
        assert p > 0.001

    def test_independent_between_calls(self):
        opt = RandomSearch(3, 1000, seed=2)
        a, b = opt.propose(), opt.propose()
        assert not (a == b).all()


class TestCmaEs:
    def test_sphere_convergence_small(self):
        core = CmaEsCore(n=5, seed=3, sigma0=0.3)
        f = lambda u: float(np.sum((u - 0.5) ** 2))
        for _ in range(150):
            for _ in range(core.lam):
                u = core.ask()
                core.tell(u, f(u))
            if f(core.mean) < 1e-4:
                break
        assert f(core.mean) < 1e-3
        assert np.allclose(core.mean, 0.5, atol=0.05)

    def test_covariance_spd_under_random_losses(self):
        core = CmaEsCore(n=6, seed=4, sigma0=1.0)
        rng = np.random.default_rng(5)
        for _ in range(500):
            for _ in range(core.lam):
                core.tell(core.ask(), float(rng.random()))
        assert core.min_eigenvalue() > 0
        assert np.allclose(core.C, core.C.T)

    def test_tiny_sigma_concentrates(self):
        # odd L keeps the squashed mean mid-cell rather than on a boundary
        opt = CmaEs(3, 101, seed=6, sigma0=1e-9)
        props = {tuple(opt.propose().tolist()) for _ in range(20)}
        assert props == {(50, 50, 50)}  # mean 0 squashes to 0.5 -> index L//2

    def test_fabricated_candidate_accepted(self):
        # observing a candidate the optimizer never proposed must still work
        opt = CmaEs(2, 10, seed=7)
        opt.propose()
        opt.observe([3, 4], 0.5)
        assert opt.best_so_far()[1] == 0.5


class TestTpe:
    def test_startup_is_uniform_sampling(self):
        opt = Tpe(2, 1000, seed=9)
        props = [opt.propose() for _ in range(10)]
        flat = np.concatenate(props)
        assert len(np.unique(flat)) > 10  # spread, not collapsed
        for c in props:
            opt.observe(c, 0.5)

    def test_quadratic_concentration(self):
        L, istar = 100, 37
        loss = lambda i: ((int(i) - istar) / L) ** 2
        decile = set(np.argsort([loss(i) for i in range(L)], kind="stable")[:10].tolist())
        opt = Tpe(1, L, seed=5)
        for _ in range(100):
            c = opt.propose()
            opt.observe(c, loss(c[0]))
        hits = 0
        for _ in range(20):
            c = opt.propose()
            hits += int(c[0]) in decile
            opt.observe(c, loss(c[0]))
        assert hits >= 12
