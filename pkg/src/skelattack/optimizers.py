"""Derivative-free minimizers over k pixel indices in [0, L).

All three optimizers share one propose/observe surface. CMA-ES and TPE are
continuous-domain methods, so proposals are drawn in R^k, squashed through
the logistic map into (0,1) per coordinate, and floored into indices; the
embedding is order-preserving and keeps the optimizers textbook-standard
internally. Every draw comes from the state's seeded generator, so a fixed
(seed, k, L, loss sequence) reproduces the proposal stream bit for bit.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np
from numpy.typing import NDArray

EIGEN_FLOOR = 1e-20  # numerical floor keeping the CMA covariance positive definite


def logistic(u: NDArray[np.float64]) -> NDArray[np.float64]:
    return 1.0 / (1.0 + np.exp(-u))


def logit(v: NDArray[np.float64]) -> NDArray[np.float64]:
    v = np.clip(v, 1e-12, 1 - 1e-12)
    return np.log(v / (1.0 - v))


class OptimizerError(RuntimeError):
    """Misuse of the propose/observe protocol."""


class _OptimizerBase:
    kind = "base"

    def __init__(self, k: int, domain_size: int, seed: int):
        if k < 1:
            raise OptimizerError("dimension k must be >= 1")
        if domain_size < 1:
            raise OptimizerError("domain size must be >= 1")
        self.k = int(k)
        self.L = int(domain_size)
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.history: list[tuple[NDArray[np.int64], float]] = []
        self._best: tuple[NDArray[np.int64], float] | None = None

    def propose(self) -> NDArray[np.int64]:
        raise NotImplementedError

    def observe(self, candidate, loss: float) -> None:
        loss = float(loss)
        if not math.isfinite(loss):
            raise ValueError(f"loss must be finite, got {loss}")
        cand = np.asarray(candidate, dtype=np.int64)
        if cand.shape != (self.k,):
            raise ValueError(f"candidate must have shape ({self.k},)")
        if cand.min() < 0 or cand.max() >= self.L:
            raise ValueError("candidate index outside [0, L)")
        self.history.append((cand, loss))
        if self._best is None or loss < self._best[1]:  # strict: ties keep the earliest
            self._best = (cand, loss)
        self._on_observe(cand, loss)

    def _on_observe(self, cand: NDArray[np.int64], loss: float) -> None:
        pass

    def best_so_far(self) -> tuple[NDArray[np.int64], float]:
        if self._best is None:
            raise OptimizerError("best_so_far before any observation")
        return self._best

    def _squash_to_indices(self, u: NDArray[np.float64]) -> NDArray[np.int64]:
        idx = np.floor(logistic(u) * self.L).astype(np.int64)
        return np.clip(idx, 0, self.L - 1)


class RandomSearch(_OptimizerBase):
    kind = "random"

    def propose(self) -> NDArray[np.int64]:
        return self.rng.integers(0, self.L, size=self.k, dtype=np.int64)


class CmaEsCore:
    """Minimal (mu/mu_w, lambda)-CMA-ES over R^n: CSA step-size control,
    rank-one plus rank-mu covariance update, eigen floor for stability."""

    def __init__(self, n: int, seed=None, sigma0: float = 0.3,
                 mean0: NDArray[np.float64] | None = None,
                 rng: np.random.Generator | None = None):
        self.n = n
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.lam = 4 + int(3 * math.log(n)) if n > 1 else 4
        self.mu = self.lam // 2
        w = math.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / float(np.sum(self.weights**2))
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.ds = 1 + 2 * max(0.0, math.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1,
                       2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

        self.mean = np.zeros(n) if mean0 is None else np.asarray(mean0, dtype=float).copy()
        self.sigma = float(sigma0)
        self.pc = np.zeros(n)
        self.ps = np.zeros(n)
        self.C = np.eye(n)
        self.generations = 0
        self._decompose()
        self._batch: list[tuple[NDArray[np.float64], float]] = []

    def _decompose(self) -> None:
        self.C = (self.C + self.C.T) / 2.0
        eigvals, eigvecs = np.linalg.eigh(self.C)
        eigvals = np.maximum(eigvals, EIGEN_FLOOR)
        self.C = (eigvecs * eigvals) @ eigvecs.T
        self._B = eigvecs
        self._D = np.sqrt(eigvals)
        self._inv_sqrt = (eigvecs / self._D) @ eigvecs.T

    def ask(self) -> NDArray[np.float64]:
        z = self.rng.standard_normal(self.n)
        return self.mean + self.sigma * (self._B @ (self._D * z))

    def tell(self, x: NDArray[np.float64], loss: float) -> None:
        self._batch.append((np.asarray(x, dtype=float), float(loss)))
        if len(self._batch) >= self.lam:
            self._update_generation()
            self._batch = []

    def _update_generation(self) -> None:
        self._batch.sort(key=lambda p: p[1])
        xs = np.array([x for x, _ in self._batch[: self.mu]])
        old_mean = self.mean
        ys = (xs - old_mean) / self.sigma
        y_w = self.weights @ ys
        self.mean = old_mean + self.sigma * y_w

        self.ps = (1 - self.cs) * self.ps + math.sqrt(
            self.cs * (2 - self.cs) * self.mueff) * (self._inv_sqrt @ y_w)
        self.generations += 1
        norm_ps = float(np.linalg.norm(self.ps))
        denom = math.sqrt(1 - (1 - self.cs) ** (2 * self.generations))
        hsig = 1.0 if norm_ps / denom / self.chi_n < 1.4 + 2 / (self.n + 1) else 0.0
        self.pc = (1 - self.cc) * self.pc + hsig * math.sqrt(
            self.cc * (2 - self.cc) * self.mueff) * y_w

        rank_mu = (ys.T * self.weights) @ ys
        self.C = ((1 - self.c1 - self.cmu) * self.C
                  + self.c1 * (np.outer(self.pc, self.pc)
                               + (1 - hsig) * self.cc * (2 - self.cc) * self.C)
                  + self.cmu * rank_mu)
        self.sigma *= math.exp((self.cs / self.ds) * (norm_ps / self.chi_n - 1))
        self._decompose()

    def min_eigenvalue(self) -> float:
        return float(np.min(self._D) ** 2)


class CmaEs(_OptimizerBase):
    """CMA-ES over the squashed index space.

    The default step size covers roughly 0.3 of the index range after the
    logistic map (the map's slope at the center is 1/4).
    """

    kind = "cmaes"

    def __init__(self, k: int, domain_size: int, seed: int, sigma0: float = 1.2):
        super().__init__(k, domain_size, seed)
        self.core = CmaEsCore(n=k, sigma0=sigma0, rng=self.rng)
        self._pending: deque[tuple[tuple[int, ...], NDArray[np.float64]]] = deque()

    def propose(self) -> NDArray[np.int64]:
        u = self.core.ask()
        idx = self._squash_to_indices(u)
        self._pending.append((tuple(idx.tolist()), u))
        return idx

    def _on_observe(self, cand: NDArray[np.int64], loss: float) -> None:
        key = tuple(cand.tolist())
        if self._pending and self._pending[0][0] == key:
            _, u = self._pending.popleft()
        else:
            # caller-fabricated candidate: embed it back into R^k
            u = logit((cand.astype(float) + 0.5) / self.L)
        self.core.tell(u, loss)


class Tpe(_OptimizerBase):
    """Tree-structured Parzen estimator, independent per dimension.

    Observed losses split at the gamma quantile into good/bad sets. Each
    set becomes an adaptive Parzen mixture: one Gaussian per observation
    with a bandwidth set by the distance to its sorted neighbors, plus a
    wide prior component at the domain center. Repeated observations at
    one spot therefore sharpen the bad density there and push proposals
    away, which is what keeps the search moving on discrete domains.
    Proposals maximize the good/bad density ratio over ``n_candidates``
    draws from the good mixture.
    """

    kind = "tpe"

    _PRIOR_MU = 0.5
    _PRIOR_SIGMA = 1.0

    def __init__(self, k: int, domain_size: int, seed: int, gamma: float = 0.25,
                 n_candidates: int = 24, n_startup: int = 10):
        super().__init__(k, domain_size, seed)
        self.gamma = gamma
        self.n_candidates = n_candidates
        self.n_startup = n_startup

    def _parzen(self, pts: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Mixture means and per-component bandwidths, prior included."""
        mus = np.sort(np.append(pts, self._PRIOR_MU), kind="stable")
        m = len(mus)
        if m == 1:
            return mus, np.array([self._PRIOR_SIGMA])
        gaps = np.diff(mus)
        sig = np.empty(m)
        sig[0] = gaps[0]
        sig[-1] = gaps[-1]
        if m > 2:
            sig[1:-1] = np.maximum(gaps[:-1], gaps[1:])
        min_sigma = self._PRIOR_SIGMA / min(100.0, 1.0 + m)
        sig = np.clip(sig, min_sigma, self._PRIOR_SIGMA)
        return mus, sig

    @staticmethod
    def _density(x: NDArray[np.float64], mus: NDArray[np.float64],
                 sig: NDArray[np.float64]) -> NDArray[np.float64]:
        d = (x[:, None] - mus[None, :]) / sig[None, :]
        kernels = np.exp(-0.5 * d * d) / (sig[None, :] * math.sqrt(2 * math.pi))
        return kernels.mean(axis=1)

    def propose(self) -> NDArray[np.int64]:
        n = len(self.history)
        if n < self.n_startup:
            return self.rng.integers(0, self.L, size=self.k, dtype=np.int64)

        losses = np.array([loss for _, loss in self.history])
        order = np.argsort(losses, kind="stable")
        n_good = max(1, math.ceil(self.gamma * n))
        good_rows = order[:n_good]
        bad_rows = order[n_good:]
        cands = np.array([c for c, _ in self.history], dtype=float)
        coords = (cands + 0.5) / self.L  # continuous relaxation of observed indices

        out = np.empty(self.k, dtype=np.int64)
        for d in range(self.k):
            g_mus, g_sig = self._parzen(coords[good_rows, d])
            b_mus, b_sig = self._parzen(coords[bad_rows, d])
            comp = self.rng.integers(0, len(g_mus), size=self.n_candidates)
            noise = self.rng.standard_normal(self.n_candidates)
            samples = g_mus[comp] + noise * g_sig[comp]
            samples = np.clip(samples, 1e-9, 1 - 1e-9)
            score = self._density(samples, g_mus, g_sig) / self._density(samples, b_mus, b_sig)
            pick = samples[int(np.argmax(score))]
            out[d] = min(self.L - 1, max(0, int(pick * self.L)))
        return out


OPTIMIZER_KINDS = {
    "random": RandomSearch,
    "cmaes": CmaEs,
    "tpe": Tpe,
}


def make_optimizer(kind: str, k: int, domain_size: int, seed: int,
                   **params) -> _OptimizerBase:
    try:
        cls = OPTIMIZER_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown optimizer kind {kind!r}; "
                         f"choose from {sorted(OPTIMIZER_KINDS)}") from None
    return cls(k, domain_size, seed, **params)
