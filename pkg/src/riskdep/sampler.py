"""Slice-within-Gibbs sampling of (theta, lambda_{1:T}, rho).

The univariate slice step works on log densities: the auxiliary height is
``logf(x0) - E`` with ``E ~ Exp(1)``, the interval is stepped out with
Neal's randomised split of the step budget, and rejected proposals shrink
the interval toward ``x0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, NamedTuple

import numpy as np

from .bayes_model import (
    BayesConfig,
    ChainState,
    Dataset,
    log_fc_lambda,
    log_fc_lambda_column,
    log_fc_rho,
    log_fc_theta,
    log_joint_posterior,
)
from .copulas import Family
from .distributions import RngStream
from .loss_model import empirical_quantile

GAMMA_FLOOR = 1e-3


@dataclass(frozen=True)
class SliceConfig:
    width: float = 1.0
    max_stepout: int = 50
    lower: float = 1e-8
    upper: float = 1e8
    max_shrink: int = 100

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("slice width must be positive")
        if not self.lower < self.upper:
            raise ValueError("slice bounds must satisfy lower < upper")
        if self.max_stepout < 1 or self.max_shrink < 1:
            raise ValueError("max_stepout and max_shrink must be positive")


class SliceResult(NamedTuple):
    x: float
    logf: float
    evals: int
    exhausted: bool


def slice_step(logf: Callable[[float], float], x0: float, cfg: SliceConfig, rng: RngStream, logf0=None) -> SliceResult:
    """One slice-sampling update of a univariate log density.

    ``logf0`` may pass a cached ``logf(x0)``. If the shrinkage budget runs
    out the chain stays at ``x0`` and the result is flagged ``exhausted``.
    """
    if logf0 is None:
        logf0 = logf(x0)
    evals = 0
    if not math.isfinite(logf0):
        raise ValueError(f"slice_step started at a point with log density {logf0}")
    y = logf0 - rng.standard_exponential()
    w, lo_b, hi_b = cfg.width, cfg.lower, cfg.upper
    left = x0 - w * rng.random()
    right = left + w
    n_left = int(cfg.max_stepout * rng.random())
    n_right = cfg.max_stepout - 1 - n_left
    while n_left > 0 and left > lo_b:
        evals += 1
        if not logf(left) > y:
            break
        left -= w
        n_left -= 1
    while n_right > 0 and right < hi_b:
        evals += 1
        if not logf(right) > y:
            break
        right += w
        n_right -= 1
    left = max(left, lo_b)
    right = min(right, hi_b)
    for _ in range(cfg.max_shrink):
        x1 = left + (right - left) * rng.random()
        f1 = logf(x1)
        evals += 1
        if f1 >= y:
            return SliceResult(x1, f1, evals, False)
        if x1 < x0:
            left = x1
        else:
            right = x1
    return SliceResult(x0, logf0, evals, True)


class BatchSliceResult(NamedTuple):
    x: np.ndarray
    logf: np.ndarray
    evals: int
    exhausted: np.ndarray


def slice_step_batch(logf, x0: np.ndarray, cfg: SliceConfig, rng: RngStream, logf0=None) -> BatchSliceResult:
    """Independent slice updates of every element of ``x0`` at once.

    ``logf`` maps a vector to the vector of elementwise log densities; element
    ``i`` of the output may depend only on element ``i`` of the input, i.e. the
    target must factorise over elements. ``evals`` counts vectorised calls.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    if logf0 is None:
        logf0 = logf(x0)
    logf0 = np.asarray(logf0, dtype=float)
    if not np.all(np.isfinite(logf0)):
        raise ValueError("slice_step_batch started at a point with infinite log density")
    evals = 0
    y = logf0 - rng.standard_exponential(n)
    w, lo_b, hi_b = cfg.width, cfg.lower, cfg.upper
    left = x0 - w * rng.random(n)
    right = left + w
    n_left = (cfg.max_stepout * rng.random(n)).astype(int)
    n_right = cfg.max_stepout - 1 - n_left
    for ends, budget, step in ((left, n_left, -w), (right, n_right, w)):
        active = (budget > 0) & ((ends > lo_b) if step < 0 else (ends < hi_b))
        while active.any():
            f = logf(ends)
            evals += 1
            active &= f > y
            ends[active] += step
            budget[active] -= 1
            active &= (budget > 0) & ((ends > lo_b) if step < 0 else (ends < hi_b))
    np.maximum(left, lo_b, out=left)
    np.minimum(right, hi_b, out=right)
    x1 = x0.copy()
    f1 = logf0.copy()
    pending = np.ones(n, dtype=bool)
    for _ in range(cfg.max_shrink):
        prop = left + (right - left) * rng.random(n)
        fp = logf(np.where(pending, prop, x0))
        evals += 1
        accept = pending & (fp >= y)
        x1[accept] = prop[accept]
        f1[accept] = fp[accept]
        pending &= ~accept
        if not pending.any():
            break
        below = pending & (prop < x0)
        above = pending & ~below
        left[below] = prop[below]
        right[above] = prop[above]
    return BatchSliceResult(x1, f1, evals, pending)


class Scan(str, Enum):
    """Gibbs scan order.

    ``random``: per iteration one uniformly chosen theta_j, one uniformly
    chosen lambda_{t,j}, then rho. ``systematic``: every theta_j, every
    lambda_{t,j}, then rho.
    """

    RANDOM = "random"
    SYSTEMATIC = "systematic"


def default_rho_slice(cfg: BayesConfig) -> SliceConfig:
    lo, hi = cfg.rho_prior_range
    width = 0.1 * (hi - lo) if hi > lo else 1.0
    return SliceConfig(width=width, lower=lo, upper=hi if hi > lo else lo + 1.0)


@dataclass(frozen=True)
class ChainConfig:
    """Chain length, scan order and tempering.

    ``update_rho`` estimates the copula parameter; otherwise it stays at the
    configured ``copula.rho``. ``tempering_period`` enables the sine schedule.
    ``rho_slice`` defaults to a width of a tenth of the prior range.
    """

    iterations: int
    burnin: int = 0
    scan: Scan = Scan.RANDOM
    tempering_period: int | None = None
    update_rho: bool = False
    keep_lambda: bool = False
    theta_slice: SliceConfig = SliceConfig()
    lambda_slice: SliceConfig = SliceConfig()
    rho_slice: SliceConfig | None = None
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "scan", Scan(self.scan))
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burnin < self.iterations:
            raise ValueError("burnin must satisfy 0 <= burnin < iterations")
        if self.tempering_period is not None and self.tempering_period < 2:
            raise ValueError("tempering period must be at least 2")

    def with_(self, **changes) -> "ChainConfig":
        return replace(self, **changes)


def tempering_schedule(iterations: int, period: int) -> np.ndarray:
    """gamma_l = min(sin(2 pi l / period) + 1, 1) for l = 1..iterations, floored at 1e-3."""
    ell = np.arange(1, iterations + 1)
    # reducing the phase first makes gamma exactly one at whole periods
    gamma = np.minimum(np.sin(2.0 * np.pi * (ell % period) / period) + 1.0, 1.0)
    return np.maximum(gamma, GAMMA_FLOOR)


@dataclass
class PosteriorSamples:
    """Retained chain states stored column-wise.

    ``theta`` is (n, J); ``rho`` is (n,); ``lam`` is (n, T, J) when the chain
    kept intensities, else None. ``iteration`` holds the 1-based iteration
    index of each retained state.
    """

    theta: np.ndarray
    rho: np.ndarray
    iteration: np.ndarray
    lam: np.ndarray | None = None
    evals: dict = field(default_factory=dict)
    exhausted: dict = field(default_factory=dict)
    updates: dict = field(default_factory=dict)
    total_iterations: int = 0
    rho_estimated: bool = False

    def __len__(self) -> int:
        return self.theta.shape[0]

    def __getitem__(self, i) -> ChainState:
        lam = self.lam[i].copy() if self.lam is not None else np.empty((0, self.theta.shape[1]))
        return ChainState(self.theta[i].copy(), lam, float(self.rho[i]))

    @property
    def n_cells(self) -> int:
        return self.theta.shape[1]

    def exhausted_fraction(self) -> float:
        n = sum(self.updates.values())
        return sum(self.exhausted.values()) / n if n else 0.0

    def columns(self) -> dict:
        """Named 1-d arrays: theta[1], ..., theta[J] and rho when estimated."""
        out = {f"theta[{j + 1}]": self.theta[:, j] for j in range(self.n_cells)}
        if self.rho_estimated:
            out["rho"] = self.rho
        return out


def _auto_init(data: Dataset, cfg: BayesConfig, ccfg: ChainConfig, rng: RngStream) -> ChainState:
    a, b, alpha = cfg.array("prior_a"), cfg.array("prior_b"), cfg.array("alpha")
    ts, ls = ccfg.theta_slice, ccfg.lambda_slice
    theta = np.clip(rng.gamma(a, 1.0 / b), ts.lower, ts.upper)
    lam = rng.gamma(alpha, theta / alpha, size=(data.n_years, data.n_cells))
    lam = np.clip(lam, ls.lower, ls.upper)
    if ccfg.update_rho and cfg.copula.family is not Family.INDEPENDENCE:
        lo, hi = cfg.rho_prior_range
        rho = 0.5 * (lo + hi)
    else:
        rho = cfg.copula.rho
    return ChainState(theta, lam, float(rho))


class _Runner:
    """Mutable chain state plus bookkeeping for one chain."""

    def __init__(self, data, cfg, ccfg, state, rng, update_lambda=True):
        self.data, self.cfg, self.ccfg, self.rng = data, cfg, ccfg, rng
        self.state = state
        self.update_lambda = update_lambda and data.n_years > 0
        self.update_rho = (
            ccfg.update_rho and cfg.copula.family is not Family.INDEPENDENCE and data.n_cells > 1
        )
        self.rho_slice = ccfg.rho_slice or default_rho_slice(cfg)
        self.evals = {"theta": 0, "lambda": 0, "rho": 0}
        self.exhausted = {"theta": 0, "lambda": 0, "rho": 0}
        self.updates = {"theta": 0, "lambda": 0, "rho": 0}

    def _step(self, key, logf, x0, scfg, gamma):
        f = logf if gamma == 1.0 else (lambda x: gamma * logf(x))
        res = slice_step(f, x0, scfg, self.rng)
        self.evals[key] += res.evals + 1
        self.updates[key] += 1
        self.exhausted[key] += res.exhausted
        return res.x

    def theta(self, j, gamma):
        logf = log_fc_theta(j, self.state, self.data, self.cfg)
        self.state.theta[j] = self._step("theta", logf, float(self.state.theta[j]), self.ccfg.theta_slice, gamma)

    def lam(self, t, j, gamma):
        logf = log_fc_lambda(t, j, self.state, self.data, self.cfg)
        self.state.lam[t, j] = self._step("lambda", logf, float(self.state.lam[t, j]), self.ccfg.lambda_slice, gamma)

    def lam_column(self, j, gamma):
        base = log_fc_lambda_column(j, self.state, self.data, self.cfg)
        logf = base if gamma == 1.0 else (lambda x: gamma * base(x))
        res = slice_step_batch(logf, self.state.lam[:, j], self.ccfg.lambda_slice, self.rng)
        self.state.lam[:, j] = res.x
        self.evals["lambda"] += (res.evals + 1) * self.data.n_years
        self.updates["lambda"] += self.data.n_years
        self.exhausted["lambda"] += int(res.exhausted.sum())

    def rho(self, gamma):
        logf = log_fc_rho(self.state, self.data, self.cfg)
        self.state.rho = self._step("rho", logf, float(self.state.rho), self.rho_slice, gamma)

    def iterate(self, gamma=1.0):
        data, rng = self.data, self.rng
        if self.ccfg.scan is Scan.RANDOM:
            self.theta(int(rng.integers(data.n_cells)), gamma)
            if self.update_lambda:
                self.lam(int(rng.integers(data.n_years)), int(rng.integers(data.n_cells)), gamma)
        else:
            for j in range(data.n_cells):
                self.theta(j, gamma)
            if self.update_lambda:
                for j in range(data.n_cells):
                    self.lam_column(j, gamma)
        if self.update_rho:
            self.rho(gamma)

    def run(self, gammas=None) -> PosteriorSamples:
        ccfg = self.ccfg
        n_iter, burnin = ccfg.iterations, ccfg.burnin
        keep = np.zeros(n_iter, dtype=bool)
        keep[burnin:] = True
        if gammas is not None:
            keep &= gammas == 1.0
        n_keep = int(keep.sum())
        j, t = self.data.n_cells, self.data.n_years
        theta = np.empty((n_keep, j))
        rho = np.empty(n_keep)
        lam = np.empty((n_keep, t, j)) if ccfg.keep_lambda else None
        k = 0
        for ell in range(n_iter):
            self.iterate(1.0 if gammas is None else float(gammas[ell]))
            if keep[ell]:
                theta[k] = self.state.theta
                rho[k] = self.state.rho
                if lam is not None:
                    lam[k] = self.state.lam
                k += 1
        return PosteriorSamples(
            theta=theta,
            rho=rho,
            iteration=np.flatnonzero(keep) + 1,
            lam=lam,
            evals=dict(self.evals),
            exhausted=dict(self.exhausted),
            updates=dict(self.updates),
            total_iterations=n_iter,
            rho_estimated=self.update_rho,
        )


def _prepare(data, cfg, ccfg, init, rng):
    if data.n_cells != cfg.n_cells:
        raise ValueError(f"dataset has {data.n_cells} cells but the configuration has {cfg.n_cells}")
    state = _auto_init(data, cfg, ccfg, rng) if init is None else init.copy()
    state.theta = np.array(state.theta, dtype=float)
    state.lam = np.array(state.lam, dtype=float).reshape(data.n_years, data.n_cells)
    if not math.isfinite(log_joint_posterior(state, data, cfg)):
        raise ValueError("initial state has zero posterior density")
    return state


def run_chain(data: Dataset, cfg: BayesConfig, ccfg: ChainConfig, rng: RngStream, init: ChainState | None = None):
    """Sample the joint posterior; ``init=None`` draws the start from the prior."""
    state = _prepare(data, cfg, ccfg, init, rng)
    gammas = tempering_schedule(ccfg.iterations, ccfg.tempering_period) if ccfg.tempering_period else None
    return _Runner(data, cfg, ccfg, state, rng).run(gammas)


def run_tempered_chain(data: Dataset, cfg: BayesConfig, ccfg: ChainConfig, rng: RngStream, init=None):
    """run_chain against the powered targets, keeping only gamma_l = 1 states."""
    if not ccfg.tempering_period:
        ccfg = ccfg.with_(tempering_period=1000)
    return run_chain(data, cfg, ccfg, rng, init)


def run_benchmark_chain(data: Dataset, cfg: BayesConfig, ccfg: ChainConfig, true_lambda, rng: RngStream):
    """Sample theta (and rho if requested) with the intensities fixed at ``true_lambda``."""
    true_lambda = np.asarray(true_lambda, dtype=float)
    if true_lambda.shape != data.counts.shape:
        raise ValueError(f"true_lambda shape {true_lambda.shape} does not match counts {data.counts.shape}")
    if np.any(~(true_lambda > 0)):
        raise ValueError("true_lambda must be positive")
    init = _auto_init(data, cfg, ccfg, rng)
    init.lam = true_lambda.copy()
    state = _prepare(data, cfg, ccfg, init, rng)
    gammas = tempering_schedule(ccfg.iterations, ccfg.tempering_period) if ccfg.tempering_period else None
    return _Runner(data, cfg, ccfg, state, rng, update_lambda=False).run(gammas)


@dataclass(frozen=True)
class Summary:
    mean: float
    sd: float
    q05: float
    q50: float
    q95: float
    mcse: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("mean", "sd", "q05", "q50", "q95", "mcse")}


def batch_means_mcse(x) -> float:
    """Monte Carlo standard error of the mean from floor(sqrt(n)) batch means."""
    x = np.asarray(x, dtype=float)
    n = x.size
    n_batches = int(math.isqrt(n))
    if n_batches < 2:
        return math.nan
    size = n // n_batches
    means = x[: n_batches * size].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def summarize_vector(x) -> Summary:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("cannot summarise an empty sample")
    q05, q50, q95 = empirical_quantile(x, [0.05, 0.5, 0.95])
    return Summary(float(x.mean()), float(x.std()), float(q05), float(q50), float(q95), batch_means_mcse(x))


def summarize(samples: PosteriorSamples) -> dict:
    """Mean, sd (population), 5/50/95% quantiles and MCSE per parameter."""
    if len(samples) == 0:
        raise ValueError("no retained samples to summarise")
    return {name: summarize_vector(col) for name, col in samples.columns().items()}
