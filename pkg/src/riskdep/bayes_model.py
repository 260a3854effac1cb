"""Log densities of the hierarchical Poisson-Gamma frequency model.

Per cell ``j``: ``theta_j ~ Gamma(a_j, b_j)``; given ``theta``, the year-``t``
intensities ``lambda_t`` have Gamma(alpha_j, alpha_j/theta_j) marginals
coupled by a copula with parameter ``rho``; counts are
``n_tj ~ Poisson(V_j lambda_tj)``; expert opinions are
``delta_kj ~ Gamma(xi_j, xi_j/theta_j)``. ``rho`` has a flat prior on a
configured interval.

All functions return log densities up to additive constants that do not
depend on the chain state, and ``-inf`` outside the support rather than
raising, so that samplers can probe freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .copulas import CopulaSpec, Family, U_CLAMP, _log_density, rho_in_family_range

NEG_INF = -math.inf

# Flat-prior supports for the copula parameter.
DEFAULT_RHO_PRIOR_RANGE = {
    Family.INDEPENDENCE: (0.0, 0.0),
    Family.GAUSSIAN: (-1.0, 1.0),
    Family.CLAYTON: (0.0, 30.0),
    Family.GUMBEL: (1.0, 30.0),
}


@dataclass(frozen=True)
class CellPrior:
    prior_a: float
    prior_b: float
    alpha: float
    xi: float
    volume: float = 1.0

    def __post_init__(self):
        for name in ("prior_a", "prior_b", "alpha", "xi", "volume"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class BayesConfig:
    """Hyperparameters of all cells plus the copula used for the intensities.

    ``copula.rho`` is the value used when the copula parameter is held fixed;
    ``rho_prior_range`` is the support of its flat prior when it is estimated.
    """

    cells: tuple
    copula: CopulaSpec = CopulaSpec()
    rho_prior_range: tuple | None = None
    _arrays: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        if not self.cells:
            raise ValueError("BayesConfig needs at least one cell")
        fam = self.copula.family
        rng_ = self.rho_prior_range if self.rho_prior_range is not None else DEFAULT_RHO_PRIOR_RANGE[fam]
        lo, hi = float(rng_[0]), float(rng_[1])
        if lo > hi:
            raise ValueError("rho_prior_range must be an ordered interval")
        valid = {
            Family.INDEPENDENCE: (-math.inf, math.inf),
            Family.GAUSSIAN: (-1.0, 1.0),
            Family.CLAYTON: (0.0, 30.0),
            Family.GUMBEL: (1.0, 30.0),
        }[fam]
        if lo < valid[0] or hi > valid[1]:
            raise ValueError(f"rho prior range [{lo}, {hi}] exceeds the {fam.value} range {list(valid)}")
        object.__setattr__(self, "rho_prior_range", (lo, hi))
        arrays = {
            name: np.array([getattr(c, name) for c in self.cells], dtype=float)
            for name in ("prior_a", "prior_b", "alpha", "xi", "volume")
        }
        arrays["lgamma_alpha"] = special.gammaln(arrays["alpha"])
        arrays["lgamma_xi"] = special.gammaln(arrays["xi"])
        object.__setattr__(self, "_arrays", arrays)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def array(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def with_copula(self, copula: CopulaSpec, rho_prior_range=None) -> "BayesConfig":
        return BayesConfig(self.cells, copula, rho_prior_range)

    def cell_config(self, j: int) -> "BayesConfig":
        """Single-cell configuration for cell ``j`` (independence copula)."""
        return BayesConfig((self.cells[j],))

    def log_rho_prior(self, rho: float) -> float:
        lo, hi = self.rho_prior_range
        if self.copula.family is Family.INDEPENDENCE:
            return 0.0
        if not (lo <= rho <= hi) or not rho_in_family_range(self.copula.family, rho):
            return NEG_INF
        return 0.0


@dataclass
class Dataset:
    """Observed annual counts (T x J) and expert opinions (K x J)."""

    counts: np.ndarray
    experts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValueError("counts must be a T x J matrix")
        if counts.size and (np.any(counts < 0) or np.any(counts != np.floor(counts))):
            raise ValueError("counts must be nonnegative integers")
        self.counts = counts.astype(np.int64)
        experts = np.asarray(self.experts, dtype=float)
        if experts.size == 0:
            experts = np.zeros((0, self.counts.shape[1]))
        if experts.ndim != 2 or experts.shape[1] != self.counts.shape[1]:
            raise ValueError("experts must be a K x J matrix with the same J as counts")
        if np.any(~(experts > 0)):
            raise ValueError("expert opinions must be positive")
        self.experts = experts

    @property
    def n_years(self) -> int:
        return self.counts.shape[0]

    @property
    def n_cells(self) -> int:
        return self.counts.shape[1]

    @property
    def n_experts(self) -> int:
        return self.experts.shape[0]

    def first_years(self, n: int) -> "Dataset":
        return Dataset(self.counts[:n], self.experts)

    def cell(self, j: int) -> "Dataset":
        return Dataset(self.counts[:, j : j + 1], self.experts[:, j : j + 1])


@dataclass
class ChainState:
    theta: np.ndarray
    lam: np.ndarray
    rho: float

    def copy(self) -> "ChainState":
        return ChainState(self.theta.copy(), self.lam.copy(), float(self.rho))


def _check(data: Dataset, cfg: BayesConfig):
    if data.n_cells != cfg.n_cells:
        raise ValueError(f"dataset has {data.n_cells} cells but the configuration has {cfg.n_cells}")


def pit(lam, theta, alpha):
    """G(lambda | theta): Gamma(alpha, alpha/theta) CDF of the intensities."""
    return special.gammainc(alpha, alpha * lam / theta)


def _clamp(u):
    return np.minimum(np.maximum(u, U_CLAMP), 1.0 - U_CLAMP)


def _copula_terms(u: np.ndarray, family: Family, rho: float, corr=None) -> np.ndarray:
    return _log_density(_clamp(u), family, rho, corr)


def _lambda_prior_terms(lam, theta, alpha, lgamma_alpha):
    """Gamma(alpha, alpha/theta) log pdf, elementwise."""
    rate = alpha / theta
    return alpha * np.log(rate) - lgamma_alpha + (alpha - 1.0) * np.log(lam) - rate * lam


def _expert_terms(delta, theta, xi, lgamma_xi):
    rate = xi / theta
    return xi * np.log(rate) - lgamma_xi + (xi - 1.0) * np.log(delta) - rate * delta


def _theta_prior_terms(theta, a, b):
    return a * np.log(b) - special.gammaln(a) + (a - 1.0) * np.log(theta) - b * theta


def log_joint_posterior(state: ChainState, data: Dataset, cfg: BayesConfig) -> float:
    """Log of the unnormalised joint posterior of (theta, lambda_{1:T}, rho)."""
    _check(data, cfg)
    theta = np.asarray(state.theta, dtype=float)
    lam = np.asarray(state.lam, dtype=float).reshape(data.n_years, data.n_cells)
    if np.any(~(theta > 0)) or np.any(~(lam > 0)):
        return NEG_INF
    log_rho = cfg.log_rho_prior(state.rho)
    if log_rho == NEG_INF:
        return NEG_INF
    alpha, vol = cfg.array("alpha"), cfg.array("volume")
    total = float(np.sum(_theta_prior_terms(theta, cfg.array("prior_a"), cfg.array("prior_b"))))
    if data.n_experts:
        total += float(np.sum(_expert_terms(data.experts, theta, cfg.array("xi"), cfg.array("lgamma_xi"))))
    if data.n_years:
        mean = vol * lam
        total += float(np.sum(special.xlogy(data.counts, mean) - mean - special.gammaln(data.counts + 1.0)))
        total += float(np.sum(_lambda_prior_terms(lam, theta, alpha, cfg.array("lgamma_alpha"))))
        if cfg.copula.family is not Family.INDEPENDENCE and data.n_cells > 1:
            u = pit(lam, theta, alpha)
            total += float(np.sum(_copula_terms(u, cfg.copula.family, state.rho, cfg.copula.corr_matrix)))
    return total + log_rho


def _uses_copula(cfg: BayesConfig, data: Dataset) -> bool:
    return cfg.copula.family is not Family.INDEPENDENCE and data.n_cells > 1


def log_fc_theta(j: int, state: ChainState, data: Dataset, cfg: BayesConfig):
    """Full conditional of theta_j (as a function of theta_j), up to a constant."""
    _check(data, cfg)
    a, b = cfg.array("prior_a")[j], cfg.array("prior_b")[j]
    alpha = cfg.array("alpha")[j]
    xi = cfg.array("xi")[j]
    n_years = data.n_years
    lam_j = np.asarray(state.lam, dtype=float)[:, j] if n_years else np.zeros(0)
    sum_lam = float(lam_j.sum())
    k = data.n_experts
    sum_delta = float(data.experts[:, j].sum()) if k else 0.0
    # collect powers of theta: theta^(a-1-T alpha-K xi) exp(-b theta - (alpha sum_lam + xi sum_delta)/theta)
    power = a - 1.0 - n_years * alpha - k * xi
    inv_coef = alpha * sum_lam + xi * sum_delta
    copula = _uses_copula(cfg, data) and n_years > 0
    if copula:
        u = _clamp(pit(np.asarray(state.lam, dtype=float), np.asarray(state.theta, dtype=float), cfg.array("alpha")))
        family, rho, corr = cfg.copula.family, float(state.rho), cfg.copula.corr_matrix
        scaled = alpha * lam_j

    def logf(th: float) -> float:
        if not th > 0:
            return NEG_INF
        out = power * math.log(th) - b * th - inv_coef / th
        if copula:
            u[:, j] = _clamp(special.gammainc(alpha, scaled / th))
            out += float(np.sum(_log_density(u, family, rho, corr)))
        return out

    return logf


def log_fc_lambda(t: int, j: int, state: ChainState, data: Dataset, cfg: BayesConfig):
    """Full conditional of lambda_{t,j}, up to a constant."""
    _check(data, cfg)
    alpha = cfg.array("alpha")[j]
    theta_j = float(state.theta[j])
    rate = alpha / theta_j
    vol = cfg.array("volume")[j]
    n = float(data.counts[t, j])
    copula = _uses_copula(cfg, data)
    if copula:
        u = pit(np.asarray(state.lam[t], dtype=float), np.asarray(state.theta, dtype=float), cfg.array("alpha"))
        family, rho, corr = cfg.copula.family, float(state.rho), cfg.copula.corr_matrix

    def logf(x: float) -> float:
        if not x > 0:
            return NEG_INF
        out = (n + alpha - 1.0) * math.log(x) - (vol + rate) * x
        if copula:
            u[j] = special.gammainc(alpha, rate * x)
            out += float(_copula_terms(u[None, :], family, rho, corr)[0])
        return out

    return logf


def log_fc_lambda_column(j: int, state: ChainState, data: Dataset, cfg: BayesConfig):
    """Vectorised full conditionals of lambda_{1:T, j}.

    Years are conditionally independent given theta, rho and the other cells,
    so element ``t`` of the returned function's output is the log full
    conditional of ``lambda_{t,j}`` evaluated at ``x[t]``.
    """
    _check(data, cfg)
    alpha = cfg.array("alpha")[j]
    rate = alpha / float(state.theta[j])
    vol = cfg.array("volume")[j]
    n = data.counts[:, j].astype(float)
    copula = _uses_copula(cfg, data)
    if copula:
        u = pit(np.asarray(state.lam, dtype=float), np.asarray(state.theta, dtype=float), cfg.array("alpha"))
        family, rho, corr = cfg.copula.family, float(state.rho), cfg.copula.corr_matrix

    def logf(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pos = x > 0
        xs = np.where(pos, x, 1.0)
        out = (n + alpha - 1.0) * np.log(xs) - (vol + rate) * xs
        if copula:
            u[:, j] = special.gammainc(alpha, rate * xs)
            out = out + _copula_terms(u, family, rho, corr)
        return np.where(pos, out, NEG_INF)

    return logf


def log_fc_rho(state: ChainState, data: Dataset, cfg: BayesConfig):
    """Full conditional of the copula parameter, up to a constant."""
    _check(data, cfg)
    family, corr = cfg.copula.family, cfg.copula.corr_matrix
    copula = _uses_copula(cfg, data) and data.n_years > 0
    if copula:
        u = _clamp(pit(np.asarray(state.lam, dtype=float), np.asarray(state.theta, dtype=float), cfg.array("alpha")))

    def logf(r: float) -> float:
        prior = cfg.log_rho_prior(r)
        if prior == NEG_INF or not copula:
            return prior
        return float(np.sum(_log_density(u, family, r, corr)))

    return logf


def single_cell_log_marginal_posterior(theta, data: Dataset, cfg: BayesConfig):
    """Closed-form log posterior of theta for one cell with lambda integrated out.

    (alpha + theta V)^-(T alpha + sum n) theta^(a - K xi + sum n - 1)
    exp(-theta b - (xi / theta) sum delta), up to a constant.
    """
    if data.n_cells != 1 or cfg.n_cells != 1:
        raise ValueError("single_cell_log_marginal_posterior needs a one-cell dataset and configuration")
    c = cfg.cells[0]
    theta = np.asarray(theta, dtype=float)
    sum_n = float(data.counts.sum())
    k = data.n_experts
    sum_delta = float(data.experts.sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (
            -(data.n_years * c.alpha + sum_n) * np.log(c.alpha + theta * c.volume)
            + (c.prior_a - k * c.xi + sum_n - 1.0) * np.log(theta)
            - theta * c.prior_b
            - c.xi * sum_delta / theta
        )
    out = np.where(theta > 0, out, NEG_INF)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Moments:
    mean: float
    variance: float


def prior_moments(cfg: BayesConfig, j: int) -> dict:
    """Prior mean and variance of theta, lambda_t and N_t for cell ``j``."""
    c = cfg.cells[j]
    a, b, alpha, v = c.prior_a, c.prior_b, c.alpha, c.volume
    m = a / b
    var_theta = a / b**2
    var_lam = m**2 / alpha + (1.0 / alpha + 1.0) * a / b**2
    var_n = v * m + v**2 * m**2 / alpha + v**2 * (1.0 / alpha + 1.0) * a / b**2
    return {
        "theta": Moments(m, var_theta),
        "lambda": Moments(m, var_lam),
        "count": Moments(v * m, var_n),
    }
