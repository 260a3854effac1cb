"""Gaussian, Clayton, Gumbel and independence copulas.

Densities are evaluated in log space on arrays of shape ``(..., d)``.
Archimedean samplers use the frailty (Marshall-Olkin) construction:
``u_i = phi^{-1}(-log(v_i) / y)`` with ``y`` drawn from the law whose
Laplace transform is ``phi^{-1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy import special

from .distributions import RngStream, _positive_stable_unit

U_CLAMP = 1e-12


class Family(str, Enum):
    INDEPENDENCE = "independence"
    GAUSSIAN = "gaussian"
    CLAYTON = "clayton"
    GUMBEL = "gumbel"

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(f.value for f in cls)
            raise ValueError(f"unknown copula family {value!r}; expected one of {names}") from None


# Parameter ranges accepted by each family. Open ends are exclusive.
FAMILY_RANGE = {
    Family.INDEPENDENCE: (-math.inf, math.inf),
    Family.GAUSSIAN: (-1.0, 1.0),
    Family.CLAYTON: (0.0, math.inf),
    Family.GUMBEL: (1.0, math.inf),
}

# Point (or limit) of each family that gives the independence copula.
INDEPENDENCE_POINT = {
    Family.INDEPENDENCE: 0.0,
    Family.GAUSSIAN: 0.0,
    Family.CLAYTON: 0.0,
    Family.GUMBEL: 1.0,
}


def rho_in_family_range(family: Family, rho: float) -> bool:
    if family is Family.INDEPENDENCE:
        return True
    if not math.isfinite(rho):
        return False
    if family is Family.GAUSSIAN:
        return -1.0 < rho < 1.0
    if family is Family.CLAYTON:
        return rho > 0.0
    return rho >= 1.0


@dataclass(frozen=True)
class CopulaSpec:
    """Copula family plus its scalar dependence parameter.

    For a Gaussian copula in more than two dimensions a scalar ``rho`` means
    an exchangeable correlation matrix; pass ``corr_matrix`` for anything else.
    """

    family: Family = Family.INDEPENDENCE
    rho: float = 0.0
    corr_matrix: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        object.__setattr__(self, "rho", float(self.rho))
        if not rho_in_family_range(self.family, self.rho):
            raise ValueError(f"rho={self.rho} outside the valid range of the {self.family.value} copula")
        if self.corr_matrix is not None:
            if self.family is not Family.GAUSSIAN:
                raise ValueError("corr_matrix is only meaningful for the Gaussian copula")
            m = np.array(self.corr_matrix, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError("corr_matrix must be square")
            if not np.allclose(m, m.T) or not np.allclose(np.diag(m), 1.0):
                raise ValueError("corr_matrix must be symmetric with unit diagonal")
            try:
                np.linalg.cholesky(m)
            except np.linalg.LinAlgError:
                raise ValueError("corr_matrix must be positive definite") from None
            m.setflags(write=False)
            object.__setattr__(self, "corr_matrix", m)

    def with_rho(self, rho: float) -> "CopulaSpec":
        return CopulaSpec(self.family, rho, self.corr_matrix)

    def to_dict(self) -> dict:
        out = {"family": self.family.value, "rho": self.rho}
        if self.corr_matrix is not None:
            out["corr_matrix"] = self.corr_matrix.tolist()
        return out


INDEPENDENCE = CopulaSpec()


# ---------------------------------------------------------------------------
# Generators


def archimedean_generator(family, t, rho):
    """phi_C(t) = t^-rho - 1 (Clayton), phi_G(t) = (-ln t)^rho (Gumbel)."""
    family = Family.parse(family)
    t = np.asarray(t, dtype=float)
    if np.any(~((t > 0) & (t <= 1))):
        raise ValueError("generator argument must lie in (0, 1]")
    if family is Family.CLAYTON:
        out = np.expm1(-rho * np.log(t))
    elif family is Family.GUMBEL:
        out = (-np.log(t)) ** rho
    else:
        raise ValueError(f"{family.value} is not an Archimedean family")
    return out if out.ndim else float(out)


def archimedean_generator_inverse(family, s, rho):
    """phi_C^-1(s) = (1+s)^(-1/rho), phi_G^-1(s) = exp(-s^(1/rho))."""
    family = Family.parse(family)
    s = np.asarray(s, dtype=float)
    if np.any(~(s >= 0)):
        raise ValueError("inverse generator argument must be nonnegative")
    if family is Family.CLAYTON:
        out = np.exp(-np.log1p(s) / rho)
    elif family is Family.GUMBEL:
        out = np.exp(-(s ** (1.0 / rho)))
    else:
        raise ValueError(f"{family.value} is not an Archimedean family")
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Densities


def _gaussian_logpdf(u, rho, corr_matrix=None):
    x = special.ndtri(u)
    d = u.shape[-1]
    if corr_matrix is not None:
        chol = np.linalg.cholesky(corr_matrix)
        z = np.linalg.solve(chol, np.moveaxis(x, -1, 0).reshape(d, -1))
        quad = np.sum(z * z, axis=0).reshape(x.shape[:-1])
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        return -0.5 * logdet - 0.5 * (quad - np.sum(x * x, axis=-1))
    if d == 2:
        x1, x2 = x[..., 0], x[..., 1]
        r2 = rho * rho
        return -0.5 * math.log1p(-r2) - (r2 * (x1 * x1 + x2 * x2) - 2.0 * rho * x1 * x2) / (2.0 * (1.0 - r2))
    # exchangeable correlation (1-rho) I + rho 11'
    denom = 1.0 + (d - 1) * rho
    if denom <= 0:
        return np.full(u.shape[:-1], -np.inf)
    ss = np.sum(x * x, axis=-1)
    sx = np.sum(x, axis=-1)
    quad = (ss - rho / denom * sx * sx) / (1.0 - rho)
    logdet = (d - 1) * math.log1p(-rho) + math.log(denom)
    return -0.5 * logdet - 0.5 * (quad - ss)


def _logsumexp_last(z):
    """log(sum(exp(z))) over the last axis (cheaper than scipy's for small rows)."""
    if z.shape[-1] == 2:
        return np.logaddexp(z[..., 0], z[..., 1])
    zmax = z.max(axis=-1)
    return zmax + np.log(np.sum(np.exp(z - zmax[..., None]), axis=-1))


def _clayton_logpdf(u, rho):
    d = u.shape[-1]
    logu = np.log(u)
    # log(sum u_i^-rho - d + 1), stable for large rho
    big = _logsumexp_last(-rho * logu)
    log_base = big + np.log1p(-(d - 1) * np.exp(-big))
    const = sum(math.log1p(i * rho) for i in range(d))
    return (-d - 1.0 / rho) * log_base + (-rho - 1.0) * np.sum(logu, axis=-1) + const


@lru_cache(maxsize=None)
def _stirling_tables(d: int):
    s1 = [[0] * (d + 1) for _ in range(d + 1)]  # signed, first kind
    s2 = [[0] * (d + 1) for _ in range(d + 1)]  # second kind
    s1[0][0] = s2[0][0] = 1
    for n in range(1, d + 1):
        for k in range(1, n + 1):
            s1[n][k] = s1[n - 1][k - 1] - (n - 1) * s1[n - 1][k]
            s2[n][k] = s2[n - 1][k - 1] + k * s2[n - 1][k]
    return s1, s2


def _gumbel_poly_coeffs(d: int, a: float) -> np.ndarray:
    """a_{dk}(a), k=1..d, with (-1)^d psi^(d)(t) = psi(t) t^-d sum_k a_dk (t^a)^k."""
    s1, s2 = _stirling_tables(d)
    coeffs = np.empty(d)
    for k in range(1, d + 1):
        acc = sum(a**j * s1[d][j] * s2[j][k] for j in range(k, d + 1))
        coeffs[k - 1] = (-1) ** (d - k) * acc
    return np.maximum(coeffs, 0.0)


def _gumbel_logpdf(u, rho):
    d = u.shape[-1]
    mlog = -np.log(u)
    lml = np.log(mlog)
    if d == 2:
        # explicit bivariate form
        l1, l2 = lml[..., 0], lml[..., 1]
        log_s = np.logaddexp(rho * l1, rho * l2)
        s_inv = np.exp(-log_s / rho)  # S^(-1/rho)
        log_c = -np.exp(log_s / rho)
        return (
            log_c
            + mlog[..., 0]
            + mlog[..., 1]
            + 2.0 * (1.0 / rho - 1.0) * log_s
            + (rho - 1.0) * (l1 + l2)
            + np.log1p((rho - 1.0) * s_inv)
        )
    a = 1.0 / rho
    log_s = _logsumexp_last(rho * lml)
    x = np.exp(a * log_s)  # S^(1/rho)
    coeffs = _gumbel_poly_coeffs(d, a)
    poly = np.zeros_like(x)
    for k in range(d, 0, -1):
        poly = poly * x + coeffs[k - 1]
    poly = poly * x
    return (
        -x
        - d * log_s
        + np.log(poly)
        + d * math.log(rho)
        + (rho - 1.0) * np.sum(lml, axis=-1)
        + np.sum(mlog, axis=-1)
    )


def _log_density(u: np.ndarray, family: Family, rho: float, corr_matrix=None) -> np.ndarray:
    """Unchecked log density; ``u`` already clamped to the open cube."""
    if family is Family.INDEPENDENCE:
        return np.zeros(u.shape[:-1])
    if family is Family.GAUSSIAN:
        if corr_matrix is None and rho == 0.0:
            return np.zeros(u.shape[:-1])
        return _gaussian_logpdf(u, rho, corr_matrix)
    if family is Family.CLAYTON:
        return _clayton_logpdf(u, rho)
    if rho == 1.0:
        return np.zeros(u.shape[:-1])
    return _gumbel_logpdf(u, rho)


def copula_log_density(u, spec: CopulaSpec, strict: bool = False):
    """log c(u) for points ``u`` of shape ``(..., d)``.

    Coordinates are clamped to ``[1e-12, 1 - 1e-12]``; with ``strict=True`` a
    coordinate outside the open unit interval raises ``ValueError`` instead.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim == 0 or u.shape[-1] < 2:
        raise ValueError("copula arguments need a trailing dimension d >= 2")
    if strict and np.any(~((u > 0) & (u < 1))):
        raise ValueError("copula arguments must lie strictly inside (0, 1)")
    if np.any(np.isnan(u)):
        raise ValueError("copula arguments contain NaN")
    if spec.corr_matrix is not None and spec.corr_matrix.shape[0] != u.shape[-1]:
        raise ValueError("corr_matrix dimension does not match the argument dimension")
    u = np.clip(u, U_CLAMP, 1.0 - U_CLAMP)
    out = _log_density(u, spec.family, spec.rho, spec.corr_matrix)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Sampling


def _gaussian_rows(rho, n, d, rng, corr_matrix=None):
    if corr_matrix is not None:
        chol = np.linalg.cholesky(corr_matrix)
        return rng.standard_normal((n, d)) @ chol.T
    rho = np.asarray(rho, dtype=float)
    if d == 2:
        z = rng.standard_normal((n, 2))
        return np.column_stack([z[:, 0], rho * z[:, 0] + np.sqrt(1.0 - rho * rho) * z[:, 1]])
    if np.any(rho < 0):
        if rho.ndim:
            raise ValueError("per-row negative exchangeable correlation is not supported for d > 2")
        m = np.full((d, d), float(rho))
        np.fill_diagonal(m, 1.0)
        chol = np.linalg.cholesky(m)
        return rng.standard_normal((n, d)) @ chol.T
    r = rho.reshape(-1, 1) if rho.ndim else rho
    common = rng.standard_normal((n, 1))
    return np.sqrt(r) * common + np.sqrt(1.0 - r) * rng.standard_normal((n, d))


def _frailty(family: Family, rho, n, rng):
    rho = np.asarray(rho, dtype=float)
    if family is Family.CLAYTON:
        return rng.gamma(1.0 / rho, 1.0, size=n)
    # Gumbel: positive stable with index 1/rho, Laplace transform exp(-s^(1/rho)).
    # rho == 1 is the degenerate point mass at 1.
    alpha = np.broadcast_to(1.0 / rho, (n,))
    degenerate = alpha >= 1.0
    safe = np.where(degenerate, 0.5, alpha)
    y = _positive_stable_unit(safe, rng, size=n)
    return np.where(degenerate, 1.0, y)


def _sample_rows(family: Family, rho, n: int, d: int, rng: RngStream, corr_matrix=None) -> np.ndarray:
    """n draws of a d-dimensional copula; ``rho`` may be scalar or length-n."""
    if family is Family.INDEPENDENCE:
        return rng.uniform(size=(n, d))
    if family is Family.GAUSSIAN:
        return special.ndtr(_gaussian_rows(rho, n, d, rng, corr_matrix))
    y = _frailty(family, rho, n, rng)
    v = rng.uniform(size=(n, d))
    s = -np.log(v) / y[:, None]
    r = np.asarray(rho, dtype=float)
    r = r[:, None] if r.ndim else r
    if family is Family.CLAYTON:
        u = np.exp(-np.log1p(s) / r)
    else:
        u = np.exp(-(s ** (1.0 / r)))
    return u


def copula_sample(spec: CopulaSpec, d: int, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Draw from the copula; returns shape ``(d,)`` or ``(size, d)``."""
    if d < 2:
        raise ValueError("copula dimension must be at least 2")
    if spec.corr_matrix is not None and spec.corr_matrix.shape[0] != d:
        raise ValueError("corr_matrix dimension does not match d")
    n = 1 if size is None else int(size)
    u = _sample_rows(spec.family, spec.rho, n, d, rng, spec.corr_matrix)
    return u[0] if size is None else u


def one_factor_gaussian_profiles(loadings, marginal_quantiles, rng: RngStream, size: int | None = None):
    """Risk profiles driven by one common standard-normal factor.

    ``Y_i = rho_i * Omega + sqrt(1 - rho_i^2) * W_i``; profile ``i`` is
    ``marginal_quantiles[i](Phi(Y_i))``. Returns ``(profiles, Y)``.
    """
    loadings = np.asarray(loadings, dtype=float)
    if loadings.ndim != 1:
        raise ValueError("loadings must be a vector")
    if np.any(np.abs(loadings) > 1.0):
        raise ValueError("factor loadings must lie in [-1, 1]")
    if len(marginal_quantiles) != loadings.size:
        raise ValueError("need one marginal quantile function per loading")
    n = 1 if size is None else int(size)
    omega = rng.standard_normal((n, 1))
    w = rng.standard_normal((n, loadings.size))
    y = loadings * omega + np.sqrt(1.0 - loadings**2) * w
    u = np.clip(special.ndtr(y), U_CLAMP, 1.0 - U_CLAMP)
    profiles = np.column_stack([np.asarray(qf(u[:, i]), dtype=float) for i, qf in enumerate(marginal_quantiles)])
    if size is None:
        return profiles[0], y[0]
    return profiles, y
