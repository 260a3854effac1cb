"""Simulation studies at known truth and full predictive sampling.

An experiment generates replicate datasets from a known frequency model,
fits each prefix of years in Joint, Marginal and Benchmark mode, and
averages the posterior means and standard deviations over replicates.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .bayes_model import BayesConfig, CellPrior, Dataset
from .copulas import CopulaSpec, Family, _sample_rows
from .distributions import GammaParams, RngStream, gamma_quantile, rng_stream
from .loss_model import RiskCellParams, compound_losses, profiles_from_uniforms
from .sampler import ChainConfig, PosteriorSamples, run_benchmark_chain, run_chain, summarize

MODES = ("joint", "marginal", "benchmark")
DEFAULT_YEAR_SUBSETS = (1, 2, 5, 10, 15, 20)


@dataclass(frozen=True)
class Truth:
    """Generative frequency model: per-cell theta, alpha, volume, the copula
    coupling the intensities, and fixed expert opinions (K x J)."""

    theta: tuple
    alpha: tuple
    copula: CopulaSpec = CopulaSpec()
    volume: tuple | None = None
    experts: tuple = ()

    def __post_init__(self):
        j = len(self.theta)
        object.__setattr__(self, "theta", tuple(float(x) for x in self.theta))
        object.__setattr__(self, "alpha", tuple(float(x) for x in self.alpha))
        vol = (1.0,) * j if self.volume is None else tuple(float(x) for x in self.volume)
        object.__setattr__(self, "volume", vol)
        object.__setattr__(self, "experts", tuple(tuple(float(x) for x in row) for row in self.experts))
        if len(self.alpha) != j or len(vol) != j:
            raise ValueError("theta, alpha and volume must have one entry per cell")
        if any(not x > 0 for x in self.theta + self.alpha + vol):
            raise ValueError("theta, alpha and volume must be positive")
        if any(len(row) != j for row in self.experts):
            raise ValueError("each expert row needs one opinion per cell")

    @property
    def n_cells(self) -> int:
        return len(self.theta)

    def expert_matrix(self) -> np.ndarray:
        return np.array(self.experts, dtype=float).reshape(len(self.experts), self.n_cells)


def generate_dataset(truth: Truth, years: int, rng: RngStream):
    """Draw ``years`` of intensities and counts; returns (Dataset, true_lambda)."""
    if years < 1:
        raise ValueError("years must be positive")
    cells = [RiskCellParams(th, a, v) for th, a, v in zip(truth.theta, truth.alpha, truth.volume)]
    cop = truth.copula
    j = truth.n_cells
    if cop.family is Family.INDEPENDENCE or j == 1:
        u = rng.uniform(size=(years, j))
    else:
        u = _sample_rows(cop.family, cop.rho, years, j, rng, cop.corr_matrix)
    lam, _ = profiles_from_uniforms(cells, u, np.full_like(u, 0.5))
    counts = rng.poisson(np.array(truth.volume) * lam)
    return Dataset(counts, truth.expert_matrix()), lam


@dataclass(frozen=True)
class ExperimentPlan:
    """Replicated fits of one frequency model across families and year prefixes.

    ``families`` lists the (family, rho) truths; each is used both to
    generate data and, in Joint and Benchmark mode, as the fitted copula.
    """

    name: str
    theta: tuple
    alpha: tuple
    priors: tuple
    experts: tuple
    families: tuple
    year_subsets: tuple = DEFAULT_YEAR_SUBSETS
    replicates: int = 10
    modes: tuple = MODES
    chain: ChainConfig = ChainConfig(20_000, 4_000)
    estimate_rho: bool = False
    seed: int = 0

    def __post_init__(self):
        subsets = tuple(int(s) for s in self.year_subsets)
        object.__setattr__(self, "year_subsets", subsets)
        object.__setattr__(self, "priors", tuple(self.priors))
        object.__setattr__(self, "families", tuple((Family.parse(f), float(r)) for f, r in self.families))
        if not subsets or any(s < 1 for s in subsets) or list(subsets) != sorted(subsets):
            raise ValueError("year_subsets must be positive and nondecreasing")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        bad = set(self.modes) - set(MODES)
        if bad:
            raise ValueError(f"unknown modes {sorted(bad)}")
        if len(self.priors) != len(self.theta):
            raise ValueError("one prior per cell is required")
        for fam, rho in self.families:
            CopulaSpec(fam, rho)

    @property
    def years(self) -> int:
        return self.year_subsets[-1]

    def truth(self, family: Family, rho: float) -> Truth:
        return Truth(self.theta, self.alpha, CopulaSpec(family, rho), None, self.experts)

    def bayes_config(self, family: Family, rho: float) -> BayesConfig:
        return BayesConfig(self.priors, CopulaSpec(family, rho))

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "theta": list(self.theta),
            "alpha": list(self.alpha),
            "priors": [asdict(p) for p in self.priors],
            "experts": [list(r) for r in self.experts],
            "families": [[f.value, r] for f, r in self.families],
            "year_subsets": list(self.year_subsets),
            "replicates": self.replicates,
            "modes": list(self.modes),
            "estimate_rho": self.estimate_rho,
            "seed": self.seed,
        }
        chain = asdict(self.chain)
        chain["scan"] = self.chain.scan.value
        out["chain"] = chain
        return out


@dataclass
class RunResult:
    """Posterior summary of one chain group (one dataset, subset, mode)."""

    family: str
    rho_true: float
    replicate: int
    years: int
    mode: str
    parameter: str
    mean: float
    sd: float
    exhausted: int


@dataclass
class ExperimentReport:
    """Replicate-averaged posterior means and sds.

    ``rows`` holds one dict per (family, mode, years, parameter) with keys
    family, rho_true, mode, years, parameter, mean, sd, replicates,
    exhausted; ``runs`` keeps every per-replicate result.
    """

    plan: dict
    rows: list
    runs: list = field(default_factory=list)

    def lookup(self, family, mode, years, parameter, rho_true=None) -> dict:
        family = Family.parse(family).value
        for row in self.rows:
            if (row["family"], row["mode"], row["years"], row["parameter"]) != (family, mode, years, parameter):
                continue
            if rho_true is None or row["rho_true"] == float(rho_true):
                return row
        raise KeyError((family, mode, years, parameter, rho_true))

    def table_rows(self, parameter: str):
        """Rows in table layout: one line per (family, mode), one column per year subset."""
        subsets = self.plan["year_subsets"]
        seen = []
        for row in self.rows:
            key = (row["family"], row["rho_true"], row["mode"])
            if row["parameter"] == parameter and key not in seen:
                seen.append(key)
        for fam, rho, mode in seen:
            cells = {}
            for row in self.rows:
                if (row["family"], row["rho_true"], row["mode"], row["parameter"]) == (fam, rho, mode, parameter):
                    cells[row["years"]] = f"{row['mean']:.2f} ({row['sd']:.2f})"
            yield {"family": fam, "rho": rho, "mode": mode, **{str(s): cells.get(s, "") for s in subsets}}

    def to_dict(self) -> dict:
        return {"plan": self.plan, "rows": self.rows, "runs": [asdict(r) for r in self.runs]}


def _fit(task):
    """Fit one (family, replicate, subset, mode) task; returns RunResults."""
    plan, family, rho, rep, years, mode = task
    truth = plan.truth(family, rho)
    full, true_lambda = generate_dataset(truth, plan.years, rng_stream(plan.seed, "dataset", family.value, rep))
    data = full.first_years(years)
    cfg = plan.bayes_config(family, rho)
    ccfg = plan.chain.with_(update_rho=plan.estimate_rho and mode != "marginal")
    key = (plan.seed, "chain", family.value, rep, years, mode)
    results = []
    if mode == "marginal":
        for j in range(data.n_cells):
            s = run_chain(data.cell(j), cfg.cell_config(j), ccfg, rng_stream(*key, j))
            results.append((f"theta[{j + 1}]", summarize(s)["theta[1]"], s))
        exhausted = sum(sum(r[2].exhausted.values()) for r in results)
        return [
            RunResult(family.value, rho, rep, years, mode, name, sm.mean, sm.sd, exhausted) for name, sm, _ in results
        ]
    if mode == "joint":
        s = run_chain(data, cfg, ccfg, rng_stream(*key))
    else:
        s = run_benchmark_chain(data, cfg, ccfg, true_lambda[:years], rng_stream(*key))
    exhausted = sum(s.exhausted.values())
    return [
        RunResult(family.value, rho, rep, years, mode, name, sm.mean, sm.sd, exhausted)
        for name, sm in summarize(s).items()
    ]


def worker_count() -> int:
    """Worker processes, capped by the RISKDEP_THREADS environment variable."""
    n = os.cpu_count() or 1
    cap = os.environ.get("RISKDEP_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ValueError(f"RISKDEP_THREADS must be an integer, got {cap!r}") from None
    return n


def _tasks(plan: ExperimentPlan):
    for family, rho in plan.families:
        modes = ("marginal",) if family is Family.INDEPENDENCE else plan.modes
        for rep in range(plan.replicates):
            for years in plan.year_subsets:
                for mode in modes:
                    yield (plan, family, rho, rep, years, mode)


def _map(tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [_fit(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_fit, tasks, chunksize=1))


def _aggregate(plan: ExperimentPlan, runs: list) -> ExperimentReport:
    groups = {}
    for r in runs:
        groups.setdefault((r.family, r.rho_true, r.mode, r.years, r.parameter), []).append(r)
    rows = []
    for (fam, rho, mode, years, param), rs in groups.items():
        rows.append(
            {
                "family": fam,
                "rho_true": rho,
                "mode": mode,
                "years": years,
                "parameter": param,
                "mean": float(np.mean([r.mean for r in rs])),
                "sd": float(np.mean([r.sd for r in rs])),
                "replicates": len({r.replicate for r in rs}),
                "exhausted": int(sum(r.exhausted for r in rs)),
            }
        )
    return ExperimentReport(plan.to_dict(), rows, runs)


def run_experiment(plan: ExperimentPlan, workers: int | None = None) -> ExperimentReport:
    """Fit every (family, replicate, subset, mode) combination and average.

    Independence truths are fitted in Marginal mode only, since Joint
    estimation with the independence copula is the same model. Results do
    not depend on the worker count.
    """
    tasks = list(_tasks(plan))
    workers = worker_count() if workers is None else workers
    runs = [r for group in _map(tasks, workers) for r in group]
    return _aggregate(plan, runs)


def run_joint_rho_experiment(plan: ExperimentPlan, workers: int | None = None) -> ExperimentReport:
    """Joint estimation of theta and the copula parameter on a single dataset per family."""
    plan = ExperimentPlan(
        **{**{k: getattr(plan, k) for k in plan.__dataclass_fields__}, "replicates": 1, "modes": ("joint",), "estimate_rho": True}
    )
    tasks = []
    for family, rho in plan.families:
        for years in plan.year_subsets:
            tasks.append((plan, family, rho, 0, years, "joint"))
    workers = worker_count() if workers is None else workers
    runs = [r for group in _map(tasks, workers) for r in group]
    return _aggregate(plan, runs)


# ---------------------------------------------------------------------------
# Fixtures. The study settings give the Gamma prior of theta as (a, b) with
# b a scale (prior mean a * b), so b enters BayesConfig as the rate 1 / b.

EXAMPLE_FAMILIES = (
    (Family.INDEPENDENCE, 0.0),
    (Family.GAUSSIAN, 0.9),
    (Family.CLAYTON, 10.0),
    (Family.GUMBEL, 3.0),
)


def _priors(b_scales, alpha=(2.0, 2.0), a=2.0, xi=2.0):
    return tuple(CellPrior(a, 1.0 / b, al, xi, 1.0) for b, al in zip(b_scales, alpha))


def example1_plan(**overrides) -> ExperimentPlan:
    """Two cells with theta = (5, 5), experts (2, 8)."""
    base = dict(
        name="example1",
        theta=(5.0, 5.0),
        alpha=(2.0, 2.0),
        priors=_priors((2.5, 2.5)),
        experts=((2.0, 8.0),),
        families=EXAMPLE_FAMILIES,
    )
    base.update(overrides)
    return ExperimentPlan(**base)


def example2_plan(**overrides) -> ExperimentPlan:
    """A low- and a high-frequency cell: theta = (5, 10), experts (2, 13)."""
    base = dict(
        name="example2",
        theta=(5.0, 10.0),
        alpha=(2.0, 2.0),
        priors=_priors((2.5, 5.0)),
        experts=((2.0, 13.0),),
        families=EXAMPLE_FAMILIES,
    )
    base.update(overrides)
    return ExperimentPlan(**base)


def table5_plan(**overrides) -> ExperimentPlan:
    """Joint theta and rho estimation on one 20-year dataset per family."""
    base = dict(
        name="table5",
        theta=(5.0, 10.0),
        alpha=(2.0, 2.0),
        priors=_priors((2.5, 5.0)),
        experts=((2.0, 13.0),),
        families=((Family.GAUSSIAN, 0.0),) + EXAMPLE_FAMILIES[1:],
        replicates=1,
        modes=("joint",),
        chain=ChainConfig(150_000, 20_000),
        estimate_rho=True,
    )
    base.update(overrides)
    return ExperimentPlan(**base)


FIXTURES = {"example1": example1_plan, "example2": example2_plan, "table5": table5_plan}

DESK_SCALE = dict(replicates=10, chain=ChainConfig(20_000, 4_000))
FULL_SCALE = dict(replicates=20, chain=ChainConfig(50_000, 10_000))


def fixture_plan(name: str, full_scale: bool = False, **overrides) -> ExperimentPlan:
    if name not in FIXTURES:
        raise ValueError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}")
    scale = {}
    if name != "table5":
        scale = dict(FULL_SCALE if full_scale else DESK_SCALE)
    scale.update(overrides)
    return FIXTURES[name](**scale)


def run_fixture(plan: ExperimentPlan, workers: int | None = None) -> ExperimentReport:
    if plan.estimate_rho:
        return run_joint_rho_experiment(plan, workers)
    return run_experiment(plan, workers)


# ---------------------------------------------------------------------------
# Full predictive distribution


@dataclass
class PredictiveDraws:
    """Next-year counts (L, J), losses (L, J) when severities are given, and totals."""

    counts: np.ndarray
    losses: np.ndarray | None
    state_index: np.ndarray

    @property
    def total_counts(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def total_losses(self) -> np.ndarray | None:
        return None if self.losses is None else self.losses.sum(axis=1)


def predictive_indices(n_states: int, draws: int, rng: RngStream, resample: bool = False) -> np.ndarray:
    """Posterior states used for each predictive draw.

    Without resampling, ``draws`` evenly spaced retained states are used
    (each at most once), which needs ``draws <= n_states``. With resampling,
    states are drawn uniformly with replacement.
    """
    if n_states < 1:
        raise ValueError("no retained posterior states")
    if draws < 1:
        raise ValueError("draws must be positive")
    if resample:
        return rng.integers(n_states, size=draws)
    if draws > n_states:
        raise ValueError(f"{draws} draws exceed the {n_states} retained states; enable resampling")
    return np.floor(np.arange(draws) * (n_states / draws)).astype(np.int64)


def sample_full_predictive(
    samples: PosteriorSamples,
    cfg: BayesConfig,
    draws: int,
    rng: RngStream,
    severity=None,
    resample: bool = False,
    severity_copula: CopulaSpec = CopulaSpec(),
) -> PredictiveDraws:
    """Next-year counts (and losses) integrated over the posterior of theta and rho.

    For each draw the intensities are simulated from the copula at the drawn
    rho with Gamma(alpha, alpha/theta) marginals, then counts are Poisson.
    ``severity`` is a list of RiskCellParams whose severity fields define the
    loss model; when omitted only counts are produced.
    """
    idx = predictive_indices(len(samples), draws, rng, resample)
    j = cfg.n_cells
    if samples.n_cells != j:
        raise ValueError("samples and configuration disagree on the number of cells")
    theta = samples.theta[idx]
    rho = samples.rho[idx] if samples.rho_estimated else cfg.copula.rho
    family = cfg.copula.family
    if family is Family.INDEPENDENCE or j == 1:
        u = rng.uniform(size=(draws, j))
    else:
        u = _sample_rows(family, rho, draws, j, rng, cfg.copula.corr_matrix)
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    alpha = cfg.array("alpha")
    lam = np.column_stack([gamma_quantile(u[:, k], GammaParams(alpha[k], 1.0)) for k in range(j)])
    lam *= theta / alpha
    counts = rng.poisson(cfg.array("volume") * lam)
    losses = None
    if severity is not None:
        severity = list(severity)
        if len(severity) != j:
            raise ValueError("one severity specification per cell is required")
        if severity_copula.family is Family.INDEPENDENCE:
            v = rng.uniform(size=(draws, j))
        else:
            v = _sample_rows(severity_copula.family, severity_copula.rho, draws, j, rng, severity_copula.corr_matrix)
        _, psi = profiles_from_uniforms(severity, np.full_like(v, 0.5), v)
        sigma = np.array([c.severity_sigma for c in severity])
        losses = compound_losses(counts, psi, sigma, rng)
    return PredictiveDraws(counts, losses, idx)
