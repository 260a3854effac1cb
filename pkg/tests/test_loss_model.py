import csv
import io
import math

import numpy as np
import pytest
from scipy import stats

import riskdep.loss_model as lm
from riskdep.copulas import INDEPENDENCE, CopulaSpec
from riskdep.distributions import rng_stream
from riskdep.loss_model import (
    DEFAULT_SWEEP_GRIDS,
    RiskCellParams,
    ScenarioSpec,
    compound_losses,
    dependence_sweep,
    empirical_quantile,
    simulate_annual_losses,
    spearman_rank_correlation,
)

CELL = RiskCellParams(theta_lambda=50.0, alpha=5.0)


def test_cell_validation_and_constructors():
    with pytest.raises(ValueError):
        RiskCellParams(-1.0, 5.0)
    with pytest.raises(ValueError):
        RiskCellParams(5.0, 0.0)
    with pytest.raises(ValueError):
        RiskCellParams(5.0, 2.0, severity_sigma=0.0)
    cell = RiskCellParams.from_gamma(5.0, 0.1)
    assert cell.theta_lambda == pytest.approx(50.0) and cell.alpha == 5.0
    assert cell.frequency_profile.rate == pytest.approx(0.1)
    assert CELL.mean_annual_loss == pytest.approx(50.0 * math.exp(2.0 + 0.08 + 0.5))


def test_scenario_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(())
    with pytest.raises(ValueError):
        ScenarioSpec((CELL,), frequency_copula=CopulaSpec("clayton", 2.0))
    with pytest.raises(ValueError):
        ScenarioSpec((CELL, CELL), years=0)
    with pytest.raises(ValueError):
        ScenarioSpec((CELL, CELL), frequency_copula=CopulaSpec("gaussian", 0.0, np.eye(3)))
    ScenarioSpec((CELL, CELL), joint_copula=CopulaSpec("gaussian", 0.0, np.eye(4)))


def test_simulated_table_shapes_and_rows():
    table = simulate_annual_losses(ScenarioSpec((CELL, CELL), years=4), rng_stream(1))
    assert table.counts.shape == table.losses.shape == table.intensity.shape == (4, 2)
    assert np.allclose(table.totals, table.losses.sum(axis=1))
    rows = list(table.rows())
    assert len(rows) == 4 * 3
    assert rows[2]["cell"] == "total" and rows[2]["count"] == int(table.counts[0].sum())
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]))
    writer.writeheader()
    writer.writerows(rows)
    assert buf.getvalue().splitlines()[0] == "year,cell,lambda,psi,count,loss,total"


def test_mean_annual_loss_matches_analytic():
    table = simulate_annual_losses(ScenarioSpec((CELL,)), rng_stream(2), years=200_000)
    z = table.losses[:, 0]
    assert abs(z.mean() - CELL.mean_annual_loss) < 4 * z.std() / math.sqrt(z.size)


def test_count_moments_are_negative_binomial():
    cell = RiskCellParams(5.0, 2.0, volume=3.0)
    n = simulate_annual_losses(ScenarioSpec((cell,)), rng_stream(3), years=400_000).counts[:, 0]
    mean, var = 15.0, 15.0 + 15.0**2 / 2.0
    assert abs(n.mean() / mean - 1) < 0.01
    assert abs(n.var() / var - 1) < 0.02


def test_zero_intensity_cell_never_loses():
    zero = RiskCellParams(0.0, 2.0)
    table = simulate_annual_losses(ScenarioSpec((zero, CELL)), rng_stream(4), years=1000)
    assert np.all(table.counts[:, 0] == 0) and np.all(table.losses[:, 0] == 0.0)
    assert np.all(table.intensity[:, 0] == 0.0)


def test_profile_marginals():
    cell = RiskCellParams(8.0, 3.0, severity_mu_psi=1.5, severity_omega_psi=0.3)
    spec = ScenarioSpec((cell, cell), CopulaSpec("clayton", 4.0), CopulaSpec("gumbel", 3.0))
    t = simulate_annual_losses(spec, rng_stream(5), years=50_000)
    gam = stats.gamma(3.0, scale=8.0 / 3.0).cdf
    for j in range(2):
        assert stats.kstest(t.intensity[:, j], gam).pvalue > 0.001
        assert stats.kstest(t.severity_location[:, j], stats.norm(1.5, 0.3).cdf).pvalue > 0.001


def test_profile_rank_dependence_is_copula_dependence():
    spec = ScenarioSpec((CELL, CELL), CopulaSpec("gaussian", 0.7), INDEPENDENCE)
    t = simulate_annual_losses(spec, rng_stream(6), years=100_000)
    target = 6 / math.pi * math.asin(0.35)
    assert abs(spearman_rank_correlation(t.intensity[:, 0], t.intensity[:, 1]) - target) < 0.01
    assert abs(spearman_rank_correlation(t.severity_location[:, 0], t.severity_location[:, 1])) < 0.01


def test_joint_copula_couples_frequency_and_severity():
    spec = ScenarioSpec((CELL, CELL), joint_copula=CopulaSpec("gaussian", 0.6))
    t = simulate_annual_losses(spec, rng_stream(7), years=50_000)
    target = 6 / math.pi * math.asin(0.3)
    assert abs(spearman_rank_correlation(t.intensity[:, 0], t.severity_location[:, 1]) - target) < 0.015


def test_compound_losses_single_events_and_zero():
    rng = rng_stream(8)
    counts = np.ones((100_000, 1), dtype=int)
    z = compound_losses(counts, np.full((100_000, 1), 1.0), np.array([0.5]), rng)
    assert stats.kstest(np.log(z[:, 0]), stats.norm(1.0, 0.5).cdf).pvalue > 0.001
    assert np.all(compound_losses(np.zeros((3, 2), dtype=int), np.zeros((3, 2)), np.ones(2), rng) == 0.0)


def test_compound_losses_independent_of_chunking(monkeypatch):
    counts = rng_stream(9).poisson(20.0, size=(50, 2))
    psi = np.zeros((50, 2))
    whole = compound_losses(counts, psi, np.ones(2), rng_stream(10))
    monkeypatch.setattr(lm, "_CHUNK_EVENTS", 7)
    chunked = compound_losses(counts, psi, np.ones(2), rng_stream(10))
    assert np.allclose(whole, chunked, rtol=1e-13)


def test_spearman_matches_scipy_with_ties():
    rng = rng_stream(11)
    x = rng.integers(0, 5, 200)
    y = x + rng.integers(0, 3, 200)
    assert spearman_rank_correlation(x, y) == pytest.approx(stats.spearmanr(x, y).statistic, abs=1e-12)
    assert spearman_rank_correlation([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        spearman_rank_correlation([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman_rank_correlation([1], [1])


def test_empirical_quantile():
    x = np.arange(11.0)
    assert empirical_quantile(x, 0.5) == 5.0
    assert np.allclose(empirical_quantile(x, [0.0, 0.25, 1.0]), [0.0, 2.5, 10.0])
    with pytest.raises(ValueError):
        empirical_quantile([], 0.5)
    with pytest.raises(ValueError):
        empirical_quantile(x, 1.5)


def test_default_grids_contain_independence_points():
    for grid in DEFAULT_SWEEP_GRIDS.values():
        assert list(grid) == sorted(grid)
    assert 0.0 in DEFAULT_SWEEP_GRIDS[lm.Family.GAUSSIAN]
    assert 1.0 in DEFAULT_SWEEP_GRIDS[lm.Family.GUMBEL]


def test_dependence_sweep_small_grid():
    template = ScenarioSpec((CELL, CELL))
    rows = dependence_sweep(template, "gumbel", [1.0, 2.0, 10.0], 5000, rng_stream(12))
    assert [(r.rho, r.scenario) for r in rows] == [(1.0, "freq"), (1.0, "sev"), (2.0, "freq"), (2.0, "sev"), (10.0, "freq"), (10.0, "sev")]
    freq = [r.spearman for r in rows if r.scenario == "freq"]
    sev = [r.spearman for r in rows if r.scenario == "sev"]
    assert abs(freq[0]) < 0.05 and abs(sev[0]) < 0.05
    assert freq[0] < freq[1] < freq[2] and sev[0] < sev[1] < sev[2]
    with pytest.raises(ValueError):
        dependence_sweep(template, "clayton", [-1.0], 10, rng_stream(12))
    with pytest.raises(ValueError):
        dependence_sweep(ScenarioSpec((CELL,)), "clayton", [1.0], 10, rng_stream(12))
