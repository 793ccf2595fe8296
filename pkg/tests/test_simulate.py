import numpy as np
import pytest

from markovapprox.covmodels import (ExpAbsCos, ExpQuad, ExpQuadCos, GaussianCurve, Grid,
                                    Polynomial)
from markovapprox.estimate import FullInverse, Identity, MarkovApprox
from markovapprox.simulate import (POLYNOMIAL_STUDIES, STUDIES, MonteCarloConfig, SweepConfig,
                                   convergence_profile, default_m_values, efficiency_ratio,
                                   format_stacked, monte_carlo_validate, run_sweep, study,
                                   sweep_csv_text, write_curves)

# det D on the default grid for the constant trend under exp(-a tau^2), a = 5, 20, 50,
# at m = 0, 1, 2, 3, 4, 5, 15; recorded on first run and frozen
CONSTANT_TREND_BASELINE = {
    5: [0.3282735768037504, 0.3303358144212203, 0.28936858175120317, 0.2789753888757489,
        0.26853912104822786, 0.2642459632931595, 0.2529400803141904],
    20: [0.17547108203712267, 0.17413052608816715, 0.16835467908966184, 0.16719197570993471,
         0.16631076228564723, 0.16597816917355063, 0.16575651944707875],
    50: [0.11383570605660262, 0.11280436694797591, 0.11238208204750862, 0.11231789658081415,
         0.1123057071027251, 0.11230380083741079, 0.11230349214614571],
}


@pytest.fixture(scope="module")
def polynomial_sweeps():
    return {name: run_sweep(study(name)) for name in POLYNOMIAL_STUDIES}


def dets(result, cell):
    return [result.lookup(cell, m).det for m in result.config.m_values]


# -- configuration ---------------------------------------------------------------------

def test_default_m_values():
    assert default_m_values(16) == (0, 1, 2, 3, 4, 5, 15)
    assert default_m_values(4) == (0, 1, 2, 3)
    assert default_m_values(1) == (0,)


def test_config_validation():
    with pytest.raises(ValueError):
        SweepConfig([], [Polynomial(0)])
    with pytest.raises(ValueError):
        SweepConfig([ExpQuad(3)], [Polynomial(0)], m_values=(0, 16))
    with pytest.raises(ValueError):
        SweepConfig([ExpQuad(3)], [Polynomial(0)], functionals="max")
    with pytest.raises(ValueError):
        MonteCarloConfig(samples=10)


def test_cells_enumerate_kernels_then_models():
    cfg = SweepConfig([ExpQuad(3), ExpQuad(5)], [Polynomial(0), Polynomial(1)])
    cells = cfg.cells
    assert [(c.index, c.kernel.decay, c.model.degree) for c in cells] == [
        (0, 3, 0), (1, 3, 1), (2, 5, 0), (3, 5, 1)]


def test_digest_tracks_content():
    a = SweepConfig([ExpQuad(3)], [Polynomial(0)])
    b = SweepConfig([ExpQuad(3)], [Polynomial(0)])
    c = SweepConfig([ExpQuad(3)], [Polynomial(1)])
    assert a.digest() == b.digest() != c.digest()


def test_unknown_study():
    with pytest.raises(ValueError):
        study("nope")
    assert set(POLYNOMIAL_STUDIES) <= set(STUDIES)


# -- sweep content ----------------------------------------------------------------------------

def test_white_noise_limit():
    r = run_sweep(SweepConfig([ExpQuad(1e4)], [Polynomial(0), Polynomial(2)]))
    for cell in r.config.cells:
        recs = r.cell_records(cell.index)
        d = [x.det for x in recs]
        assert max(d) / min(d) - 1 < 1e-12
        assert recs[0].psi_ratio_det == pytest.approx(1.0, abs=1e-12)


def test_strong_correlation_cell_collapses_between_one_and_two():
    r = run_sweep(SweepConfig([ExpQuadCos(3, 20)], [Polynomial(1)]))
    d1, d2 = r.lookup(0, 1).det, r.lookup(0, 2).det
    assert d1 / d2 > 10
    assert r.lookup(0, "blue").psi_ratio_det > 10


def test_records_layout(polynomial_sweeps):
    r = polynomial_sweeps["exp_quad_linear"]
    recs = r.cell_records(0)
    assert [x.m for x in recs] == ["ols", "blue", "0", "1", "2", "3", "4", "5", "15"]
    assert all(x.ok for x in r.records)
    assert len({(x.psi_ratio_det, x.psi_ratio_tr) for x in recs}) == 1


def test_endpoint_rows_match_blue(polynomial_sweeps):
    for r in polynomial_sweeps.values():
        for cell in r.config.cells:
            full, blue = r.lookup(cell.index, 15), r.lookup(cell.index, "blue")
            assert abs(full.det - blue.det) <= 1e-10 * blue.det
            assert abs(full.trace - blue.trace) <= 1e-10 * blue.trace


def test_efficiency_ratios_at_least_one(polynomial_sweeps):
    for r in polynomial_sweeps.values():
        for x in r.records:
            assert x.psi_ratio_det >= 1 - 1e-9
            assert x.psi_ratio_tr >= 1 - 1e-9


def test_efficiency_ratio_of_identical_matrices():
    D = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert efficiency_ratio(D, D) == (1.0, 1.0)


def test_constant_trend_baseline(polynomial_sweeps):
    r = polynomial_sweeps["exp_quad_constant"]
    for cell, a in zip(r.config.cells, (5, 20, 50)):
        assert dets(r, cell.index) == pytest.approx(CONSTANT_TREND_BASELINE[a], rel=1e-10)


def test_constant_trend_monotone_for_moderate_decay(polynomial_sweeps):
    r = polynomial_sweeps["exp_quad_constant"]
    for cell in r.config.cells[1:]:
        d = dets(r, cell.index)
        assert all(b <= a * (1 + 1e-12) for a, b in zip(d, d[1:]))


def test_constant_trend_slow_decay_rises_once_then_falls(polynomial_sweeps):
    # on the default grid the first-order weight is slightly worse than the diagonal one
    d = dets(polynomial_sweeps["exp_quad_constant"], 0)
    assert d[1] > d[0]
    assert all(b <= a for a, b in zip(d[1:], d[2:]))


def test_error_isolation():
    cfg = SweepConfig([ExpQuad(3), ExpQuadCos(10, 30)], [Polynomial(1)], grid=Grid.equidistant(32))
    r = run_sweep(cfg)
    bad, good = r.cell_records(0), r.cell_records(1)
    assert all(x.status.startswith("error:NotPositiveDefinite") for x in bad)
    assert all(x.ok for x in good)
    assert all(x.det is None for x in bad)


def test_jitter_rescues_ill_conditioned_cell():
    cfg = SweepConfig([ExpQuad(3)], [Polynomial(1)], grid=Grid.equidistant(32), jitter=1e-10)
    r = run_sweep(cfg)
    assert r.lookup(0, "blue").ok


def test_parallel_sweep_is_bit_identical():
    cfg = study("exp_quad_cos_quadratic")
    assert sweep_csv_text(run_sweep(cfg, jobs=1)) == sweep_csv_text(run_sweep(cfg, jobs=3))


# -- convergence profile ----------------------------------------------------------------------------

def test_profile_of_exact_markov_kernels():
    cfg = SweepConfig([ExpAbsCos(a, 0) for a in (0.5, 1, 3)], [Polynomial(0), Polynomial(1)])
    prof = convergence_profile(run_sweep(cfg))
    assert [m for _, m in prof.per_cell] == [1] * 6
    assert prof.histogram == {"1": 6}


def test_profile_tolerance_is_configurable():
    cfg = SweepConfig([ExpQuad(3)], [Polynomial(1)])
    r = run_sweep(cfg)
    loose = convergence_profile(r, tol=10.0).per_cell[0][1]
    strict = convergence_profile(r, tol=1e-14).per_cell[0][1]
    assert loose == 0 and strict == 15


# -- Monte Carlo -------------------------------------------------------------------------------------

def test_monte_carlo_white_noise_mean():
    rep = monte_carlo_validate(ExpQuad(1e4), Polynomial(0), Grid.equidistant(16), [Identity()],
                               samples=100_000, seed=3)
    row = rep.row("ols")
    assert row.analytic_trace == pytest.approx(1 / 16, rel=1e-12)
    assert row.empirical_trace == pytest.approx(1 / 16, rel=0.03)


def test_monte_carlo_blue_trace():
    rep = monte_carlo_validate(ExpAbsCos(1, 10), Polynomial(1), Grid.equidistant(16),
                               [FullInverse()], samples=10_000, seed=1, beta=(1.0, 0.5))
    row = rep.row("blue")
    assert row.rel_dev <= 0.05 and row.agrees
    assert row.max_bias_z < 4


def test_monte_carlo_separates_sandwich_from_short_form():
    rep = monte_carlo_validate(ExpAbsCos(1, 10), Polynomial(1), Grid.equidistant(16),
                               [MarkovApprox(2), FullInverse()], samples=10_000, seed=1)
    row = rep.row("markov(2)")
    assert row.rel_dev <= 0.05
    # common draws: cov(B_2 - B_blue) must equal D_2 - D_blue, which the short form sets to 0
    assert row.excess_analytic > 0
    assert row.excess_empirical == pytest.approx(row.excess_analytic, rel=0.1)
    assert rep.row("blue").excess_empirical == 0.0


def test_monte_carlo_is_seeded_by_cell():
    args = (ExpQuadCos(10, 30), Polynomial(0), Grid.equidistant(16), [FullInverse()])
    a = monte_carlo_validate(*args, samples=2000, seed=9, cell_index=0)
    b = monte_carlo_validate(*args, samples=2000, seed=9, cell_index=0)
    c = monte_carlo_validate(*args, samples=2000, seed=9, cell_index=1)
    assert a.to_text() == b.to_text() != c.to_text()


def test_monte_carlo_validates_input():
    with pytest.raises(ValueError):
        monte_carlo_validate(ExpQuad(3), Polynomial(0), Grid.equidistant(8), [Identity()], samples=10)
    with pytest.raises(ValueError):
        monte_carlo_validate(ExpQuad(3), Polynomial(1), Grid.equidistant(8), [Identity()],
                             samples=1000, beta=(1.0,))


def test_sweep_with_monte_carlo_block():
    cfg = SweepConfig([ExpAbsCos(1, 10)], [GaussianCurve(20)], m_values=(0, 2, 15),
                      monte_carlo=MonteCarloConfig(samples=2000, seed=4, weights=("blue", "markov:2")))
    r = run_sweep(cfg)
    assert len(r.monte_carlo) == 1
    assert [x.weight for x in r.monte_carlo[0].rows] == ["blue", "markov(2)"]


# -- output ------------------------------------------------------------------------------------------

def test_csv_layout():
    r = run_sweep(SweepConfig([ExpQuadCos(3, 20)], [Polynomial(1)], m_values=(0, 15)))
    lines = sweep_csv_text(r).splitlines()
    assert lines[0].startswith("# config_sha256=")
    assert lines[1] == "kernel,params,model,m,det,trace,psi_ratio_det,psi_ratio_tr,status"
    assert len(lines) == 2 + 4
    assert lines[2].startswith("exp_quad_cos,decay=3.0;freq=20.0,polynomial(degree=1),ols,")
    assert lines[-1].split(",")[4] == lines[3].split(",")[4]   # m = n-1 row equals blue row


def test_functional_selection_blanks_other_column():
    r = run_sweep(SweepConfig([ExpQuad(10)], [Polynomial(1)], functionals="det"))
    row = sweep_csv_text(r).splitlines()[2].split(",")
    assert row[4] != "" and row[5] == ""


def test_curve_files(tmp_path):
    r = run_sweep(SweepConfig([ExpQuad(10), ExpQuad(20)], [Polynomial(0)]))
    paths = write_curves(tmp_path, r)
    assert len(paths) == 2
    rows = [ln for ln in open(paths[0]).read().splitlines() if not ln.startswith("#")]
    assert [int(ln.split()[0]) for ln in rows] == list(r.config.m_values)


def test_stacked_table():
    r = run_sweep(SweepConfig([ExpQuad(10)], [Polynomial(1)]))
    text = format_stacked(r)
    lines = text.splitlines()
    assert lines[0].split()[-2:] == ["n-1", "ratio"]
    assert len(lines) == 3
