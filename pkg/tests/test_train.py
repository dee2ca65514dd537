import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from oracles import fd_gradient, naive_loglik, poisson_loglik_cellwise
from synth import make_units, make_weather, random_small_instance, wrap_dataset
from gridshock.errors import DivergenceError, ValidationError
from gridshock.model import MlpParams, ModelParams, intensity_field
from gridshock.simulate import simulate_paths
from gridshock.topology import EdgeWeights, Graph, build_candidate_graph
from gridshock.train import FitConfig, FitReport, fd_audit, fit, gradients, initialize, log_likelihood, project
from gridshock.weather_effect import DecayConfig, WeatherScaler


# -- log-likelihood --------------------------------------------------------------


def test_loglik_exact_on_unit_rate_cells():
    # gamma tuned so lambda = 1 in every cell without history:
    # ll = sum(-1 + N log 1) = -T exactly
    eps = 1e-3
    g = Graph(num_nodes=1, edges=())
    params = ModelParams(
        alpha=EdgeWeights(graph=g),
        beta=np.array([1.0]),
        gamma=np.array([(1.0 - eps) / math.log(2.0)]),
        decay=DecayConfig(omega=np.array([0.2]), window_slots=3),
        mlp=MlpParams.zeros(1, hidden=(2,)),
        scaler=WeatherScaler(mean=np.zeros(1), scale=np.ones(1)),
        eps=eps,
    )
    counts = np.array([[0, 3]])
    ds = wrap_dataset(counts, np.zeros((1, 2, 1)))
    assert log_likelihood(params, ds) == pytest.approx(-2.0, rel=1e-12)


def test_loglik_matches_cellwise_formula_and_oracle():
    rng = np.random.default_rng(17)
    for _ in range(4):
        params, counts, weather = random_small_instance(rng, K=4, T=10, M=2, n_edges=4)
        ds = wrap_dataset(counts, weather)
        ll = log_likelihood(params, ds)
        lam = intensity_field(params, counts, weather).lam
        assert ll == pytest.approx(poisson_loglik_cellwise(lam, counts), rel=1e-12)
        assert ll == pytest.approx(naive_loglik(params, counts, weather), rel=1e-10)


# -- gradients ---------------------------------------------------------------------


def test_gradients_match_finite_differences_of_oracle():
    rng = np.random.default_rng(19)
    for _ in range(3):
        params, counts, weather = random_small_instance(rng, K=3, T=7, M=2, n_edges=3, hidden=(3,))
        ds = wrap_dataset(counts, weather)
        g = gradients(params, ds)

        flat0 = params.mlp.flatten()

        def mlp_ll(flat):
            q = params.copy()
            new = q.mlp.unflatten_like(flat)
            q.mlp.weights, q.mlp.biases = new.weights, new.biases
            return naive_loglik(q, counts, weather)

        assert_allclose(g.mlp.flatten(), fd_gradient(mlp_ll, flat0), rtol=2e-5, atol=1e-7)

        def omega_ll(om):
            q = params.copy()
            q.decay.omega[:] = om
            return naive_loglik(q, counts, weather)

        assert_allclose(g.omega, fd_gradient(omega_ll, params.decay.omega.copy()), rtol=2e-5, atol=1e-7)

        def beta_ll(b):
            q = params.copy()
            q.beta[:] = b
            return naive_loglik(q, counts, weather)

        assert_allclose(g.beta, fd_gradient(beta_ll, params.beta.copy()), rtol=2e-5, atol=1e-7)


def test_gradient_norm_covers_all_groups():
    rng = np.random.default_rng(20)
    params, counts, weather = random_small_instance(rng, K=3, T=6, M=1, n_edges=3)
    g = gradients(params, wrap_dataset(counts, weather))
    manual = math.sqrt(
        float((g.alpha**2).sum())
        + float((g.beta**2).sum())
        + float((g.gamma**2).sum())
        + float((g.omega**2).sum())
        + float((g.mlp.flatten() ** 2).sum())
    )
    assert g.norm() == pytest.approx(manual, rel=1e-12)


# -- projection ----------------------------------------------------------------------


def test_project_clamps_and_resolves_loops():
    g = Graph(num_nodes=3, edges=((0, 1), (1, 0), (1, 2)))
    w = EdgeWeights(graph=g)
    w.alpha[1, 0] = 0.6  # 0 -> 1
    w.alpha[0, 1] = 0.9  # 1 -> 0 forms a loop; larger, so it survives
    w.alpha[2, 1] = -0.3  # negative coupling
    params = ModelParams(
        alpha=w,
        beta=np.array([0.5, -1.0, 2.0]),
        gamma=np.array([-0.2, 0.1, 0.3]),
        decay=DecayConfig(omega=np.array([-0.05, 0.4])),
        mlp=MlpParams.zeros(2, hidden=(2,)),
        scaler=WeatherScaler(mean=np.zeros(2), scale=np.ones(2)),
    )
    fixed, n = project(params)
    assert n > 0
    fixed.check_invariants()
    assert fixed.alpha.alpha[0, 1] == 0.9 and fixed.alpha.alpha[1, 0] == 0.0
    assert fixed.alpha.alpha[2, 1] == 0.0
    assert fixed.beta[1] == 0.0 and fixed.gamma[0] == 0.0 and fixed.decay.omega[0] == 0.0
    # untouched coordinates pass through
    assert fixed.beta[2] == 2.0 and fixed.gamma[2] == 0.3 and fixed.decay.omega[1] == 0.4
    again, n2 = project(fixed)
    assert n2 == 0
    assert_array_equal(again.alpha.alpha, fixed.alpha.alpha)
    # input untouched
    assert params.beta[1] == -1.0


# -- initialization -------------------------------------------------------------------


def _tiny_dataset(seed=0, K=4, T=60, M=2):
    rng = np.random.default_rng(seed)
    weather = make_weather(K, T, M, seed=seed, storm_plan={0: [(20, 32)]})
    counts = rng.poisson(0.4, (K, T))
    return wrap_dataset(counts, weather, seed=seed)


def test_initialize_defaults():
    ds = _tiny_dataset()
    graph = build_candidate_graph(ds.units, k_neighbors=2, max_km=200.0)
    params = initialize(ds, graph, seed=3)
    params.check_invariants()
    assert_array_equal(params.beta, np.full(4, 0.5))
    assert_array_equal(params.gamma, np.full(4, 0.1))
    assert_array_equal(params.decay.omega, np.full(2, 0.1))
    off = params.alpha.off_diagonal()
    assert set(np.unique(off)) <= {0.0, 0.01}
    # two-way candidates were pruned to one direction
    assert not (off * off.T != 0).any()
    assert params.scaler == WeatherScaler.fit(ds.weather)
    other = initialize(ds, graph, seed=4)
    assert not np.array_equal(params.mlp.weights[0], other.mlp.weights[0])


def test_initialize_respects_config_shape_knobs():
    ds = _tiny_dataset()
    graph = build_candidate_graph(ds.units, k_neighbors=2, max_km=200.0)
    cfg = FitConfig(hidden_sizes=(5,), window_slots=6, trig_window=12, eps=0.02)
    params = initialize(ds, graph, cfg=cfg)
    assert params.mlp.weights[0].shape == (2, 5)
    assert params.decay.window_slots == 6
    assert params.trig_window == 12 and params.eps == 0.02


def test_fit_config_validation():
    with pytest.raises(ValidationError, match="step_size"):
        FitConfig(step_size=0.0)
    with pytest.raises(ValidationError, match="tol"):
        FitConfig(tol=0.0)
    with pytest.raises(ValidationError, match="optimizer"):
        FitConfig(optimizer="newton")
    with pytest.raises(ValidationError, match="batch_slots"):
        FitConfig(batch_slots=0)
    with pytest.raises(ValidationError, match="projection_cadence"):
        FitConfig(projection_cadence=0)


# -- fitting ------------------------------------------------------------------------


def _fit_setup(seed=23):
    ds = _tiny_dataset(seed=seed)
    graph = build_candidate_graph(ds.units, k_neighbors=2, max_km=200.0)
    return ds, graph


def test_fit_improves_loglik_and_respects_constraints():
    ds, graph = _fit_setup()
    cfg = FitConfig(max_epochs=30, batch_slots=16, seed=1, hidden_sizes=(4,), window_slots=6, tol=1e-12)
    params, report = fit(ds, graph, cfg)
    assert report.epochs_run <= 30
    assert report.loglik_trace[-1] > report.loglik_trace[0]
    params.check_invariants()
    # returned params are the best-scoring epoch
    assert log_likelihood(params, ds) == pytest.approx(max(report.loglik_trace), rel=1e-12)
    assert len(report.grad_norm_trace) == report.epochs_run
    assert len(report.projection_counts) == report.epochs_run


def test_fit_is_deterministic():
    ds, graph = _fit_setup()
    cfg = FitConfig(max_epochs=8, batch_slots=16, seed=5, hidden_sizes=(4,), window_slots=6)
    p1, r1 = fit(ds, graph, cfg)
    p2, r2 = fit(ds, graph, cfg)
    assert r1.loglik_trace == r2.loglik_trace
    assert_array_equal(p1.alpha.alpha, p2.alpha.alpha)
    assert_array_equal(p1.beta, p2.beta)
    assert_array_equal(p1.gamma, p2.gamma)
    assert_array_equal(p1.decay.omega, p2.decay.omega)
    assert_array_equal(p1.mlp.flatten(), p2.mlp.flatten())


def test_fit_convergence_flag_and_zero_epochs():
    ds, graph = _fit_setup()
    loose = FitConfig(max_epochs=50, tol=1e30, hidden_sizes=(3,), window_slots=6)
    _, report = fit(ds, graph, loose)
    assert report.converged and report.epochs_run == 2

    none = FitConfig(max_epochs=0, hidden_sizes=(3,), window_slots=6)
    params, report0 = fit(ds, graph, none)
    assert report0.epochs_run == 0 and not report0.converged
    assert math.isnan(report0.final_loglik)
    assert_array_equal(params.gamma, np.full(4, 0.1))


def test_fit_diverges_loudly_on_absurd_step():
    ds, graph = _fit_setup()
    cfg = FitConfig(step_size=1e8, optimizer="plain-sgd", max_epochs=20, hidden_sizes=(3,), window_slots=6, tol=1e-15)
    with np.errstate(all="ignore"), pytest.raises(DivergenceError, match="non-finite"):
        fit(ds, graph, cfg)


def test_fit_report_records():
    report = FitReport(seed=1, loglik_trace=[-5.0, -4.0], grad_norm_trace=[2.0, 1.0], projection_counts=[3, 0], seconds=0.5)
    assert report.records() == [(1, -5.0, 2.0, 3), (2, -4.0, 1.0, 0)]
    assert report.records(include_seconds=True)[0][-1] == 0.5
    assert report.final_loglik == -4.0
    lines = report.format_lines()
    assert lines[0].startswith("fit seed=1") and "wall_clock_seconds" in lines[-1]


def test_fd_audit_small():
    rng = np.random.default_rng(29)
    params, counts, weather = random_small_instance(rng, K=3, T=8, M=2, n_edges=3, hidden=(3,))
    ds = wrap_dataset(counts, weather)
    assert fd_audit(params, ds, max_coords=25) < 1e-5


def test_fit_accepts_full_batch():
    ds, graph = _fit_setup()
    cfg = FitConfig(max_epochs=5, batch_slots=None, hidden_sizes=(3,), window_slots=6)
    params, report = fit(ds, graph, cfg)
    assert report.epochs_run == 5
    params.check_invariants()
