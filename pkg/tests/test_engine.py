"""Update rules, the full multi-tier loop, and its exact-prox oracle twin."""

import numpy as np
import pytest
from conftest import brute_force_global_minimizer, build_quadratic_instance

from permfl.engine import (
    Hyperparams,
    PermflConfig,
    _quadratic_device_solve,
    aggregate_by_id,
    device_solve,
    device_step,
    exact_prox_run,
    global_aggregate,
    global_step,
    personalized_objective,
    quadratic_phi_minimizer,
    run_permfl,
    team_aggregate,
    team_step,
)
from permfl.envelope import closed_form_prox
from permfl.errors import ConfigurationError, NumericError, UnsupportedOperationError
from permfl.models import Batch, MclrModel, MclrSpec, QuadraticModel, QuadraticSpec
from permfl.topology import ParticipationMode, ParticipationPolicy, Topology


class TestStepRules:
    def test_device_step_hand_value(self):
        model = QuadraticModel(QuadraticSpec([0.0], 1.0))
        out = device_step([1.0], [0.0], alpha=0.1, lam=0.5, model=model, data=None)
        np.testing.assert_allclose(out, [0.85])

    def test_device_step_stationary_at_consensus(self):
        center = np.array([0.7, -0.2])
        model = QuadraticModel(QuadraticSpec(center, 2.0))
        out = device_step(center, center, alpha=0.2, lam=1.0, model=model, data=None)
        np.testing.assert_array_equal(out, center)

    def test_device_step_zero_alpha(self):
        model = QuadraticModel(QuadraticSpec([0.0], 1.0))
        out = device_step([1.0], [0.3], alpha=0.0, lam=0.5, model=model, data=None)
        np.testing.assert_array_equal(out, [1.0])

    def test_team_step_hand_value(self):
        out = team_step([1.0], [0.0], [1.0], eta=0.1, lam=0.5, gamma=1.5)
        np.testing.assert_allclose(out, [0.85])

    def test_team_step_consensus_fixed_point(self):
        w = np.array([0.4, 0.6])
        out = team_step(w, w, w, eta=0.07, lam=0.5, gamma=1.5)
        np.testing.assert_allclose(out, w, atol=1e-15)

    def test_team_step_zero_eta(self):
        out = team_step([1.0], [9.0], [5.0], eta=0.0, lam=0.5, gamma=1.5)
        np.testing.assert_array_equal(out, [1.0])

    def test_global_step_hand_value(self):
        np.testing.assert_allclose(global_step([0.0], [1.0], beta=0.2, gamma=1.5), [0.3])

    def test_global_step_fixed_point(self):
        np.testing.assert_array_equal(global_step([1.0], [1.0], beta=0.2, gamma=1.5), [1.0])

    def test_global_step_zero_beta(self):
        np.testing.assert_array_equal(global_step([2.0], [7.0], beta=0.0, gamma=1.5), [2.0])


class TestHyperparams:
    def test_positivity_enforced(self):
        with pytest.raises(ConfigurationError, match="beta"):
            Hyperparams(alpha=0.1, eta=0.1, beta=0.0, gamma=1.0, lam=1.0,
                        global_rounds=1, team_rounds=1, device_steps=1)
        with pytest.raises(ConfigurationError, match="global_rounds"):
            Hyperparams(alpha=0.1, eta=0.1, beta=0.1, gamma=1.0, lam=1.0,
                        global_rounds=0, team_rounds=1, device_steps=1)
        with pytest.raises(ConfigurationError, match="alpha"):
            Hyperparams(alpha={0: 0.1, 1: -0.1}, eta=0.1, beta=0.1, gamma=1.0,
                        lam=1.0, global_rounds=1, team_rounds=1, device_steps=1)

    def test_per_entity_lookup(self):
        hp = Hyperparams(alpha={3: 0.25}, eta={1: 0.02}, beta=0.1, gamma=1.0,
                         lam=1.0, global_rounds=1, team_rounds=1, device_steps=1)
        assert hp.alpha_for(3) == 0.25
        assert hp.eta_for(1) == 0.02


class TestAggregation:
    def test_mean(self):
        np.testing.assert_allclose(team_aggregate([np.array([1.0]), np.array([3.0])]), [2.0])
        np.testing.assert_allclose(global_aggregate([np.array([0.0]), np.array([2.0])]), [1.0])

    def test_single_entry_identity(self):
        v = np.array([0.1, 0.9])
        np.testing.assert_array_equal(team_aggregate([v]), v)

    def test_empty_rejected(self):
        with pytest.raises(ConfigurationError):
            team_aggregate([])

    def test_id_keyed_reduction_ignores_insertion_order(self):
        rng = np.random.default_rng(0)
        vectors = {i: rng.normal(size=6) for i in range(10)}
        shuffled = {i: vectors[i] for i in rng.permutation(10)}
        np.testing.assert_array_equal(aggregate_by_id(vectors), aggregate_by_id(shuffled))


class TestDeviceSolve:
    def test_zero_steps_returns_team_model(self):
        model = QuadraticModel(QuadraticSpec([0.0], 1.0))
        w = np.array([0.4])
        np.testing.assert_array_equal(device_solve(w, 0.1, 0.5, 0, model, None), w)

    def test_one_step_equals_device_step(self):
        model = QuadraticModel(QuadraticSpec([0.3], 2.0))
        w = np.array([1.0])
        once = device_solve(w, 0.15, 0.5, 1, model, None)
        np.testing.assert_array_equal(once, device_step(w, w, 0.15, 0.5, model, None))

    def test_converges_to_prox(self):
        spec = QuadraticSpec(np.array([2.0, -1.0]), 1.5)
        model = QuadraticModel(spec)
        w = np.array([0.0, 0.0])
        lam = 0.8
        got = device_solve(w, 1.0 / (1.5 + lam) * 0.9, lam, 800, model, None)
        np.testing.assert_allclose(got, closed_form_prox(spec, lam, w), atol=1e-6)

    def test_closed_form_shortcut_matches_loop(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            spec = QuadraticSpec(rng.normal(size=4), float(rng.uniform(0.5, 3.0)))
            model = QuadraticModel(spec)
            w = rng.normal(size=4)
            lam = float(rng.uniform(0.2, 2.0))
            alpha = float(rng.uniform(0.05, 0.9 / (spec.curvature + lam)))
            steps = int(rng.integers(0, 40))
            loop = device_solve(w, alpha, lam, steps, model, None)
            shortcut = _quadratic_device_solve(spec, w, alpha, lam, steps)
            np.testing.assert_allclose(shortcut, loop, rtol=1e-10, atol=1e-12)


class TestExactProxRun:
    def test_beta_reciprocal_gamma_copies_team_average(self):
        config = build_quadratic_instance(
            dim=4, n_teams=3, per_team=2, gamma=2.0, beta=0.5, global_rounds=1,
        )
        result = exact_prox_run(config)
        w_bar = global_aggregate([result.team_w[t] for t in sorted(result.team_w)])
        np.testing.assert_array_equal(result.x, w_bar)

    def test_single_device_scalar_recursion(self):
        # One team, one device, d=1: three rounds checked by hand arithmetic.
        c, a, lam, gamma, beta = 2.0, 1.0, 0.5, 1.5, 0.2
        config = build_quadratic_instance(
            dim=1, n_teams=1, per_team=1, curvature=a, gamma=gamma, lam=lam,
            beta=beta, global_rounds=3, seed=5,
        )
        spec = config.model_for(0).spec
        c = float(spec.center[0])
        x = float(config.x0[0])
        a_tilde = a * lam / (a + lam)
        for _ in range(3):
            w = (a_tilde * c + gamma * x) / (a_tilde + gamma)
            x = (1 - beta * gamma) * x + beta * gamma * w
        result = exact_prox_run(config)
        assert result.x[0] == pytest.approx(x, rel=1e-14)

    def test_requires_quadratic_models(self):
        model = MclrModel(MclrSpec(n_features=2, n_classes=2))
        config = PermflConfig(
            models=model,
            topology=Topology({0: [0]}),
            hp=Hyperparams(alpha=0.1, eta=0.1, beta=0.1, gamma=3.0, lam=0.5,
                           global_rounds=1, team_rounds=1, device_steps=1),
            x0=np.zeros(model.dim),
            train={0: Batch(np.zeros((2, 2)), np.array([0, 1]))},
        )
        with pytest.raises(UnsupportedOperationError):
            exact_prox_run(config)

    def test_matches_inexact_run_with_converged_inner_loops(self):
        config = build_quadratic_instance(
            dim=5, n_teams=2, per_team=3, gamma=6.0, lam=2.5,
            global_rounds=30, team_rounds=2000, device_steps=2000, seed=9,
        )
        exact = exact_prox_run(config)
        inexact = run_permfl(config)
        assert np.linalg.norm(exact.x - inexact.x) < 1e-6


class TestRunPermfl:
    def test_global_fixed_point(self):
        x0 = np.array([0.5, -1.5])
        model = QuadraticModel(QuadraticSpec(x0, 1.0))
        config = PermflConfig(
            models={0: model},
            topology=Topology({0: [0]}),
            hp=Hyperparams(alpha=0.2, eta=0.1, beta=0.1, gamma=1.5, lam=0.5,
                           global_rounds=1, team_rounds=1, device_steps=1),
            x0=x0,
            quadratic_inner="iterative",
        )
        result = run_permfl(config)
        np.testing.assert_allclose(result.x, x0, atol=1e-15)
        np.testing.assert_array_equal(result.thetas[0], x0)
        np.testing.assert_allclose(result.team_w[0], x0, atol=1e-15)

    def test_consensus_invariance_full_round(self):
        center = np.array([1.0, 2.0, 3.0])
        models = {d: QuadraticModel(QuadraticSpec(center, 1.3)) for d in range(4)}
        config = PermflConfig(
            models=models,
            topology=Topology({0: [0, 1], 1: [2, 3]}),
            hp=Hyperparams(alpha=0.1, eta=0.05, beta=0.05, gamma=2.0, lam=1.0,
                           global_rounds=1, team_rounds=3, device_steps=5),
            x0=center,
        )
        result = run_permfl(config)
        np.testing.assert_allclose(result.x, center, atol=1e-14)
        for theta in result.thetas.values():
            np.testing.assert_allclose(theta, center, atol=1e-14)

    def test_distance_to_optimum_strictly_decreases(self):
        config = build_quadratic_instance(
            dim=6, n_teams=3, per_team=4, global_rounds=40,
            team_rounds=200, device_steps=1, seed=13,
        )
        x_star = brute_force_global_minimizer(config)
        result = run_permfl(config)
        dists = np.linalg.norm(result.x_history - x_star, axis=1)
        assert np.all(np.diff(dists) < 0)

    def test_rate_certificate_small(self):
        config = build_quadratic_instance(
            dim=10, n_teams=4, per_team=5, global_rounds=50,
            team_rounds=500, device_steps=500, seed=1, record_objective=True,
        )
        beta = config.hp.beta
        x_star = brute_force_global_minimizer(config)
        for runner in (exact_prox_run, run_permfl):
            result = runner(config)
            gaps = np.sum((result.x_history - x_star) ** 2, axis=1)
            bound = 2.0 * (1.0 - beta) ** np.arange(len(gaps)) * gaps[0]
            assert np.all(gaps <= bound + 1e-15)
            # Triple-regularized objective never increases round over round.
            assert np.all(np.diff(result.objective_history) <= 1e-12)

    def test_closed_form_inner_matches_iterative_inner(self):
        base = dict(dim=4, n_teams=2, per_team=3, global_rounds=3,
                    team_rounds=4, device_steps=6, seed=21)
        fast = run_permfl(build_quadratic_instance(**base, quadratic_inner="auto"))
        slow = run_permfl(build_quadratic_instance(**base, quadratic_inner="iterative"))
        np.testing.assert_allclose(fast.x, slow.x, atol=1e-12)
        for did in fast.thetas:
            np.testing.assert_allclose(fast.thetas[did], slow.thetas[did], atol=1e-12)

    def test_identical_runs_bit_identical(self):
        config = build_quadratic_instance(dim=3, n_teams=2, per_team=2,
                                          global_rounds=5, team_rounds=3,
                                          device_steps=4, seed=2)
        a = run_permfl(config)
        b = run_permfl(config)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.x_history, b.x_history)

    def test_worker_count_does_not_change_bits(self):
        rng = np.random.default_rng(0)
        model = MclrModel(MclrSpec(n_features=5, n_classes=3, l2=1e-4))
        train = {
            d: Batch(rng.normal(size=(12, 5)), rng.integers(0, 3, size=12))
            for d in range(6)
        }
        def build(workers):
            return PermflConfig(
                models=model,
                topology=Topology({0: [0, 1, 2], 1: [3, 4, 5]}),
                hp=Hyperparams(alpha=0.05, eta=0.03, beta=0.2, gamma=3.0, lam=0.5,
                               global_rounds=4, team_rounds=3, device_steps=5),
                x0=np.zeros(model.dim),
                train=dict(train),
                workers=workers,
            )
        serial = run_permfl(build(1))
        threaded = run_permfl(build(4))
        np.testing.assert_array_equal(serial.x, threaded.x)
        for did in serial.thetas:
            np.testing.assert_array_equal(serial.thetas[did], threaded.thetas[did])

    def test_nonparticipating_devices_keep_stale_state(self):
        config = build_quadratic_instance(
            dim=3, n_teams=2, per_team=2, global_rounds=1,
            team_rounds=2, device_steps=2, seed=4,
            policy=ParticipationPolicy(
                mode=ParticipationMode.PARTIAL_TEAMS_FULL_DEVICES,
                team_fraction=0.5, seed=4,
            ),
        )
        result = run_permfl(config)
        from permfl.topology import sample_round

        active, _ = sample_round(config.policy, config.topology, 0)
        inactive = [t for t in config.topology.team_ids if t not in active]
        assert inactive, "expected one inactive team"
        for tid in inactive:
            np.testing.assert_array_equal(result.team_w[tid], config.x0)
            for did in config.topology.teams[tid]:
                np.testing.assert_array_equal(result.thetas[did], config.x0)

    def test_per_entity_step_size_overrides(self):
        config = build_quadratic_instance(
            dim=2, n_teams=2, per_team=2, global_rounds=2, team_rounds=2,
            device_steps=3, seed=6,
        )
        hp = config.hp
        per_entity = Hyperparams(
            alpha={d: hp.alpha_for(d) for d in config.topology.device_ids},
            eta={t: hp.eta_for(t) for t in config.topology.team_ids},
            beta=hp.beta, gamma=hp.gamma, lam=hp.lam,
            global_rounds=hp.global_rounds, team_rounds=hp.team_rounds,
            device_steps=hp.device_steps,
        )
        config_map = build_quadratic_instance(
            dim=2, n_teams=2, per_team=2, global_rounds=2, team_rounds=2,
            device_steps=3, seed=6,
        )
        object.__setattr__(config_map.hp, "alpha", per_entity.alpha)
        object.__setattr__(config_map.hp, "eta", per_entity.eta)
        a = run_permfl(config)
        b = run_permfl(config_map)
        np.testing.assert_array_equal(a.x, b.x)

    def test_divergence_reports_context(self):
        config = build_quadratic_instance(
            dim=2, n_teams=1, per_team=1, alpha=250.0, global_rounds=3,
            team_rounds=2, device_steps=50, seed=8, quadratic_inner="iterative",
        )
        with pytest.raises(NumericError) as err:
            run_permfl(config)
        message = str(err.value)
        assert "global round" in message
        assert "team" in message and "device" in message

    def test_homogeneous_data_collapses_personalization(self):
        rng = np.random.default_rng(14)
        model = MclrModel(MclrSpec(n_features=4, n_classes=2, l2=1e-3))
        feats = rng.normal(size=(24, 4))
        labels = (feats[:, 0] > 0).astype(int)
        shared_train = Batch(feats[:16], labels[:16])
        shared_val = Batch(feats[16:], labels[16:])
        config = PermflConfig(
            models=model,
            topology=Topology({0: [0, 1], 1: [2, 3]}),
            hp=Hyperparams(alpha=0.5, eta=0.08, beta=0.3, gamma=3.0, lam=0.5,
                           global_rounds=40, team_rounds=5, device_steps=10),
            x0=np.zeros(model.dim),
            train={d: shared_train for d in range(4)},
            val={d: shared_val for d in range(4)},
            eval_every=40,
        )
        result = run_permfl(config)
        final = result.metrics[-1]
        assert final.pm_acc == pytest.approx(final.gm_acc, abs=1e-9)


class TestPhiMinimizer:
    def test_closed_form_matches_brute_force(self):
        for seed in range(5):
            config = build_quadratic_instance(
                dim=7, n_teams=3, per_team=4, seed=seed,
                curvature=float(1.0 + 0.3 * seed),
            )
            closed = quadratic_phi_minimizer(config)
            brute = brute_force_global_minimizer(config)
            np.testing.assert_allclose(closed, brute, rtol=1e-10, atol=1e-12)

    def test_phi_gradient_trace_matches_definition(self):
        config = build_quadratic_instance(
            dim=3, n_teams=2, per_team=2, global_rounds=4, seed=10,
        )
        result = exact_prox_run(config)
        assert result.phi_grad_sq.shape == (4,)
        assert np.all(result.phi_grad_sq >= 0)
        assert result.phi_grad_sq[-1] < result.phi_grad_sq[0]


def test_objective_helper_matches_manual_sum():
    config = build_quadratic_instance(dim=2, n_teams=2, per_team=2, seed=3)
    rng = np.random.default_rng(1)
    x = rng.normal(size=2)
    team_w = {t: rng.normal(size=2) for t in config.topology.team_ids}
    thetas = {d: rng.normal(size=2) for d in config.topology.device_ids}
    lam, gamma = config.hp.lam, config.hp.gamma
    manual = 0.0
    for tid in config.topology.team_ids:
        inner = 0.0
        for did in config.topology.teams[tid]:
            spec = config.model_for(did).spec
            inner += (
                0.5 * spec.curvature * np.sum((thetas[did] - spec.center) ** 2)
                + 0.5 * lam * np.sum((thetas[did] - team_w[tid]) ** 2)
                + 0.5 * gamma * np.sum((team_w[tid] - x) ** 2)
            )
        manual += inner / len(config.topology.teams[tid])
    manual /= len(config.topology.team_ids)
    got = personalized_objective(config, x, team_w, thetas)
    assert got == pytest.approx(manual, rel=1e-12)
