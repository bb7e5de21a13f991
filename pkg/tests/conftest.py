"""Shared builders and independent oracles for the engine-level tests."""

import numpy as np

from permfl.engine import Hyperparams, PermflConfig
from permfl.envelope import default_device_step_size, default_team_step_size
from permfl.models import QuadraticModel, QuadraticSpec
from permfl.topology import Topology
from permfl.validate import mu_tilde_F


def build_quadratic_instance(
    dim=10,
    n_teams=4,
    per_team=5,
    curvature=1.0,
    gamma=6.0,
    lam=2.5,
    beta=None,
    alpha=None,
    eta=None,
    global_rounds=200,
    team_rounds=1,
    device_steps=1,
    seed=0,
    center_scale=1.0,
    x0_scale=2.0,
    **config_kwargs,
):
    """Quadratic ensemble with distinct centers and certified step sizes."""
    rng = np.random.default_rng(seed)
    models = {}
    topology = {}
    did = 0
    for tid in range(n_teams):
        members = []
        for _ in range(per_team):
            center = rng.normal(scale=center_scale, size=dim)
            models[did] = QuadraticModel(QuadraticSpec(center, curvature))
            members.append(did)
            did += 1
        topology[tid] = members

    mu_f = L_f = curvature
    if beta is None:
        beta = mu_tilde_F(lam, gamma, mu_f) / (4 * gamma)
    if alpha is None:
        alpha = default_device_step_size(L_f, lam)
    if eta is None:
        eta = default_team_step_size(lam, gamma)

    hp = Hyperparams(
        alpha=alpha, eta=eta, beta=beta, gamma=gamma, lam=lam,
        global_rounds=global_rounds, team_rounds=team_rounds,
        device_steps=device_steps,
    )
    x0 = rng.normal(scale=x0_scale, size=dim)
    return PermflConfig(
        models=models, topology=Topology(topology), hp=hp, x0=x0, seed=seed,
        **config_kwargs,
    )


def brute_force_global_minimizer(config: PermflConfig) -> np.ndarray:
    """Independent oracle for the optimum of the smoothed global objective.

    Minimizes the full triple-regularized objective jointly over
    (x, all w_i, all theta_ij) by assembling the stationarity system of the
    original quadratic sum and solving it directly; the x block of the
    solution is the global optimum. Uses only first-order conditions of the
    raw objective, no envelope algebra.
    """
    lam, gamma = config.hp.lam, config.hp.gamma
    team_ids = config.topology.team_ids
    device_rows = {}
    row = 1 + len(team_ids)
    for tid in team_ids:
        for did in config.topology.teams[tid]:
            device_rows[did] = row
            row += 1
    size = row
    dim = np.asarray(config.x0).size
    M = len(team_ids)

    A = np.zeros((size, size))
    B = np.zeros((size, dim))

    # d/dx: (1/M) sum_i gamma (x - w_i) = 0
    A[0, 0] = gamma
    for pos, tid in enumerate(team_ids, start=1):
        A[0, pos] = -gamma / M

    for pos, tid in enumerate(team_ids, start=1):
        members = config.topology.teams[tid]
        n_i = len(members)
        # d/dw_i: (1/N_i) sum_j lam (w_i - theta_ij) + gamma (w_i - x) = 0
        A[pos, pos] = lam + gamma
        A[pos, 0] = -gamma
        for did in members:
            A[pos, device_rows[did]] = -lam / n_i
        # d/dtheta_ij: a_ij (theta - c_ij) + lam (theta - w_i) = 0
        for did in members:
            spec = config.model_for(did).spec
            r = device_rows[did]
            A[r, r] = spec.curvature + lam
            A[r, pos] = -lam
            B[r] = spec.curvature * spec.center

    solution = np.linalg.solve(A, B)
    return solution[0]
