"""The three-level personalized multi-tier training loop.

One global round: the server broadcasts x to the sampled teams; each team
re-anchors its model and runs K team rounds; inside a team round every
sampled device starts from the current team model and takes L regularized
gradient steps; the team averages the device results and moves its model
toward a blend of the global model and that average; after K rounds the
server averages the team models and relaxes x toward the average.

``run_permfl`` executes that recursion with inexact (iterative) inner
solves. ``exact_prox_run`` replaces both inner solves with closed-form
proximal points (quadratic losses only), isolating the outer recursion.

Determinism: every reduction runs in ascending id order after all the
parallelizable work for that reduction has finished, so results are
bit-identical for any worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .envelope import DIVERGENCE_LIMIT, closed_form_prox
from .errors import ConfigurationError, NumericError, UnsupportedOperationError
from .metrics import MetricsRecord, evaluate_gm, evaluate_pm, evaluate_pm_weighted
from .models import Batch, LossModel, QuadraticModel, QuadraticSpec, as_param_vector
from .topology import ParticipationPolicy, Topology, sample_round

__all__ = [
    "Hyperparams",
    "DeviceState",
    "TeamState",
    "GlobalState",
    "RunResult",
    "PermflConfig",
    "device_step",
    "device_solve",
    "team_aggregate",
    "team_step",
    "global_aggregate",
    "global_step",
    "run_permfl",
    "exact_prox_run",
    "personalized_objective",
    "quadratic_phi_minimizer",
]


@dataclass(frozen=True)
class Hyperparams:
    """Step sizes and loop lengths. ``alpha`` may be a scalar or a mapping
    device id -> value; ``eta`` a scalar or mapping team id -> value."""

    alpha: float | dict
    eta: float | dict
    beta: float
    gamma: float
    lam: float
    global_rounds: int
    team_rounds: int
    device_steps: int

    def __post_init__(self):
        for name in ("beta", "gamma", "lam"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("global_rounds", "team_rounds", "device_steps"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        for name in ("alpha", "eta"):
            v = getattr(self, name)
            values = v.values() if isinstance(v, dict) else [v]
            if any(not float(x) > 0 for x in values):
                raise ConfigurationError(f"{name} entries must be positive")

    def alpha_for(self, device_id: int) -> float:
        if isinstance(self.alpha, dict):
            return float(self.alpha[device_id])
        return float(self.alpha)

    def eta_for(self, team_id: int) -> float:
        if isinstance(self.eta, dict):
            return float(self.eta[team_id])
        return float(self.eta)


@dataclass
class DeviceState:
    device_id: int
    team_id: int
    theta: np.ndarray
    train: Batch | None = None
    val: Batch | None = None


@dataclass
class TeamState:
    team_id: int
    w: np.ndarray
    members: tuple = ()
    eta: float = 0.0


@dataclass
class GlobalState:
    x: np.ndarray
    t: int = 0


@dataclass
class RunResult:
    x: np.ndarray
    thetas: dict
    team_w: dict
    metrics: list
    phi_grad_sq: np.ndarray
    x_history: np.ndarray | None = None
    objective_history: np.ndarray | None = None
    seed: int = 0


@dataclass
class PermflConfig:
    """Everything one deterministic run needs.

    ``models`` is a single shared LossModel or a mapping device id -> model
    (per-device quadratic oracles). ``train``/``val`` map device id to a
    Batch (values may be None for data-free quadratic models).
    """

    models: LossModel | dict
    topology: Topology
    hp: Hyperparams
    x0: np.ndarray
    train: dict = field(default_factory=dict)
    val: dict | None = None
    policy: ParticipationPolicy = field(default_factory=ParticipationPolicy)
    seed: int = 0
    anchor_team_to_global: bool = True
    eval_every: int = 1
    workers: int = 1
    record_x_history: bool = True
    record_objective: bool = False
    quadratic_inner: str = "auto"  # "auto" | "iterative"

    def model_for(self, device_id: int) -> LossModel:
        if isinstance(self.models, dict):
            return self.models[device_id]
        return self.models

    def shared_model(self) -> LossModel | None:
        return None if isinstance(self.models, dict) else self.models

    def validate(self) -> None:
        dim = as_param_vector(self.x0).size
        for did in self.topology.device_ids:
            model = self.model_for(did)
            if model.dim != dim:
                raise ConfigurationError(
                    f"device {did} model dim {model.dim} != global dim {dim}"
                )
        if self.quadratic_inner not in ("auto", "iterative"):
            raise ConfigurationError("quadratic_inner must be 'auto' or 'iterative'")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")


def device_step(theta, w, alpha: float, lam: float, model: LossModel, data) -> np.ndarray:
    """One regularized gradient step:
    theta - alpha * grad f(theta) - alpha * lam * (theta - w)."""
    theta = as_param_vector(theta)
    w = as_param_vector(w)
    out = theta - alpha * model.grad(theta, data) - alpha * lam * (theta - w)
    return out


def device_solve(w, alpha: float, lam: float, steps: int, model: LossModel, data) -> np.ndarray:
    """``steps`` device_step applications starting from the team model."""
    if steps < 0:
        raise ConfigurationError("device steps must be >= 0")
    theta = as_param_vector(w).copy()
    w = as_param_vector(w)
    for _ in range(steps):
        theta = device_step(theta, w, alpha, lam, model, data)
    return theta


def _quadratic_device_solve(spec: QuadraticSpec, w, alpha: float, lam: float, steps: int) -> np.ndarray:
    """Closed form of ``steps`` device_step iterations for a quadratic loss.

    The iteration is affine with constant coefficients, so the L-th iterate
    is prox + (1 - alpha*(a+lam))^L * (w - prox). Algebraically identical to
    the loop; rounding differs at machine precision.
    """
    prox = closed_form_prox(spec, lam, w)
    rho = 1.0 - alpha * (spec.curvature + lam)
    return prox + (rho**steps) * (as_param_vector(w) - prox)


def team_aggregate(thetas) -> np.ndarray:
    """Arithmetic mean, summed in the (already id-sorted) order given."""
    thetas = list(thetas)
    if not thetas:
        raise ConfigurationError("cannot aggregate an empty device list")
    total = np.array(thetas[0], dtype=np.float64, copy=True)
    for theta in thetas[1:]:
        total += theta
    return total / len(thetas)


def aggregate_by_id(by_id: dict) -> np.ndarray:
    """Mean over a mapping id -> vector, reduced in ascending id order so the
    result is independent of the mapping's insertion order."""
    return team_aggregate([by_id[i] for i in sorted(by_id)])


def team_step(w, x, theta_bar, eta: float, lam: float, gamma: float) -> np.ndarray:
    """(1 - eta*(lam+gamma)) * w + eta*gamma * x + lam*eta * theta_bar."""
    w = as_param_vector(w)
    return (1.0 - eta * (lam + gamma)) * w + eta * gamma * as_param_vector(x) + lam * eta * as_param_vector(theta_bar)


def global_aggregate(ws) -> np.ndarray:
    return team_aggregate(ws)


def global_step(x, w_bar, beta: float, gamma: float) -> np.ndarray:
    """(1 - beta*gamma) * x + beta*gamma * w_bar."""
    return (1.0 - beta * gamma) * as_param_vector(x) + beta * gamma * as_param_vector(w_bar)


def _check_state(vec: np.ndarray, context: str):
    if not np.all(np.isfinite(vec)) or float(vec @ vec) > DIVERGENCE_LIMIT**2:
        raise NumericError(f"diverged at {context}")


def personalized_objective(config: PermflConfig, x, team_w: dict, thetas: dict) -> float:
    """The triple-regularized objective over all teams and devices at the
    given iterates (device loss + device-to-team + team-to-global penalties),
    averaged the same way the training loop weights them."""
    lam, gamma = config.hp.lam, config.hp.gamma
    x = as_param_vector(x)
    total = 0.0
    team_ids = config.topology.team_ids
    for tid in team_ids:
        w = team_w[tid]
        inner = 0.0
        members = config.topology.teams[tid]
        for did in members:
            theta = thetas[did]
            model = config.model_for(did)
            dtw = theta - w
            dwx = w - x
            inner += (
                model.loss(theta, config.train.get(did))
                + 0.5 * lam * float(dtw @ dtw)
                + 0.5 * gamma * float(dwx @ dwx)
            )
        total += inner / len(members)
    return total / len(team_ids)


def _team_all_quadratic(config: PermflConfig, member_ids) -> bool:
    return all(isinstance(config.model_for(d), QuadraticModel) for d in member_ids)


def _run_team_rounds(config, tid, w0, x, active_members, rounds, pool, t=0):
    """Execute K team rounds for one team; returns (w_K, final device thetas)."""
    hp = config.hp
    eta = hp.eta_for(tid)
    lam, gamma = hp.lam, hp.gamma
    w = w0.copy()

    fast = (
        config.quadratic_inner == "auto"
        and _team_all_quadratic(config, active_members)
    )
    if fast:
        # The L device steps have the exact affine form
        # theta_j = (1 - rho_j^L) * prox_j(w) + rho_j^L * w with
        # prox_j(w) = (a_j c_j + lam w) / (a_j + lam), so the device average
        # is const_vec + w_coeff * w with round-independent constants. The
        # team recursion itself stays iterative.
        centers = np.stack([config.model_for(d).spec.center for d in active_members])
        curv = np.array([config.model_for(d).spec.curvature for d in active_members])[:, None]
        alphas = np.array([hp.alpha_for(d) for d in active_members])[:, None]
        denom = curv + lam
        rho_pow = (1.0 - alphas * denom) ** hp.device_steps
        gain = (1.0 - rho_pow) / denom
        const_vec = (gain * curv * centers).mean(axis=0)
        w_coeff = float((gain * lam).mean() + rho_pow.mean())
        keep = 1.0 - eta * (lam + gamma)
        pull = eta * gamma * x + lam * eta * const_vec
        blend = lam * eta * w_coeff
        w_prev = w
        for _ in range(rounds):
            w_prev = w
            w = (keep + blend) * w + pull
        # Device states come from the team model seen in the last round.
        prox = (curv * centers + lam * w_prev) / denom
        theta_mat = prox + rho_pow * (w_prev - prox)
        thetas = {d: theta_mat[i].copy() for i, d in enumerate(active_members)}
        return w, thetas

    thetas = {}
    for k in range(rounds):
        def solve(did):
            return device_solve(
                w, hp.alpha_for(did), lam, hp.device_steps,
                config.model_for(did), config.train.get(did),
            )

        if pool is not None:
            results = list(pool.map(solve, active_members))
            solved = dict(zip(active_members, results))
        else:
            solved = {did: solve(did) for did in active_members}
        for did in active_members:
            _check_state(
                solved[did],
                f"global round {t}, team round {k}, team {tid}, device {did}",
            )
        theta_bar = team_aggregate([solved[did] for did in active_members])
        w = team_step(w, x, theta_bar, eta, lam, gamma)
        _check_state(w, f"global round {t}, team round {k}, team {tid}")
        thetas = solved
    return w, thetas


def _evaluate_round(config, t, x, devices, records, started):
    model = config.shared_model()
    if not config.val or model is None:
        return
    if type(model).predict is LossModel.predict:
        return  # no classifier head, nothing to score
    pm_acc, pm_loss = evaluate_pm(devices, model)
    pm_acc_w, _ = evaluate_pm_weighted(devices, model)
    gm_acc, gm_loss = evaluate_gm(x, devices, model)
    records.append(
        MetricsRecord(
            t=t, pm_acc=pm_acc, gm_acc=gm_acc, pm_loss=pm_loss, gm_loss=gm_loss,
            pm_acc_weighted=pm_acc_w, wall_time=time.perf_counter() - started,
        )
    )


def run_permfl(config: PermflConfig) -> RunResult:
    """Run the full multi-tier loop for ``global_rounds`` rounds."""
    config.validate()
    hp = config.hp
    x = as_param_vector(config.x0).copy()

    devices = {}
    for tid in config.topology.team_ids:
        for did in config.topology.teams[tid]:
            devices[did] = DeviceState(
                device_id=did, team_id=tid, theta=x.copy(),
                train=config.train.get(did),
                val=(config.val or {}).get(did),
            )
    teams = {
        tid: TeamState(team_id=tid, w=x.copy(), members=config.topology.teams[tid],
                       eta=hp.eta_for(tid))
        for tid in config.topology.team_ids
    }

    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    records: list = []
    x_hist = [x.copy()] if config.record_x_history else None
    obj_hist = [] if config.record_objective else None
    grad_sq = np.zeros(hp.global_rounds)
    started = time.perf_counter()

    try:
        for t in range(hp.global_rounds):
            active_teams, active_devices = sample_round(config.policy, config.topology, t)
            for tid in active_teams:
                if config.anchor_team_to_global or t == 0:
                    teams[tid].w = x.copy()
            for tid in active_teams:
                w_new, solved = _run_team_rounds(
                    config, tid, teams[tid].w, x, active_devices[tid],
                    hp.team_rounds, pool, t=t,
                )
                teams[tid].w = w_new
                for did in active_devices[tid]:
                    devices[did].theta = solved[did]

            w_bar = global_aggregate([teams[tid].w for tid in active_teams])
            g = hp.gamma * (x - w_bar)
            grad_sq[t] = float(g @ g)
            if obj_hist is not None:
                obj_hist.append(
                    personalized_objective(
                        config, x, {tid: teams[tid].w for tid in teams},
                        {did: devices[did].theta for did in devices},
                    )
                )
            x = global_step(x, w_bar, hp.beta, hp.gamma)
            _check_state(x, f"global round {t}")
            if x_hist is not None:
                x_hist.append(x.copy())
            if (t % config.eval_every == 0) or t == hp.global_rounds - 1:
                _evaluate_round(config, t, x, devices.values(), records, started)
    finally:
        if pool is not None:
            pool.shutdown()

    return RunResult(
        x=x,
        thetas={did: devices[did].theta for did in sorted(devices)},
        team_w={tid: teams[tid].w for tid in sorted(teams)},
        metrics=records,
        phi_grad_sq=grad_sq,
        x_history=np.stack(x_hist) if x_hist is not None else None,
        objective_history=np.asarray(obj_hist) if obj_hist is not None else None,
        seed=config.seed,
    )


def _quadratic_specs(config: PermflConfig, member_ids):
    specs = []
    for did in member_ids:
        model = config.model_for(did)
        if not isinstance(model, QuadraticModel):
            raise UnsupportedOperationError(
                f"exact prox run requires quadratic losses (device {did} has {type(model).__name__})"
            )
        specs.append(model.spec)
    return specs


def team_prox_exact(specs, lam: float, gamma: float, x) -> np.ndarray:
    """Exact team-level prox for quadratic device losses.

    Smoothing each device quadratic keeps its center and shrinks curvature
    to a*lam/(a+lam); the team loss is then a quadratic whose prox at x is
    (mean_j(a_j~ c_j) + gamma x) / (mean_j(a_j~) + gamma).
    """
    x = as_param_vector(x)
    tilde = np.array([s.curvature * lam / (s.curvature + lam) for s in specs])
    centers = np.stack([s.center for s in specs])
    a_bar = float(tilde.mean())
    weighted = (tilde[:, None] * centers).mean(axis=0)
    return (weighted + gamma * x) / (a_bar + gamma)


def quadratic_phi_minimizer(config: PermflConfig) -> np.ndarray:
    """Closed-form minimizer of the fully smoothed global objective for a
    quadratic ensemble: each team contributes a quadratic with curvature
    gamma*A_i/(gamma+A_i) centred at its envelope-weighted centre."""
    lam, gamma = config.hp.lam, config.hp.gamma
    num = np.zeros(as_param_vector(config.x0).size)
    den = 0.0
    for tid in config.topology.team_ids:
        specs = _quadratic_specs(config, config.topology.teams[tid])
        tilde = np.array([s.curvature * lam / (s.curvature + lam) for s in specs])
        centers = np.stack([s.center for s in specs])
        a_bar = float(tilde.mean())
        c_bar = (tilde[:, None] * centers).sum(axis=0) / tilde.sum()
        curv = gamma * a_bar / (gamma + a_bar)
        num += curv * c_bar
        den += curv
    return num / den


def exact_prox_run(config: PermflConfig) -> RunResult:
    """Outer recursion with exact inner solves (quadratic losses only).

    Device and team subproblems are solved in closed form each round, so
    the trajectory isolates the server-level relaxation."""
    config.validate()
    hp = config.hp
    x = as_param_vector(config.x0).copy()

    team_specs = {
        tid: _quadratic_specs(config, config.topology.teams[tid])
        for tid in config.topology.team_ids
    }
    teams = {tid: TeamState(team_id=tid, w=x.copy(), members=config.topology.teams[tid])
             for tid in config.topology.team_ids}
    thetas = {did: x.copy() for did in config.topology.device_ids}

    x_hist = [x.copy()] if config.record_x_history else None
    obj_hist = [] if config.record_objective else None
    grad_sq = np.zeros(hp.global_rounds)

    for t in range(hp.global_rounds):
        active_teams, active_devices = sample_round(config.policy, config.topology, t)
        for tid in active_teams:
            w = team_prox_exact(team_specs[tid], hp.lam, hp.gamma, x)
            teams[tid].w = w
            members = config.topology.teams[tid]
            for did, spec in zip(members, team_specs[tid]):
                if did in active_devices[tid]:
                    thetas[did] = closed_form_prox(spec, hp.lam, w)
        w_bar = global_aggregate([teams[tid].w for tid in active_teams])
        g = hp.gamma * (x - w_bar)
        grad_sq[t] = float(g @ g)
        if obj_hist is not None:
            obj_hist.append(
                personalized_objective(config, x, {tid: teams[tid].w for tid in teams}, thetas)
            )
        x = global_step(x, w_bar, hp.beta, hp.gamma)
        _check_state(x, f"global round {t}")
        if x_hist is not None:
            x_hist.append(x.copy())

    return RunResult(
        x=x,
        thetas={did: thetas[did] for did in sorted(thetas)},
        team_w={tid: teams[tid].w for tid in sorted(teams)},
        metrics=[],
        phi_grad_sq=grad_sq,
        x_history=np.stack(x_hist) if x_hist is not None else None,
        objective_history=np.asarray(obj_hist) if obj_hist is not None else None,
        seed=config.seed,
    )
