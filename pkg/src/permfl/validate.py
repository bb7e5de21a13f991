"""Hyperparameter admissibility checks and smoothing-constant formulas.

The two convergence regimes each constrain the step sizes:

strongly convex:  beta <= mu_tF/(4*gamma), eta <= 1/(2(lambda+gamma)),
                  alpha <= 1/(L_f+lambda), gamma > 2*lambda > 4*L_f,
                  with mu_tF = lambda*gamma*mu_f / (lambda*mu_f + gamma*mu_f + lambda*gamma)

non-convex:       beta <= 1/(4*gamma), eta <= 1/(lambda+gamma),
                  alpha <= 1/lambda, gamma > 2*lambda > 4*L_f

``suggest_inner_iters`` sizes the team and device iteration counts from the
log-ratio growth rules; the additive offsets of those rules depend on
run-dependent initial-suboptimality constants and are replaced by a user
slack multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigurationError
from .models import Batch, LossModel
from .seeding import rng_for


@dataclass(frozen=True)
class ConvexityConstants:
    """Strong-convexity / smoothness pair for the device losses."""

    mu_f: float
    L_f: float
    estimated: bool = False

    def __post_init__(self):
        if not (0 < self.mu_f <= self.L_f):
            raise ConfigurationError("need 0 < mu_f <= L_f")


@dataclass(frozen=True)
class BoundCheck:
    name: str
    relation: str
    actual: dict
    passed: bool


@dataclass
class BoundReport:
    checks: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def to_text(self) -> str:
        lines = []
        for c in self.checks:
            status = "ok  " if c.passed else "FAIL"
            vals = ", ".join(f"{k}={v:.6g}" for k, v in c.actual.items())
            lines.append(f"[{status}] {c.name}: {c.relation}  ({vals})")
        for k, v in self.info.items():
            lines.append(f"       {k} = {v:.6g}")
        lines.append(f"certified: {'yes' if self.passed else 'no'}")
        return "\n".join(lines)

    def to_kv(self) -> str:
        pairs = [f"bounds.certified={int(self.passed)}"]
        for c in self.checks:
            pairs.append(f"bounds.{c.name}={int(c.passed)}")
        for k, v in self.info.items():
            pairs.append(f"bounds.{k}={v:.12g}")
        return "\n".join(pairs)


def mu_tilde_f(lam: float, mu_f: float) -> float:
    """Strong convexity surviving one level of smoothing: lam*mu/(lam+mu)."""
    if lam < 0 or mu_f < 0:
        raise ConfigurationError("lam and mu_f must be non-negative")
    if lam + mu_f == 0:
        return 0.0
    return lam * mu_f / (lam + mu_f)


def mu_tilde_F(lam: float, gamma: float, mu_f: float) -> float:
    """Strong convexity after both smoothing levels:
    lam*gamma*mu_f / (lam*mu_f + gamma*mu_f + lam*gamma).
    """
    if lam < 0 or gamma < 0 or mu_f < 0:
        raise ConfigurationError("arguments must be non-negative")
    denom = lam * mu_f + gamma * mu_f + lam * gamma
    if denom == 0:
        return 0.0
    return lam * gamma * mu_f / denom


def _scalar_max(value) -> float:
    """Largest entry of a scalar-or-mapping step size (for upper-bound checks)."""
    if isinstance(value, dict):
        return max(float(v) for v in value.values())
    return float(value)


def _scalar_min(value) -> float:
    if isinstance(value, dict):
        return min(float(v) for v in value.values())
    return float(value)


def check_strongly_convex(hp, cc: ConvexityConstants) -> BoundReport:
    """Evaluate the five strongly convex admissibility relations."""
    lam, gamma = hp.lam, hp.gamma
    mu_tF = mu_tilde_F(lam, gamma, cc.mu_f)
    alpha_max = _scalar_max(hp.alpha)
    eta_max = _scalar_max(hp.eta)

    report = BoundReport()
    report.info["mu_tilde_F"] = mu_tF
    report.info["mu_tilde_f"] = mu_tilde_f(lam, cc.mu_f)
    # Stated contraction base and the sharper pre-redefinition one.
    report.info["rate_factor"] = 1.0 - hp.beta
    report.info["rate_factor_sharp"] = 1.0 - hp.beta * mu_tF / 2.0
    if cc.estimated:
        report.info["constants_estimated"] = 1.0

    def add(name, relation, passed, **actual):
        report.checks.append(BoundCheck(name, relation, actual, bool(passed)))

    add("beta", "beta <= mu_tilde_F/(4*gamma)", hp.beta <= mu_tF / (4 * gamma),
        beta=hp.beta, limit=mu_tF / (4 * gamma))
    add("eta", "eta <= 1/(2*(lambda+gamma))", eta_max <= 1 / (2 * (lam + gamma)),
        eta=eta_max, limit=1 / (2 * (lam + gamma)))
    add("alpha", "alpha <= 1/(L_f+lambda)", alpha_max <= 1 / (cc.L_f + lam),
        alpha=alpha_max, limit=1 / (cc.L_f + lam))
    add("gamma_lambda", "gamma > 2*lambda", gamma > 2 * lam, gamma=gamma, two_lambda=2 * lam)
    add("lambda_Lf", "2*lambda > 4*L_f", 2 * lam > 4 * cc.L_f, two_lambda=2 * lam,
        four_Lf=4 * cc.L_f)
    return report


def check_nonconvex(hp, L_f: float) -> BoundReport:
    """Evaluate the four non-convex admissibility relations."""
    if not L_f > 0:
        raise ConfigurationError("L_f must be positive")
    lam, gamma = hp.lam, hp.gamma
    alpha_max = _scalar_max(hp.alpha)
    eta_max = _scalar_max(hp.eta)

    report = BoundReport()

    def add(name, relation, passed, **actual):
        report.checks.append(BoundCheck(name, relation, actual, bool(passed)))

    add("beta", "beta <= 1/(4*gamma)", hp.beta <= 1 / (4 * gamma),
        beta=hp.beta, limit=1 / (4 * gamma))
    add("eta", "eta <= 1/(lambda+gamma)", eta_max <= 1 / (lam + gamma),
        eta=eta_max, limit=1 / (lam + gamma))
    add("alpha", "alpha <= 1/lambda", alpha_max <= 1 / lam, alpha=alpha_max, limit=1 / lam)
    add("ordering", "gamma > 2*lambda > 4*L_f", gamma > 2 * lam and 2 * lam > 4 * L_f,
        gamma=gamma, two_lambda=2 * lam, four_Lf=4 * L_f)
    return report


def inner_iteration_ratios(beta, mu_tF, eta_min, mu_F, gamma, alpha, mu_f):
    """Log-ratio growth rates (K per T, L per K) for the inner loops.

    K/T = ln(1 - beta*mu_tF/2) / ln(1 - eta_min*(mu_F+gamma)/2)
    L/K = ln(1 - eta*(mu_F+gamma)/2) / ln(1 - alpha*mu_f)
    """
    outer = 1.0 - beta * mu_tF / 2.0
    team = 1.0 - eta_min * (mu_F + gamma) / 2.0
    device = 1.0 - alpha * mu_f
    for label, arg in (("global", outer), ("team", team), ("device", device)):
        if not (0.0 < arg < 1.0):
            raise ConfigurationError(
                f"{label}-level contraction factor {arg:.6g} outside (0,1); "
                "step size too large (or zero)"
            )
    k_ratio = math.log(outer) / math.log(team)
    l_ratio = math.log(team) / math.log(device)
    return k_ratio, l_ratio


def suggest_inner_iters(T: int, hp, cc: ConvexityConstants, slack: float = 2.0):
    """Pick (K, L) so the inner solves keep pace with T outer rounds.

    Uses the log-ratio rules with the run-dependent additive offsets
    replaced by the multiplicative ``slack`` (>= 1); both results are
    clamped to at least 1.
    """
    if slack < 1:
        raise ConfigurationError("slack must be >= 1")
    if T <= 0:
        return 1, 1
    mu_F = mu_tilde_f(hp.lam, cc.mu_f)
    mu_tF = mu_tilde_F(hp.lam, hp.gamma, cc.mu_f)
    k_ratio, l_ratio = inner_iteration_ratios(
        hp.beta, mu_tF, _scalar_min(hp.eta), mu_F, hp.gamma,
        _scalar_max(hp.alpha), cc.mu_f,
    )
    K = max(1, math.ceil(slack * k_ratio * T))
    L = max(1, math.ceil(slack * l_ratio * K))
    return K, L


def estimate_convexity_constants(
    model: LossModel,
    data: Batch | None,
    n_pairs: int = 100,
    scale: float = 1.0,
    seed: int = 0,
) -> ConvexityConstants:
    """Empirical curvature range via gradient differences on random pairs.

    Upper estimate: max ||grad(x) - grad(y)|| / ||x - y||.
    Lower estimate: min <grad(x) - grad(y), x - y> / ||x - y||^2.
    Exact for quadratics; a sampling estimate elsewhere (marked as such).
    """
    rng = rng_for(seed, "convexity-estimate")
    upper = 0.0
    lower = math.inf
    for _ in range(n_pairs):
        x = rng.normal(scale=scale, size=model.dim)
        y = rng.normal(scale=scale, size=model.dim)
        dg = model.grad(x, data) - model.grad(y, data)
        dx = x - y
        nx = float(dx @ dx)
        if nx == 0.0:
            continue
        upper = max(upper, math.sqrt(float(dg @ dg) / nx))
        lower = min(lower, float(dg @ dx) / nx)
    lower = max(lower, 1e-12)
    upper = max(upper, lower)
    return ConvexityConstants(mu_f=lower, L_f=upper, estimated=True)
