"""Quadratic-penalty smoothing utilities.

The device and team subproblems both have the shape

    min_u  g(u) + (sigma/2) * ||u - z||^2

whose optimal value defines the smoothed objective at the anchor ``z`` and
whose minimizer is the proximal point. The smoothed gradient at ``z``
equals sigma * (z - prox); replacing the exact prox with an approximate
inner solution yields the inexact gradients the outer recursions consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError
from .models import Batch, LossModel, QuadraticSpec, as_param_vector

DIVERGENCE_LIMIT = 1e12


@dataclass
class ProxProblem:
    """Inner problem: objective plus (sigma/2)*||u - anchor||^2."""

    model: LossModel
    data: Batch | None
    sigma: float
    anchor: np.ndarray

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError("smoothing strength sigma must be positive")
        self.anchor = as_param_vector(self.anchor)

    def inner_value(self, u: np.ndarray) -> float:
        diff = u - self.anchor
        return self.model.loss(u, self.data) + 0.5 * self.sigma * float(diff @ diff)

    def inner_grad(self, u: np.ndarray) -> np.ndarray:
        return self.model.grad(u, self.data) + self.sigma * (u - self.anchor)


def prox_gd(problem: ProxProblem, steps: int, step_size: float, init=None) -> np.ndarray:
    """Approximate the prox point by plain gradient descent on the inner problem.

    With steps=0 the initial point is returned unchanged. The iteration is
    u <- u - step_size * (grad g(u) + sigma * (u - anchor)).
    """
    if steps < 0:
        raise ConfigurationError("steps must be >= 0")
    if not step_size > 0:
        raise ConfigurationError("step_size must be positive")
    u = as_param_vector(init if init is not None else self_init(problem))
    if u.size != problem.anchor.size:
        raise ConfigurationError("prox init dimension does not match anchor")
    for step in range(steps):
        u = u - step_size * problem.inner_grad(u)
        if not np.all(np.isfinite(u)) or float(u @ u) > DIVERGENCE_LIMIT**2:
            raise NumericError(f"prox gradient descent diverged at step {step}")
    return u


def self_init(problem: ProxProblem) -> np.ndarray:
    """Default inner initialization: start at the anchor."""
    return problem.anchor.copy()


def closed_form_prox(quad: QuadraticSpec, sigma: float, anchor) -> np.ndarray:
    """Exact prox of an isotropic quadratic: (a*c + sigma*z) / (a + sigma)."""
    if not sigma > 0:
        raise ConfigurationError("sigma must be positive")
    anchor = as_param_vector(anchor)
    a = quad.curvature
    return (a * quad.center + sigma * anchor) / (a + sigma)


def envelope_value(problem: ProxProblem, u_star) -> float:
    """Smoothed objective at the anchor, evaluated with an inner solution."""
    return problem.inner_value(as_param_vector(u_star))


def inexact_envelope_grad(sigma: float, anchor, u_approx) -> np.ndarray:
    """Smoothed gradient from an approximate prox point: sigma * (z - u)."""
    anchor = as_param_vector(anchor)
    u_approx = as_param_vector(u_approx)
    if anchor.size != u_approx.size:
        raise ConfigurationError("anchor and prox approximation dims differ")
    return sigma * (anchor - u_approx)


def quadratic_envelope_spec(quad: QuadraticSpec, sigma: float) -> QuadraticSpec:
    """Smoothing a quadratic yields a quadratic: same center, harmonic-mean
    curvature a*sigma/(a+sigma). The additive constant is zero.
    """
    if not sigma > 0:
        raise ConfigurationError("sigma must be positive")
    a = quad.curvature
    return QuadraticSpec(center=quad.center, curvature=a * sigma / (a + sigma))


def default_device_step_size(smoothness: float, lam: float) -> float:
    """Largest step certified for the device-level inner solve: 1/(L_f + lambda)."""
    return 1.0 / (smoothness + lam)


def default_team_step_size(lam: float, gamma: float) -> float:
    """Largest step certified for the team-level inner solve: 1/(2(lambda + gamma))."""
    return 1.0 / (2.0 * (lam + gamma))
