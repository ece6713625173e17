"""DP-SGD pieces for the discriminator: clipping, noising and RDP accounting."""

from __future__ import annotations

import functools
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import NumericError, ValidationError
from .numerics import GradientSet, gaussian_noise, sum_gradients

DEFAULT_ORDERS = tuple(1.0 + 0.25 * k for k in range(1, 253))  # 1.25, 1.5, ..., 64.0


@dataclass(frozen=True)
class PrivacySpec:
    target_epsilon: float = 10.0
    target_delta: float = 1e-5
    clip: float = 1.0
    noise_multiplier: float | None = 1.0  # None -> calibrate from the target
    sampling_rate: float = 0.01
    max_steps: int = 1000

    def __post_init__(self):
        if not self.target_epsilon > 0:
            raise ValidationError("target epsilon must be positive")
        if not 0 < self.target_delta < 1:
            raise ValidationError("target delta must lie in (0, 1)")
        if not self.clip > 0:
            raise ValidationError("clip threshold C must be positive")
        if self.noise_multiplier is not None and self.noise_multiplier < 0:
            raise ValidationError("noise multiplier must be non-negative")
        if not 0 < self.sampling_rate <= 1:
            raise ValidationError("sampling rate q must lie in (0, 1]")
        if self.max_steps <= 0:
            raise ValidationError("max steps must be positive")

    def check_delta(self, m: int) -> None:
        if self.target_delta >= 1.0 / m:
            warnings.warn(f"delta={self.target_delta} is not below 1/m={1.0 / m:.3g}", stacklevel=2)


# -- clipping and noising ---------------------------------------------------

def clip_factor(norm: float | np.ndarray, clip: float):
    """1 / max(1, norm / C)."""
    return 1.0 / np.maximum(1.0, np.asarray(norm, dtype=np.float64) / clip)


def clip_gradient(g: GradientSet, clip: float) -> GradientSet:
    """Scale by 1/max(1, ||g||_2 / C) using the joint norm over all parameters."""
    if not clip > 0:
        raise ValidationError("clip threshold must be positive")
    if not g.is_finite():
        raise NumericError("non-finite gradient entries; step aborted")
    n = g.norm()
    if n <= clip:
        return g
    return g.scale(clip / n)


def privatize(
    per_example: Sequence[GradientSet],
    clip: float,
    sigma: float,
    rng: np.random.Generator,
    denominator: float | None = None,
) -> GradientSet:
    """(sum_i clip(g_i) + N(0, (sigma*C)^2 I)) / denominator.

    ``denominator`` defaults to the number of gradients; under Poisson
    sampling the trainer passes the expected batch size instead.
    """
    if not per_example:
        raise ValidationError("privatize needs at least one gradient")
    if sigma < 0:
        raise ValidationError("noise multiplier must be non-negative")
    total = sum_gradients([clip_gradient(g, clip) for g in per_example])
    return add_noise(total, clip, sigma, rng, denominator if denominator is not None else len(per_example))


def add_noise(clipped_sum: GradientSet, clip: float, sigma: float, rng: np.random.Generator,
              denominator: float) -> GradientSet:
    if not denominator > 0:
        raise ValidationError("denominator must be positive")
    std = sigma * clip if sigma > 0 else 0.0
    noisy = [a + gaussian_noise(rng, a.shape, std) for a in clipped_sum.arrays()]
    return GradientSet(tuple(noisy[0::2]), tuple(noisy[1::2])).scale(1.0 / denominator)


# -- Renyi accountant -------------------------------------------------------

def _log_a_quadrature(q: float, sigma: float, alpha: float) -> float:
    """log E_{z~N(0,s^2)}[((1-q) + q exp((2z-1)/(2 s^2)))^alpha] by log-space trapezoid.

    The integrand is a mixture of Gaussian bumps centred at 0..alpha with
    width sigma, so a grid over [-14s-1, alpha+14s+1] at spacing s/64
    captures it to double precision.
    """
    lo = -14.0 * sigma - 1.0
    hi = alpha + 14.0 * sigma + 1.0
    h = sigma / 64.0
    n = int(math.ceil((hi - lo) / h)) + 1
    z = np.linspace(lo, hi, n)
    h = z[1] - z[0]
    log_mu0 = -0.5 * (z / sigma) ** 2 - math.log(sigma * math.sqrt(2 * math.pi))
    log_ratio = np.logaddexp(math.log1p(-q), math.log(q) + (2 * z - 1) / (2 * sigma ** 2))
    logf = log_mu0 + alpha * log_ratio
    # trapezoid: interior weight h, endpoints h/2
    logf[0] += math.log(0.5)
    logf[-1] += math.log(0.5)
    return float(logsumexp(logf) + math.log(h))


def rdp_subsampled_gaussian(q: float, sigma: float, alpha: float) -> float:
    """One-step RDP of the Poisson-subsampled Gaussian mechanism at order alpha."""
    if not 0 <= q <= 1:
        raise ValidationError("sampling rate must lie in [0, 1]")
    if alpha <= 1:
        raise ValidationError("RDP order must exceed 1")
    if q == 0:
        return 0.0
    if sigma == 0:
        return math.inf
    if q == 1:
        return alpha / (2 * sigma ** 2)
    return max(0.0, _log_a_quadrature(q, sigma, alpha) / (alpha - 1))


@functools.lru_cache(maxsize=256)
def _step_rdp(q: float, sigma: float, orders: tuple[float, ...]) -> tuple[float, ...]:
    return tuple(rdp_subsampled_gaussian(q, sigma, a) for a in orders)


@dataclass(frozen=True)
class AccountantState:
    q: float
    sigma: float
    orders: tuple[float, ...] = DEFAULT_ORDERS
    rdp: tuple[float, ...] = field(default=None)  # type: ignore[assignment]
    steps: int = 0

    def __post_init__(self):
        if not 0 < self.q <= 1:
            raise ValidationError("sampling rate must lie in (0, 1]")
        if self.sigma < 0:
            raise ValidationError("noise multiplier must be non-negative")
        if self.rdp is None:
            object.__setattr__(self, "rdp", tuple(0.0 for _ in self.orders))

    def step_increment(self) -> np.ndarray:
        return np.array(_step_rdp(self.q, self.sigma, tuple(self.orders)))


def account_step(state: AccountantState, n: int = 1) -> AccountantState:
    """Compose ``n`` more subsampled-Gaussian steps."""
    inc = state.step_increment()
    rdp = tuple(float(r) for r in np.asarray(state.rdp) + n * inc)
    return replace(state, rdp=rdp, steps=state.steps + n)


def rdp_to_epsilon(orders: Sequence[float], rdp: Sequence[float], delta: float) -> tuple[float, float]:
    """eps = min over orders of RDP(a) + log(1/delta)/(a-1); returns (eps, best order)."""
    if not 0 < delta < 1:
        raise ValidationError("delta must lie in (0, 1)")
    a = np.asarray(orders, dtype=np.float64)
    eps = np.asarray(rdp, dtype=np.float64) + math.log(1.0 / delta) / (a - 1)
    k = int(np.argmin(eps))
    return max(0.0, float(eps[k])), float(a[k])


def epsilon_at(state: AccountantState, delta: float) -> float:
    if not 0 < delta < 1:
        raise ValidationError("delta must lie in (0, 1)")
    if state.steps == 0:
        return 0.0
    return rdp_to_epsilon(state.orders, state.rdp, delta)[0]


def epsilon_for(q: float, sigma: float, steps: int, delta: float, orders=DEFAULT_ORDERS) -> float:
    if steps == 0:
        return 0.0
    st = AccountantState(q, sigma, tuple(orders))
    return epsilon_at(account_step(st, steps), delta)


def calibrate_sigma(q: float, steps: int, target_epsilon: float, delta: float,
                    lo: float = 0.3, hi: float = 200.0, tol: float = 1e-3) -> float:
    """Smallest noise multiplier (to ``tol`` relative) reaching ``target_epsilon`` after ``steps``."""
    if epsilon_for(q, hi, steps, delta) > target_epsilon:
        raise ValidationError(f"even sigma={hi} exceeds epsilon {target_epsilon}")
    if epsilon_for(q, lo, steps, delta) <= target_epsilon:
        return lo
    while hi / lo > 1 + tol:
        mid = math.sqrt(lo * hi)
        if epsilon_for(q, mid, steps, delta) <= target_epsilon:
            hi = mid
        else:
            lo = mid
    return hi


# -- audit log --------------------------------------------------------------

def audit_record(state: AccountantState, delta: float) -> dict:
    return {"step": state.steps, "q": state.q, "sigma": state.sigma, "delta": delta,
            "epsilon": epsilon_at(state, delta)}


def replay_audit_log(path: str | Path, orders=DEFAULT_ORDERS) -> tuple[AccountantState | None, float]:
    """Recompute the accountant offline from a JSON-lines audit log.

    Returns the final state and its epsilon at the logged delta.
    """
    state = None
    delta = None
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if state is None:
                state = AccountantState(rec["q"], rec["sigma"], tuple(orders))
            elif (rec["q"], rec["sigma"]) != (state.q, state.sigma):
                state = AccountantState(rec["q"], rec["sigma"], tuple(orders), state.rdp, state.steps)
            state = account_step(state)
            if state.steps != rec["step"]:
                raise ValidationError(f"audit log skips from step {state.steps - 1} to {rec['step']}")
            delta = rec["delta"]
    if state is None:
        return None, 0.0
    return state, epsilon_at(state, delta)
