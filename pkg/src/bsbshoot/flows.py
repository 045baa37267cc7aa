"""Adaptive integration of Hamiltonian flows on the cotangent bundle.

Wraps an embedded Runge-Kutta integrator (Dormand-Prince 8(5,3) by
default) with dense output.  The variational entry point integrates the
state transition matrix and parameter sensitivities jointly with the base
trajectory as one augmented system, so linearizations are exact to
integrator tolerance rather than finite-differenced.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .errors import StepFailure
from .geometry import CotangentPoint

__all__ = ["IntegratorOptions", "FlowSegment", "integrate", "variational"]


@dataclass(frozen=True)
class IntegratorOptions:
    """Tolerances and method selection for the adaptive integrator."""

    atol: float = 1e-10
    rtol: float = 1e-10
    method: str = "DOP853"
    max_step: float = np.inf

    def halved(self) -> "IntegratorOptions":
        return replace(self, atol=self.atol / 2, rtol=self.rtol / 2)


DEFAULT_OPTIONS = IntegratorOptions()


class _ConstantSolution:
    """Dense stand-in for a zero-length segment."""

    def __init__(self, y0: np.ndarray):
        self._y0 = y0

    def __call__(self, t):
        t = np.asarray(t)
        if t.ndim == 0:
            return self._y0.copy()
        return np.repeat(self._y0[:, None], t.shape[0], axis=1)


@dataclass
class FlowSegment:
    """One integrated arc with dense output.

    ``sol`` maps a time (or array of times) to the full integrated vector;
    accessors slice out the cotangent state and, for variational
    segments, the transition matrix and parameter sensitivity.
    """

    field: object
    r: np.ndarray
    t0: float
    t1: float
    n: int
    sol: Callable
    y0: np.ndarray
    y1: np.ndarray
    n_steps: int
    error_estimate: float
    has_variational: bool = False

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    def state_array(self, t) -> np.ndarray:
        return np.asarray(self.sol(t))[: 2 * self.n]

    def state(self, t: float) -> CotangentPoint:
        return CotangentPoint.from_array(self.state_array(t), self.n)

    @property
    def endpoint(self) -> CotangentPoint:
        return CotangentPoint.from_array(self.y1, self.n)

    def transition(self, t) -> np.ndarray:
        if not self.has_variational:
            raise ValueError("segment was integrated without variations")
        d = 2 * self.n
        return np.asarray(self.sol(t))[d:d + d * d].reshape(d, d)

    def r_sensitivity(self, t) -> np.ndarray:
        if not self.has_variational:
            raise ValueError("segment was integrated without variations")
        d = 2 * self.n
        m = len(self.r)
        flat = np.asarray(self.sol(t))[d + d * d:]
        return flat.reshape(d, m) if m else np.zeros((d, 0))

    def hamiltonian_drift(self, n_samples: int = 64) -> float:
        """max |H(l(t)) - H(l(t0))| over a sample grid (diagnostic)."""
        ts = np.linspace(self.t0, self.t1, n_samples)
        h0 = self.field.value(self.y0[: 2 * self.n], self.r)
        return max(abs(self.field.value(self.state_array(t), self.r) - h0)
                   for t in ts)


def _run(field, y0: np.ndarray, t0: float, t1: float, r: np.ndarray,
         opts: IntegratorOptions, rhs, n: int,
         has_variational: bool) -> FlowSegment:
    if t0 == t1:
        return FlowSegment(field=field, r=r, t0=t0, t1=t1, n=n,
                           sol=_ConstantSolution(y0.copy()), y0=y0.copy(),
                           y1=y0.copy(), n_steps=0, error_estimate=0.0,
                           has_variational=has_variational)
    res = solve_ivp(rhs, (t0, t1), y0, method=opts.method, rtol=opts.rtol,
                    atol=opts.atol, max_step=opts.max_step, dense_output=True)
    if not res.success:
        raise StepFailure(f"integration failed on [{t0}, {t1}]: {res.message}")
    n_steps = max(1, len(res.t) - 1)
    scale = opts.atol + opts.rtol * float(np.max(np.abs(res.y)))
    return FlowSegment(field=field, r=r, t0=t0, t1=t1, n=n, sol=res.sol,
                       y0=y0.copy(), y1=res.y[:, -1].copy(), n_steps=n_steps,
                       error_estimate=scale * n_steps,
                       has_variational=has_variational)


def _initial_array(l0, n: int) -> np.ndarray:
    if isinstance(l0, CotangentPoint):
        return l0.as_array().astype(float)
    y = np.asarray(l0, dtype=float)
    if y.shape != (2 * n,):
        raise ValueError(f"initial point must have length {2 * n}")
    return y.copy()


def integrate(field, l0, t0: float, t1: float, r=None,
              opts: IntegratorOptions = DEFAULT_OPTIONS) -> FlowSegment:
    """Integrate the Hamiltonian flow of ``field`` from ``l0`` over
    ``[t0, t1]`` (backward if ``t1 < t0``) and return a dense segment."""
    n = field.n
    r = np.zeros(field.m) if r is None else np.asarray(r, float)
    y0 = _initial_array(l0, n)

    def rhs(_t, y):
        return field.field(y, r)

    return _run(field, y0, t0, t1, r, opts, rhs, n, has_variational=False)


def variational(field, l0, t0: float, t1: float, r=None,
                opts: IntegratorOptions = DEFAULT_OPTIONS) -> FlowSegment:
    """Integrate the flow together with its state transition matrix
    (identity at ``t0``) and parameter sensitivity (zero at ``t0``)."""
    n = field.n
    m = field.m
    r = np.zeros(m) if r is None else np.asarray(r, float)
    d = 2 * n
    y0 = np.concatenate([_initial_array(l0, n), np.eye(d).ravel(),
                         np.zeros(d * m)])

    def rhs(_t, y):
        l = y[:d]
        J = field.field_jacobian(l, r)
        phi = y[d:d + d * d].reshape(d, d)
        out = np.empty_like(y)
        out[:d] = field.field(l, r)
        out[d:d + d * d] = (J @ phi).ravel()
        if m:
            psi = y[d + d * d:].reshape(d, m)
            out[d + d * d:] = (J @ psi + field.field_r_jacobian(l, r)).ravel()
        return out

    return _run(field, y0, t0, t1, r, opts, rhs, n, has_variational=True)
