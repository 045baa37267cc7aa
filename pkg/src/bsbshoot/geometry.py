"""Control-affine vector fields, Lie brackets, and Hamiltonian lifts.

Conventions used throughout the package:

* a cotangent point is ``l = (p, q)`` with costate first; flattened as the
  length-``2n`` array ``[p, q]``;
* the Lie bracket is ``[f, g](q) = Dg(q) f(q) - Df(q) g(q)``;
* the lift of a field ``f`` is ``F(l) = <p, f(q)>`` and its Hamiltonian
  vector field is ``(-Df(q)^T p, f(q))``;
* the Poisson bracket is ``{F, G}(l) = dG(l) . F_vec(l)``, which for lifts
  gives ``{F_f, F_g} = <p, [f, g](q)>``;
* the symplectic pairing is ``sigma(v, w) = <v_p, w_q> - <v_q, w_p>``.

Singular arcs of a system ``dq/dt = f0 + u f1`` live where the lift of
``f1`` and its first bracket lift both vanish; the singular feedback is
``u = -H001/H101`` in terms of the second-order bracket lifts, defined
whenever ``H101`` stays positive (the strengthened Legendre condition for
this problem class).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import symexpr as sx
from .errors import EvalDomainError, SGLCViolated, ValidationError

__all__ = [
    "CotangentPoint", "VectorField", "BracketSet", "lie_bracket",
    "iterated_brackets", "LiftedHamiltonian", "SingularHamiltonian",
    "ParametricAffineSystem", "poisson", "symplectic_form",
    "singular_control", "on_sigma", "on_S", "DEFAULT_SGLC_TOL",
]

DEFAULT_SGLC_TOL = 1e-9

_NUMERIC_ERRORS = (ZeroDivisionError, ValueError, OverflowError)


@dataclass(frozen=True)
class CotangentPoint:
    """Point of the cotangent bundle over R^n: costate ``p`` and state ``q``."""

    p: np.ndarray
    q: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.q])

    @classmethod
    def from_array(cls, y: np.ndarray, n: int) -> "CotangentPoint":
        y = np.asarray(y, dtype=float)
        return cls(p=y[:n].copy(), q=y[n:2 * n].copy())


def _as_pq(l, n: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(l, CotangentPoint):
        return np.asarray(l.p, float), np.asarray(l.q, float)
    y = np.asarray(l, dtype=float)
    return y[:n], y[n:2 * n]


def _compile_entry(e: sx.Expr):
    # literal entries are stored as plain floats to skip the call overhead
    if isinstance(e, sx.Lit):
        return e.value
    return sx.compile_expr(e)


def _call_entry(entry, q, r) -> float:
    return entry if type(entry) is float else entry(q, r)


class VectorField:
    """Vector field on R^n with entries given as expressions in states
    ``x1..xn`` and parameters ``r1..rm``.

    Symbolic first and second state derivatives and first parameter
    derivatives are prepared at construction, so numeric queries are
    plain closure evaluations.
    """

    def __init__(self, comps: Sequence[sx.Expr], n: int, m: int):
        comps = tuple(comps)
        if len(comps) != n:
            raise ValidationError(
                f"vector field needs {n} components, got {len(comps)}")
        self.n = n
        self.m = m
        self.comps = comps
        xs = [f"x{j}" for j in range(1, n + 1)]
        rs = [f"r{k}" for k in range(1, m + 1)]
        self._jac_exprs = [[sx.differentiate(c, xj) for xj in xs]
                           for c in comps]
        # symmetric second derivatives, stored for j <= k
        self._hess_exprs = [
            [[sx.differentiate(self._jac_exprs[i][j], xs[k])
              for k in range(j, n)] for j in range(n)]
            for i in range(n)
        ]
        self._dr_exprs = [[sx.differentiate(c, rk) for rk in rs]
                          for c in comps]
        self._drx_exprs = [[[sx.differentiate(self._jac_exprs[i][j], rk)
                             for rk in rs] for j in range(n)]
                           for i in range(n)]

        self._comp_fns = [_compile_entry(e) for e in comps]
        self._jac_fns = [[_compile_entry(e) for e in row]
                         for row in self._jac_exprs]
        self._hess_fns = [[[_compile_entry(e) for e in row]
                           for row in plane] for plane in self._hess_exprs]
        self._dr_fns = [[_compile_entry(e) for e in row]
                        for row in self._dr_exprs]
        self._drx_fns = [[[_compile_entry(e) for e in row]
                          for row in plane] for plane in self._drx_exprs]

    @classmethod
    def from_strings(cls, comps: Sequence[str], n: int, m: int) -> "VectorField":
        return cls([sx.parse(c, n, m) for c in comps], n, m)

    def __call__(self, q, r) -> np.ndarray:
        try:
            return np.array([_call_entry(f, q, r) for f in self._comp_fns])
        except _NUMERIC_ERRORS as exc:
            raise EvalDomainError(str(exc)) from exc

    def jac(self, q, r) -> np.ndarray:
        """State Jacobian, ``J[i, j] = d f_i / d x_j``."""
        try:
            return np.array([[_call_entry(f, q, r) for f in row]
                             for row in self._jac_fns])
        except _NUMERIC_ERRORS as exc:
            raise EvalDomainError(str(exc)) from exc

    def hess_contract(self, p, q, r) -> np.ndarray:
        """``sum_i p_i d^2 f_i / dx_j dx_k`` as a symmetric (n, n) matrix."""
        n = self.n
        out = np.zeros((n, n))
        try:
            for i in range(n):
                pi = p[i]
                if pi == 0.0:
                    continue
                plane = self._hess_fns[i]
                for j in range(n):
                    for kk, f in enumerate(plane[j]):
                        v = pi * _call_entry(f, q, r)
                        k = j + kk
                        out[j, k] += v
                        if k != j:
                            out[k, j] += v
        except _NUMERIC_ERRORS as exc:
            raise EvalDomainError(str(exc)) from exc
        return out

    def dr(self, q, r) -> np.ndarray:
        """Parameter Jacobian, ``(n, m)``: ``d f_i / d r_k``."""
        try:
            return np.array([[_call_entry(f, q, r) for f in row]
                             for row in self._dr_fns]).reshape(self.n, self.m)
        except _NUMERIC_ERRORS as exc:
            raise EvalDomainError(str(exc)) from exc

    def drx_contract(self, p, q, r) -> np.ndarray:
        """``sum_i p_i d^2 f_i / dx_j dr_k`` as an (n, m) matrix."""
        out = np.zeros((self.n, self.m))
        try:
            for i in range(self.n):
                pi = p[i]
                if pi == 0.0:
                    continue
                for j in range(self.n):
                    for k, f in enumerate(self._drx_fns[i][j]):
                        out[j, k] += pi * _call_entry(f, q, r)
        except _NUMERIC_ERRORS as exc:
            raise EvalDomainError(str(exc)) from exc
        return out


def lie_bracket(f: VectorField, g: VectorField) -> VectorField:
    """Symbolic Lie bracket ``[f, g] = Dg f - Df g`` as a new field with
    its own derivative tables."""
    if f.n != g.n or f.m != g.m:
        raise ValidationError("bracket of fields with mismatched dimensions")
    comps = []
    for i in range(f.n):
        acc: sx.Expr = sx.lit(0.0)
        for j in range(f.n):
            acc = sx.add(acc, sx.sub(sx.mul(g._jac_exprs[i][j], f.comps[j]),
                                     sx.mul(f._jac_exprs[i][j], g.comps[j])))
        comps.append(acc)
    return VectorField(comps, f.n, f.m)


@dataclass(frozen=True)
class BracketSet:
    """First and second order brackets of a drift/control pair:
    ``bracket01 = [f0, f1]``, ``bracket001 = [f0, [f0, f1]]``,
    ``bracket101 = [f1, [f0, f1]]``."""

    bracket01: VectorField
    bracket001: VectorField
    bracket101: VectorField


def iterated_brackets(f0: VectorField, f1: VectorField) -> BracketSet:
    b01 = lie_bracket(f0, f1)
    return BracketSet(bracket01=b01,
                      bracket001=lie_bracket(f0, b01),
                      bracket101=lie_bracket(f1, b01))


# ---------------------------------------------------------------------------
# Hamiltonians on the cotangent bundle

def ham_field_from_grad(grad: np.ndarray) -> np.ndarray:
    """Hamiltonian vector field from a gradient in (p, q) ordering:
    ``(dp/dt, dq/dt) = (-dH/dq, dH/dp)``."""
    n = grad.shape[0] // 2
    return np.concatenate([-grad[n:], grad[:n]])


def ham_jac_from_hess(hess: np.ndarray) -> np.ndarray:
    n = hess.shape[0] // 2
    return np.vstack([-hess[n:, :], hess[:n, :]])


class LiftedHamiltonian:
    """``H(l) = <p, f(q)>`` for a vector field ``f``, with first and second
    derivatives in ``l`` and first derivatives in the parameters."""

    def __init__(self, vf: VectorField):
        self.vf = vf
        self.n = vf.n
        self.m = vf.m

    def value(self, l, r) -> float:
        p, q = _as_pq(l, self.n)
        return float(p @ self.vf(q, r))

    def grad(self, l, r) -> np.ndarray:
        p, q = _as_pq(l, self.n)
        return np.concatenate([self.vf(q, r), self.vf.jac(q, r).T @ p])

    def hess(self, l, r) -> np.ndarray:
        p, q = _as_pq(l, self.n)
        n = self.n
        J = self.vf.jac(q, r)
        H = np.zeros((2 * n, 2 * n))
        H[:n, n:] = J
        H[n:, :n] = J.T
        H[n:, n:] = self.vf.hess_contract(p, q, r)
        return H

    def r_grad(self, l, r) -> np.ndarray:
        p, q = _as_pq(l, self.n)
        return p @ self.vf.dr(q, r)

    def r_grad_l(self, l, r) -> np.ndarray:
        """Mixed derivatives ``d/dr (dH/dl)`` as a (2n, m) matrix."""
        p, q = _as_pq(l, self.n)
        return np.vstack([self.vf.dr(q, r), self.vf.drx_contract(p, q, r)])

    # Hamiltonian vector field and its linearizations -----------------------

    def field(self, l, r) -> np.ndarray:
        p, q = _as_pq(l, self.n)
        return np.concatenate([-(self.vf.jac(q, r).T @ p), self.vf(q, r)])

    def field_jacobian(self, l, r) -> np.ndarray:
        return ham_jac_from_hess(self.hess(l, r))

    def field_r_jacobian(self, l, r) -> np.ndarray:
        g = self.r_grad_l(l, r)
        n = self.n
        return np.vstack([-g[n:, :], g[:n, :]])


class SingularHamiltonian:
    """Hamiltonian generating the singular-arc flow.

    ``H = H0 + v H1`` with the singular feedback ``v = -H001/H101`` made
    from the second-order bracket lifts.  All derivatives are assembled by
    the product/quotient rules from the four lifted blocks, so the flow,
    its linearization, and its parameter sensitivity are exact (to
    rounding) rather than differenced.

    Raises SGLCViolated whenever an evaluation sees ``H101 <= tol``.
    """

    def __init__(self, sys: "ParametricAffineSystem",
                 tol: float = DEFAULT_SGLC_TOL):
        self.sys = sys
        self.n = sys.n
        self.m = sys.m
        self.tol = tol

    def _guard(self, b_value: float) -> None:
        if not b_value > self.tol:
            raise SGLCViolated(
                f"second-order bracket lift dropped to {b_value:.3e} "
                f"(tolerance {self.tol:.1e})")

    def feedback(self, l, r) -> float:
        """The singular control value at ``l``."""
        s = self.sys
        b = s.h_bracket101.value(l, r)
        self._guard(b)
        return -s.h_bracket001.value(l, r) / b

    def value(self, l, r) -> float:
        s = self.sys
        return s.h_drift.value(l, r) + self.feedback(l, r) * s.h_control.value(l, r)

    def _parts(self, l, r):
        s = self.sys
        a_v = s.h_bracket001.value(l, r)
        b_v = s.h_bracket101.value(l, r)
        self._guard(b_v)
        return a_v, b_v

    def grad(self, l, r) -> np.ndarray:
        s = self.sys
        a_v, b_v = self._parts(l, r)
        v = -a_v / b_v
        ga = s.h_bracket001.grad(l, r)
        gb = s.h_bracket101.grad(l, r)
        g1 = s.h_control.grad(l, r)
        f1_v = s.h_control.value(l, r)
        gv = -ga / b_v + (a_v / b_v ** 2) * gb
        return s.h_drift.grad(l, r) + v * g1 + f1_v * gv

    def hess(self, l, r) -> np.ndarray:
        s = self.sys
        a_v, b_v = self._parts(l, r)
        v = -a_v / b_v
        ga = s.h_bracket001.grad(l, r)
        gb = s.h_bracket101.grad(l, r)
        g1 = s.h_control.grad(l, r)
        f1_v = s.h_control.value(l, r)
        Ha = s.h_bracket001.hess(l, r)
        Hb = s.h_bracket101.hess(l, r)
        H1 = s.h_control.hess(l, r)
        gv = -ga / b_v + (a_v / b_v ** 2) * gb
        Hv = (-Ha / b_v
              + (np.outer(ga, gb) + np.outer(gb, ga)) / b_v ** 2
              + (a_v / b_v ** 2) * Hb
              - (2 * a_v / b_v ** 3) * np.outer(gb, gb))
        return (s.h_drift.hess(l, r) + v * H1
                + np.outer(gv, g1) + np.outer(g1, gv) + f1_v * Hv)

    def r_grad(self, l, r) -> np.ndarray:
        s = self.sys
        a_v, b_v = self._parts(l, r)
        v = -a_v / b_v
        a_r = s.h_bracket001.r_grad(l, r)
        b_r = s.h_bracket101.r_grad(l, r)
        v_r = -a_r / b_v + (a_v / b_v ** 2) * b_r
        return (s.h_drift.r_grad(l, r) + v * s.h_control.r_grad(l, r)
                + s.h_control.value(l, r) * v_r)

    def r_grad_l(self, l, r) -> np.ndarray:
        s = self.sys
        a_v, b_v = self._parts(l, r)
        v = -a_v / b_v
        ga = s.h_bracket001.grad(l, r)
        gb = s.h_bracket101.grad(l, r)
        g1 = s.h_control.grad(l, r)
        f1_v = s.h_control.value(l, r)
        a_r = s.h_bracket001.r_grad(l, r)
        b_r = s.h_bracket101.r_grad(l, r)
        f1_r = s.h_control.r_grad(l, r)
        ga_r = s.h_bracket001.r_grad_l(l, r)
        gb_r = s.h_bracket101.r_grad_l(l, r)
        g1_r = s.h_control.r_grad_l(l, r)
        gv = -ga / b_v + (a_v / b_v ** 2) * gb
        v_r = -a_r / b_v + (a_v / b_v ** 2) * b_r
        # d/dr of gv, one column per parameter
        gv_r = (-ga_r / b_v + np.outer(ga, b_r) / b_v ** 2
                + np.outer(gb, a_r) / b_v ** 2 + (a_v / b_v ** 2) * gb_r
                - (2 * a_v / b_v ** 3) * np.outer(gb, b_r))
        return (s.h_drift.r_grad_l(l, r) + np.outer(g1, v_r) + v * g1_r
                + np.outer(gv, f1_r) + f1_v * gv_r)

    def field(self, l, r) -> np.ndarray:
        return ham_field_from_grad(self.grad(l, r))

    def field_jacobian(self, l, r) -> np.ndarray:
        return ham_jac_from_hess(self.hess(l, r))

    def field_r_jacobian(self, l, r) -> np.ndarray:
        g = self.r_grad_l(l, r)
        n = self.n
        return np.vstack([-g[n:, :], g[:n, :]])


# ---------------------------------------------------------------------------
# the system bundle

class ParametricAffineSystem:
    """Single-input control-affine system ``dq/dt = f0(q; r) + u f1(q; r)``
    with parameter-dependent endpoints ``a(r)``, ``b(r)``.

    Brackets and Hamiltonian lifts are prepared once at construction.
    """

    def __init__(self, drift: VectorField, control: VectorField,
                 a_exprs: Sequence[sx.Expr], b_exprs: Sequence[sx.Expr]):
        if drift.n != control.n or drift.m != control.m:
            raise ValidationError("drift/control dimension mismatch")
        self.n = drift.n
        self.m = drift.m
        self.drift = drift
        self.control = control
        for label, exprs in (("a", a_exprs), ("b", b_exprs)):
            if len(exprs) != self.n:
                raise ValidationError(
                    f"endpoint {label} needs {self.n} components")
            for e in exprs:
                states = {v for v in sx.vars_used(e) if v.startswith("x")}
                if states:
                    raise ValidationError(
                        f"endpoint {label} may depend on parameters only, "
                        f"found {sorted(states)}")
        self.a_exprs = tuple(a_exprs)
        self.b_exprs = tuple(b_exprs)
        self._a_fns = [_compile_entry(e) for e in self.a_exprs]
        self._b_fns = [_compile_entry(e) for e in self.b_exprs]
        rs = [f"r{k}" for k in range(1, self.m + 1)]
        self._da_fns = [[_compile_entry(sx.differentiate(e, rk)) for rk in rs]
                        for e in self.a_exprs]
        self._db_fns = [[_compile_entry(sx.differentiate(e, rk)) for rk in rs]
                        for e in self.b_exprs]

        self.brackets = iterated_brackets(drift, control)
        self.h_drift = LiftedHamiltonian(drift)
        self.h_control = LiftedHamiltonian(control)
        self.h_bracket01 = LiftedHamiltonian(self.brackets.bracket01)
        self.h_bracket001 = LiftedHamiltonian(self.brackets.bracket001)
        self.h_bracket101 = LiftedHamiltonian(self.brackets.bracket101)
        self._bang_cache: dict[float, LiftedHamiltonian] = {}
        self._singular_cache: dict[float, SingularHamiltonian] = {}

    @classmethod
    def from_strings(cls, f0: Sequence[str], f1: Sequence[str],
                     a: Sequence[str], b: Sequence[str],
                     n: int, m: int) -> "ParametricAffineSystem":
        return cls(VectorField.from_strings(f0, n, m),
                   VectorField.from_strings(f1, n, m),
                   [sx.parse(e, n, m) for e in a],
                   [sx.parse(e, n, m) for e in b])

    def a(self, r) -> np.ndarray:
        try:
            return np.array([_call_entry(f, (), r) for f in self._a_fns])
        except _NUMERIC_ERRORS as exc:
            raise EvalDomainError(str(exc)) from exc

    def b(self, r) -> np.ndarray:
        try:
            return np.array([_call_entry(f, (), r) for f in self._b_fns])
        except _NUMERIC_ERRORS as exc:
            raise EvalDomainError(str(exc)) from exc

    def da(self, r) -> np.ndarray:
        return np.array([[_call_entry(f, (), r) for f in row]
                         for row in self._da_fns]).reshape(self.n, self.m)

    def db(self, r) -> np.ndarray:
        return np.array([[_call_entry(f, (), r) for f in row]
                         for row in self._db_fns]).reshape(self.n, self.m)

    def bang_hamiltonian(self, u: float) -> LiftedHamiltonian:
        """Lift of ``f0 + u f1`` for a constant bang level ``u``."""
        u = float(u)
        if u not in self._bang_cache:
            comps = [sx.add(c0, sx.mul(sx.lit(u), c1))
                     for c0, c1 in zip(self.drift.comps, self.control.comps)]
            self._bang_cache[u] = LiftedHamiltonian(
                VectorField(comps, self.n, self.m))
        return self._bang_cache[u]

    def singular_hamiltonian(self, tol: float = DEFAULT_SGLC_TOL
                             ) -> SingularHamiltonian:
        if tol not in self._singular_cache:
            self._singular_cache[tol] = SingularHamiltonian(self, tol)
        return self._singular_cache[tol]


# ---------------------------------------------------------------------------
# pointwise operations

def poisson(F, G, l, r) -> float:
    """Poisson bracket ``{F, G}(l) = dG(l) . F_vec(l)``."""
    return float(G.grad(l, r) @ F.field(l, r))


def symplectic_form(v: np.ndarray, w: np.ndarray) -> float:
    """``sigma(v, w) = <v_p, w_q> - <v_q, w_p>`` in (p, q) ordering."""
    n = v.shape[0] // 2
    return float(v[:n] @ w[n:] - v[n:] @ w[:n])


def singular_control(sys: ParametricAffineSystem, l, r,
                     tol: float = DEFAULT_SGLC_TOL) -> float:
    """Feedback value of the singular control at ``l``; raises
    SGLCViolated when the defining denominator is not safely positive."""
    return sys.singular_hamiltonian(tol).feedback(l, r)


def on_sigma(sys: ParametricAffineSystem, l, r, tol: float = 1e-9) -> bool:
    """Is ``l`` on the switching surface (control lift vanishing)?"""
    return abs(sys.h_control.value(l, r)) <= tol

def on_S(sys: ParametricAffineSystem, l, r, tol: float = 1e-9,
         sglc_tol: float = DEFAULT_SGLC_TOL) -> bool:
    """Is ``l`` on the singular surface: control lift and first bracket
    lift both vanish while the second-order bracket lift stays positive?"""
    return (abs(sys.h_control.value(l, r)) <= tol
            and abs(sys.h_bracket01.value(l, r)) <= tol
            and sys.h_bracket101.value(l, r) > sglc_tol)
