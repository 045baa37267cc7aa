"""Second-variation tests along the singular arc.

Everything here works on ``SingularArcData``: the strengthened-Legendre
quantity ``R(t)``, the control bracket dragged back to the arc entry point
``g1(t)``, and the row functional ``c(t)`` coupling a state variation to the
costate through the bracket Jacobian.  Together these define a constrained
quadratic form in a scalar density ``w`` and two entry multipliers
``(eps0, eps1)``:

    J(eps0, eps1, w) = 1/2 int (w^2 R + 2 w c.zeta) dt,
    zeta' = w g1,   zeta(t0) = eps0 f0(x1) + eps1 f1(x1),   zeta(t1) = 0.

Coercivity of J is decided by two deliberately independent routes that serve
as oracles for each other:

* ``coercivity_hamiltonian`` integrates the linear flow of the accessory
  Hamiltonian  G_t(omega, dx) = (<omega, g1> - c.dx)^2 / (2R)  applied to a
  Lagrangian frame and watches the projected frame for rank drops (conjugate
  points).  The cross term enters with a minus sign: G is the Legendre
  transform in ``w`` of the integrand above, so its canonical flow is the
  stationarity system of J.
* ``coercivity_qp`` discretizes J directly (piecewise-constant ``w``, exact
  per-interval integrals) and inspects the smallest eigenvalue of the
  Hessian reduced onto the constraint null space.

``controllability_rank`` checks that the anchor fields together with the
dragged bracket span the whole state space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import solve_ivp
from scipy.linalg import eigh, null_space
from scipy.optimize import brentq, minimize_scalar

from .errors import (IntegrationFailure, RankDeficientConstraints,
                     SGLCViolated, ValidationError)
from .flows import IntegratorOptions
from .geometry import DEFAULT_SGLC_TOL, CotangentPoint, _as_pq


@dataclass(frozen=True)
class SecondVariationOptions:
    """Tunables for the singular-arc tests.

    ``kernel_tol`` and ``eig_tol`` are relative: the flow test compares the
    smallest against the largest singular value of the projected frame, the
    QP test compares the smallest reduced eigenvalue against the overall
    scale of the reduced pencil.  ``delta0_frac`` sets the initial-time
    exclusion (as a fraction of arc length) that skips the structural rank-2
    degeneracy of the projected frame at the arc entry.
    """

    kernel_tol: float = 1e-7
    eig_tol: float = 1e-7
    delta0_frac: float = 1e-4
    monitor_points: int = 257
    qp_intervals: int = 128
    n_samples: int = 64
    rank_tol: float = 1e-8
    integrator: IntegratorOptions = IntegratorOptions(atol=1e-11, rtol=1e-11)


DEFAULT_SV_OPTIONS = SecondVariationOptions()


class SingularArcData:
    """Dense data along one singular arc, transported to the arc entry.

    ``g1(t) = S(t)^{-1} f01(xi(t))`` where ``S`` is the state transition of
    the closed-loop base flow from the arc entry, ``c(t)`` is the row
    ``-mu(t)^T Df01(xi(t)) S(t)``, and ``R(t)`` is the second-order bracket
    Hamiltonian along the arc.  Instances built synthetically (for tests)
    may omit the reference arc and transition accessors.
    """

    def __init__(self, t0: float, t1: float, n: int,
                 f0_x1: np.ndarray, f1_x1: np.ndarray,
                 R: Callable[[float], float],
                 g1: Callable[[float], np.ndarray],
                 c: Callable[[float], np.ndarray],
                 x1: Optional[np.ndarray] = None,
                 mu1: Optional[np.ndarray] = None,
                 batch: Optional[Callable] = None,
                 lam: Optional[Callable] = None,
                 S: Optional[Callable] = None):
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.n = int(n)
        self.f0_x1 = np.asarray(f0_x1, float)
        self.f1_x1 = np.asarray(f1_x1, float)
        self.x1 = None if x1 is None else np.asarray(x1, float)
        self.mu1 = None if mu1 is None else np.asarray(mu1, float)
        self._R = R
        self._g1 = g1
        self._c = c
        self._batch = batch
        self._lam = lam
        self._S = S
        if self.t1 < self.t0:
            raise ValidationError("singular arc must have t1 >= t0")
        if self.f0_x1.shape != (self.n,) or self.f1_x1.shape != (self.n,):
            raise ValidationError("anchor fields must have length n")

    # -- scalar accessors -------------------------------------------------
    def R(self, t: float) -> float:
        return float(self._R(t))

    def g1(self, t: float) -> np.ndarray:
        return np.asarray(self._g1(t), float)

    def c(self, t: float) -> np.ndarray:
        return np.asarray(self._c(t), float)

    def lam(self, t: float) -> CotangentPoint:
        if self._lam is None:
            raise ValueError("no reference arc attached to this data")
        return self._lam(t)

    def S(self, t: float) -> np.ndarray:
        if self._S is None:
            raise ValueError("no transition accessor attached to this data")
        return np.asarray(self._S(t), float)

    # -- bulk accessor ----------------------------------------------------
    def batch(self, ts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sample ``(R, g1, c)`` at an array of times: shapes
        ``(K,), (K, n), (K, n)``."""
        ts = np.atleast_1d(np.asarray(ts, float))
        if self._batch is not None:
            return self._batch(ts)
        K = len(ts)
        Rv = np.empty(K)
        gv = np.empty((K, self.n))
        cv = np.empty((K, self.n))
        for k, t in enumerate(ts):
            Rv[k] = self._R(t)
            gv[k] = self._g1(t)
            cv[k] = self._c(t)
        return Rv, gv, cv

    def sample(self, t: float) -> tuple[float, np.ndarray, np.ndarray]:
        Rv, gv, cv = self.batch(np.array([t]))
        return float(Rv[0]), gv[0], cv[0]


def build_singular_arc_data(ext, sys, r=None,
                            opts: SecondVariationOptions = DEFAULT_SV_OPTIONS
                            ) -> SingularArcData:
    """Integrate the closed-loop transition along the singular arc of
    ``ext`` and package the dense second-variation data.

    Raises ``SGLCViolated`` if the Legendre quantity is not positive on a
    check grid of the arc.
    """
    seg = ext.segments[1]
    n = sys.n
    r = np.zeros(sys.m) if r is None else np.asarray(r, float)
    t0, t1 = seg.t0, seg.t1
    l1 = seg.state(t0)
    x1, mu1 = l1.q, l1.p
    sing = sys.singular_hamiltonian()
    f0, f1 = sys.drift, sys.control
    b01 = sys.brackets.bracket01
    b101 = sys.brackets.bracket101

    def s_rhs(t, y):
        lam_flat = seg.state_array(t)
        q = lam_flat[n:]
        u = sing.feedback(lam_flat, r)
        M = f0.jac(q, r) + u * f1.jac(q, r)
        return (M @ y.reshape(n, n)).ravel()

    io = opts.integrator
    if t1 > t0:
        res = solve_ivp(s_rhs, (t0, t1), np.eye(n).ravel(), method=io.method,
                        atol=io.atol, rtol=io.rtol, dense_output=True)
        if not res.success:
            raise IntegrationFailure(
                f"transition integration failed on the singular arc: "
                f"{res.message}")
        s_dense = res.sol
    else:
        eye = np.eye(n).ravel()

        def s_dense(ts):
            ts = np.asarray(ts)
            if ts.ndim == 0:
                return eye.copy()
            return np.repeat(eye[:, None], ts.shape[0], axis=1)

    def batch(ts):
        ts = np.atleast_1d(np.asarray(ts, float))
        lam_flat = np.atleast_2d(np.asarray(seg.state_array(ts)))
        mus = lam_flat[:n].T
        qs = lam_flat[n:].T
        S_all = np.asarray(s_dense(ts)).T.reshape(-1, n, n)
        K = len(ts)
        f01v = np.empty((K, n))
        f101v = np.empty((K, n))
        J01 = np.empty((K, n, n))
        for k in range(K):
            q = qs[k]
            f01v[k] = b01(q, r)
            f101v[k] = b101(q, r)
            J01[k] = b01.jac(q, r)
        Rv = np.einsum("ka,ka->k", mus, f101v)
        if np.any(Rv <= 0.0):
            t_bad = ts[int(np.argmin(Rv))]
            raise SGLCViolated(
                f"Legendre quantity {Rv.min():.3e} <= 0 at t={t_bad:.6g}")
        gv = np.linalg.solve(S_all, f01v[:, :, None])[:, :, 0]
        rows = np.einsum("ka,kab->kb", mus, J01)
        cv = -np.einsum("kb,kbc->kc", rows, S_all)
        return Rv, gv, cv

    def lam(t):
        return seg.state(t)

    def S(t):
        return np.asarray(s_dense(t)).reshape(n, n)

    data = SingularArcData(
        t0, t1, n,
        f0_x1=f0(x1, r), f1_x1=f1(x1, r),
        R=lambda t: batch(np.array([t]))[0][0],
        g1=lambda t: batch(np.array([t]))[1][0],
        c=lambda t: batch(np.array([t]))[2][0],
        x1=x1, mu1=mu1, batch=batch, lam=lam, S=S)

    # positivity sweep; the margin itself is certified elsewhere
    grid = np.linspace(t0, t1, 65)
    Rv, _, _ = data.batch(grid)
    if Rv.min() <= DEFAULT_SGLC_TOL:
        raise SGLCViolated(
            f"Legendre quantity min {Rv.min():.3e} <= {DEFAULT_SGLC_TOL:g} "
            f"on the singular arc")
    return data


@dataclass(frozen=True)
class LagrangianFrame:
    """Basis of the Lagrangian subspace the conjugate-point flow acts on.

    Columns of ``matrix`` (shape ``2n x n``), in order: ``n - 2`` purely
    covector directions annihilating both anchor fields, then the
    Hamiltonian lifts of drift and control at the arc entry point.  At the
    entry the projection to the base has rank exactly 2 (the span of the
    anchor fields); the flow test excludes a small initial window for that
    reason.
    """

    matrix: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0] // 2

    @classmethod
    def from_vectors(cls, f0_x1, f1_x1, hvec0, hvec1) -> "LagrangianFrame":
        f0 = np.asarray(f0_x1, float)
        f1 = np.asarray(f1_x1, float)
        n = f0.size
        anchors = np.vstack([f0, f1])
        if np.linalg.matrix_rank(anchors) < 2:
            raise ValidationError(
                "anchor fields are linearly dependent at the arc entry")
        cols = []
        if n > 2:
            vert = null_space(anchors)
            for j in range(vert.shape[1]):
                cols.append(np.concatenate([vert[:, j], np.zeros(n)]))
        cols.append(np.asarray(hvec0, float))
        cols.append(np.asarray(hvec1, float))
        return cls(np.column_stack(cols))

    @classmethod
    def from_system(cls, sys, l1, r=None) -> "LagrangianFrame":
        r = np.zeros(sys.m) if r is None else np.asarray(r, float)
        _, q = _as_pq(l1, sys.n)
        return cls.from_vectors(sys.drift(q, r), sys.control(q, r),
                                sys.h_drift.field(l1, r),
                                sys.h_control.field(l1, r))

    def symplectic_defect(self) -> float:
        """Largest pairing of the canonical form between basis columns;
        zero (to tolerance) exactly when the frame is Lagrangian."""
        n = self.n
        M = self.matrix
        pair = M[:n].T @ M[n:]  # pair[i, j] = <p_i, q_j>
        return float(np.max(np.abs(pair - pair.T)))

    def base_rank(self, tol: float = 1e-9) -> int:
        sv = np.linalg.svd(self.matrix[self.n:], compute_uv=False)
        return int(np.sum(sv > tol * max(sv[0], 1.0)))


@dataclass(frozen=True)
class FlowVerdict:
    """Outcome of the conjugate-point flow test.  ``sigma_min`` is the
    smallest relative singular value of the projected frame seen on the
    monitored window (``None`` for an empty window)."""

    verdict: str
    sigma_min: Optional[float]
    t_worst: Optional[float]
    kernel_tol: float


def coercivity_hamiltonian(data: SingularArcData, frame: LagrangianFrame,
                           opts: SecondVariationOptions = DEFAULT_SV_OPTIONS
                           ) -> FlowVerdict:
    """Integrate the accessory Hamiltonian flow applied to ``frame`` and
    classify the arc by the worst-case rank margin of the projected frame.

    Verdicts: ``coercive`` if the relative smallest singular value stays
    above ``kernel_tol`` on ``(t0 + delta0, t1]``; ``not_coercive`` if it
    drops below ``kernel_tol / 10``; ``marginal`` in between.
    """
    n = data.n
    dur = data.t1 - data.t0
    if dur <= 0.0:
        return FlowVerdict("coercive", None, None, opts.kernel_tol)
    defect = frame.symplectic_defect()
    if defect > 1e-8 * max(1.0, float(np.max(np.abs(frame.matrix)))):
        raise ValidationError(
            f"frame is not Lagrangian (defect {defect:.3e})")
    Y0 = frame.matrix
    ncols = Y0.shape[1]

    def rhs(t, y):
        Rv, gv, cv = data.sample(t)
        Y = y.reshape(2 * n, ncols)
        s = (gv @ Y[:n] - cv @ Y[n:]) / Rv
        return np.concatenate([np.outer(cv, s), np.outer(gv, s)]).ravel()

    io = opts.integrator
    res = solve_ivp(rhs, (data.t0, data.t1), Y0.ravel(), method=io.method,
                    atol=io.atol, rtol=io.rtol, dense_output=True)
    if not res.success:
        raise IntegrationFailure(
            f"conjugate-point flow failed: {res.message}")

    def sigma_rel(t: float) -> float:
        Y = res.sol(t).reshape(2 * n, ncols)
        sv = np.linalg.svd(Y[n:], compute_uv=False)
        return sv[-1] / sv[0] if sv[0] > 0.0 else 0.0

    def proj_det(t: float) -> float:
        return float(np.linalg.det(res.sol(t).reshape(2 * n, ncols)[n:]))

    delta0 = opts.delta0_frac * dur
    ts = np.linspace(data.t0 + delta0, data.t1, opts.monitor_points)
    flat = np.asarray(res.sol(ts))
    vals = np.empty(len(ts))
    dets = np.empty(len(ts))
    for j in range(len(ts)):
        Y = flat[:, j].reshape(2 * n, ncols)
        sv = np.linalg.svd(Y[n:], compute_uv=False)
        vals[j] = sv[-1] / sv[0] if sv[0] > 0.0 else 0.0
        dets[j] = np.linalg.det(Y[n:])
    jmin = int(np.argmin(vals))
    smin, tstar = float(vals[jmin]), float(ts[jmin])
    lo = float(ts[max(jmin - 1, 0)])
    hi = float(ts[min(jmin + 1, len(ts) - 1)])
    if hi > lo:
        polish = minimize_scalar(sigma_rel, bounds=(lo, hi),
                                 method="bounded",
                                 options={"xatol": max(1e-12, 1e-10 * dur)})
        if polish.fun < smin:
            smin, tstar = float(polish.fun), float(polish.x)
    # a sign change of the projected determinant pins a rank drop between
    # two samples even when the dip in sigma is too narrow for the grid
    flips = np.nonzero(dets[:-1] * dets[1:] < 0.0)[0]
    if flips.size:
        j = int(flips[0])
        t_cross = brentq(proj_det, ts[j], ts[j + 1], xtol=1e-13 * max(1.0, dur))
        s_cross = sigma_rel(t_cross)
        if s_cross < smin:
            smin, tstar = float(s_cross), float(t_cross)

    if smin > opts.kernel_tol:
        verdict = "coercive"
    elif smin < 0.1 * opts.kernel_tol:
        verdict = "not_coercive"
    else:
        verdict = "marginal"
    return FlowVerdict(verdict, smin, tstar, opts.kernel_tol)


@dataclass(frozen=True)
class QpVerdict:
    """Outcome of the direct QP route.  Eigenvalues refer to the Hessian of
    the discretized form reduced onto the constraint null space, relative
    to the discrete L2 mass."""

    verdict: str
    min_eig: float
    max_eig: float
    min_eig_coarse: float
    richardson_change: float
    intervals: int


_GL_NODES, _GL_WEIGHTS = leggauss(5)
# map from values of a quartic at the nodes to values (at the same nodes) of
# its primitive vanishing at the left endpoint of [-1, 1]
_V = np.vander(_GL_NODES, 5, increasing=True)
_PRIM = np.empty((5, 5))
for _j in range(5):
    for _k in range(5):
        _PRIM[_j, _k] = (_GL_NODES[_j] ** (_k + 1)
                         - (-1.0) ** (_k + 1)) / (_k + 1)
_ANTI = (_PRIM @ np.linalg.inv(_V)).T
del _V, _PRIM, _j, _k


def _qp_spectrum(data: SingularArcData, f0: np.ndarray, f1: np.ndarray,
                 N: int) -> tuple[float, float]:
    """Smallest/largest generalized eigenvalue of the reduced Hessian with
    ``w`` piecewise constant on ``N`` uniform intervals.

    All per-interval integrals are Gauss-Legendre with quartic
    interpolation of the sampled data, so they are exact for the
    interpolants (degree <= 9 products)."""
    t0, t1, n = data.t0, data.t1, data.n
    edges = np.linspace(t0, t1, N + 1)
    h = (t1 - t0) / (2.0 * N)
    ts = edges[:-1, None] + (_GL_NODES[None, :] + 1.0) * h
    Rv, gv, cv = data.batch(ts.ravel())
    Rv = Rv.reshape(N, 5)
    gv = gv.reshape(N, 5, n)
    cv = cv.reshape(N, 5, n)
    w = _GL_WEIGHTS

    m = h * np.einsum("q,Nqa->Na", w, gv)          # integral of g1 per cell
    C = h * np.einsum("q,Nqa->Na", w, cv)          # integral of c per cell
    intR = h * np.einsum("q,Nq->N", w, Rv)
    prim = h * np.einsum("Nka,kq->Nqa", gv, _ANTI)  # running integral of g1
    cross = h * np.einsum("q,Nqa,Nqa->N", w, cv, prim)

    dim = N + 2
    H = np.zeros((dim, dim))
    H[0, 2:] = H[2:, 0] = C @ f0
    H[1, 2:] = H[2:, 1] = C @ f1
    low = np.tril(C @ m.T, -1)  # cell i feels the displacement of cells < i
    H[2:, 2:] = low + low.T + np.diag(intR + 2.0 * cross)

    A = np.zeros((n, dim))
    A[:, 0] = f0
    A[:, 1] = f1
    A[:, 2:] = m.T
    rank = int(np.linalg.matrix_rank(A))
    if rank < n:
        raise RankDeficientConstraints(
            f"endpoint constraint matrix has rank {rank} < {n}")
    Z = null_space(A)
    mass = np.concatenate([[1.0, 1.0], np.full(N, (t1 - t0) / N)])
    Hr = Z.T @ H @ Z
    Mr = (Z * mass[:, None]).T @ Z
    vals = eigh(Hr, Mr, eigvals_only=True)
    return float(vals[0]), float(vals[-1])


def coercivity_qp(data: SingularArcData, sys=None,
                  opts: SecondVariationOptions = DEFAULT_SV_OPTIONS
                  ) -> QpVerdict:
    """Discretize the constrained quadratic form and classify it by the
    smallest reduced eigenvalue, with a Richardson consistency check at
    ``N`` and ``2N`` intervals."""
    if sys is not None and sys.n != data.n:
        raise ValidationError("system dimension does not match arc data")
    if data.t1 <= data.t0:
        return QpVerdict("coercive", math.inf, math.inf, math.inf, 0.0, 0)
    f0, f1 = data.f0_x1, data.f1_x1
    N = opts.qp_intervals
    lo_c, _ = _qp_spectrum(data, f0, f1, N)
    lo_f, hi_f = _qp_spectrum(data, f0, f1, 2 * N)
    scale = max(1.0, abs(lo_f), abs(hi_f))
    thr = opts.eig_tol * scale
    change = abs(lo_f - lo_c) / max(abs(lo_f), thr)
    if lo_f > thr:
        verdict = "coercive"
    elif lo_f < -thr:
        verdict = "not_coercive"
    else:
        verdict = "marginal"
    return QpVerdict(verdict, lo_f, hi_f, lo_c, change, 2 * N)


@dataclass(frozen=True)
class RankResult:
    """Numerical rank of the controllability span along the arc."""

    rank: int
    smallest_sv: float
    singular_values: tuple[float, ...]


def controllability_rank(data: SingularArcData, sys=None,
                         opts: SecondVariationOptions = DEFAULT_SV_OPTIONS
                         ) -> RankResult:
    """Rank of ``[f0(x1), f1(x1), g1(t_k)]`` for ``t_k`` sampled along the
    arc, with threshold ``rank_tol`` times the largest singular value."""
    if sys is not None and sys.n != data.n:
        raise ValidationError("system dimension does not match arc data")
    ts = np.linspace(data.t0, data.t1, opts.n_samples)
    _, gv, _ = data.batch(ts)
    cols = np.column_stack([data.f0_x1, data.f1_x1, gv.T])
    sv = np.linalg.svd(cols, compute_uv=False)
    rank = int(np.sum(sv > opts.rank_tol * sv[0]))
    return RankResult(rank, float(sv[min(data.n, len(sv)) - 1]),
                      tuple(float(s) for s in sv[:data.n]))
