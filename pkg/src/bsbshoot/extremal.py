"""Assembly and certification of bang-singular-bang extremal candidates.

An extremal candidate is fixed by its structure unknowns: initial covector
``omega``, switching times ``tau1 < tau2``, final time ``T``, and the two
bang levels.  ``assemble`` flows the three arcs in sequence from the left
endpoint; ``certify`` then evaluates every pointwise assumption the
shooting formulation relies on and reports signed margins, so a failed
certificate shows *which* inequality broke and by how much.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial.distance import cdist

from .errors import BsbError, StructureBroken
from .flows import (DEFAULT_OPTIONS, FlowSegment, IntegratorOptions,
                    integrate, variational)
from .geometry import (DEFAULT_SGLC_TOL, CotangentPoint,
                       ParametricAffineSystem)
from .secondvar import (DEFAULT_SV_OPTIONS, LagrangianFrame,
                        SecondVariationOptions, build_singular_arc_data,
                        coercivity_hamiltonian, coercivity_qp,
                        controllability_rank)


@dataclass(frozen=True, eq=False)
class ExtremalStructure:
    """Unknowns of a bang-singular-bang extremal: initial covector, the two
    switching times, the final time, and the fixed bang levels."""

    omega: np.ndarray
    tau1: float
    tau2: float
    T: float
    u1: float = -1.0
    u2: float = -1.0

    def __post_init__(self):
        object.__setattr__(self, "omega",
                           np.asarray(self.omega, float).copy())
        if not (0.0 < self.tau1 < self.tau2 < self.T):
            raise StructureBroken(
                f"need 0 < tau1 < tau2 < T, got tau1={self.tau1:.6g}, "
                f"tau2={self.tau2:.6g}, T={self.T:.6g}")
        if self.u1 not in (-1.0, 1.0) or self.u2 not in (-1.0, 1.0):
            raise StructureBroken("bang levels must be -1 or +1")

    @property
    def n(self) -> int:
        return len(self.omega)

    def as_vector(self) -> np.ndarray:
        """Flatten to ``(omega, tau1, tau2, T)`` - the shooting unknowns."""
        return np.concatenate([self.omega,
                               [self.tau1, self.tau2, self.T]])

    @classmethod
    def from_vector(cls, z, u1: float = -1.0,
                    u2: float = -1.0) -> "ExtremalStructure":
        z = np.asarray(z, float)
        return cls(z[:-3], float(z[-3]), float(z[-2]), float(z[-1]),
                   float(u1), float(u2))


def integrate_arcs(sys: ParametricAffineSystem, r, z: ExtremalStructure,
                   opts: IntegratorOptions = DEFAULT_OPTIONS, *,
                   with_variations: bool = False,
                   sglc_tol: float = DEFAULT_SGLC_TOL
                   ) -> tuple[FlowSegment, FlowSegment, FlowSegment]:
    """Flow bang / singular / bang arcs in sequence from ``a(r)``.

    This is the single integration path shared by assembly and by the
    shooting residual, so both see bit-identical trajectories.
    """
    r = np.zeros(sys.m) if r is None else np.asarray(r, float)
    run = variational if with_variations else integrate
    l0 = CotangentPoint(z.omega, sys.a(r))
    seg1 = run(sys.bang_hamiltonian(z.u1), l0, 0.0, z.tau1, r, opts)
    seg2 = run(sys.singular_hamiltonian(sglc_tol), seg1.endpoint,
               z.tau1, z.tau2, r, opts)
    seg3 = run(sys.bang_hamiltonian(z.u2), seg2.endpoint,
               z.tau2, z.T, r, opts)
    return seg1, seg2, seg3


@dataclass(frozen=True, eq=False)
class BsBExtremal:
    """A dense bang-singular-bang trajectory in the cotangent bundle."""

    sys: ParametricAffineSystem
    r: np.ndarray
    structure: ExtremalStructure
    segments: tuple[FlowSegment, FlowSegment, FlowSegment]

    @property
    def junction1(self) -> CotangentPoint:
        return self.segments[0].endpoint

    @property
    def junction2(self) -> CotangentPoint:
        return self.segments[1].endpoint

    @property
    def endpoint(self) -> CotangentPoint:
        return self.segments[2].endpoint

    def _segment_for(self, t: float) -> FlowSegment:
        z = self.structure
        slack = 1e-12 * max(1.0, z.T)
        if t < -slack or t > z.T + slack:
            raise ValueError(f"t={t:.6g} outside [0, {z.T:.6g}]")
        if t <= z.tau1:
            return self.segments[0]
        if t <= z.tau2:
            return self.segments[1]
        return self.segments[2]

    def state(self, t: float) -> CotangentPoint:
        seg = self._segment_for(t)
        return seg.state(min(max(t, seg.t0), seg.t1))

    def control(self, t: float) -> float:
        z = self.structure
        if t < z.tau1:
            return z.u1
        if t > z.tau2:
            return z.u2
        sing = self.sys.singular_hamiltonian()
        return sing.feedback(self.state(t), self.r)

    def switching_function(self, t: float) -> float:
        """Value of the control Hamiltonian along the trajectory."""
        return self.sys.h_control.value(self.state(t), self.r)

    def endpoint_gap(self) -> np.ndarray:
        """q(T) - b(r): what the shooting residual drives to zero."""
        return self.endpoint.q - self.sys.b(self.r)


def assemble(sys: ParametricAffineSystem, r, z: ExtremalStructure,
             opts: IntegratorOptions = DEFAULT_OPTIONS,
             sglc_tol: float = DEFAULT_SGLC_TOL) -> BsBExtremal:
    """Integrate the three arcs for structure ``z`` under parameter ``r``."""
    r = np.zeros(sys.m) if r is None else np.asarray(r, float)
    segs = integrate_arcs(sys, r, z, opts, sglc_tol=sglc_tol)
    return BsBExtremal(sys=sys, r=r, structure=z, segments=segs)


@dataclass(frozen=True)
class CertifyOptions:
    """Certification tunables.

    Bang-arc margins exclude a collar of ``collar_frac`` times the arc
    length next to the junction (the switching function vanishes to second
    order there, so the closed-arc minimum is structurally zero).  The
    injectivity margin ignores pairs of samples closer in time than
    ``injectivity_collar_frac`` times the final time.
    """

    grid_per_arc: int = 512
    collar_frac: float = 1e-3
    injectivity_collar_frac: float = 0.02
    refine: bool = True
    secondvar: SecondVariationOptions = DEFAULT_SV_OPTIONS


DEFAULT_CERTIFY_OPTIONS = CertifyOptions()


@dataclass(frozen=True)
class CertificationReport:
    """Signed margins for every pointwise assumption, plus the delegated
    second-variation verdicts.  ``passed`` is the conjunction: positive
    margins and junction values, ``sup_v < 1``, full controllability rank,
    and both coercivity routes returning ``coercive``."""

    passed: bool
    margin_bang1: float
    margin_bang2: float
    margin_sglc: float
    junction1: float
    junction2: float
    sup_v: float
    normality_drift: float
    switching_residuals: tuple[float, float, float]
    singular_lift_sup: float
    singular_bracket_sup: float
    controllability_rank: int
    controllability_sv: float
    coercivity_flow: str
    coercivity_flow_sigma: Optional[float]
    coercivity_qp: str
    coercivity_qp_min_eig: Optional[float]
    qp_richardson_change: Optional[float]
    injectivity_margin: float
    notes: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        d = asdict(self)
        d["switching_residuals"] = list(self.switching_residuals)
        d["notes"] = list(self.notes)
        return d


def _extremum(seg: FlowSegment, fn, a: float, b: float, *, grid: int,
              largest: bool, refine: bool) -> float:
    """Min (or max) of ``fn(flat state)`` over ``[a, b]`` on a sample grid
    with one bounded local polish around the worst sample."""
    if b < a:
        a, b = b, a
    if b == a:
        return float(fn(seg.state_array(a)))
    ts = np.linspace(a, b, grid)
    ys = np.asarray(seg.state_array(ts))
    sign = -1.0 if largest else 1.0
    vals = np.array([sign * fn(ys[:, j]) for j in range(ys.shape[1])])
    j = int(np.argmin(vals))
    best, lo, hi = vals[j], ts[max(j - 1, 0)], ts[min(j + 1, len(ts) - 1)]
    if refine and hi > lo:
        polish = minimize_scalar(
            lambda t: sign * fn(seg.state_array(t)),
            bounds=(float(lo), float(hi)), method="bounded",
            options={"xatol": 1e-10 * max(1.0, b - a)})
        best = min(best, polish.fun)
    return float(sign * best)


def certify(ext: BsBExtremal, sys: Optional[ParametricAffineSystem] = None,
            r=None, opts: CertifyOptions = DEFAULT_CERTIFY_OPTIONS
            ) -> CertificationReport:
    """Evaluate all assumption margins for an assembled extremal.

    Never raises on a failed condition: failures surface as non-positive
    margins (or ``error`` verdicts with a note) so callers can report them.
    """
    sys = ext.sys if sys is None else sys
    r = ext.r if r is None else np.asarray(r, float)
    z = ext.structure
    seg1, seg2, seg3 = ext.segments
    n = sys.n

    def lowest(seg, fn, a, b):
        return _extremum(seg, fn, a, b, grid=opts.grid_per_arc,
                         largest=False, refine=opts.refine)

    def highest(seg, fn, a, b):
        return _extremum(seg, fn, a, b, grid=opts.grid_per_arc,
                         largest=True, refine=opts.refine)

    h1 = sys.bang_hamiltonian(z.u1)
    h2 = sys.bang_hamiltonian(z.u2)
    hs = sys.singular_hamiltonian()
    F0, F1 = sys.h_drift, sys.h_control
    F01 = sys.h_bracket01
    F001, F101 = sys.h_bracket001, sys.h_bracket101

    # bang-arc sign margins, away from the junction collar
    e1 = opts.collar_frac * z.tau1
    e2 = opts.collar_frac * (z.T - z.tau2)
    margin_bang1 = lowest(seg1, lambda y: z.u1 * F1.value(y, r),
                          0.0, z.tau1 - e1)
    margin_bang2 = lowest(seg3, lambda y: z.u2 * F1.value(y, r),
                          z.tau2 + e2, z.T)

    # singular-arc conditions
    margin_sglc = lowest(seg2, lambda y: F101.value(y, r), z.tau1, z.tau2)
    sup_v = highest(seg2, lambda y: abs(hs.feedback(y, r)), z.tau1, z.tau2)
    lift_sup = highest(seg2, lambda y: abs(F1.value(y, r)), z.tau1, z.tau2)
    bracket_sup = highest(seg2, lambda y: abs(F01.value(y, r)),
                          z.tau1, z.tau2)

    # junction regularity
    l1, l2 = ext.junction1, ext.junction2
    junction1 = z.u1 * F001.value(l1, r) + F101.value(l1, r)
    junction2 = z.u2 * F001.value(l2, r) + F101.value(l2, r)

    # normality: the running Hamiltonian must stay at its entry value 1
    drift = max(
        highest(seg1, lambda y: abs(h1.value(y, r) - 1.0), 0.0, z.tau1),
        highest(seg2, lambda y: abs(hs.value(y, r) - 1.0), z.tau1, z.tau2),
        highest(seg3, lambda y: abs(h2.value(y, r) - 1.0), z.tau2, z.T))

    switching_residuals = (float(F1.value(l1, r)), float(F01.value(l1, r)),
                           float(F0.value(l1, r) - 1.0))

    # state-trajectory injectivity on the concatenated grid
    ts_all, xs = [], []
    for seg in ext.segments:
        ts = np.linspace(seg.t0, seg.t1, opts.grid_per_arc)
        ts_all.append(ts)
        xs.append(np.asarray(seg.state_array(ts))[n:].T)
    ts_all = np.concatenate(ts_all)
    xs = np.vstack(xs)
    collar = opts.injectivity_collar_frac * z.T
    dt = np.abs(ts_all[:, None] - ts_all[None, :])
    dists = cdist(xs, xs)
    far = dt > collar
    injectivity = float(dists[far].min()) if far.any() else math.inf

    # delegated second-variation checks
    notes: list[str] = []
    try:
        data = build_singular_arc_data(ext, sys, r, opts.secondvar)
        frame = LagrangianFrame.from_system(sys, l1, r)
        fv = coercivity_hamiltonian(data, frame, opts.secondvar)
        qv = coercivity_qp(data, sys, opts.secondvar)
        rk = controllability_rank(data, sys, opts.secondvar)
        flow_verdict, flow_sigma = fv.verdict, fv.sigma_min
        qp_verdict, qp_min = qv.verdict, qv.min_eig
        qp_change = qv.richardson_change
        rank, rank_sv = rk.rank, rk.smallest_sv
    except BsbError as exc:
        notes.append(f"second-variation stage failed: {exc}")
        flow_verdict = qp_verdict = "error"
        flow_sigma = qp_min = qp_change = None
        rank, rank_sv = 0, 0.0

    passed = (margin_bang1 > 0.0 and margin_bang2 > 0.0
              and margin_sglc > 0.0 and junction1 > 0.0 and junction2 > 0.0
              and sup_v < 1.0 and injectivity > 0.0 and rank == n
              and flow_verdict == "coercive" and qp_verdict == "coercive")

    return CertificationReport(
        passed=passed,
        margin_bang1=margin_bang1,
        margin_bang2=margin_bang2,
        margin_sglc=margin_sglc,
        junction1=float(junction1),
        junction2=float(junction2),
        sup_v=sup_v,
        normality_drift=drift,
        switching_residuals=switching_residuals,
        singular_lift_sup=lift_sup,
        singular_bracket_sup=bracket_sup,
        controllability_rank=rank,
        controllability_sv=rank_sv,
        coercivity_flow=flow_verdict,
        coercivity_flow_sigma=flow_sigma,
        coercivity_qp=qp_verdict,
        coercivity_qp_min_eig=qp_min,
        qp_richardson_change=qp_change,
        injectivity_margin=injectivity,
        notes=tuple(notes),
    )
