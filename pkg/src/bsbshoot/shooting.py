"""Newton solution of the endpoint-plus-switching system, with parameter
continuation and implicit-function sensitivities.

The unknown is z = (omega, tau1, tau2, T).  The map driven to zero stacks
the endpoint mismatch of the three-arc flow with the three entry conditions
at the first junction:

    Psi(r, z) = ( q(T) - b(r),  F1(l(tau1)),  F01(l(tau1)),  F0(l(tau1)) - 1 )

Its Jacobian is assembled from the variational flow of each arc rather than
differenced: the omega block pushes vertical variations (delta-omega, 0)
through all three transitions; the time columns are field differences at
the junctions (switching an arc's field earlier trades one generator for
the other); and the three switching rows depend on tau2 and T not at all —
those entries are exact zeros, which doubles as a cheap self-test of the
assembly order.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (NoConvergence, SGLCViolated, SingularJacobian,
                     StepFailure, StructureBroken)
from .extremal import (DEFAULT_CERTIFY_OPTIONS, BsBExtremal, CertifyOptions,
                       CertificationReport, ExtremalStructure, certify,
                       integrate_arcs)
from .flows import IntegratorOptions
from .geometry import DEFAULT_SGLC_TOL, ParametricAffineSystem

__all__ = [
    "SolverOptions", "DEFAULT_SOLVER_OPTIONS", "ShootingResidual",
    "ContinuationRecord", "residual", "jacobian", "newton_solve",
    "continue_path", "uniqueness_scan",
]

SHOOTING_INTEGRATOR = IntegratorOptions(atol=1e-12, rtol=1e-12)


@dataclass(frozen=True)
class SolverOptions:
    newton_tol: float = 1e-10
    max_iter: int = 25
    cond_max: float = 1e12
    min_backtrack: float = 1.0 / 1024.0
    sglc_tol: float = DEFAULT_SGLC_TOL
    integrator: IntegratorOptions = SHOOTING_INTEGRATOR
    certify: CertifyOptions = DEFAULT_CERTIFY_OPTIONS
    certify_solutions: bool = True
    # uniqueness_scan knobs
    n_probe: int = 200
    probe_box: Optional[float] = None     # default 0.1 * ||omega||
    probe_time_frac: float = 0.1          # of the smallest arc duration
    distinct_tol: float = 1e-6
    seed: int = 20260821


DEFAULT_SOLVER_OPTIONS = SolverOptions()


@dataclass(frozen=True)
class ShootingResidual:
    """Endpoint mismatch plus the three first-junction conditions."""

    phi: np.ndarray
    s1: float
    s2: float
    s3: float

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.phi, [self.s1, self.s2, self.s3]])

    @property
    def norm(self) -> float:
        return float(np.max(np.abs(self.stacked())))


@dataclass(frozen=True)
class ContinuationRecord:
    """A converged solve at one parameter value.

    ``sensitivity`` is dz/dr = -(dPsi/dz)^{-1} dPsi/dr, the implicit-
    function derivative of the solution branch; ``report`` is None only
    when certification was explicitly switched off (probe solves).
    """

    r: np.ndarray
    structure: ExtremalStructure
    extremal: BsBExtremal
    residual_norm: float
    iterations: int
    jacobian: np.ndarray
    condition: float
    sensitivity: np.ndarray
    report: Optional[CertificationReport]


def _junction_values(sys: ParametricAffineSystem, y1, r):
    s1 = sys.h_control.value(y1, r)
    s2 = sys.h_bracket01.value(y1, r)
    s3 = sys.h_drift.value(y1, r) - 1.0
    return s1, s2, s3


def residual(sys: ParametricAffineSystem, r, z: ExtremalStructure,
             opts: SolverOptions = DEFAULT_SOLVER_OPTIONS) -> ShootingResidual:
    r = np.zeros(sys.m) if r is None else np.asarray(r, float)
    seg1, seg2, seg3 = integrate_arcs(sys, r, z, opts.integrator,
                                      sglc_tol=opts.sglc_tol)
    n = sys.n
    phi = seg3.y1[n:2 * n] - sys.b(r)
    s1, s2, s3 = _junction_values(sys, seg1.y1[:2 * n], r)
    return ShootingResidual(phi, s1, s2, s3)


def jacobian(sys: ParametricAffineSystem, r, z: ExtremalStructure,
             opts: SolverOptions = DEFAULT_SOLVER_OPTIONS
             ) -> tuple[np.ndarray, np.ndarray]:
    """Return (dPsi/dz, dPsi/dr), shapes (n+3, n+3) and (n+3, m)."""
    r = np.zeros(sys.m) if r is None else np.asarray(r, float)
    n, m = sys.n, sys.m
    d = 2 * n
    seg1, seg2, seg3 = integrate_arcs(sys, r, z, opts.integrator,
                                      with_variations=True,
                                      sglc_tol=opts.sglc_tol)
    y1 = seg1.y1[:d]     # first junction
    y2 = seg2.y1[:d]     # second junction
    yT = seg3.y1[:d]     # endpoint
    M1 = seg1.transition(seg1.t1)
    M2 = seg2.transition(seg2.t1)
    M3 = seg3.transition(seg3.t1)
    M32 = M3 @ M2

    h1 = sys.bang_hamiltonian(z.u1)
    hs = sys.singular_hamiltonian(opts.sglc_tol)
    h2 = sys.bang_hamiltonian(z.u2)

    J = np.zeros((n + 3, n + 3))
    # covector block: vertical initial variations carried through all arcs
    V0 = np.zeros((d, n))
    V0[:n] = np.eye(n)
    MV = M1 @ V0
    prop = M32 @ MV
    J[:n, :n] = prop[n:]
    # time columns: shrinking an arc swaps its generator for the next one's
    J[:n, n] = (M32 @ (h1.field(y1, r) - hs.field(y1, r)))[n:]
    J[:n, n + 1] = (M3 @ (hs.field(y2, r) - h2.field(y2, r)))[n:]
    J[:n, n + 2] = h2.field(yT, r)[n:]
    # switching rows: everything happens at l(tau1); tau2/T entries stay 0
    vH1 = h1.field(y1, r)
    for i, h in enumerate((sys.h_control, sys.h_bracket01, sys.h_drift)):
        g = h.grad(y1, r)
        J[n + i, :n] = g @ MV
        J[n + i, n] = g @ vH1

    Jr = np.zeros((n + 3, m))
    if m:
        E0 = np.zeros((d, m))
        E0[n:] = sys.da(r)
        E1 = M1 @ E0 + seg1.r_sensitivity(seg1.t1)
        E2 = M2 @ E1 + seg2.r_sensitivity(seg2.t1)
        E3 = M3 @ E2 + seg3.r_sensitivity(seg3.t1)
        Jr[:n] = E3[n:] - sys.db(r)
        for i, h in enumerate((sys.h_control, sys.h_bracket01, sys.h_drift)):
            Jr[n + i] = h.grad(y1, r) @ E1 + h.r_grad(y1, r)
    return J, Jr


def _stepped(z: ExtremalStructure, delta: np.ndarray,
             alpha: float) -> ExtremalStructure:
    return ExtremalStructure.from_vector(z.as_vector() + alpha * delta,
                                         u1=z.u1, u2=z.u2)


def newton_solve(sys: ParametricAffineSystem, r, z0: ExtremalStructure,
                 opts: SolverOptions = DEFAULT_SOLVER_OPTIONS
                 ) -> ContinuationRecord:
    """Damped Newton from ``z0``; on success certifies the solution and
    attaches the parameter sensitivity of the branch."""
    r = np.zeros(sys.m) if r is None else np.asarray(r, float)
    z = z0
    res = residual(sys, r, z, opts)
    norm = res.norm
    iterations = 0
    for _ in range(opts.max_iter):
        if norm <= opts.newton_tol:
            break
        J, _ = jacobian(sys, r, z, opts)
        cond = float(np.linalg.cond(J))
        if not np.isfinite(cond) or cond > opts.cond_max:
            raise SingularJacobian(
                f"shooting Jacobian condition {cond:.3e} exceeds "
                f"{opts.cond_max:.1e} at iteration {iterations}")
        delta = np.linalg.solve(J, -res.stacked())
        alpha = 1.0
        while True:
            try:
                z_try = _stepped(z, delta, alpha)
                res_try = residual(sys, r, z_try, opts)
            except (StructureBroken, SGLCViolated, StepFailure):
                res_try = None
            if res_try is not None and res_try.norm < (1 - 1e-4 * alpha) * norm:
                z, res, norm = z_try, res_try, res_try.norm
                break
            alpha *= 0.5
            if alpha < opts.min_backtrack:
                raise NoConvergence(
                    f"line search stalled at residual {norm:.3e} "
                    f"after {iterations} iterations")
        iterations += 1
    else:
        raise NoConvergence(
            f"residual {norm:.3e} after {opts.max_iter} iterations "
            f"(tol {opts.newton_tol:.1e})")

    J, Jr = jacobian(sys, r, z, opts)
    condition = float(np.linalg.cond(J))
    sensitivity = np.linalg.solve(J, -Jr) if sys.m else np.zeros((sys.n + 3, 0))
    segs = integrate_arcs(sys, r, z, opts.integrator, sglc_tol=opts.sglc_tol)
    ext = BsBExtremal(sys=sys, r=r, structure=z, segments=segs)
    report = certify(ext, sys, r, opts.certify) if opts.certify_solutions else None
    return ContinuationRecord(r=r, structure=z, extremal=ext,
                              residual_norm=norm, iterations=iterations,
                              jacobian=J, condition=condition,
                              sensitivity=sensitivity, report=report)


def continue_path(sys: ParametricAffineSystem, r_path, z0: ExtremalStructure,
                  opts: SolverOptions = DEFAULT_SOLVER_OPTIONS,
                  max_halvings: int = 8) -> list[ContinuationRecord]:
    """Predictor-corrector continuation along the given parameter values.

    Returns one record per reached entry of ``r_path``.  Between entries
    the step is halved adaptively (up to ``max_halvings`` levels) whenever
    the corrector fails; intermediate sub-steps are not recorded.  If a
    solution fails certification the failing record is appended and the
    walk stops there: the certified branch has been left.
    """
    targets = [np.asarray(p, float) for p in r_path]
    if not targets:
        return []
    records: list[ContinuationRecord] = []
    rec = newton_solve(sys, targets[0], z0, opts)
    records.append(rec)
    if rec.report is not None and not rec.report.passed:
        return records

    for target in targets[1:]:
        r_cur = rec.r
        z_cur = rec.structure
        sens = rec.sensitivity
        remaining = [target]
        level = 0
        while remaining:
            r_next = remaining[-1]
            dr = r_next - r_cur
            try:
                z_pred = _stepped(z_cur, sens @ dr, 1.0)
                step_rec = newton_solve(sys, r_next, z_pred, opts)
            except (NoConvergence, SingularJacobian, SGLCViolated,
                    StepFailure, StructureBroken):
                level += 1
                if level > max_halvings:
                    raise NoConvergence(
                        f"continuation step toward {r_next} failed after "
                        f"{max_halvings} halvings")
                remaining.append(r_cur + 0.5 * dr)
                continue
            remaining.pop()
            r_cur, z_cur, sens = step_rec.r, step_rec.structure, \
                step_rec.sensitivity
            rec = step_rec
            if step_rec.report is not None and not step_rec.report.passed:
                records.append(step_rec)
                return records
        records.append(rec)
    return records


def uniqueness_scan(sys: ParametricAffineSystem, r,
                    record: ContinuationRecord,
                    opts: SolverOptions = DEFAULT_SOLVER_OPTIONS) -> dict:
    """Probe random starts around a converged solution and count the
    distinct zeros the solver finds.  A coarse check, not a proof: probes
    that fail to converge are ignored."""
    r = np.zeros(sys.m) if r is None else np.asarray(r, float)
    z_star = record.structure
    box = opts.probe_box
    if box is None:
        box = 0.1 * float(np.linalg.norm(z_star.omega))
    gaps = (z_star.tau1, z_star.tau2 - z_star.tau1, z_star.T - z_star.tau2)
    eps_t = opts.probe_time_frac * min(gaps)
    rng = np.random.default_rng(opts.seed)
    probe_opts = dataclasses.replace(opts, certify_solutions=False)

    found = [z_star.as_vector()]
    for _ in range(opts.n_probe):
        zv = z_star.as_vector().copy()
        zv[:z_star.n] += box * rng.uniform(-1.0, 1.0, z_star.n)
        zv[z_star.n:] += eps_t * rng.uniform(-1.0, 1.0, 3)
        try:
            probe = ExtremalStructure.from_vector(zv, u1=z_star.u1,
                                                  u2=z_star.u2)
            rec = newton_solve(sys, r, probe, probe_opts)
        except (NoConvergence, SingularJacobian, SGLCViolated, StepFailure,
                StructureBroken):
            continue
        zs = rec.structure.as_vector()
        if all(np.max(np.abs(zs - known)) > opts.distinct_tol
               for known in found):
            found.append(zs)
    return {"n_zeros_found": len(found)}
