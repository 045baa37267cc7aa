"""Shooting residual, variational Jacobian, Newton, continuation, scan."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from bsbshoot.errors import NoConvergence, SGLCViolated
from bsbshoot.extremal import ExtremalStructure, assemble
from bsbshoot.shooting import (DEFAULT_SOLVER_OPTIONS, SolverOptions,
                               continue_path, jacobian, newton_solve,
                               residual, uniqueness_scan)

from conftest import (DUBINS_OMEGA, DUBINS_T, DUBINS_TAU1, DUBINS_TAU2,
                      make_dubins, make_wiggly)

R0 = np.zeros(2)


def _nominal_z() -> ExtremalStructure:
    return ExtremalStructure(DUBINS_OMEGA, DUBINS_TAU1, DUBINS_TAU2, DUBINS_T)


# ---------------------------------------------------------------------------
# residual

def test_residual_vanishes_at_solution(dubins):
    res = residual(dubins, R0, _nominal_z())
    assert res.norm <= 1e-9
    assert res.stacked().shape == (6,)


def test_residual_shares_the_assembly_flow(dubins):
    """Assembling and evaluating the residual ride the same integration,
    so the numbers agree bit-for-bit, not just to tolerance."""
    z = _nominal_z()
    ext = assemble(dubins, R0, z,
                   opts=DEFAULT_SOLVER_OPTIONS.integrator)
    res = residual(dubins, R0, z)
    assert np.array_equal(res.phi, ext.endpoint_gap())
    l1 = ext.junction1
    assert res.s1 == dubins.h_control.value(l1, R0)
    assert res.s2 == dubins.h_bracket01.value(l1, R0)
    assert res.s3 == dubins.h_drift.value(l1, R0) - 1.0


def test_residual_under_drift(dubins):
    """A pure x wind leaves the turn geometry and the costate alone: the
    switching components barely move (s3 picks up exactly r1 through the
    normalization) while the endpoint misses by r1 * T in x."""
    res = residual(dubins, np.array([0.01, 0.0]), _nominal_z())
    assert abs(res.s1) <= 1e-9
    assert abs(res.s2) <= 1e-9
    assert res.s3 == pytest.approx(0.01, abs=1e-9)
    assert res.phi[0] == pytest.approx(0.01 * DUBINS_T, abs=1e-9)
    assert abs(res.phi[1]) <= 1e-9
    assert abs(res.phi[2]) <= 1e-9


def test_residual_covector_probe(dubins):
    """Shifting omega3 moves s1 by exactly the shift: the third costate
    component rides along unchanged on the first arc."""
    for t in (1e-3, -2e-3):
        z = ExtremalStructure(DUBINS_OMEGA + np.array([0.0, 0.0, t]),
                              DUBINS_TAU1, DUBINS_TAU2, DUBINS_T)
        res = residual(dubins, R0, z)
        assert res.s1 == pytest.approx(t, abs=1e-9)


# ---------------------------------------------------------------------------
# Jacobian

def _fd_jacobian(sys, r, z, h=1e-6):
    J = np.zeros((sys.n + 3, sys.n + 3))
    for j in range(sys.n + 3):
        zp, zm = z.as_vector(), z.as_vector()
        zp[j] += h
        zm[j] -= h
        rp = residual(sys, r, ExtremalStructure.from_vector(zp, z.u1, z.u2))
        rm = residual(sys, r, ExtremalStructure.from_vector(zm, z.u1, z.u2))
        J[:, j] = (rp.stacked() - rm.stacked()) / (2 * h)
    return J


def test_jacobian_matches_fd_dubins(dubins):
    z = _nominal_z()
    J, Jr = jacobian(dubins, R0, z)
    Jfd = _fd_jacobian(dubins, R0, z)
    assert np.abs(J - Jfd).max() <= 1e-5 * max(1.0, np.abs(Jfd).max())
    h = 1e-6
    for j in range(2):
        rp, rm = R0.copy(), R0.copy()
        rp[j] += h
        rm[j] -= h
        col = (residual(dubins, rp, z).stacked()
               - residual(dubins, rm, z).stacked()) / (2 * h)
        assert np.abs(Jr[:, j] - col).max() <= 1e-6


def test_jacobian_structural_zeros_exact(dubins, wiggly):
    """The three switching rows live at l(tau1), which cannot depend on
    tau2 or T: those entries are identically zero, not merely small."""
    z = _nominal_z()
    J, _ = jacobian(dubins, R0, z)
    assert np.all(J[3:, 4] == 0.0)
    assert np.all(J[3:, 5] == 0.0)
    # same pattern away from any solution, on a generic system
    z2 = ExtremalStructure(np.array([0.8, 0.3, -1.1]), 0.4, 0.9, 1.3)
    J2, _ = jacobian(wiggly, np.array([0.01, -0.02]), z2)
    assert np.all(J2[3:, 4] == 0.0)
    assert np.all(J2[3:, 5] == 0.0)


def test_jacobian_fd_on_generic_system(wiggly):
    # away from a zero of the map, on a system with every term active
    z = ExtremalStructure(np.array([0.9, 0.2, -1.05]), 0.35, 0.85, 1.2)
    r = np.array([0.015, -0.01])
    J, Jr = jacobian(wiggly, r, z)
    Jfd = _fd_jacobian(wiggly, r, z)
    assert np.abs(J - Jfd).max() <= 1e-5 * max(1.0, np.abs(Jfd).max())
    h = 1e-6
    for j in range(2):
        rp, rm = r.copy(), r.copy()
        rp[j] += h
        rm[j] -= h
        col = (residual(wiggly, rp, z).stacked()
               - residual(wiggly, rm, z).stacked()) / (2 * h)
        assert np.abs(Jr[:, j] - col).max() <= 1e-5


def test_jacobian_nonsingular_at_solution(dubins):
    J, _ = jacobian(dubins, R0, _nominal_z())
    assert np.linalg.cond(J) < 1e6


# ---------------------------------------------------------------------------
# Newton

def test_newton_recovers_dubins(dubins, rng):
    z0 = ExtremalStructure.from_vector(
        _nominal_z().as_vector() + 1e-3 * rng.standard_normal(6))
    rec = newton_solve(dubins, R0, z0)
    err = np.abs(rec.structure.as_vector() - _nominal_z().as_vector()).max()
    assert err <= 1e-9
    assert rec.iterations <= 5
    assert rec.residual_norm <= 1e-10
    assert rec.condition < 1e6
    assert rec.report is not None and rec.report.passed
    # record sanity: jacobian and sensitivity shapes, extremal attached
    assert rec.jacobian.shape == (6, 6)
    assert rec.sensitivity.shape == (6, 2)
    assert np.linalg.norm(rec.extremal.endpoint_gap()) <= 1e-9


def test_newton_iteration_budget_is_enforced(dubins, rng):
    z0 = ExtremalStructure.from_vector(
        _nominal_z().as_vector() + 1e-3 * rng.standard_normal(6))
    with pytest.raises(NoConvergence):
        newton_solve(dubins, R0, z0,
                     dataclasses.replace(DEFAULT_SOLVER_OPTIONS, max_iter=1))


def test_newton_propagates_sglc_violation(dubins):
    z0 = ExtremalStructure(np.array([-1.0, 0.0, 1.0]),
                           DUBINS_TAU1, DUBINS_TAU2, DUBINS_T)
    with pytest.raises(SGLCViolated):
        newton_solve(dubins, R0, z0)


def test_newton_solves_drifted_problem(dubins):
    rec = newton_solve(dubins, np.array([0.02, 0.0]), _nominal_z())
    assert rec.residual_norm <= 1e-10
    assert rec.report.passed
    assert np.isfinite(rec.structure.T)
    # tailwind toward the target: shorter total time
    assert rec.structure.T < DUBINS_T


def test_sensitivity_closed_form_and_fd(dubins):
    """dz/dr column checks: the normalization p1 (1 + r1) = 1 forces
    d omega1 / d r1 = -1 exactly; the rest is checked against central
    differences of the solved branch."""
    rec = newton_solve(dubins, R0, _nominal_z())
    assert rec.sensitivity[0, 0] == pytest.approx(-1.0, abs=1e-8)
    h = 1e-4
    zp = newton_solve(dubins, np.array([h, 0.0]), _nominal_z())
    zm = newton_solve(dubins, np.array([-h, 0.0]), _nominal_z())
    fd = (zp.structure.as_vector() - zm.structure.as_vector()) / (2 * h)
    pred = rec.sensitivity[:, 0]
    assert np.abs(fd - pred).max() <= 1e-4 * max(1.0, np.abs(pred).max())


# ---------------------------------------------------------------------------
# continuation and the uniqueness probe

def test_continue_path_single_entry_equals_solve(dubins):
    recs = continue_path(dubins, [R0], _nominal_z())
    assert len(recs) == 1
    direct = newton_solve(dubins, R0, _nominal_z())
    assert np.array_equal(recs[0].structure.as_vector(),
                          direct.structure.as_vector())


def test_continue_path_drift_ray(dubins):
    targets = [np.array([t, 0.0]) for t in np.linspace(0.0, 0.03, 7)]
    recs = continue_path(dubins, targets, _nominal_z())
    assert len(recs) == 7
    assert all(r.report.passed for r in recs)
    assert max(r.residual_norm for r in recs) <= 1e-10
    Ts = [r.structure.T for r in recs]
    assert all(a > b for a, b in zip(Ts, Ts[1:]))   # tailwind shortens T
    # a pure x wind leaves the first turn untouched
    assert max(abs(r.structure.tau1 - DUBINS_TAU1) for r in recs) <= 1e-8
    # predictor consistency: neighbouring records differ by about
    # sensitivity * dr, quadratically small error in the step
    drr = targets[1][0] - targets[0][0]
    pred = recs[0].structure.as_vector() + recs[0].sensitivity[:, 0] * drr
    err = np.abs(pred - recs[1].structure.as_vector()).max()
    assert err <= 5.0 * drr ** 2 * max(1.0, np.abs(recs[0].sensitivity).max())


def test_uniqueness_scan_counts_one(dubins):
    rec = newton_solve(dubins, R0, _nominal_z())
    opts = dataclasses.replace(DEFAULT_SOLVER_OPTIONS, n_probe=15)
    assert uniqueness_scan(dubins, R0, rec, opts) == {"n_zeros_found": 1}


def test_uniqueness_scan_zero_box_trivial(dubins):
    rec = newton_solve(dubins, R0, _nominal_z())
    opts = dataclasses.replace(DEFAULT_SOLVER_OPTIONS, n_probe=5,
                               probe_box=0.0, probe_time_frac=0.0)
    assert uniqueness_scan(dubins, R0, rec, opts) == {"n_zeros_found": 1}


def test_wiggly_branch_solves_and_certifies():
    """Generic-coefficient regression: Newton finds a certified solution
    of the full system (all residual components, not just the Dubins
    closed forms) starting from the flat-geometry guess."""
    wig = make_wiggly()
    rec = newton_solve(wig, np.array([0.005, -0.005]),
                       ExtremalStructure(DUBINS_OMEGA, DUBINS_TAU1,
                                         DUBINS_TAU2, DUBINS_T))
    assert rec.residual_norm <= 1e-10
    assert rec.report.passed
