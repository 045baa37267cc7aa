"""Shared fixtures and randomized-input helpers for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest

from bsbshoot import symexpr as sx
from bsbshoot.geometry import ParametricAffineSystem, VectorField


# ---------------------------------------------------------------------------
# random expression trees

def random_expr(rng: np.random.Generator, n_state: int, n_param: int,
                depth: int = 4) -> sx.Expr:
    """Arbitrary normalized expression tree (may be unsafe to evaluate)."""
    if depth == 0 or rng.random() < 0.3:
        kind = rng.integers(0, 3)
        if kind == 0:
            return sx.lit(round(float(rng.uniform(-4, 4)), 3))
        if kind == 1 and n_state:
            return sx.state(int(rng.integers(1, n_state + 1)))
        if n_param:
            return sx.param(int(rng.integers(1, n_param + 1)))
        return sx.state(int(rng.integers(1, n_state + 1)))
    op = rng.integers(0, 7)
    a = random_expr(rng, n_state, n_param, depth - 1)
    b = random_expr(rng, n_state, n_param, depth - 1)
    if op == 0:
        return sx.add(a, b)
    if op == 1:
        return sx.sub(a, b)
    if op == 2:
        return sx.mul(a, b)
    if op == 3:
        return sx.div(a, b)
    if op == 4:
        return sx.neg(a)
    if op == 5:
        return sx.powi(a, int(rng.integers(-3, 4)))
    return sx.call(["sin", "cos", "exp", "sqrt"][rng.integers(0, 4)], a)


def random_smooth_expr(rng: np.random.Generator, n_state: int, n_param: int,
                       depth: int = 3) -> sx.Expr:
    """Expression that is smooth and finite on all of R^n (no div/sqrt),
    suitable for finite-difference comparisons."""
    if depth == 0 or rng.random() < 0.35:
        kind = rng.integers(0, 3)
        if kind == 0:
            return sx.lit(round(float(rng.uniform(-2, 2)), 3))
        if kind == 1 and n_state:
            return sx.state(int(rng.integers(1, n_state + 1)))
        if n_param:
            return sx.param(int(rng.integers(1, n_param + 1)))
        return sx.state(int(rng.integers(1, n_state + 1)))
    op = rng.integers(0, 6)
    a = random_smooth_expr(rng, n_state, n_param, depth - 1)
    b = random_smooth_expr(rng, n_state, n_param, depth - 1)
    if op == 0:
        return sx.add(a, b)
    if op == 1:
        return sx.sub(a, b)
    if op == 2:
        return sx.mul(a, b)
    if op == 3:
        return sx.powi(a, int(rng.integers(2, 4)))
    if op == 4:
        return sx.mul(sx.lit(round(float(rng.uniform(-1, 1)), 3)),
                      sx.call("sin", a))
    return sx.call("cos", a)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260821)


# ---------------------------------------------------------------------------
# reference systems

def make_dubins() -> ParametricAffineSystem:
    """Unit-speed car with steering control and a two-parameter wind drift.

    At r = 0 the time-optimal path between the standard endpoints is a
    quarter turn, a straight run of length 8, and another quarter turn,
    all with closed-form state and costate.
    """
    return ParametricAffineSystem.from_strings(
        f0=("cos(x3)+r1", "sin(x3)+r2", "0"),
        f1=("0", "0", "1"),
        a=("0", "0", "pi/2"),
        b=("10", "0", "-pi/2"),
        n=3, m=2)


DUBINS_OMEGA = np.array([1.0, 0.0, -1.0])
DUBINS_TAU1 = math.pi / 2
DUBINS_TAU2 = math.pi / 2 + 8.0
DUBINS_T = 8.0 + math.pi


def make_wiggly() -> ParametricAffineSystem:
    """Dubins-like system with state-dependent perturbations in every slot,
    used to exercise the generic derivative paths (nonzero second-order
    brackets, parameter-dependent control field and endpoints)."""
    return ParametricAffineSystem.from_strings(
        f0=("cos(x3) + r1 + 0.1*sin(x2)", "sin(x3) + r2 + 0.05*x1", "0.08*x1"),
        f1=("0.05*x2", "0", "1 + 0.1*cos(x1)"),
        a=("0", "r2", "pi/2"),
        b=("10 - r1", "0", "-pi/2"),
        n=3, m=2)


def random_vector_field(rng: np.random.Generator, n: int = 3,
                        m: int = 2) -> VectorField:
    comps = [random_smooth_expr(rng, n, m, depth=2) for _ in range(n)]
    return VectorField(comps, n, m)


# Wiggly-system data with a genuine singular entry: omega was solved (to
# machine precision, Newton on the two switching components) so that the
# first junction lands exactly on F1 = F01 = 0.  The times are arbitrary;
# the trajectory does not reach b, which certification does not require.
WIGGLY_R = np.array([0.01, -0.02])
WIGGLY_OMEGA = np.array([1.0, 2.9334924273290226, -0.15685601241521063])
WIGGLY_TAU1, WIGGLY_TAU2, WIGGLY_T = 0.3, 0.8, 1.1


@pytest.fixture(scope="session")
def dubins() -> ParametricAffineSystem:
    return make_dubins()


@pytest.fixture(scope="session")
def wiggly() -> ParametricAffineSystem:
    return make_wiggly()


@pytest.fixture(scope="session")
def dubins_extremal(dubins):
    from bsbshoot.extremal import ExtremalStructure, assemble
    z = ExtremalStructure(DUBINS_OMEGA, DUBINS_TAU1, DUBINS_TAU2, DUBINS_T)
    return assemble(dubins, np.zeros(2), z)


@pytest.fixture(scope="session")
def wiggly_extremal(wiggly):
    from bsbshoot.extremal import ExtremalStructure, assemble
    z = ExtremalStructure(WIGGLY_OMEGA, WIGGLY_TAU1, WIGGLY_TAU2, WIGGLY_T)
    return assemble(wiggly, WIGGLY_R, z)
