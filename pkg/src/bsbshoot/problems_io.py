"""Problem files, built-in problems, and result persistence.

A problem file is a JSON object describing one fixed-endpoint problem:
the drift and control vector fields as expression strings, the endpoint
maps (expressions in the parameters only), the two bang control levels,
and optionally an initial structure guess.  ``load_problem`` accepts
either a path to such a file or the name of a built-in.

Results are written back out as a single JSON document whose floats are
serialized with ``repr`` (shortest round-trip form), so a save/load
cycle reproduces every value bit for bit.  ``export_csv`` flattens one
record's sampled trajectory into a spreadsheet-friendly table.
"""

from __future__ import annotations

import dataclasses
import datetime
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import symexpr as sx
from .errors import ParseError, StructureBroken, ValidationError
from .extremal import ExtremalStructure
from .geometry import ParametricAffineSystem
from .shooting import ContinuationRecord, SolverOptions, DEFAULT_SOLVER_OPTIONS

__all__ = [
    "ProblemDefinition", "load_problem", "builtin_names",
    "ResultBundle", "make_bundle", "save_bundle", "load_bundle",
    "export_csv", "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1

_BANG_LEVELS = (-1.0, 1.0)

# Keys a problem file may put under "options"; everything else is a typo
# worth rejecting at load time.  Most map straight onto solver options,
# the last two onto the certifier.
_OPTION_KEYS = frozenset({
    "newton_tol", "max_iter", "cond_max", "min_backtrack", "sglc_tol",
    "certify_solutions", "n_probe", "probe_box", "probe_time_frac",
    "distinct_tol", "seed", "grid_per_arc", "collar_frac",
})


def _contains_state(e: sx.Expr) -> bool:
    if isinstance(e, sx.StateVar):
        return True
    return any(_contains_state(v) for v in vars(e).values()
               if not isinstance(v, (int, float, str)))


@dataclass(frozen=True, eq=False)
class ProblemDefinition:
    """A validated, self-contained description of one shooting problem.

    All dynamic data is carried as expression strings, so a definition
    survives a JSON round trip unchanged and two loads of the same file
    compare equal through ``to_dict``.
    """

    name: str
    n: int
    m: int
    f0: tuple[str, ...]
    f1: tuple[str, ...]
    a: tuple[str, ...]
    b: tuple[str, ...]
    u1: float = -1.0
    u2: float = -1.0
    z0: Optional[ExtremalStructure] = None
    default_r: Optional[tuple[float, ...]] = None
    options: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 1:
            raise ValidationError(f"n must be a positive integer, got {self.n!r}")
        if not isinstance(self.m, int) or self.m < 0:
            raise ValidationError(f"m must be a non-negative integer, got {self.m!r}")
        for label, comps in (("f0", self.f0), ("f1", self.f1),
                             ("a", self.a), ("b", self.b)):
            if len(comps) != self.n:
                raise ValidationError(
                    f"{label} has {len(comps)} components, expected n={self.n}")
        if not self.f0 or all(not c.strip() for c in self.f0):
            raise ValidationError("drift field f0 is empty")
        for label, u in (("u1", self.u1), ("u2", self.u2)):
            if u not in _BANG_LEVELS:
                raise ValidationError(f"{label} must be -1 or +1, got {u!r}")
        # Parse everything now so a bad file fails at load, not first use.
        for comps in (self.f0, self.f1):
            for c in comps:
                sx.parse(c, self.n, self.m)
        for label, comps in (("a", self.a), ("b", self.b)):
            for c in comps:
                if _contains_state(sx.parse(c, self.n, self.m)):
                    raise ValidationError(
                        f"endpoint {label} may only depend on parameters: {c!r}")
        if self.z0 is not None and len(self.z0.omega) != self.n:
            raise ValidationError(
                f"z0 covector has {len(self.z0.omega)} components, expected {self.n}")
        if self.default_r is not None and len(self.default_r) != self.m:
            raise ValidationError(
                f"default_r has {len(self.default_r)} components, expected m={self.m}")
        unknown = set(self.options) - _OPTION_KEYS
        if unknown:
            raise ValidationError(f"unknown option keys: {sorted(unknown)}")

    def build_system(self) -> ParametricAffineSystem:
        return ParametricAffineSystem.from_strings(
            self.f0, self.f1, self.a, self.b, self.n, self.m)

    def r_or_default(self, r=None) -> np.ndarray:
        if r is not None:
            r = np.asarray(r, dtype=float)
            if r.shape != (self.m,):
                raise ValidationError(
                    f"parameter vector has shape {r.shape}, expected ({self.m},)")
            return r
        if self.default_r is not None:
            return np.array(self.default_r, dtype=float)
        return np.zeros(self.m)

    def to_dict(self) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "n": self.n,
            "m": self.m,
            "f0": list(self.f0),
            "f1": list(self.f1),
            "a": list(self.a),
            "b": list(self.b),
            "u1": self.u1,
            "u2": self.u2,
            "z0": None,
            "default_r": None if self.default_r is None else list(self.default_r),
            "options": dict(self.options),
        }
        if self.z0 is not None:
            d["z0"] = {
                "omega": [float(w) for w in self.z0.omega],
                "tau1": self.z0.tau1,
                "tau2": self.z0.tau2,
                "T": self.z0.T,
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemDefinition":
        if not isinstance(d, dict):
            raise ValidationError(f"problem document must be an object, got {type(d).__name__}")
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValidationError(
                f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        known = {"schema_version", "name", "n", "m", "f0", "f1", "a", "b",
                 "u1", "u2", "z0", "default_r", "options"}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown fields: {sorted(extra)}")
        missing = {"name", "n", "m", "f0", "f1", "a", "b"} - set(d)
        if missing:
            raise ValidationError(f"missing required fields: {sorted(missing)}")

        def strings(key):
            v = d[key]
            if (not isinstance(v, list)
                    or not all(isinstance(c, str) for c in v)):
                raise ValidationError(f"{key} must be a list of strings")
            return tuple(v)

        z0 = None
        zd = d.get("z0")
        if zd is not None:
            if not isinstance(zd, dict) or set(zd) != {"omega", "tau1", "tau2", "T"}:
                raise ValidationError(
                    "z0 must be an object with fields omega, tau1, tau2, T")
            try:
                z0 = ExtremalStructure(
                    np.asarray(zd["omega"], dtype=float),
                    float(zd["tau1"]), float(zd["tau2"]), float(zd["T"]),
                    float(d.get("u1", -1.0)), float(d.get("u2", -1.0)))
            except StructureBroken as exc:
                raise ValidationError(f"z0 is not a valid structure: {exc}") from exc
        default_r = d.get("default_r")
        if default_r is not None:
            default_r = tuple(float(v) for v in default_r)
        return cls(
            name=str(d["name"]), n=d["n"], m=d["m"],
            f0=strings("f0"), f1=strings("f1"),
            a=strings("a"), b=strings("b"),
            u1=float(d.get("u1", -1.0)), u2=float(d.get("u2", -1.0)),
            z0=z0, default_r=default_r,
            options=dict(d.get("options", {})))


# ---------------------------------------------------------------------------
# built-in problems


def _dubins(name="dubins", default_r=None) -> ProblemDefinition:
    return ProblemDefinition(
        name=name, n=3, m=2,
        f0=("cos(x3)+r1", "sin(x3)+r2", "0"),
        f1=("0", "0", "1"),
        a=("0", "0", "pi/2"),
        b=("10", "0", "-pi/2"),
        u1=-1.0, u2=-1.0,
        z0=ExtremalStructure(np.array([1.0, 0.0, -1.0]),
                             math.pi / 2, math.pi / 2 + 8.0, 8.0 + math.pi),
        default_r=default_r)


def _dodgem_stub() -> ProblemDefinition:
    # Turn right a quarter of a right angle, run straight on the diagonal,
    # turn back left: the guess below is already stationary for r = 0.
    h = math.sqrt(2.0) / 2.0
    return ProblemDefinition(
        name="dodgem-stub", n=3, m=2,
        f0=("cos(x3)+r1", "sin(x3)+r2", "0"),
        f1=("0", "0", "1"),
        a=("0", "0", "pi/2"),
        b=("2+2*sqrt(2)", "4*sqrt(2)", "pi/2"),
        u1=-1.0, u2=1.0,
        z0=ExtremalStructure(np.array([h, h, h - 1.0]),
                             math.pi / 4, math.pi / 4 + 6.0,
                             6.0 + math.pi / 2, -1.0, 1.0))


_BUILTINS = {
    "dubins": lambda: _dubins(),
    "dubins-drift": lambda: _dubins("dubins-drift", default_r=(0.02, 0.0)),
    "dodgem-stub": _dodgem_stub,
}


def builtin_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILTINS))


def load_problem(source: str) -> ProblemDefinition:
    """Load a problem by built-in name or from a JSON file path."""
    if source in _BUILTINS:
        return _BUILTINS[source]()
    try:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read problem file {source!r}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}",
                         exc.pos) from exc
    return ProblemDefinition.from_dict(doc)


# ---------------------------------------------------------------------------
# result persistence


_ARC_LABELS = ("bang-1", "singular", "bang-2")


def _sample_record(rec: ContinuationRecord, samples_per_arc: int) -> list[dict]:
    ext = rec.extremal
    n = ext.structure.n
    sing = ext.sys.singular_hamiltonian()
    arcs = []
    for seg, label in zip(ext.segments, _ARC_LABELS):
        ts = np.linspace(seg.t0, seg.t1, samples_per_arc)
        ys = seg.state_array(ts)
        if label == "bang-1":
            us = np.full(samples_per_arc, ext.structure.u1)
        elif label == "bang-2":
            us = np.full(samples_per_arc, ext.structure.u2)
        else:
            us = np.array([sing.feedback(seg.state(t), rec.r) for t in ts])
        arcs.append({
            "arc": label,
            "t": [float(t) for t in ts],
            "q": [[float(v) for v in ys[n:, k]] for k in range(samples_per_arc)],
            "p": [[float(v) for v in ys[:n, k]] for k in range(samples_per_arc)],
            "u": [float(u) for u in us],
        })
    return arcs


def _record_dict(rec: ContinuationRecord) -> dict:
    z = rec.structure
    return {
        "r": [float(v) for v in rec.r],
        "structure": {
            "omega": [float(w) for w in z.omega],
            "tau1": z.tau1, "tau2": z.tau2, "T": z.T,
            "u1": z.u1, "u2": z.u2,
        },
        "residual_norm": rec.residual_norm,
        "iterations": rec.iterations,
        "condition": rec.condition,
        "jacobian": [[float(v) for v in row] for row in rec.jacobian],
        "sensitivity": [[float(v) for v in row] for row in rec.sensitivity],
        "report": None if rec.report is None else rec.report.as_dict(),
    }


@dataclass(frozen=True, eq=False)
class ResultBundle:
    """Everything produced by one solve or continuation run, ready to dump.

    ``trajectories[i]`` holds the sampled arcs of ``records[i]``; the
    sampling happens at construction, so saving is pure serialization.
    """

    problem: ProblemDefinition
    records: tuple[ContinuationRecord, ...]
    samples_per_arc: int
    metadata: dict
    trajectories: tuple[list, ...]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "problem": self.problem.to_dict(),
            "metadata": dict(self.metadata),
            "samples_per_arc": self.samples_per_arc,
            "records": [_record_dict(rec) for rec in self.records],
            "trajectories": [list(arcs) for arcs in self.trajectories],
        }


def make_bundle(problem: ProblemDefinition,
                records: Sequence[ContinuationRecord],
                samples_per_arc: int = 200,
                opts: SolverOptions = DEFAULT_SOLVER_OPTIONS,
                created: Optional[str] = None) -> ResultBundle:
    if samples_per_arc < 2:
        raise ValidationError("samples_per_arc must be at least 2")
    records = tuple(records)
    if created is None:
        created = datetime.datetime.now(datetime.timezone.utc).isoformat()
    from . import __version__
    metadata = {
        "created": created,
        "package_version": __version__,
        "tolerances": {
            "newton_tol": opts.newton_tol,
            "sglc_tol": opts.sglc_tol,
            "grid_per_arc": opts.certify.grid_per_arc,
            "collar_frac": opts.certify.collar_frac,
        },
    }
    trajectories = tuple(_sample_record(rec, samples_per_arc) for rec in records)
    return ResultBundle(problem, records, samples_per_arc, metadata, trajectories)


def save_bundle(bundle: ResultBundle, path: str) -> None:
    """Write the bundle as JSON with stable key order and repr floats."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(bundle.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_bundle(path: str) -> dict:
    """Read a saved bundle back as a plain mapping (floats bit-exact)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}",
                             exc.pos) from exc


def export_csv(bundle: ResultBundle, path: str, record_index: int = 0) -> None:
    """Write one record's sampled trajectory as CSV.

    Columns are ``t, q1..qn, p1..pn, u``; values use 17-significant-digit
    formatting, which round-trips doubles exactly.  Each of the three arcs
    contributes ``samples_per_arc`` rows, so junction times appear twice
    (once as an arc end, once as the next arc's start).
    """
    if not 0 <= record_index < len(bundle.records):
        raise ValidationError(
            f"record_index {record_index} out of range [0, {len(bundle.records)})")
    n = bundle.problem.n
    header = ["t"] + [f"q{i+1}" for i in range(n)] \
        + [f"p{i+1}" for i in range(n)] + ["u"]
    lines = [",".join(header)]
    for arc in bundle.trajectories[record_index]:
        for t, q, p, u in zip(arc["t"], arc["q"], arc["p"], arc["u"]):
            row = [t, *q, *p, u]
            lines.append(",".join(f"{v:.17g}" for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
