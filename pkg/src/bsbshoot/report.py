"""Figure rendering for result bundles.

Three standard views, written as PNG files next to the delimited output:
the state trajectory with the three arcs in distinct colors, the
switching function with the control underneath, and (for continuation
runs with more than one record) the structure times and certification
margins along the parameter path.  Everything draws from the sampled
data already inside the bundle plus cheap pointwise evaluations, so
rendering never re-integrates anything.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np

from .geometry import CotangentPoint
from .problems_io import ResultBundle

__all__ = ["render_figures"]

_ARC_COLORS = {"bang-1": "tab:blue", "singular": "tab:orange",
               "bang-2": "tab:green"}


def _arc_arrays(arc: dict):
    t = np.asarray(arc["t"])
    q = np.asarray(arc["q"])
    p = np.asarray(arc["p"])
    u = np.asarray(arc["u"])
    return t, q, p, u


def _trajectory_figure(bundle: ResultBundle, record_index: int, path: str,
                       dpi: int) -> None:
    arcs = bundle.trajectories[record_index]
    n = bundle.problem.n
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    if n >= 2:
        for arc in arcs:
            _, q, _, _ = _arc_arrays(arc)
            ax.plot(q[:, 0], q[:, 1], color=_ARC_COLORS[arc["arc"]],
                    label=arc["arc"], lw=1.8)
        for arc in arcs[:2]:
            qj = arc["q"][-1]
            ax.plot([qj[0]], [qj[1]], "ko", ms=5, zorder=5)
        q0 = arcs[0]["q"][0]
        qT = arcs[-1]["q"][-1]
        ax.plot([q0[0]], [q0[1]], "k^", ms=8, label="start")
        ax.plot([qT[0]], [qT[1]], "k*", ms=11, label="target")
        ax.set_xlabel("q1")
        ax.set_ylabel("q2")
        ax.set_aspect("equal", adjustable="datalim")
    else:
        for arc in arcs:
            t, q, _, _ = _arc_arrays(arc)
            ax.plot(t, q[:, 0], color=_ARC_COLORS[arc["arc"]],
                    label=arc["arc"], lw=1.8)
        ax.set_xlabel("t")
        ax.set_ylabel("q1")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(f"{bundle.problem.name}: state trajectory")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def _switching_figure(bundle: ResultBundle, record_index: int, path: str,
                      dpi: int) -> None:
    sys = bundle.problem.build_system()
    rec = bundle.records[record_index]
    arcs = bundle.trajectories[record_index]
    fig, (ax_s, ax_u) = plt.subplots(
        2, 1, sharex=True, figsize=(6.4, 4.8),
        gridspec_kw={"height_ratios": [2, 1]})
    for arc in arcs:
        t, q, p, u = _arc_arrays(arc)
        sigma = np.array([sys.h_control.value(CotangentPoint(pk, qk), rec.r)
                          for pk, qk in zip(p, q)])
        color = _ARC_COLORS[arc["arc"]]
        ax_s.plot(t, sigma, color=color, lw=1.6, label=arc["arc"])
        ax_u.plot(t, u, color=color, lw=1.6)
    ax_s.axhline(0.0, color="0.6", lw=0.8)
    z = rec.structure
    for ax in (ax_s, ax_u):
        for tj in (z.tau1, z.tau2):
            ax.axvline(tj, color="0.75", lw=0.8, ls="--")
    ax_s.set_ylabel("switching function")
    ax_s.legend(loc="best", fontsize=8)
    ax_u.set_ylabel("u")
    ax_u.set_ylim(-1.25, 1.25)
    ax_u.set_xlabel("t")
    ax_s.set_title(f"{bundle.problem.name}: switching structure")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def _continuation_figure(bundle: ResultBundle, path: str, dpi: int) -> None:
    steps = np.arange(len(bundle.records))
    tau1 = [rec.structure.tau1 for rec in bundle.records]
    tau2 = [rec.structure.tau2 for rec in bundle.records]
    T = [rec.structure.T for rec in bundle.records]
    fig, (ax_t, ax_m) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 4.8))
    ax_t.plot(steps, tau1, "o-", ms=3, label="tau1")
    ax_t.plot(steps, tau2, "o-", ms=3, label="tau2")
    ax_t.plot(steps, T, "o-", ms=3, label="T")
    ax_t.set_ylabel("structure times")
    ax_t.legend(loc="best", fontsize=8)
    reported = [(k, rec.report) for k, rec in enumerate(bundle.records)
                if rec.report is not None]
    if reported:
        ks = [k for k, _ in reported]
        for field, label in (("margin_sglc", "SGLC"),
                             ("margin_bang1", "bang 1"),
                             ("margin_bang2", "bang 2"),
                             ("injectivity_margin", "injectivity")):
            ax_m.plot(ks, [getattr(rep, field) for _, rep in reported],
                      "o-", ms=3, label=label)
        ax_m.axhline(0.0, color="0.6", lw=0.8)
    ax_m.set_ylabel("margins")
    ax_m.set_xlabel("continuation step")
    ax_m.legend(loc="best", fontsize=8)
    ax_t.set_title(f"{bundle.problem.name}: continuation path")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)


def render_figures(bundle: ResultBundle, out_dir: str,
                   record_index: int = -1, dpi: int = 130) -> list[str]:
    """Render the standard figures into ``out_dir``; return written paths.

    ``record_index`` selects the record shown in the trajectory and
    switching views (default: the last one).  The continuation view is
    produced only when the bundle holds more than one record.
    """
    record_index = range(len(bundle.records))[record_index]
    written = []
    for name, fn in (("trajectory.png", _trajectory_figure),
                     ("switching.png", _switching_figure)):
        path = os.path.join(out_dir, name)
        fn(bundle, record_index, path, dpi)
        written.append(path)
    if len(bundle.records) > 1:
        path = os.path.join(out_dir, "continuation.png")
        _continuation_figure(bundle, path, dpi)
        written.append(path)
    return written
