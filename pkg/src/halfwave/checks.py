"""Diagnostic suite shared by the ``verify`` command and the acceptance tests."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .ground_state import GroundState
from .linops import Side, apply_L
from .modulation import (
    INVERSE_MAP_SIGNS,
    Frame,
    ModParams,
    base_jacobian,
    decompose,
    fd_jacobian,
    closed_form_jacobian_entries,
    synthesize,
    to_inverse_map_variables,
)
from .profile import (
    ProfileParams,
    ProfileSet,
    assemble_profile,
    expansion_check,
    loglog_slope,
    profile_residual,
)
from .spectral import Grid2D, gradient, lambda_op, norm, partial

log = logging.getLogger(__name__)


@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool | None  # None: informational only
    note: str = ""

    def line(self) -> str:
        tag = {True: "PASS", False: "FAIL", None: "INFO"}[self.passed]
        return f"{tag}  {self.name:<44s} {self.value:11.3e}  (tol {self.tol:.1e}) {self.note}".rstrip()


def at_most(name, value, tol, note="") -> Check:
    value = float(value)
    return Check(name, value, tol, bool(value <= tol), note)


def info(name, value, note="") -> Check:
    return Check(name, float(value), float("nan"), None, note)


# -- kernels and identities ---------------------------------------------------

def kernel_checks(gs: GroundState, tol: float = 1e-7) -> list[Check]:
    g = gs.grid
    out = [at_most("||L- Q|| / ||Q||", norm(apply_L(Side.MINUS, gs.Q, gs), g) / norm(gs.Q, g), tol)]
    for j, d in enumerate(gradient(gs.Q, g)):
        out.append(at_most(f"||L+ d{j + 1}Q|| / ||d{j + 1}Q||",
                           norm(apply_L(Side.PLUS, d, gs), g) / norm(d, g), tol))
    return out


def commutator_identities(ps: ProfileSet) -> dict[str, float]:
    """Relative defects of the ``L- Lambda S`` identities and of ``L+ Lambda Q = -Q``."""
    g = ps.grid
    Q = ps.Q
    LQ = lambda_op(Q, g)
    S10 = ps.S10
    lhs = apply_L(Side.MINUS, lambda_op(S10, g), ps.gs)
    derived = -S10 + LQ + LQ * S10 + lambda_op(Q, g, 2)
    variant = -S10 + 2.0 * LQ * Q * S10 + LQ + lambda_op(Q, g, 2)
    out = {
        "L-(Lambda S10) derivation form": norm(lhs - derived, g) / norm(lhs, g),
        "L-(Lambda S10) variant with 2 (Lambda Q) Q S10": norm(lhs - variant, g) / norm(lhs, g),
        "L+(Lambda Q) + Q": norm(apply_L(Side.PLUS, LQ, ps.gs) + Q, g) / norm(Q, g),
    }
    for j in (0, 1):
        S = ps.S01[j]
        dQ = partial(Q, g, j)
        lhs = apply_L(Side.MINUS, lambda_op(S, g), ps.gs)
        rhs = -S - dQ + LQ * S - lambda_op(dQ, g)
        out[f"L-(Lambda S01_{j + 1}) derivation form"] = norm(lhs - rhs, g) / norm(lhs, g)
    return out


def identity_checks(ps: ProfileSet, tol_identity: float = 1e-6, tol_pairing: float = 1e-8) -> list[Check]:
    form = ps.t20_form
    out = [at_most(f"(S10,S10)+2(T20,Q) rel [{form}]", ps.pairings[f"mass_identity[{form}]"],
                   tol_identity, "T20 form selected by this identity")]
    for other in ("minus", "plus"):
        key = f"mass_identity[{other}]"
        if other != form and key in ps.pairings:
            out.append(info(f"(S10,S10)+2(T20,Q) rel [{other}]", ps.pairings[key], "rejected form"))
    for name, val in ps.pairings.items():
        if name.startswith("mass_identity") or (name.startswith("T20[") and name != f"T20[{form}]"):
            continue
        out.append(at_most(f"solvability pairing {name}", val, tol_pairing))
    for name, val in commutator_identities(ps).items():
        if "variant" in name:
            out.append(info(name, val, "not implied by the defining equations"))
        else:
            out.append(at_most(name, val, tol_identity))
    return out


# -- scans --------------------------------------------------------------------

@dataclass
class Scan:
    values: np.ndarray
    data: dict
    slopes: dict


def _params(kind: str, v: float) -> ProfileParams:
    if kind == "a":
        return ProfileParams(v, (0.0, 0.0))
    if kind == "b":
        return ProfileParams(0.0, (v, 0.0))
    raise ValueError(f"scan kind must be 'a' or 'b', got {kind!r}")


def residual_scan(ps: ProfileSet, kind: str, values) -> Scan:
    values = np.asarray(values, float)
    l2 = np.array([profile_residual(ps, _params(kind, v)).l2_norm for v in values])
    return Scan(values, {"l2": l2}, {"l2": loglog_slope(values, l2)})


def expansion_scan(ps: ProfileSet, kind: str, values) -> Scan:
    values = np.asarray(values, float)
    recs = [expansion_check(ps, _params(kind, v)) for v in values]
    data = {
        "mass": np.array([abs(r.mass_dev) for r in recs]),
        "energy": np.array([abs(r.energy_dev) for r in recs]),
        "momentum": np.array([float(np.linalg.norm(r.momentum_dev)) for r in recs]),
    }
    return Scan(values, data, {k: loglog_slope(values, v) for k, v in data.items()})


# -- decomposition ------------------------------------------------------------

@dataclass
class RoundTrip:
    truth: ModParams
    found: ModParams
    rel_errors: dict
    ortho_max: float
    unorm: float
    iterations: int


def _wrap(x: float) -> float:
    return float((x + np.pi) % (2.0 * np.pi) - np.pi)


def roundtrip(frame: Frame, truth: ModParams, grid_u: Grid2D, init: ModParams | None = None,
              tol: float = 1e-10) -> RoundTrip:
    """Synthesize ``truth`` onto ``grid_u`` and decompose it back."""
    ps = frame.ps
    u = synthesize(assemble_profile(ps, truth.profile), ps.grid, truth, grid_u)
    if init is None:
        x = truth.vector()
        x = x + np.array([0.02 * x[0], 0.01, -0.01, 0.05, 0.005, 2e-3, -1e-3])
        init = ModParams.from_vector(x)
    st = decompose(u, frame, init=init, tol=tol, grid_u=grid_u)
    f, t = st.params, truth
    scale = max(abs(t.lam), 1.0)
    rel = {
        "lambda": abs(f.lam - t.lam) / abs(t.lam),
        "alpha": float(np.hypot(*(np.subtract(f.alpha, t.alpha)))) / scale,
        "gamma": abs(_wrap(f.gamma - t.gamma)),
        "a": abs(f.a - t.a) / max(abs(t.a), 1e-300),
        "b": float(np.linalg.norm(np.subtract(f.b, t.b))) / max(float(np.linalg.norm(t.b)), 1e-300),
    }
    return RoundTrip(truth, f, rel, float(np.max(np.abs(st.ortho_residuals))),
                     norm(u, grid_u), st.iterations)


@dataclass
class JacobianReport:
    fd: np.ndarray
    analytic: np.ndarray
    fd_vs_analytic: float
    closed_form: dict
    closed_form_rel: dict
    closed_form_max: float
    unlisted_max: float


def jacobian_report(frame: Frame, h: float = 1e-5) -> JacobianReport:
    """Newton Jacobian at the base point (``w = Q``, identity parameters) three ways.

    ``fd`` is the finite-difference Jacobian the solver uses; ``analytic`` the
    tangent-pairing form; ``closed_form`` the entries given by closed-form
    pairings, with their stated signs. ``unlisted_max`` is the largest entry
    absent from that table.
    """
    ps = frame.ps
    g = ps.grid
    base = ModParams()
    J_fd = to_inverse_map_variables(fd_jacobian(ps.Q + 0j, base, frame, g, h))
    J_an = base_jacobian(frame)
    scale = np.max(np.abs(J_an))
    fd_vs = float(np.max(np.abs(J_fd - J_an)) / scale)
    entries = closed_form_jacobian_entries(frame)
    rel = {k: float(abs(J_fd[k] - v) / abs(v)) for k, v in entries.items()}
    mask = np.ones_like(J_fd, bool)
    for k in entries:
        mask[k] = False
    unlisted = float(np.max(np.abs(J_fd[mask])) / scale)
    return JacobianReport(J_fd, J_an, fd_vs, entries, rel, max(rel.values()), unlisted)


__all__ = [
    "INVERSE_MAP_SIGNS", "Check", "JacobianReport", "RoundTrip", "Scan", "at_most",
    "commutator_identities", "expansion_scan", "identity_checks", "info",
    "jacobian_report", "kernel_checks", "residual_scan", "roundtrip",
]
