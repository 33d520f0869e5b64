"""Approximate self-similar profile ``Q_P`` for ``P = (a, b)``.

The profile is a polynomial in ``(a, b1, b2)`` with real parts ``T`` and
imaginary parts ``S``:

    Q_P = Q + a sum b_j T11_j + a^2 T20 + sum b_j^2 T02_j
          + i (a S10 + sum b_j S01_j + a^2 sum b_j S21_j)

Every correction solves ``L+ T = F`` or ``L- S = F`` with a right-hand side
built from lower orders. The hierarchy stops after ``S21``; the terms of order
``a^3`` and ``a^4`` are not constructed here, so the residual is ``O(a^3)`` in a
pure-``a`` scan. Extra fields can be attached through ``ProfileSet.extra``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .ground_state import GroundState
from .linops import Side, SolvabilityError, kernel_basis, solve_L
from .spectral import (
    Grid2D,
    dfrac,
    functionals,
    inner,
    lambda_op,
    norm,
    partial,
    sobolev_norm,
)

log = logging.getLogger(__name__)

EVEN = (1, 1)
ODD = ((-1, 1), (1, -1))


class GateError(ValueError):
    pass


@dataclass(frozen=True)
class ProfileParams:
    a: float = 0.0
    b: tuple[float, float] = (0.0, 0.0)

    @property
    def bvec(self) -> np.ndarray:
        return np.asarray(self.b, dtype=float)

    def size(self) -> float:
        return self.a ** 2 + float(np.hypot(*self.b))

    def check_gate(self, gate: float = 0.1) -> None:
        if self.size() > gate:
            raise GateError(f"a^2 + |b| = {self.size():.3g} exceeds the smallness gate {gate}")


@dataclass
class ProfileSet:
    gs: GroundState
    S10: np.ndarray
    S01: tuple[np.ndarray, np.ndarray]
    T20: np.ndarray
    T11: tuple[np.ndarray, np.ndarray]
    T02: tuple[np.ndarray, np.ndarray]
    S21: tuple[np.ndarray, np.ndarray]
    e1: float
    p1: float
    t20_form: str = "minus"
    pairings: dict = field(default_factory=dict)
    # hook for externally supplied higher orders: {(ka, kb1, kb2): complex field}
    extra: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid2D:
        return self.gs.grid

    @property
    def Q(self) -> np.ndarray:
        return self.gs.Q

    def fields(self) -> dict[str, np.ndarray]:
        """Real correction fields keyed by name (``S01_1`` etc.), plus ``Q``."""
        out = {"Q": self.Q, "S10": self.S10, "T20": self.T20}
        for j in (0, 1):
            out[f"S01_{j + 1}"] = self.S01[j]
            out[f"T11_{j + 1}"] = self.T11[j]
            out[f"T02_{j + 1}"] = self.T02[j]
            out[f"S21_{j + 1}"] = self.S21[j]
        return out


def t20_rhs(S10: np.ndarray, grid: Grid2D, form: str) -> np.ndarray:
    """Right-hand side of the ``a^2`` equation.

    ``"minus"``: ``S10/2 - Lambda S10 + S10^2/2``; ``"plus"``: the
    opposite-sign variant ``S10/2 + Lambda S10 - S10^2/2``.
    """
    LS = lambda_op(S10, grid)
    if form == "minus":
        return 0.5 * S10 - LS + 0.5 * S10 ** 2
    if form == "plus":
        return 0.5 * S10 + LS - 0.5 * S10 ** 2
    raise ValueError(f"unknown T20 form {form!r}")


def safe_divide_by_Q(num: np.ndarray, Q: np.ndarray, rel: float = 1e-8,
                     leak_tol: float = 1e-8, grid: Grid2D | None = None) -> np.ndarray:
    """Pointwise ``num / Q`` where ``Q > rel * max Q``, zero elsewhere."""
    mask = Q > rel * Q.max()
    out = np.zeros_like(num)
    out[mask] = num[mask] / Q[mask]
    if grid is not None and not mask.all():
        dropped = np.sqrt(np.sum(np.where(mask, 0.0, num) ** 2) * grid.cell_area)
        total = norm(out, grid)
        if dropped > leak_tol * max(total, 1e-300):
            raise ValueError(f"masked region carries {dropped:.2e} of the numerator")
    return out


def s21_rhs(T11j, S01j, T20, S10, Q, grid: Grid2D, j: int) -> np.ndarray:
    return (-1.5 * T11j + lambda_op(T11j, grid) - partial(T20, grid, j)
            + T11j * S10 + T20 * S01j + 1.5 * safe_divide_by_Q(S10 ** 2 * S01j, Q, grid=grid))


def _check_solvable(name: str, rhs: np.ndarray, kb, tol: float, pairings: dict) -> None:
    rn = norm(rhs, kb.grid)
    rel = np.abs(kb.pairings(rhs)) / max(rn, 1e-300)
    pairings[name] = float(rel.max())
    if rel.max() > tol:
        raise SolvabilityError(f"order {name}: right-hand side pairs with the kernel at {rel.max():.3e}")


def build_profile_set(gs: GroundState, tol: float = 1e-11, t20_form: str = "auto",
                      solvability_tol: float = 1e-3) -> ProfileSet:
    """Solve the correction hierarchy order by order.

    Every kernel pairing of a right-hand side is recorded in ``pairings``
    (relative to the right-hand side norm). On a finite box they are nonzero at
    the truncation level, so ``solvability_tol`` only rejects gross violations;
    the solves act on the projected right-hand side.
    """
    grid = gs.grid
    Q = gs.Q
    kp = kernel_basis(Side.PLUS, gs)
    km = kernel_basis(Side.MINUS, gs)
    pairings: dict[str, float] = {}

    def solve(side, name, rhs, sym):
        kb = kp if side is Side.PLUS else km
        _check_solvable(name, rhs, kb, solvability_tol, pairings)
        return solve_L(side, rhs, gs, tol, symmetry=sym, solvability_tol=solvability_tol, kernel=kb)

    LQ = lambda_op(Q, grid)
    S10 = solve(Side.MINUS, "S10", LQ, EVEN)
    dQ = [partial(Q, grid, j) for j in (0, 1)]
    S01 = tuple(solve(Side.MINUS, f"S01_{j + 1}", -dQ[j], ODD[j]) for j in (0, 1))

    forms = ["minus", "plus"] if t20_form == "auto" else [t20_form]
    best = None
    for form in forms:
        T20c = solve(Side.PLUS, f"T20[{form}]", t20_rhs(S10, grid, form), EVEN)
        ss = inner(S10, S10, grid)
        dev = abs(ss + 2.0 * inner(T20c, Q, grid)) / ss
        pairings[f"mass_identity[{form}]"] = float(dev)
        if best is None or dev < best[0]:
            best = (dev, form, T20c)
    _, form, T20 = best
    log.info("T20 equation form: %s", form)

    T11, T02 = [], []
    for j in (0, 1):
        rhs = S01[j] - lambda_op(S01[j], grid) + partial(S10, grid, j) + S10 * S01[j]
        T11.append(solve(Side.PLUS, f"T11_{j + 1}", rhs, ODD[j]))
        rhs = partial(S01[j], grid, j) + 0.5 * S01[j] ** 2
        T02.append(solve(Side.PLUS, f"T02_{j + 1}", rhs, EVEN))
    S21 = tuple(
        solve(Side.MINUS, f"S21_{j + 1}", s21_rhs(T11[j], S01[j], T20, S10, Q, grid, j), ODD[j])
        for j in (0, 1)
    )
    e1 = 0.5 * inner(LQ, S10, grid)
    p1 = -2.0 * inner(dQ[0], S01[0], grid)
    return ProfileSet(gs, S10, S01, T20, tuple(T11), tuple(T02), S21, e1, p1, form, pairings)


# -- assembly -----------------------------------------------------------------

# (field name, 0 for real part / 1 for imaginary part, powers of (a, b1, b2))
TERMS = (
    ("Q", 0, (0, 0, 0)),
    ("S10", 1, (1, 0, 0)),
    ("S01_1", 1, (0, 1, 0)),
    ("S01_2", 1, (0, 0, 1)),
    ("T20", 0, (2, 0, 0)),
    ("T11_1", 0, (1, 1, 0)),
    ("T11_2", 0, (1, 0, 1)),
    ("T02_1", 0, (0, 2, 0)),
    ("T02_2", 0, (0, 0, 2)),
    ("S21_1", 1, (2, 1, 0)),
    ("S21_2", 1, (2, 0, 1)),
)

DERIVS = {None: None, "a": 0, "b1": 1, "b2": 2}


def monomial(P: ProfileParams, powers, deriv=None) -> float:
    """``a^k b1^l b2^m`` or its partial derivative in one of the parameters."""
    vals = [P.a, P.b[0], P.b[1]]
    powers = list(powers)
    coef = 1.0
    idx = DERIVS[deriv]
    if idx is not None:
        if powers[idx] == 0:
            return 0.0
        coef = float(powers[idx])
        powers[idx] -= 1
    for v, k in zip(vals, powers):
        if k:
            coef *= v ** k
    return coef


def combine(fields: dict, P: ProfileParams, deriv=None, extra: dict | None = None) -> np.ndarray:
    """Complex linear combination of ``fields`` (keyed like ``TERMS``) with ansatz coefficients."""
    re = None
    im = None
    for name, part, powers in TERMS:
        c = monomial(P, powers, deriv)
        if c == 0.0:
            continue
        term = c * fields[name]
        if part == 0:
            re = term if re is None else re + term
        else:
            im = term if im is None else im + term
    shape = next(iter(fields.values())).shape
    out = np.zeros(shape, complex)
    if re is not None:
        out.real = re
    if im is not None:
        out.imag = im
    for powers, fld in (extra or {}).items():
        c = monomial(P, powers, deriv)
        if c != 0.0:
            out = out + c * fld
    return out


def assemble_profile(ps: ProfileSet, P: ProfileParams, gate: float = 0.1) -> np.ndarray:
    P.check_gate(gate)
    return combine(ps.fields(), P, None, ps.extra)


def profile_derivatives(ps: ProfileSet, P: ProfileParams):
    """``(d_a Q_P, d_b1 Q_P, d_b2 Q_P)`` from the polynomial ansatz."""
    f = ps.fields()
    return tuple(combine(f, P, d, ps.extra) for d in ("a", "b1", "b2"))


@dataclass
class ResidualReport:
    Phi: np.ndarray
    l2_norm: float
    h1_norm: float
    params: ProfileParams


def profile_residual(ps: ProfileSet, P: ProfileParams, gate: float = 0.1) -> ResidualReport:
    """``Phi_P`` defined by minus the renormalized equation evaluated at ``Q_P``."""
    grid = ps.grid
    a = P.a
    b = P.bvec
    QP = assemble_profile(ps, P, gate)
    da, db1, db2 = profile_derivatives(ps, P)
    lhs = (-0.5j * a * a * da - 1j * a * (b[0] * db1 + b[1] * db2)
           - dfrac(QP, grid, 1.0) - QP + 1j * a * lambda_op(QP, grid)
           - 1j * (b[0] * partial(QP, grid, 0) + b[1] * partial(QP, grid, 1))
           + np.abs(QP) * QP)
    Phi = -lhs
    return ResidualReport(Phi, norm(Phi, grid), sobolev_norm(Phi, grid, 1.0), P)


@dataclass
class ExpansionRecord:
    mass_dev: float
    energy_dev: float
    momentum_dev: np.ndarray


def expansion_check(ps: ProfileSet, P: ProfileParams, gate: float = 0.1) -> ExpansionRecord:
    QP = assemble_profile(ps, P, gate)
    M, E, Pm = functionals(QP, ps.grid)
    return ExpansionRecord(M - ps.gs.mass_sq, E - ps.e1 * P.a ** 2, Pm - ps.p1 * P.bvec)


def loglog_slope(x, y) -> float:
    x = np.log(np.asarray(x, float))
    y = np.log(np.asarray(y, float))
    return float(np.polyfit(x, y, 1)[0])
