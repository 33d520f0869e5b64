"""Modulation decomposition ``u <-> (lambda, alpha, gamma, a, b, eps)``.

The renormalized field is ``v(y) = lambda e^{-i gamma} u(lambda y + alpha)`` on
the profile grid, and ``eps = v - Q_P``. Seven pairings of ``eps`` against
directions generated by the profile fix the parameters; they are solved for
by Newton iteration with a finite-difference Jacobian.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .linops import Side, apply_L, solve_L
from .profile import (
    EVEN,
    ODD,
    GateError,
    ProfileParams,
    ProfileSet,
    combine,
)
from .spectral import Grid2D, dfrac, gradient, inner, lambda_op, norm, resample

log = logging.getLogger(__name__)

PARAM_NAMES = ("lambda", "alpha1", "alpha2", "gamma", "a", "b1", "b2")


class DecompositionError(RuntimeError):
    def __init__(self, msg: str, trace: list | None = None):
        super().__init__(msg)
        self.trace = trace or []


class EscapeError(DecompositionError):
    pass


@dataclass(frozen=True)
class ModParams:
    lam: float = 1.0
    alpha: tuple[float, float] = (0.0, 0.0)
    gamma: float = 0.0
    a: float = 0.0
    b: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")

    @property
    def profile(self) -> ProfileParams:
        return ProfileParams(self.a, tuple(self.b))

    def vector(self) -> np.ndarray:
        return np.array([self.lam, *self.alpha, self.gamma, self.a, *self.b], float)

    @classmethod
    def from_vector(cls, v) -> "ModParams":
        v = [float(x) for x in v]
        return cls(v[0], (v[1], v[2]), v[3], v[4], (v[5], v[6]))

    def as_dict(self) -> dict:
        return dict(zip(PARAM_NAMES, self.vector().tolist()))


@dataclass
class ModState:
    params: ModParams
    eps: np.ndarray
    ortho_residuals: np.ndarray
    iterations: int = 0
    trace: list = field(default_factory=list, repr=False)


# -- rho pair -----------------------------------------------------------------

@dataclass
class RhoBasis:
    """``rho1`` and the three fields whose combination gives ``rho2(P)``."""

    rho1: np.ndarray
    rho2a: np.ndarray
    rho2b: tuple[np.ndarray, np.ndarray]
    pairings: dict

    def rho2(self, P: ProfileParams) -> np.ndarray:
        return P.a * self.rho2a + P.b[0] * self.rho2b[0] + P.b[1] * self.rho2b[1]


@dataclass
class RhoPair:
    rho1: np.ndarray
    rho2: np.ndarray


def rho2_sources(ps: ProfileSet, rho1: np.ndarray):
    """Right-hand sides multiplying ``a``, ``b1`` and ``b2`` in the ``rho2`` equation."""
    g = ps.grid
    src_a = ps.S10 * rho1 + lambda_op(rho1, g) - 2.0 * ps.T20
    d = gradient(rho1, g)
    src_b = tuple(ps.S01[j] * rho1 - d[j] - ps.T11[j] for j in (0, 1))
    return src_a, src_b


def build_rho_basis(ps: ProfileSet, tol: float = 1e-11, solvability_tol: float = 1e-7) -> RhoBasis:
    """Solve for ``rho1`` and the ``rho2`` basis.

    The ``a`` source is orthogonal to ``Q`` only up to the box-truncation error
    of the mass identity; ``solvability_tol`` bounds the accepted pairing and
    the solve then works on the projected right-hand side.
    """
    gs = ps.gs
    g = ps.grid
    rho1 = solve_L(Side.PLUS, ps.S10, gs, tol, symmetry=EVEN)
    src_a, src_b = rho2_sources(ps, rho1)
    nq = norm(ps.Q, g)
    pair = {"a": abs(inner(ps.Q, src_a, g)) / (nq * norm(src_a, g))}
    for j in (0, 1):
        pair[f"b{j + 1}"] = abs(inner(ps.Q, src_b[j], g)) / (nq * norm(src_b[j], g))
    rho2a = solve_L(Side.MINUS, src_a, gs, tol, symmetry=EVEN, solvability_tol=solvability_tol)
    rho2b = tuple(solve_L(Side.MINUS, src_b[j], gs, tol, symmetry=ODD[j],
                          solvability_tol=solvability_tol) for j in (0, 1))
    return RhoBasis(rho1, rho2a, rho2b, pair)


def build_rho(ps: ProfileSet, P: ProfileParams, tol: float = 1e-11,
              solvability_tol: float = 1e-7, basis: RhoBasis | None = None) -> RhoPair:
    rb = basis if basis is not None else build_rho_basis(ps, tol, solvability_tol)
    return RhoPair(rb.rho1, rb.rho2(P))


# -- precomputed directions ---------------------------------------------------

@dataclass
class Frame:
    """Profile fields with their images under Lambda and the gradient, plus rho."""

    ps: ProfileSet
    rho: RhoBasis
    fields: dict
    lam_fields: dict
    grad_fields: tuple[dict, dict]
    gate: float = 0.1

    @property
    def grid(self) -> Grid2D:
        return self.ps.grid

    def directions(self, P: ProfileParams):
        """Complex fields ``F_k`` with ``sigma_k = Im int conj(F_k) eps`` (rho enters with a sign flip)."""
        QP = combine(self.fields, P, None, self.ps.extra)
        LQP = combine(self.lam_fields, P)
        dQP = [combine(self.grad_fields[j], P) for j in (0, 1)]
        daQP = combine(self.fields, P, "a", self.ps.extra)
        dbQP = [combine(self.fields, P, d, self.ps.extra) for d in ("b1", "b2")]
        rho = self.rho.rho1 + 1j * self.rho.rho2(P)
        return QP, [LQP, daQP, -rho, dQP[0], dQP[1], dbQP[0], dbQP[1]]


def make_frame(ps: ProfileSet, rho: RhoBasis | None = None, gate: float = 0.1,
               rho_solvability_tol: float = 1e-2) -> Frame:
    if rho is None:
        rho = build_rho_basis(ps, solvability_tol=rho_solvability_tol)
    g = ps.grid
    fields = ps.fields()
    lam_fields = {k: lambda_op(v, g) for k, v in fields.items()}
    grads = {k: gradient(v, g) for k, v in fields.items()}
    grad_fields = ({k: v[0] for k, v in grads.items()}, {k: v[1] for k, v in grads.items()})
    if ps.extra:
        log.warning("hooked higher-order fields are ignored in Lambda/gradient directions")
    return Frame(ps, rho, fields, lam_fields, grad_fields, gate)


# -- renormalization ----------------------------------------------------------

def renormalize(u: np.ndarray, grid_u: Grid2D, params: ModParams, grid_y: Grid2D,
                escape_tol: float = 1e-3, scale_range=(0.125, 8.0)) -> np.ndarray:
    """``lambda e^{-i gamma} u(lambda y + alpha)`` sampled on ``grid_y``."""
    lam = params.lam
    scale = lam * grid_y.L / grid_u.L
    if not scale_range[0] - 1e-12 <= scale <= scale_range[1] + 1e-12:
        raise EscapeError(f"window scale {scale:.3f} outside {scale_range}; re-grid first")
    a1, a2 = params.alpha
    if escape_tol is not None:
        half = lam * grid_y.L
        x = grid_u.x
        in1 = np.abs(x - a1) <= half
        in2 = np.abs(x - a2) <= half
        m = np.abs(u) ** 2
        total = m.sum()
        outside = total - m[np.ix_(in1, in2)].sum()
        if total > 0 and outside > escape_tol * total:
            raise EscapeError(f"{outside / total:.2e} of the mass lies outside the sampled window")
    v = resample(u, grid_u, lam * grid_y.x + a1, lam * grid_y.x + a2)
    return lam * np.exp(-1j * params.gamma) * v


def synthesize(w: np.ndarray, grid_y: Grid2D, params: ModParams, grid_u: Grid2D) -> np.ndarray:
    """Inverse map: ``u(x) = (1/lambda) w((x - alpha)/lambda) e^{i gamma}`` on ``grid_u``."""
    lam = params.lam
    a1, a2 = params.alpha
    v = resample(w.astype(complex), grid_y, (grid_u.x - a1) / lam, (grid_u.x - a2) / lam)
    return v * np.exp(1j * params.gamma) / lam


# -- sigma map ----------------------------------------------------------------

def sigma_from_eps(eps: np.ndarray, dirs, grid: Grid2D) -> np.ndarray:
    return np.array([np.imag(np.vdot(F, eps)) * grid.cell_area for F in dirs])


def sigma(w: np.ndarray, trial: ModParams, frame: Frame, grid_w: Grid2D | None = None,
          escape_tol: float = 1e-3) -> np.ndarray:
    """The seven orthogonality pairings of ``eps`` formed from ``w`` under ``trial``."""
    return _sigma_eps(w, trial, frame, grid_w, escape_tol)[0]


def _sigma_eps(u, trial: ModParams, frame: Frame, grid_u, escape_tol):
    grid_u = grid_u or frame.grid
    P = trial.profile
    P.check_gate(frame.gate)
    v = renormalize(u, grid_u, trial, frame.grid, escape_tol)
    QP, dirs = frame.directions(P)
    eps = v - QP
    return sigma_from_eps(eps, dirs, frame.grid), eps


def fd_jacobian(u, params: ModParams, frame: Frame, grid_u=None, h: float = 1e-5,
                escape_tol: float = 1e-3) -> np.ndarray:
    """Central-difference Jacobian of sigma in ``(lambda, alpha, gamma, a, b)``."""
    x0 = params.vector()
    steps = h * np.array([params.lam, params.lam, params.lam, 1.0, 1.0, 1.0, 1.0])
    J = np.empty((7, 7))
    for k in range(7):
        xp = x0.copy()
        xm = x0.copy()
        xp[k] += steps[k]
        xm[k] -= steps[k]
        sp = sigma(u, ModParams.from_vector(xp), frame, grid_u, escape_tol)
        sm = sigma(u, ModParams.from_vector(xm), frame, grid_u, escape_tol)
        J[:, k] = (sp - sm) / (2 * steps[k])
    return J


# the inverse-map variables (lambda1, y1, gamma1) relate to ours by
# lambda1 = lambda, y1 = -alpha, gamma1 = -gamma at the base point
INVERSE_MAP_SIGNS = np.array([1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0])


def to_inverse_map_variables(J: np.ndarray) -> np.ndarray:
    return J * INVERSE_MAP_SIGNS[None, :]


def base_jacobian(frame: Frame) -> np.ndarray:
    """Jacobian at ``(lambda1, y1, gamma1, a, b) = (1, 0, 0, 0, 0)``, ``w = Q``, in inverse-map variables.

    Built from the derivative of ``eps`` along each parameter at ``eps = 0``:
    ``Lambda Q``, ``-d_j Q``, ``i Q``, ``-i S10``, ``-i S01_j``. The scaling
    tangent uses the raw coordinate, since that is what differentiating the
    resampling map produces.
    """
    ps = frame.ps
    g = ps.grid
    P0 = ProfileParams()
    _, dirs = frame.directions(P0)
    d = gradient(ps.Q, g)
    tangents = [
        lambda_op(ps.Q, g, periodic=False) + 0j,
        -d[0] + 0j,
        -d[1] + 0j,
        1j * ps.Q,
        -1j * ps.S10,
        -1j * ps.S01[0],
        -1j * ps.S01[1],
    ]
    J = np.empty((7, 7))
    for k, t in enumerate(tangents):
        J[:, k] = sigma_from_eps(t, dirs, g)
    return J


def closed_form_jacobian_entries(frame: Frame) -> dict:
    """Nonzero entries as closed-form pairings, keyed ``(row, col)`` in inverse-map variables."""
    ps = frame.ps
    g = ps.grid
    LS10 = apply_L(Side.MINUS, ps.S10, ps.gs)
    e = {
        (0, 4): -inner(ps.S10, LS10, g),
        (1, 0): -inner(ps.S10, LS10, g),
        (2, 3): -inner(ps.Q, frame.rho.rho1, g),
    }
    for j in (0, 1):
        LS = apply_L(Side.MINUS, ps.S01[j], ps.gs)
        val = inner(LS, ps.S01[j], g)
        e[(3 + j, 5 + j)] = -val
        e[(5 + j, 1 + j)] = val
    return e


# -- Newton decomposition -----------------------------------------------------

def cold_start(u: np.ndarray, grid_u: Grid2D, Q0: float) -> ModParams:
    """Mass-center translation, peak-based scale and phase, ``P = 0``."""
    m = np.abs(u) ** 2
    x1, x2 = grid_u.coords
    tot = m.sum()
    alpha = (float((m * x1).sum() / tot), float((m * x2).sum() / tot))
    i = np.unravel_index(np.argmax(np.abs(u)), u.shape)
    lam = Q0 / float(np.abs(u[i]))
    return ModParams(lam, alpha, float(np.angle(u[i])), 0.0, (0.0, 0.0))


def decompose(u: np.ndarray, frame: Frame, init: ModParams | None = None, tol: float = 1e-10,
              grid_u: Grid2D | None = None, max_iter: int = 30, fd_step: float = 1e-5,
              escape_tol: float = 1e-3, jacobian: np.ndarray | None = None) -> ModState:
    """Newton solve of ``sigma = 0``; converged when every pairing is ``<= tol * ||u||``.

    ``jacobian`` may carry a previous Jacobian to start a chord iteration; it is
    recomputed whenever a step fails to reduce the residual enough.
    """
    grid_u = grid_u or frame.grid
    unorm = norm(u, grid_u)
    params = init if init is not None else cold_start(u, grid_u, float(frame.ps.Q.max()))
    trace: list = []
    s, eps = _sigma_eps(u, params, frame, grid_u, escape_tol)
    res = float(np.max(np.abs(s)))
    J = jacobian
    fresh = False
    for it in range(max_iter + 1):
        trace.append((params.as_dict(), res))
        if res <= tol * unorm:
            return ModState(params, eps, s, it, trace)
        if it == max_iter:
            break
        if J is None:
            J = fd_jacobian(u, params, frame, grid_u, fd_step, escape_tol)
            fresh = True
        try:
            step = np.linalg.solve(J, -s)
        except np.linalg.LinAlgError as exc:
            raise DecompositionError(f"singular Jacobian: {exc}", trace) from exc
        x0 = params.vector()
        accepted = False
        t = 1.0
        for _ in range(9):
            try:
                trial = ModParams.from_vector(x0 + t * step)
                s_new, eps_new = _sigma_eps(u, trial, frame, grid_u, escape_tol)
            except (ValueError, GateError, EscapeError):
                t *= 0.5
                continue
            r_new = float(np.max(np.abs(s_new)))
            if r_new < res:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if not fresh:
                J = None
                continue
            raise DecompositionError(f"Newton step halving failed at residual {res:.3e}", trace)
        slow = r_new > 0.1 * res
        params, s, eps, res = trial, s_new, eps_new, r_new
        if slow and not fresh:
            J = None
        fresh = False
    raise DecompositionError(f"no convergence in {max_iter} Newton steps (residual {res:.3e})", trace)


# -- deformed linearized operators --------------------------------------------

def apply_M(side, eps: np.ndarray, ps: ProfileSet, P: ProfileParams, gate: float = 0.1,
            mask_rel: float = 1e-8) -> np.ndarray:
    """Linearization of ``|v| v`` around ``Q_P`` in the real (plus) or imaginary (minus) slot.

    plus:  ``D e1 + e1 - 3/2 |Q_P| e1 - 1/2 |Q_P|^-1 (Q1^2 - Q2^2) e1 - |Q_P|^-1 Q1 Q2 e2``
    minus: ``D e2 + e2 - 3/2 |Q_P| e2 + 1/2 |Q_P|^-1 (Q1^2 - Q2^2) e2 - |Q_P|^-1 Q1 Q2 e1``
    """
    side = side if isinstance(side, Side) else Side(side)
    g = ps.grid
    QP = combine(ps.fields(), P, None, ps.extra) if P.size() <= gate else None
    if QP is None:
        raise GateError(f"a^2 + |b| = {P.size():.3g} exceeds the smallness gate {gate}")
    Q1, Q2 = QP.real, QP.imag
    mod = np.abs(QP)
    inv = np.where(mod > mask_rel * mod.max(), 1.0 / np.maximum(mod, 1e-300), 0.0)
    e1, e2 = np.real(eps), np.imag(eps)
    diff = 0.5 * inv * (Q1 ** 2 - Q2 ** 2)
    cross = inv * Q1 * Q2
    if side is Side.PLUS:
        return dfrac(e1, g) + e1 - 1.5 * mod * e1 - diff * e1 - cross * e2
    return dfrac(e2, g) + e2 - 1.5 * mod * e2 + diff * e2 - cross * e1


# -- diagnostics over a series ------------------------------------------------

@dataclass
class ModTable:
    t: np.ndarray
    s: np.ndarray
    lam: np.ndarray
    a: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    alpha: np.ndarray
    mod: np.ndarray  # a_s + a^2/2, gamma~_s, lambda_s/lambda + a, alpha_s/lambda - b (2), b_s + a b (2)
    bound: np.ndarray

    def columns(self) -> dict:
        return {
            "t": self.t, "s": self.s, "lambda": self.lam, "a": self.a,
            "b1": self.b[:, 0], "b2": self.b[:, 1], "gamma": self.gamma,
            "alpha1": self.alpha[:, 0], "alpha2": self.alpha[:, 1],
            "mod_a": self.mod[:, 0], "mod_gamma": self.mod[:, 1], "mod_lambda": self.mod[:, 2],
            "mod_alpha1": self.mod[:, 3], "mod_alpha2": self.mod[:, 4],
            "mod_b1": self.mod[:, 5], "mod_b2": self.mod[:, 6], "bound": self.bound,
        }


def mod_diagnostics(times, params: list[ModParams], eps_norms=None) -> ModTable:
    """Mod(t) from a decomposed series, with derivatives taken in ``s = int dt / lambda``."""
    t = np.asarray(times, float)
    if len(t) < 3:
        raise ValueError("need at least three samples")
    if np.any(np.diff(t) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    lam = np.array([p.lam for p in params])
    a = np.array([p.a for p in params])
    b = np.array([p.b for p in params], float)
    alpha = np.array([p.alpha for p in params], float)
    gamma = np.unwrap(np.array([p.gamma for p in params]))
    inv = 1.0 / lam
    s = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(t))])
    ds = lambda f: np.gradient(f, s, axis=0)
    mod = np.column_stack([
        ds(a) + 0.5 * a ** 2,
        ds(gamma) - 1.0,
        ds(lam) / lam + a,
        ds(alpha) / lam[:, None] - b,
        ds(b) + a[:, None] * b,
    ])
    e2 = np.zeros_like(lam) if eps_norms is None else np.asarray(eps_norms, float) ** 2
    bound = lam ** 2 + a ** 4 + np.linalg.norm(b, axis=1) ** 2 + e2
    return ModTable(t, s, lam, a, b, gamma, alpha, mod, bound)
