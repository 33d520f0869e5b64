"""Linearized operators ``L+ = D + 1 - 2Q`` and ``L- = D + 1 - Q``.

Inversion uses a preconditioned MINRES written against the projected operator
``P L P`` where ``P`` removes the kernel (and optionally a parity sector). The
projection is re-applied to every Krylov vector.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .ground_state import GroundState
from .spectral import Grid2D, GridError, dfrac, inner, norm, parity_project, partial, resolvent

log = logging.getLogger(__name__)


class Side(enum.Enum):
    PLUS = "plus"
    MINUS = "minus"

    @property
    def coupling(self) -> float:
        return 2.0 if self is Side.PLUS else 1.0


def as_side(side) -> Side:
    return side if isinstance(side, Side) else Side(str(side).lower())


class SolvabilityError(ValueError):
    pass


class StagnationError(RuntimeError):
    def __init__(self, msg: str, history: list[float]):
        super().__init__(msg)
        self.history = history


def apply_L(side, f: np.ndarray, gs: GroundState) -> np.ndarray:
    side = as_side(side)
    if f.shape != gs.Q.shape:
        raise GridError(f"field shape {f.shape} does not match ground state {gs.Q.shape}")
    return dfrac(f, gs.grid, 1.0) + f - side.coupling * gs.Q * f


@dataclass
class KernelBasis:
    side: Side
    vectors: list[np.ndarray]
    grid: Grid2D

    def pairings(self, f: np.ndarray) -> np.ndarray:
        return np.array([inner(v, f, self.grid) for v in self.vectors])

    def project(self, f: np.ndarray) -> np.ndarray:
        out = f
        for v in self.vectors:
            out = out - inner(v, out, self.grid) * v
        return out


def kernel_basis(side, gs: GroundState) -> KernelBasis:
    side = as_side(side)
    grid = gs.grid
    if side is Side.PLUS:
        raw = [partial(gs.Q, grid, 0), partial(gs.Q, grid, 1)]
    else:
        raw = [gs.Q.copy()]
    vecs: list[np.ndarray] = []
    for v in raw:
        for w in vecs:
            v = v - inner(w, v, grid) * w
        vecs.append(v / norm(v, grid))
    return KernelBasis(side, vecs, grid)


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    history: list[float]


def minres(apply_A, b: np.ndarray, precond, project, dot, tol: float, max_iter: int):
    """Preconditioned MINRES (Paige and Saunders) for symmetric ``A`` and SPD ``precond``.

    ``project`` is applied to every new Krylov vector. Returns ``(x, info)``
    where ``info.residual`` is the true relative residual ``||b - A x|| / ||b||``.
    """
    bnorm = np.sqrt(dot(b, b))
    if bnorm == 0:
        return np.zeros_like(b), SolveInfo(0, 0.0, [0.0])
    x = np.zeros_like(b)
    r1 = b.copy()
    y = project(precond(r1))
    beta1 = dot(r1, y)
    if beta1 <= 0:
        raise ValueError("preconditioner is not positive definite")
    beta1 = np.sqrt(beta1)
    oldb, beta, dbar, epsln, phibar = 0.0, beta1, 0.0, 0.0, beta1
    cs, sn = -1.0, 0.0
    w = np.zeros_like(b)
    w2 = np.zeros_like(b)
    r2 = r1.copy()
    history: list[float] = []
    check_every = 20
    for itn in range(1, max_iter + 1):
        v = y / beta
        y = project(apply_A(v))
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = dot(v, y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = project(precond(r2))
        oldb = beta
        beta = np.sqrt(max(dot(r2, y), 0.0))
        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = np.hypot(gbar, beta)
        if gamma == 0:
            gamma = np.finfo(float).eps
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar
        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        est = phibar / beta1
        history.append(est)
        if est < 0.1 * tol or itn % check_every == 0 or beta == 0:
            r = b - project(apply_A(x))
            true_res = np.sqrt(dot(r, r)) / bnorm
            if true_res <= tol:
                return x, SolveInfo(itn, true_res, history)
            if beta == 0:
                break
    r = b - project(apply_A(x))
    true_res = np.sqrt(dot(r, r)) / bnorm
    if true_res <= tol:
        return x, SolveInfo(max_iter, true_res, history)
    raise StagnationError(
        f"MINRES stopped at relative residual {true_res:.3e} (target {tol:.1e})", history)


def solve_L(side, rhs: np.ndarray, gs: GroundState, tol: float = 1e-11,
            symmetry: tuple[int, int] | None = None, solvability_tol: float = 1e-7,
            max_iter: int = 2000, kernel: KernelBasis | None = None,
            return_info: bool = False):
    """Solve ``L x = rhs`` on the orthogonal complement of the kernel of ``L``."""
    side = as_side(side)
    grid = gs.grid
    kb = kernel if kernel is not None else kernel_basis(side, gs)
    rnorm = norm(rhs, grid)
    if rnorm == 0:
        x = np.zeros_like(rhs)
        return (x, SolveInfo(0, 0.0, [])) if return_info else x
    pair = kb.pairings(rhs)
    names = ["d1 Q", "d2 Q"] if side is Side.PLUS else ["Q"]
    for name, p in zip(names, pair):
        if abs(p) > solvability_tol * rnorm:
            raise SolvabilityError(
                f"right-hand side pairs with kernel vector {name} of L{side.value}: "
                f"{p:.3e} vs norm {rnorm:.3e}")

    def project(f):
        if symmetry is not None:
            f = parity_project(f, symmetry)
        return kb.project(f)

    b = project(rhs)
    x, info = minres(
        lambda f: apply_L(side, f, gs),
        b,
        lambda f: resolvent(f, grid),
        project,
        lambda f, g: float(np.dot(f.ravel(), g.ravel())),
        tol,
        max_iter,
    )
    x = project(x)
    log.debug("solve_L(%s): %d iterations, residual %.2e", side.value, info.iterations, info.residual)
    return (x, info) if return_info else x


def coercivity_estimate(gs: GroundState, constraints_plus: list[np.ndarray],
                        constraints_minus: list[np.ndarray], tol: float = 1e-8,
                        max_iter: int = 20000, ncv: int = 60) -> tuple[float, float]:
    """Smallest Rayleigh quotients of ``L+`` and ``L-`` off the given constraint spans."""
    if not constraints_plus or not constraints_minus:
        raise ValueError("both constraint lists must be nonempty")
    return (
        min_rayleigh(Side.PLUS, gs, constraints_plus, tol, max_iter, ncv),
        min_rayleigh(Side.MINUS, gs, constraints_minus, tol, max_iter, ncv),
    )


def min_rayleigh(side, gs: GroundState, constraints: list[np.ndarray], tol: float = 1e-8,
                 max_iter: int = 20000, ncv: int = 60, shift: float = 10.0) -> float:
    """Lanczos estimate of ``min <L f, f> / <f, f>`` over ``f`` orthogonal to ``constraints``.

    The constraint span is deflated by adding ``shift`` times its projector, so
    ``shift`` must exceed the sought minimum.
    """
    side = as_side(side)
    grid = gs.grid
    n = grid.N * grid.N
    shape = (grid.N, grid.N)
    if constraints:
        Y, _ = np.linalg.qr(np.column_stack([np.asarray(c, float).ravel() for c in constraints]))
    else:
        Y = np.zeros((n, 0))

    def matvec(v):
        v = np.asarray(v).ravel()
        w = v - Y @ (Y.T @ v)
        Lw = apply_L(side, w.reshape(shape), gs).ravel()
        return Lw - Y @ (Y.T @ Lw) + shift * (v - w)

    A = LinearOperator((n, n), matvec=matvec, dtype=float)
    try:
        vals = eigsh(A, k=1, which="SA", tol=tol, ncv=min(ncv, n - 1), maxiter=max_iter,
                     return_eigenvectors=False)
    except ArpackNoConvergence as exc:
        raise RuntimeError(f"eigenvalue iteration did not converge: {exc}") from exc
    lam = float(np.min(vals))
    if not np.isfinite(lam) or lam >= shift:
        raise RuntimeError(f"eigenvalue iteration returned {lam}")
    return lam
