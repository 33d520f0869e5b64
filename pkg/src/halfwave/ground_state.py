"""Positive radial ground state of ``(D + 1) Q = Q^2`` by Petviashvili iteration."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .spectral import Grid2D, dfrac, inner, norm, resolvent, symmetrize8

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, history: list[float]):
        super().__init__(msg)
        self.history = history


@dataclass
class GroundState:
    grid: Grid2D
    Q: np.ndarray
    residual: float
    mass_sq: float
    iterations: int
    multiplier: float = 1.0
    history: list[float] = field(default_factory=list, repr=False)

    def residual_field(self) -> np.ndarray:
        return ground_state_residual(self.Q, self.grid)


def ground_state_residual(Q: np.ndarray, grid: Grid2D) -> np.ndarray:
    return dfrac(Q, grid, 1.0) + Q - Q * Q


def default_seed(grid: Grid2D, amplitude: float = 3.0, width: float = 2.0) -> np.ndarray:
    return amplitude * np.exp(-(grid.r / width) ** 2)


def petviashvili_step(Q: np.ndarray, grid: Grid2D) -> tuple[np.ndarray, float]:
    """One symmetrized update; returns the new iterate and the stabilizing factor."""
    LQ = dfrac(Q, grid, 1.0) + Q
    m = inner(LQ, Q, grid) / inner(Q * Q, Q, grid)
    new = m * m * resolvent(Q * Q, grid)
    return symmetrize8(new), m


def solve_ground_state(grid: Grid2D, tol: float = 1e-10, max_iter: int = 500,
                       seed: np.ndarray | None = None) -> GroundState:
    """Iterate until ``||DQ + Q - Q^2|| <= tol * ||Q||``."""
    if not 1e-13 < tol < 1e-4:
        raise ValueError(f"tol must lie in (1e-13, 1e-4), got {tol}")
    Q = symmetrize8(default_seed(grid) if seed is None else np.asarray(seed, float))
    history: list[float] = []
    m = np.nan
    for it in range(1, max_iter + 1):
        if not norm(Q, grid) > 1e-8:
            raise ConvergenceError("iteration collapsed to the zero field", history)
        Q, m = petviashvili_step(Q, grid)
        nQ = norm(Q, grid)
        if not np.isfinite(nQ) or nQ < 1e-8:
            raise ConvergenceError("iteration collapsed to the zero field", history)
        res = norm(ground_state_residual(Q, grid), grid) / nQ
        history.append(res)
        if res <= tol:
            log.info("ground state converged in %d iterations, residual %.2e", it, res)
            return GroundState(grid, Q, res, nQ ** 2, it, float(m), history)
    raise ConvergenceError(
        f"no convergence in {max_iter} iterations (last residual {history[-1]:.3e})", history)
