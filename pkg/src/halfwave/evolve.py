"""Strang splitting for ``i u_t = D u - |u| u``.

The nonlinear flow keeps ``|u|`` fixed pointwise, so it is the exact phase
rotation ``u e^{i |u| t}``; the linear flow is the multiplier ``e^{-i |k| t}``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
import scipy.fft as sfft

from .spectral import Grid2D, dfrac, functionals, norm

log = logging.getLogger(__name__)


class IntegrationError(RuntimeError):
    def __init__(self, msg: str, last_good: tuple[float, np.ndarray] | None = None):
        super().__init__(msg)
        self.last_good = last_good


class _DealiasMask:
    def __init__(self, grid: Grid2D):
        cut = grid.k_max * 2.0 / 3.0
        k = grid.k
        keep = np.abs(k) <= cut
        self.mask = keep[:, None] & keep[None, :]


_masks: dict = {}


def _mask(grid: Grid2D) -> np.ndarray:
    key = (grid.L, grid.N)
    if key not in _masks:
        _masks[key] = _DealiasMask(grid).mask
    return _masks[key]


def nonlinear_substep(u: np.ndarray, dt: float) -> np.ndarray:
    return u * np.exp(1j * np.abs(u) * dt)


def linear_substep(u: np.ndarray, grid: Grid2D, dt: float) -> np.ndarray:
    return sfft.ifft2(sfft.fft2(u, workers=-1) * np.exp(-1j * grid.kabs(False) * dt), workers=-1)


def step(u: np.ndarray, grid: Grid2D, dt: float, dealias_on: bool = True,
         nonlinear: bool = True, linear: bool = True) -> np.ndarray:
    """One Strang step: half nonlinear, full linear, half nonlinear."""
    uh = None
    if nonlinear:
        u = nonlinear_substep(u, 0.5 * dt)
    if linear or dealias_on:
        uh = sfft.fft2(u, workers=-1)
        if dealias_on and nonlinear:
            uh *= _mask(grid)
        if linear:
            uh *= np.exp(-1j * grid.kabs(False) * dt)
        u = sfft.ifft2(uh, workers=-1)
    if nonlinear:
        u = nonlinear_substep(u, 0.5 * dt)
        if dealias_on:
            u = sfft.ifft2(sfft.fft2(u, workers=-1) * _mask(grid), workers=-1)
    return u


# triple-jump weights lifting Strang to fourth order
_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_W0 = -(2.0 ** (1.0 / 3.0)) * _W1
SCHEMES = ("strang", "yoshida4")


def advance(u: np.ndarray, grid: Grid2D, dt: float, scheme: str = "strang",
            dealias_on: bool = True) -> np.ndarray:
    """One step of the chosen scheme; ``yoshida4`` composes three Strang steps."""
    if scheme == "strang":
        return step(u, grid, dt, dealias_on)
    if scheme == "yoshida4":
        for w in (_W1, _W0, _W1):
            u = step(u, grid, w * dt, dealias_on)
        return u
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


@dataclass
class Schedule:
    t_start: float
    t_end: float
    dt: float | None = None
    c_adaptive: float | None = None
    checkpoint_stride: int = 10
    dt_max: float | None = None
    scheme: str = "strang"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.t_end == self.t_start:
            raise ValueError("t_end must differ from t_start")
        if (self.dt is None) == (self.c_adaptive is None):
            raise ValueError("give exactly one of dt (fixed) or c_adaptive")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.c_adaptive is not None and self.c_adaptive <= 0:
            raise ValueError("c_adaptive must be positive")
        if self.checkpoint_stride < 1:
            raise ValueError("checkpoint_stride must be >= 1")

    @property
    def adaptive(self) -> bool:
        return self.c_adaptive is not None

    @property
    def direction(self) -> float:
        return 1.0 if self.t_end > self.t_start else -1.0


class Observer(Protocol):
    def __call__(self, index: int, t: float, u: np.ndarray) -> dict | None: ...


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    records: list = field(default_factory=list)
    halt_reason: str = ""
    steps: int = 0
    final: np.ndarray | None = None
    t_final: float = np.nan


def run(u0: np.ndarray, grid: Grid2D, schedule: Schedule, observers: list[Callable] = (),
        lam_min: float | None = None, dealias_on: bool = True, max_steps: int = 10 ** 7,
        lam0: float | None = None) -> Trajectory:
    """Step from ``t_start`` toward ``t_end``, calling observers at every checkpoint.

    An observer may return a dict; a ``"lam"`` entry feeds the adaptive step and
    the resolvability floor, a ``"halt"`` entry stops the run with that reason.
    """
    if not np.all(np.isfinite(u0)):
        raise IntegrationError("initial field is not finite")
    if schedule.adaptive and not observers and lam0 is None:
        raise ValueError("adaptive stepping needs an observer reporting lambda")
    u = u0.astype(complex, copy=True)
    t = schedule.t_start
    sgn = schedule.direction
    traj = Trajectory()
    lam = lam0
    last_good = (t, u.copy())
    index = 0

    def observe():
        nonlocal lam
        rec = {}
        for obs in observers:
            out = obs(index, t, u)
            if out:
                rec.update(out)
        if "lam" in rec:
            lam = rec["lam"]
        traj.times.append(t)
        traj.records.append(rec)
        return rec

    rec = observe()
    while True:
        if "halt" in rec:
            traj.halt_reason = rec["halt"]
            break
        if lam_min is not None and lam is not None and lam < lam_min:
            traj.halt_reason = f"lambda {lam:.4g} below resolvability floor {lam_min:.4g}"
            break
        remaining = (schedule.t_end - t) * sgn
        if remaining <= 1e-14 * max(1.0, abs(t)):
            traj.halt_reason = "reached t_end"
            break
        if index >= max_steps:
            traj.halt_reason = "max_steps"
            break
        if schedule.adaptive:
            if lam is None:
                raise ValueError("adaptive stepping needs a lambda estimate")
            dt = schedule.c_adaptive * lam
        else:
            dt = schedule.dt
        if schedule.dt_max is not None:
            dt = min(dt, schedule.dt_max)
        dt = min(dt, remaining)
        u = advance(u, grid, sgn * dt, schedule.scheme, dealias_on)
        t = t + sgn * dt
        index += 1
        if not np.all(np.isfinite(u)):
            raise IntegrationError(f"non-finite field at t={t:.6g}", last_good)
        at_end = (schedule.t_end - t) * sgn <= 1e-14 * max(1.0, abs(t))
        if index % schedule.checkpoint_stride == 0 or at_end:
            last_good = (t, u.copy())
            rec = observe()
    traj.steps = index
    traj.final = u
    traj.t_final = t
    return traj


def conservation_observer(grid: Grid2D):
    def obs(index, t, u):
        M, E, P = functionals(u, grid)
        return {"M": M, "E": E, "P1": float(P[0]), "P2": float(P[1]),
                "H_half": norm(dfrac(u, grid, 0.5), grid)}
    return obs


CSV_COLUMNS = ("t", "M", "E", "P1", "P2", "lambda", "a", "b1", "b2", "H_half")


def write_csv(path, traj: Trajectory, columns=CSV_COLUMNS) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(columns)
        for t, rec in zip(traj.times, traj.records):
            row = [t if c == "t" else rec.get(c, float("nan")) for c in columns]
            wr.writerow([repr(float(x)) for x in row])
