"""Periodic Fourier-collocation substrate on the square [-L, L)^2.

Fields are plain numpy arrays of shape ``(N, N)`` indexed ``f[i1, i2]`` with
``i1`` along the first coordinate. Real arrays are transformed with ``rfft2``,
complex arrays with ``fft2``; every multiplier below works for both.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.fft as sfft
from scipy.integrate import quad


class GridError(ValueError):
    pass


class SpectralError(ValueError):
    pass


@dataclass(frozen=True)
class Grid2D:
    """Uniform periodic grid on ``[-L, L)^2`` with ``N`` points per axis.

    ``seam`` is the width (as a fraction of ``L``) of the band next to the
    periodic seam where the coordinate used by the scaling generator is bent
    back to make it periodic.
    """

    L: float
    N: int
    seam: float = 0.25

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def cell_area(self) -> float:
        return self.dx * self.dx

    @cached_property
    def x(self) -> np.ndarray:
        return -self.L + self.dx * np.arange(self.N)

    @cached_property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order, ``(pi/L) * n`` for ``n`` in ``[-N/2, N/2)``."""
        return 2.0 * np.pi * sfft.fftfreq(self.N, d=self.dx)

    @cached_property
    def k_half(self) -> np.ndarray:
        return 2.0 * np.pi * sfft.rfftfreq(self.N, d=self.dx)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.x, indexing="ij")

    @cached_property
    def r(self) -> np.ndarray:
        x1, x2 = self.coords
        return np.hypot(x1, x2)

    def wavevectors(self, real: bool) -> tuple[np.ndarray, np.ndarray]:
        """Broadcastable ``(k1, k2)`` for the full (complex) or half (real) spectrum."""
        k2 = self.k_half if real else self.k
        return self.k[:, None], k2[None, :]

    def kabs(self, real: bool) -> np.ndarray:
        return self._kabs_half if real else self._kabs_full

    @cached_property
    def _kabs_full(self) -> np.ndarray:
        k1, k2 = self.wavevectors(False)
        return np.hypot(k1, k2)

    @cached_property
    def _kabs_half(self) -> np.ndarray:
        k1, k2 = self.wavevectors(True)
        return np.hypot(k1, k2)

    @cached_property
    def periodic_coord(self) -> tuple[np.ndarray, np.ndarray]:
        """Smooth periodic ``chi`` with ``chi(x) = x`` for ``|x| <= L (1 - seam)``, and ``chi'``."""
        x = self.x
        w = self.seam * self.L

        def bump(s):
            t = np.asarray(s, dtype=float) / w
            out = np.zeros_like(t)
            inside = np.abs(t) < 1
            out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
            return out

        total = quad(lambda s: float(bump(s)), -w, w, epsabs=1e-15, epsrel=1e-13)[0]
        # signed offset from the seam point at x = +-L
        s_off = np.where(x > 0, x - self.L, x + self.L)
        chi = x.copy()
        dchi = 1.0 - 2.0 * self.L * bump(s_off) / total
        for i in np.nonzero(np.abs(s_off) < w)[0]:
            frac = quad(lambda s: float(bump(s)), -w, s_off[i], epsabs=1e-15, epsrel=1e-13)[0] / total
            chi[i] = x[i] - 2.0 * self.L * (frac if s_off[i] < 0 else frac - 1.0)
        return chi, dchi

    @cached_property
    def scaling_fields(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(X1, X2, c)``: periodized coordinate and half its divergence."""
        chi, dchi = self.periodic_coord
        X1 = np.broadcast_to(chi[:, None], (self.N, self.N))
        X2 = np.broadcast_to(chi[None, :], (self.N, self.N))
        c = 0.5 * (dchi[:, None] + dchi[None, :])
        return X1, X2, c

    @property
    def k_max(self) -> float:
        return np.pi / self.dx

    def zeros(self, dtype=float) -> np.ndarray:
        return np.zeros((self.N, self.N), dtype=dtype)

    def check(self, f: np.ndarray) -> None:
        if f.shape != (self.N, self.N):
            raise GridError(f"field shape {f.shape} does not match grid N={self.N}")


def make_grid(L: float, N: int, seam: float = 0.25) -> Grid2D:
    if not 0 < seam < 0.5:
        raise GridError(f"seam fraction must lie in (0, 0.5), got {seam}")
    if not L > 0:
        raise GridError(f"half-width must be positive, got {L}")
    N = int(N)
    if N < 16 or N & (N - 1):
        raise GridError(f"N must be a power of two >= 16, got {N}")
    return Grid2D(float(L), N, float(seam))


# -- transforms ---------------------------------------------------------------

def fwd(f: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(f):
        return sfft.fft2(f, workers=-1)
    return sfft.rfft2(f, workers=-1)


def inv(fh: np.ndarray, grid: Grid2D, real: bool) -> np.ndarray:
    if real:
        return sfft.irfft2(fh, s=(grid.N, grid.N), workers=-1)
    return sfft.ifft2(fh, workers=-1)


def apply_multiplier(f: np.ndarray, grid: Grid2D, mult) -> np.ndarray:
    """Multiply the spectrum of ``f`` by ``mult(k1, k2, kabs)`` and transform back."""
    grid.check(f)
    real = not np.iscomplexobj(f)
    k1, k2 = grid.wavevectors(real)
    fh = fwd(f)
    return inv(fh * mult(k1, k2, grid.kabs(real)), grid, real)


def _check_finite(f: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(f)):
        raise SpectralError(f"non-finite values in {what}")


# -- operators ----------------------------------------------------------------

def dfrac(f: np.ndarray, grid: Grid2D, s: float = 1.0, zero_mode_tol: float = 1e-10) -> np.ndarray:
    """Fractional derivative ``D^s`` with symbol ``|k|^s``.

    For ``s < 0`` the zero mode is mapped to zero; the input must then have
    (numerically) zero mean, otherwise the inverse is ill-defined.
    """
    if s < -1:
        raise SpectralError(f"order must be >= -1, got {s}")
    _check_finite(f, "dfrac input")
    grid.check(f)
    real = not np.iscomplexobj(f)
    fh = fwd(f)
    kabs = grid.kabs(real)
    if s == 0:
        return f.copy()
    if s < 0:
        zero = abs(fh[0, 0])
        scale = np.sqrt(np.sum(np.abs(fh) ** 2) / fh.size) + 1e-300
        if zero > zero_mode_tol * scale * np.sqrt(fh.size):
            raise SpectralError(
                f"D^{s} needs a zero-mean field; zero mode {zero:.3e} is not negligible"
            )
        with np.errstate(divide="ignore"):
            mult = np.where(kabs > 0, kabs ** s, 0.0)
    else:
        mult = kabs ** s
    return inv(fh * mult, grid, real)


def resolvent(f: np.ndarray, grid: Grid2D, shift: float = 1.0) -> np.ndarray:
    """``(D + shift)^{-1} f`` for ``shift > 0``."""
    return apply_multiplier(f, grid, lambda k1, k2, ka: 1.0 / (ka + shift))


def partial(f: np.ndarray, grid: Grid2D, axis: int) -> np.ndarray:
    """Spectral derivative along ``axis`` (0 or 1); the Nyquist mode is dropped."""
    grid.check(f)
    real = not np.iscomplexobj(f)
    k1, k2 = grid.wavevectors(real)
    kk = k1 if axis == 0 else k2
    kk = np.where(np.isclose(np.abs(kk), grid.k_max), 0.0, kk)
    return inv(fwd(f) * (1j * kk), grid, real)


def gradient(f: np.ndarray, grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    return partial(f, grid, 0), partial(f, grid, 1)


def x_grad(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    """``x . grad f`` with the gradient taken spectrally and the raw coordinate."""
    x1, x2 = grid.coords
    d1, d2 = gradient(f, grid)
    return x1 * d1 + x2 * d2


def lambda_op(f: np.ndarray, grid: Grid2D, iterate: int = 1, periodic: bool = True) -> np.ndarray:
    """Scaling generator ``Lambda f = f + x . grad f`` applied ``iterate`` times.

    With ``periodic=True`` the coordinate is replaced by its periodized version
    (identical away from the seam band) and the operator is applied in the split
    form ``(X . grad f + div(X f)) / 2``, which is skew for the discrete inner
    product to round-off. ``periodic=False`` uses the raw coordinate with its
    jump at the seam.
    """
    if iterate < 0:
        raise ValueError("iterate must be >= 0")
    out = f
    for _ in range(iterate):
        if periodic:
            X1, X2, _ = grid.scaling_fields
            d1, d2 = gradient(out, grid)
            out = 0.5 * (X1 * d1 + X2 * d2 + partial(X1 * out, grid, 0) + partial(X2 * out, grid, 1))
        else:
            out = out + x_grad(out, grid)
    return out


def dealias(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Two-thirds rule: keep ``|n| <= N/3`` on each axis."""
    real = not np.iscomplexobj(f)
    cut = grid.k_max * 2.0 / 3.0
    k1, k2 = grid.wavevectors(real)
    mask = (np.abs(k1) <= cut) & (np.abs(k2) <= cut)
    return inv(fwd(f) * mask, grid, real)


# -- quadrature ---------------------------------------------------------------

def integrate(f: np.ndarray, grid: Grid2D):
    return np.sum(f) * grid.cell_area


def inner(f: np.ndarray, g: np.ndarray, grid: Grid2D):
    """``(f, g) = int conj(f) g``; real for real inputs."""
    if np.iscomplexobj(f):
        return np.vdot(f, g) * grid.cell_area
    if np.iscomplexobj(g):
        return np.sum(f * g) * grid.cell_area
    return float(np.dot(f.ravel(), g.ravel())) * grid.cell_area


def norm(f: np.ndarray, grid: Grid2D) -> float:
    return float(np.sqrt(np.sum(np.abs(f) ** 2) * grid.cell_area))


def norm_fourier(f: np.ndarray, grid: Grid2D) -> float:
    """L2 norm evaluated from the full spectrum (Parseval)."""
    fh = sfft.fft2(f, workers=-1)
    return float(np.sqrt(np.sum(np.abs(fh) ** 2) / grid.N ** 2 * grid.cell_area))


def sobolev_norm(f: np.ndarray, grid: Grid2D, s: float, homogeneous: bool = False) -> float:
    """``H^s`` norm with weight ``(1 + |k|^2)^{s/2}`` or ``|k|^s`` if homogeneous."""
    fh = sfft.fft2(f, workers=-1)
    ka = grid.kabs(False)
    w = ka ** (2 * s) if homogeneous else (1.0 + ka ** 2) ** s
    return float(np.sqrt(np.sum(w * np.abs(fh) ** 2) / grid.N ** 2 * grid.cell_area))


class ConservedTriple(NamedTuple):
    mass: float
    energy: float
    momentum: np.ndarray


def functionals(u: np.ndarray, grid: Grid2D, imag_tol: float = 1e-10) -> ConservedTriple:
    """Mass, energy and momentum of ``u``.

    ``E = 1/2 (u, D u) - 1/3 int |u|^3`` and ``P = int -i grad(u) conj(u)``.
    """
    _check_finite(u, "functionals input")
    uc = u.astype(complex, copy=False)
    mass = float(np.sum(np.abs(uc) ** 2) * grid.cell_area)
    Du = dfrac(uc, grid, 1.0)
    kinetic = inner(uc, Du, grid)
    energy = 0.5 * kinetic.real - np.sum(np.abs(uc) ** 3) * grid.cell_area / 3.0
    mom = []
    for ax in (0, 1):
        p = np.sum(-1j * partial(uc, grid, ax) * np.conj(uc)) * grid.cell_area
        if abs(p.imag) > imag_tol * max(mass, 1e-300):
            raise SpectralError(f"momentum has imaginary part {p.imag:.3e}; corrupted field?")
        mom.append(p.real)
    return ConservedTriple(mass, float(energy), np.array(mom))


def momentum_pair(f1: np.ndarray, f2: np.ndarray, grid: Grid2D) -> np.ndarray:
    """``P(f) = 2 int f1 grad f2`` for the pair form ``f = f1 + i f2``."""
    return np.array([2.0 * inner(f1, partial(f2, grid, ax), grid) for ax in (0, 1)])


# -- pair form and symmetries -------------------------------------------------

def to_pair(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.ascontiguousarray(u.real), np.ascontiguousarray(u.imag)


def from_pair(f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    return f1 + 1j * f2


def reflect(f: np.ndarray, axis: int) -> np.ndarray:
    """``f(x) -> f(x')`` with ``x'_axis = -x_axis``; node ``-L`` maps to itself."""
    return np.roll(np.flip(f, axis=axis), 1, axis=axis)


def parity_project(f: np.ndarray, signs: tuple[int, int]) -> np.ndarray:
    """Project onto fields with ``f(R_j x) = signs[j] f(x)`` for the two reflections."""
    g = 0.5 * (f + signs[0] * reflect(f, 0))
    return 0.5 * (g + signs[1] * reflect(g, 1))


def symmetrize8(f: np.ndarray) -> np.ndarray:
    """Average over the 8 lattice symmetries (reflections and the axis swap)."""
    g = parity_project(f, (1, 1))
    return 0.5 * (g + g.T)


def edge_ratio(f: np.ndarray, cells: int = 4) -> float:
    """Max of ``|f|`` within ``cells`` of the boundary, relative to max ``|f|``."""
    a = np.abs(f)
    peak = a.max()
    if peak == 0:
        return 0.0
    band = np.zeros_like(a, dtype=bool)
    band[:cells, :] = band[-cells:, :] = True
    band[:, :cells] = band[:, -cells:] = True
    return float(a[band].max() / peak)


def assert_edge_decay(f: np.ndarray, rel: float = 1e-8, cells: int = 4) -> None:
    ratio = edge_ratio(f, cells)
    if ratio > rel:
        raise SpectralError(f"field is {ratio:.2e} of its max near the box edge (limit {rel:.1e})")


# -- band-limited resampling --------------------------------------------------

def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10 - 15 * t + 6 * t ** 2)


def _eval_matrix(grid: Grid2D, pts: np.ndarray, taper_cells: float) -> np.ndarray:
    """Rows evaluate the trigonometric interpolant at ``pts`` along one axis.

    Points beyond the box are evaluated periodically and damped to zero over
    ``taper_cells`` cells, so values far outside are zero and the map stays
    smooth in the points.
    """
    shift = pts[:, None] + grid.L
    k = grid.k[None, :]
    E = np.exp(1j * k * shift)
    nyq = grid.N // 2
    E[:, nyq] = np.cos(grid.k[nyq] * shift[:, 0])
    return E * (_taper(grid, pts, taper_cells) / grid.N)[:, None]


def _taper(grid: Grid2D, pts: np.ndarray, taper_cells: float) -> np.ndarray:
    beyond = np.maximum(np.maximum(pts - (grid.L - grid.dx), -grid.L - pts), 0.0)
    return 1.0 - _smoothstep(beyond / (taper_cells * grid.dx))


def resample(f: np.ndarray, grid: Grid2D, p1: np.ndarray, p2: np.ndarray,
             taper_cells: float = 8.0) -> np.ndarray:
    """Evaluate the band-limited interpolant of ``f`` on the tensor grid ``p1 x p2``."""
    grid.check(f)
    fh = sfft.fft2(f, workers=-1)
    E1 = _eval_matrix(grid, np.asarray(p1, float), taper_cells)
    E2 = _eval_matrix(grid, np.asarray(p2, float), taper_cells)
    out = (E1 @ fh) @ E2.T
    if not np.iscomplexobj(f):
        out = out.real
    return out
