"""Periodic 2D grids, harmonic transforms and the implicit operators of the
spectral Gaussian-process model.

Conventions
-----------
* Real fields are ``(n, n)`` arrays; operators act on their row-major
  flattening (length ``n*n``).
* ``fft_forward`` is the unitary 2D DFT, so a stationary covariance has the
  power spectrum itself on its harmonic diagonal.
* White excitations are real.  They live in the Hartley basis
  ``cas(k.x) = cos + sin``, which is the unitary DFT followed by the fixed
  real relabelling ``Re - Im``.  The Hartley transform is real, symmetric and
  its own inverse, and it diagonalises every covariance whose spectrum is
  even in ``k`` (in particular isotropic ones).
* Power spectra live on ``B`` bins: bin 0 holds the ``|k| = 0`` pixel only,
  bins ``1..B-1`` are geometric in ``|k|`` between the fundamental and the
  corner frequency, so their centres are uniformly spaced in ``ln k``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft as sfft
from scipy.sparse.linalg import LinearOperator

from .errors import DomainError


@dataclass(frozen=True)
class Grid2D:
    n_side: int
    pixel_size: float = 1.0

    def __post_init__(self):
        if int(self.n_side) != self.n_side or self.n_side < 4 or self.n_side % 2:
            raise DomainError("n_side must be an even integer >= 4")
        if not self.pixel_size > 0:
            raise DomainError("pixel_size must be positive")

    @property
    def shape(self):
        return (self.n_side, self.n_side)

    @property
    def size(self):
        return self.n_side * self.n_side

    @property
    def fundamental(self):
        return 1.0 / (self.n_side * self.pixel_size)


def _as_field(x, grid):
    x = np.asarray(x)
    if x.size != grid.size:
        raise DomainError(f"field has {x.size} values, grid needs {grid.size}")
    return x.reshape(grid.shape)


def fft_forward(field, grid):
    """Unitary DFT of a real field; returns the complex harmonic field."""
    return sfft.fft2(_as_field(field, grid), norm="ortho")


def fft_adjoint(harmonic, grid):
    """Adjoint (= inverse) of :func:`fft_forward`, returning the real part."""
    return sfft.ifft2(_as_field(harmonic, grid), norm="ortho").real


def hermitian_asymmetry(harmonic):
    """max |h(k) - conj(h(-k))|; zero for the transform of a real field."""
    h = np.asarray(harmonic)
    flipped = np.roll(np.flip(h, axis=(0, 1)), 1, axis=(0, 1))
    return float(np.max(np.abs(h - np.conj(flipped))))


def hartley(x, grid):
    """Real unitary Hartley transform; ``hartley(hartley(x)) == x``."""
    shape = np.shape(x)
    h = sfft.fft2(_as_field(x, grid), norm="ortho")
    return (h.real - h.imag).reshape(shape)


def k_lengths(grid):
    """|k| per pixel, in cycles per length unit, standard FFT ordering."""
    f = sfft.fftfreq(grid.n_side, d=grid.pixel_size)
    return np.hypot(f[:, None], f[None, :])


@dataclass(frozen=True, eq=False)
class SpectralBinning:
    """Assignment of harmonic pixels to power-spectrum bins."""

    grid: Grid2D
    n_bins: int
    bin_index: np.ndarray       # (n, n) ints
    bin_centers: np.ndarray     # |k| of each bin, 0 for bin 0
    log_edges: np.ndarray       # ln k edges of bins 1..B-1

    @cached_property
    def multiplicities(self):
        return np.bincount(self.bin_index.ravel(), minlength=self.n_bins)

    @property
    def log_centers(self):
        """ln k of bins 1..B-1 (uniformly spaced)."""
        return 0.5 * (self.log_edges[1:] + self.log_edges[:-1])

    @cached_property
    def flat_index(self):
        return self.bin_index.ravel()


def build_k_grid(grid, n_bins=None):
    """Bin the harmonic pixels of ``grid``; ``n_bins`` defaults to ``n_side/2``."""
    n_bins = grid.n_side // 2 if n_bins is None else int(n_bins)
    if n_bins < 2:
        raise DomainError("need at least two bins")
    k = k_lengths(grid)
    kmin = grid.fundamental
    kmax = np.sqrt(2.0) * 0.5 / grid.pixel_size
    log_edges = np.linspace(np.log(kmin), np.log(kmax), n_bins)
    index = np.zeros(k.shape, dtype=np.intp)
    nz = k > 0
    inner = np.searchsorted(log_edges, np.log(k[nz]), side="right")
    index[nz] = np.clip(inner, 1, n_bins - 1)
    centers = np.zeros(n_bins)
    centers[1:] = np.exp(0.5 * (log_edges[1:] + log_edges[:-1]))
    return SpectralBinning(grid, n_bins, index, centers, log_edges)


def power_distribute(binning, p):
    """Broadcast a per-bin spectrum onto the harmonic pixels."""
    p = np.asarray(p, dtype=float)
    if p.shape != (binning.n_bins,):
        raise DomainError(f"spectrum needs {binning.n_bins} bins, got {p.shape}")
    return p[binning.bin_index]


def power_collect(binning, harmonic_weights):
    """Adjoint of :func:`power_distribute`: per-bin sums."""
    w = np.asarray(harmonic_weights, dtype=float).ravel()
    if w.size != binning.grid.size:
        raise DomainError("harmonic field does not match the binning grid")
    return np.bincount(binning.flat_index, weights=w, minlength=binning.n_bins)


# -- implicit operators ----------------------------------------------------

def harmonic_diagonal_operator(grid, weights):
    """H diag(weights) H, symmetric whenever the weights are real."""
    w = np.asarray(weights, dtype=float).ravel()

    def mv(x):
        x = np.asarray(x).ravel()
        return hartley(w * hartley(x, grid), grid).ravel()

    return LinearOperator((grid.size, grid.size), matvec=mv, rmatvec=mv, dtype=float)


def covariance_from_spectrum(binning, p):
    """Stationary isotropic covariance with per-bin power ``p``."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise DomainError("spectrum values must be strictly positive")
    return harmonic_diagonal_operator(binning.grid, power_distribute(binning, p))


def check_mask(mask, n_pixels):
    mask = np.asarray(mask, dtype=np.intp).ravel()
    if mask.size and (mask.min() < 0 or mask.max() >= n_pixels):
        raise DomainError("mask index out of range")
    if np.unique(mask).size != mask.size:
        raise DomainError("mask indices must be distinct")
    return mask


def response_apply(mask, field):
    return np.asarray(field).ravel()[mask]


def response_adjoint(mask, data, n_pixels):
    out = np.zeros(n_pixels)
    out[mask] = data
    return out


def response_operator(mask, n_pixels):
    mask = check_mask(mask, n_pixels)
    return LinearOperator(
        (mask.size, n_pixels),
        matvec=lambda x: response_apply(mask, x),
        rmatvec=lambda y: response_adjoint(mask, np.asarray(y).ravel(), n_pixels),
        dtype=float,
    )


def to_dense(op):
    """Materialise a linear operator column by column (small problems only)."""
    n = op.shape[1]
    out = np.empty(op.shape)
    e = np.zeros(n)
    for i in range(n):
        e[i] = 1.0
        out[:, i] = op.matvec(e)
        e[i] = 0.0
    return out


def adjoint_test(op, rng=None, n_pairs=20):
    """Largest relative mismatch of <A x, y> against <x, A^T y>."""
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(n_pairs):
        x = rng.standard_normal(op.shape[1])
        y = rng.standard_normal(op.shape[0])
        lhs = float(np.dot(op.matvec(x).ravel(), y))
        rhs = float(np.dot(x, op.rmatvec(y).ravel()))
        scale = max(abs(lhs), abs(rhs), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


# -- log-k smoothness prior ------------------------------------------------

class LogSpectrumSmoothness:
    """Standardizing map ``tau = W zeta`` for the smoothness prior on ln p.

    ``tau[0]`` (the ``|k| = 0`` bin) has prior standard deviation
    ``sigma_offset``.  The remaining ``M = B - 1`` values sit on a uniform
    ln k grid; there the inverse kernel is ``Delta^T Delta / sigma_smooth^2``
    with ``Delta`` the Laplacian diagonalised by the orthonormal DCT-II
    (reflective boundaries).  Each harmonic mode ``l`` gets amplitude
    ``sigma_smooth / l^2``; the ``l = 0`` constant mode, which the Laplacian
    does not see, gets ``sigma_offset``.
    """

    def __init__(self, n_bins, log_bin_centers, sigma_smooth, sigma_offset=10.0):
        if n_bins < 4:
            raise DomainError("smoothness prior needs at least 4 bins")
        if not (sigma_smooth > 0 and sigma_offset > 0):
            raise DomainError("sigma_smooth and sigma_offset must be positive")
        c = np.asarray(log_bin_centers, dtype=float)
        if c.shape != (n_bins - 1,):
            raise DomainError("need ln k centres for bins 1..B-1")
        steps = np.diff(c)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * abs(steps.mean()):
            raise DomainError("bins 1..B-1 must be uniformly spaced in ln k")
        self.n_bins = n_bins
        self.sigma_smooth = float(sigma_smooth)
        self.sigma_offset = float(sigma_offset)
        m = n_bins - 1
        self.spacing = float(steps.mean())
        self.l = np.pi * np.arange(m) / (m * self.spacing)
        self.amplitudes = np.empty(n_bins)
        self.amplitudes[0] = self.sigma_offset
        self.amplitudes[1] = self.sigma_offset
        self.amplitudes[2:] = self.sigma_smooth / self.l[1:] ** 2

    @classmethod
    def for_binning(cls, binning, sigma_smooth, sigma_offset=10.0):
        return cls(binning.n_bins, binning.log_centers, sigma_smooth, sigma_offset)

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_bins,):
            raise DomainError(f"expected a vector of length {self.n_bins}")
        return v

    def tau_from_zeta(self, zeta):
        y = self.amplitudes * self._check(zeta)
        tau = np.empty(self.n_bins)
        tau[0] = y[0]
        tau[1:] = sfft.idct(y[1:], type=2, norm="ortho")
        return tau

    def tau_from_zeta_adjoint(self, g):
        g = self._check(g)
        out = np.empty(self.n_bins)
        out[0] = g[0]
        out[1:] = sfft.dct(g[1:], type=2, norm="ortho")
        return self.amplitudes * out

    def zeta_from_tau(self, tau):
        tau = self._check(tau)
        out = np.empty(self.n_bins)
        out[0] = tau[0]
        out[1:] = sfft.dct(tau[1:], type=2, norm="ortho")
        return out / self.amplitudes

    def inverse_kernel_apply(self, tau):
        """T^{-1} tau = W^{-T} W^{-1} tau."""
        z = self.zeta_from_tau(tau) / self.amplitudes
        out = np.empty(self.n_bins)
        out[0] = z[0]
        out[1:] = sfft.idct(z[1:], type=2, norm="ortho")
        return out

    def information(self, tau):
        """1/2 tau^T T^{-1} tau."""
        z = self.zeta_from_tau(tau)
        return 0.5 * float(z @ z)

    def operator(self):
        b = self.n_bins
        return LinearOperator((b, b), matvec=self.tau_from_zeta, rmatvec=self.tau_from_zeta_adjoint, dtype=float)


def log_laplace_operator(n_bins, log_bin_centers, sigma_smooth, sigma_offset=10.0):
    return LogSpectrumSmoothness(n_bins, log_bin_centers, sigma_smooth, sigma_offset)
