"""Gaussian process with an unknown, smooth power spectrum, written in two
equivalent parametrizations.

Deep coordinates ``(s, tau)``::

    H = 1/2 |d - R s|^2 / sn^2 + 1/2 sum_k e^{-tau_b(k)} (H s)_k^2
        + 1/2 sum_b n_b tau_b + 1/2 tau^T T^{-1} tau

Flat coordinates ``(xi, zeta)`` with ``s = A(tau) xi``,
``A(tau) = Hartley . diag(e^{tau_b(k)/2})`` and ``tau = W zeta``::

    H = 1/2 |d - R A(W zeta) xi|^2 / sn^2 + 1/2 |xi|^2 + 1/2 |zeta|^2

``n_b`` is the bin multiplicity, so the ``tau`` trace term is the
log-determinant of ``S``.  Curvatures are Gauss-Newton forms and always
positive (semi-)definite.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh, ArpackNoConvergence

from . import fieldops
from .errors import ConversionError, DomainError, OverflowGuardError

EXP_GUARD = 40.0


def guarded_exp(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.max(np.abs(x), initial=0.0) > EXP_GUARD:
        raise OverflowGuardError(f"exponent outside +-{EXP_GUARD:g}")
    return np.exp(x)


@dataclass(frozen=True)
class SmoothnessHyper:
    sigma_smooth: float = 10.0
    sigma_offset: float = 10.0

    def __post_init__(self):
        if not (self.sigma_smooth > 0 and self.sigma_offset > 0):
            raise DomainError("smoothness hyper-parameters must be positive")


class SpectralGPModel:
    """Data, response, noise and priors of one inference problem.

    Parameters
    ----------
    binning : fieldops.SpectralBinning
    mask : array of distinct pixel indices (row-major) that were measured
    data : values measured at ``mask``
    noise_sigma : standard deviation of the white noise
    hyper : SmoothnessHyper
    """

    def __init__(self, binning, mask, data, noise_sigma, hyper=None):
        self.binning = binning
        self.grid = binning.grid
        self.npix = self.grid.size
        self.mask = fieldops.check_mask(mask, self.npix)
        self.data = np.asarray(data, dtype=float).ravel()
        if self.data.shape != self.mask.shape:
            raise DomainError("data and mask sizes differ")
        if not noise_sigma > 0:
            raise DomainError("noise sigma must be positive")
        self.noise_sigma = float(noise_sigma)
        self.noise_var = self.noise_sigma ** 2
        self.hyper = hyper or SmoothnessHyper()
        self.smooth = fieldops.LogSpectrumSmoothness.for_binning(
            binning, self.hyper.sigma_smooth, self.hyper.sigma_offset
        )
        self.n_bins = binning.n_bins
        self.mult = binning.multiplicities.astype(float)

    # -- basic pieces ------------------------------------------------------

    def H(self, x):
        return fieldops.hartley(x, self.grid)

    def R(self, s):
        return np.asarray(s).ravel()[self.mask]

    def RT(self, y):
        return fieldops.response_adjoint(self.mask, y, self.npix)

    @property
    def j(self):
        """Information source R^T N^{-1} d."""
        return self.RT(self.data) / self.noise_var

    def response_operator(self):
        return fieldops.response_operator(self.mask, self.npix)

    def likelihood_info(self, s):
        r = self.data - self.R(s)
        return 0.5 * float(r @ r) / self.noise_var

    def spread(self, v):
        return fieldops.power_distribute(self.binning, v).ravel()

    def collect(self, w):
        return fieldops.power_collect(self.binning, w)

    def tau_from_zeta(self, zeta):
        return self.smooth.tau_from_zeta(zeta)

    def zeta_from_tau(self, tau, tol=1e-8):
        zeta = self.smooth.zeta_from_tau(tau)
        back = self.smooth.tau_from_zeta(zeta)
        resid = float(np.max(np.abs(back - tau), initial=0.0))
        if resid > tol * max(1.0, float(np.max(np.abs(tau), initial=0.0))):
            raise ConversionError(f"tau -> zeta round trip residual {resid:.3g}")
        return zeta

    def amplitudes(self, tau):
        """Per-pixel harmonic amplitude e^{tau/2}."""
        return guarded_exp(0.5 * self.spread(tau))

    def amplitude_operator(self, tau):
        a = self.amplitudes(tau)
        return LinearOperator(
            (self.npix, self.npix),
            matvec=lambda x: self.H(a * np.ravel(x)),
            rmatvec=lambda y: a * self.H(np.ravel(y)),
            dtype=float,
        )

    def covariance(self, tau):
        return fieldops.harmonic_diagonal_operator(self.grid, guarded_exp(self.spread(tau)))

    def unpack_deep(self, x):
        x = np.asarray(x, dtype=float)
        return x[: self.npix], x[self.npix:]

    unpack_flat = unpack_deep

    @property
    def dim(self):
        return self.npix + self.n_bins

    # -- deep parametrization ---------------------------------------------

    def deep_info(self, s, tau):
        s = np.ravel(s)
        u = self.H(s)
        w = guarded_exp(-self.spread(tau))
        return (
            self.likelihood_info(s)
            + 0.5 * float(np.sum(w * u * u))
            + 0.5 * float(self.mult @ tau)
            + self.smooth.information(tau)
        )

    def deep_grad(self, s, tau):
        s = np.ravel(s)
        u = self.H(s)
        w = guarded_exp(-self.spread(tau))
        g_s = -self.RT(self.data - self.R(s)) / self.noise_var + self.H(w * u)
        g_tau = -0.5 * self.collect(w * u * u) + 0.5 * self.mult + self.smooth.inverse_kernel_apply(tau)
        return g_s, g_tau

    def deep_curvature(self, s, tau):
        """Gauss-Newton curvature on packed ``(s, tau)`` vectors."""
        s = np.ravel(s)
        half = guarded_exp(-0.5 * self.spread(tau))
        g = half * self.H(s)

        def mv(x):
            xs, xt = self.unpack_deep(np.ravel(x))
            jx = half * self.H(xs) - 0.5 * g * self.spread(xt)
            out_s = self.RT(self.R(xs)) / self.noise_var + self.H(half * jx)
            out_t = -0.5 * self.collect(g * jx) + self.smooth.inverse_kernel_apply(xt)
            return np.concatenate([out_s, out_t])

        return LinearOperator((self.dim, self.dim), matvec=mv, rmatvec=mv, dtype=float)

    # -- flat parametrization ---------------------------------------------

    def flat_signal(self, xi, zeta):
        return self.H(self.amplitudes(self.tau_from_zeta(zeta)) * np.ravel(xi))

    def flat_info(self, xi, zeta):
        xi = np.ravel(xi)
        zeta = np.asarray(zeta, dtype=float)
        s = self.flat_signal(xi, zeta)
        return self.likelihood_info(s) + 0.5 * float(xi @ xi) + 0.5 * float(zeta @ zeta)

    def flat_grad(self, xi, zeta):
        xi = np.ravel(xi)
        zeta = np.asarray(zeta, dtype=float)
        a = self.amplitudes(self.tau_from_zeta(zeta))
        s = self.H(a * xi)
        v = self.H(self.RT(self.data - self.R(s))) / self.noise_var
        g_xi = -a * v + xi
        g_zeta = self.smooth.tau_from_zeta_adjoint(-0.5 * self.collect(a * xi * v)) + zeta
        return g_xi, g_zeta

    def flat_jacobian(self, xi, zeta):
        """Jacobian of ``R s(xi, zeta)`` as an operator on packed vectors."""
        xi = np.ravel(xi)
        a = self.amplitudes(self.tau_from_zeta(zeta))
        ax = a * xi
        nd = self.mask.size

        def mv(x):
            xx, xz = self.unpack_flat(np.ravel(x))
            return self.R(self.H(a * xx + 0.5 * ax * self.spread(self.tau_from_zeta(xz))))

        def rmv(y):
            v = self.H(self.RT(np.ravel(y)))
            return np.concatenate([a * v, self.smooth.tau_from_zeta_adjoint(0.5 * self.collect(ax * v))])

        return LinearOperator((nd, self.dim), matvec=mv, rmatvec=rmv, dtype=float)

    def flat_likelihood_curvature(self, xi, zeta):
        J = self.flat_jacobian(xi, zeta)

        def mv(x):
            return J.rmatvec(J.matvec(np.ravel(x))) / self.noise_var

        return LinearOperator((self.dim, self.dim), matvec=mv, rmatvec=mv, dtype=float)

    def flat_curvature(self, xi, zeta):
        L = self.flat_likelihood_curvature(xi, zeta)

        def mv(x):
            x = np.ravel(x)
            return L.matvec(x) + x

        return LinearOperator((self.dim, self.dim), matvec=mv, rmatvec=mv, dtype=float)


@dataclass(frozen=True)
class ConditionReport:
    lambda_max: float
    lambda_min: float
    kappa: float
    converged: bool = True

    @property
    def full_min(self):
        """Smallest eigenvalue of likelihood curvature + identity."""
        return self.lambda_min + 1.0


def condition_report(likelihood_curvature, dim=None, dense_limit=1500, tol=1e-10):
    """Extreme eigenvalues of a likelihood curvature and ``kappa``.

    ``kappa = (lambda_max + 1) / (lambda_min + 1)`` is the condition number of
    the full curvature ``likelihood + identity``.  Operators up to
    ``dense_limit`` columns are materialised and diagonalised exactly;
    larger ones use Lanczos iteration, and a non-converged run is reported
    with ``converged=False`` and the partial estimates.
    """
    op = likelihood_curvature
    dim = op.shape[0] if dim is None else dim
    if dim <= dense_limit:
        mat = fieldops.to_dense(op)
        ev = np.linalg.eigvalsh(0.5 * (mat + mat.T))
        lmax, lmin = max(float(ev[-1]), 0.0), max(float(ev[0]), 0.0)
        return ConditionReport(lmax, lmin, (lmax + 1.0) / (lmin + 1.0))
    converged = True
    try:
        lmax = float(eigsh(op, k=1, which="LA", tol=tol, return_eigenvectors=False)[0])
    except ArpackNoConvergence as exc:
        converged = False
        lmax = float(np.max(exc.eigenvalues)) if len(exc.eigenvalues) else float("nan")
    try:
        lmin = float(eigsh(op, k=1, which="SA", tol=tol, return_eigenvectors=False)[0])
    except ArpackNoConvergence as exc:
        converged = False
        lmin = float(np.min(exc.eigenvalues)) if len(exc.eigenvalues) else float("nan")
    lmax, lmin = max(lmax, 0.0), max(lmin, 0.0)
    return ConditionReport(lmax, lmin, (lmax + 1.0) / (lmin + 1.0), converged)
