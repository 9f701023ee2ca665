"""Variational inference for the spectral GP model.

The approximation is a Gaussian for the signal times a point estimate for
the spectrum.  Given the spectrum the Gaussian is the exact Wiener-filter
posterior; the spectrum is updated by minimising a sampled estimate of the
KL divergence with the Gaussian samples frozen.  The same loop runs in deep
coordinates ``(s, tau)``, flat coordinates ``(xi, zeta)``, or alternates
between them; the two are related by linear maps, so switching loses
nothing.

The entropy of the Gaussian is left out of every reported objective: it
depends on the spectrum only through ``D``, which is held fixed while the
spectrum moves and refreshed afterwards.
"""

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .errors import DomainError, StaleSamplesError
from .gpmodel import guarded_exp
from .solvers import conjugate_gradient, lbfgs

DEEP, FLAT, ALTERNATING = "deep", "flat", "alternating"


@dataclass(frozen=True)
class InferenceConfig:
    outer_iterations: int = 20
    n_sample_pairs: int = 4
    inner_iterations: int = 20
    cg_tol: float = 1e-7
    cg_maxiter: int = 2000
    seed: int = 0
    schedule: tuple = (1, 3)
    fix_spectrum: bool = False
    record_wall_time: bool = False

    def __post_init__(self):
        if self.outer_iterations < 0 or self.n_sample_pairs < 1 or self.inner_iterations < 0:
            raise DomainError("iteration counts must be non-negative and at least one sample pair is needed")
        if len(self.schedule) != 2 or min(self.schedule) < 0 or sum(self.schedule) == 0:
            raise DomainError("schedule must be (deep_steps, flat_steps) with a positive total")


@dataclass
class ConvergenceRecord:
    iteration: int
    eps: float
    wall_ms: float
    mode: str
    spectrum: np.ndarray


@dataclass
class VariationalState:
    """Current approximation.

    ``m`` is the signal-space mean, ``tau_star`` the log spectrum the Gaussian
    was computed for, ``coordinate_mode`` the coordinates of the last update.
    ``m_xi`` holds the excitation mean when the state came from flat
    coordinates.
    """

    m: np.ndarray
    tau_star: np.ndarray
    coordinate_mode: str
    m_xi: Optional[np.ndarray] = None
    model: object = None
    cg_tol: float = 1e-7

    @property
    def D(self):
        return posterior_covariance(self.model, self.tau_star, self.cg_tol)


# -- Gaussian posteriors -----------------------------------------------------

class _DeepGaussian:
    """Posterior of s for fixed tau: D^{-1} = R^T N^{-1} R + S^{-1}."""

    coords = DEEP

    def __init__(self, model, tau):
        self.model = model
        self.tau = np.array(tau, dtype=float)
        self.inv_power = guarded_exp(-model.spread(tau))
        self.power = 1.0 / self.inv_power
        self.inv_amp = np.sqrt(self.inv_power)

    def precision(self, x):
        m = self.model
        return m.RT(m.R(x)) / m.noise_var + m.H(self.inv_power * m.H(x))

    def precond(self, r):
        return self.model.H(self.power * self.model.H(r))

    def source(self):
        return self.model.j

    def precision_sample(self, rng):
        m = self.model
        eta1 = rng.standard_normal(m.npix)
        eta2 = rng.standard_normal(m.mask.size)
        return m.H(self.inv_amp * eta1) + m.RT(eta2) / m.noise_sigma

    def to_signal(self, x):
        return x


class _FlatGaussian:
    """Posterior of xi for fixed zeta: D^{-1} = A^T R^T N^{-1} R A + 1."""

    coords = FLAT

    def __init__(self, model, zeta):
        self.model = model
        self.zeta = np.array(zeta, dtype=float)
        self.tau = model.tau_from_zeta(self.zeta)
        self.amp = model.amplitudes(self.tau)
        self.precond = None

    def A(self, x):
        return self.model.H(self.amp * x)

    def AT(self, y):
        return self.amp * self.model.H(y)

    def precision(self, x):
        m = self.model
        return self.AT(m.RT(m.R(self.A(x)))) / m.noise_var + x

    def source(self):
        return self.AT(self.model.j)

    def precision_sample(self, rng):
        m = self.model
        eta1 = rng.standard_normal(m.npix)
        eta2 = rng.standard_normal(m.mask.size)
        return eta1 + self.AT(m.RT(eta2)) / m.noise_sigma

    def to_signal(self, x):
        return self.A(x)


def _solve(post, b, cg_tol, cg_maxiter, x0=None):
    return conjugate_gradient(post.precision, b, x0=x0, precond=post.precond, tol=cg_tol, maxiter=cg_maxiter)


@dataclass
class WienerResult:
    m: np.ndarray
    residual: float
    iterations: int


def wiener_filter(model, tau, cg_tol=1e-7, cg_maxiter=2000, x0=None):
    """Posterior mean ``m = D j`` for the log spectrum ``tau`` (deep coordinates).

    CG on ``D^{-1}`` is preconditioned with the prior covariance ``S``.
    """
    post = _DeepGaussian(model, tau)
    res = _solve(post, post.source(), cg_tol, cg_maxiter, x0)
    return WienerResult(res.x, res.residual, res.iterations)


def wiener_filter_flat(model, zeta, cg_tol=1e-7, cg_maxiter=2000, x0=None):
    """Excitation mean ``m_xi = D_xi A^T R^T N^{-1} d``; unpreconditioned CG."""
    post = _FlatGaussian(model, zeta)
    res = _solve(post, post.source(), cg_tol, cg_maxiter, x0)
    return WienerResult(res.x, res.residual, res.iterations)


def posterior_covariance(model, tau, cg_tol=1e-7, cg_maxiter=2000):
    """Implicit ``D``; every application runs one CG solve."""
    post = _DeepGaussian(model, tau)

    def mv(x):
        return _solve(post, np.ravel(x), cg_tol, cg_maxiter).x

    return LinearOperator((model.npix, model.npix), matvec=mv, rmatvec=mv, dtype=float)


def sample_rng(seed, iteration, index):
    """Counter-based generator for sample ``index`` of outer iteration ``iteration``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 1, int(iteration), int(index)])))


def _draw(post, rng, cg_tol, cg_maxiter):
    # Cov(w) = D^{-1}, so Cov(D w) = D
    return _solve(post, post.precision_sample(rng), cg_tol, cg_maxiter).x


def sample_posterior(model, tau, seed, cg_tol=1e-7, cg_maxiter=2000, iteration=0, index=0):
    """One zero-mean sample with covariance ``D(tau)`` in signal space."""
    return _draw(_DeepGaussian(model, tau), sample_rng(seed, iteration, index), cg_tol, cg_maxiter)


def sample_posterior_flat(model, zeta, seed, cg_tol=1e-7, cg_maxiter=2000, iteration=0, index=0):
    """One zero-mean excitation sample with covariance ``D_xi(zeta)``."""
    return _draw(_FlatGaussian(model, zeta), sample_rng(seed, iteration, index), cg_tol, cg_maxiter)


@dataclass
class KLSampleSet:
    """Antithetic residual samples; ``residuals[i]`` is used as ``+r`` and ``-r``."""

    residuals: np.ndarray
    tau_ref: np.ndarray
    coords: str
    seed: int
    iteration: int

    @property
    def n_pairs(self):
        return self.residuals.shape[0]


def draw_kl_samples(model, params, coords, n_pairs, seed, iteration=0, cg_tol=1e-7, cg_maxiter=2000):
    """Draw ``n_pairs`` residuals from the Gaussian at ``params``.

    ``params`` is ``tau`` for deep and ``zeta`` for flat coordinates.
    """
    post = _DeepGaussian(model, params) if coords == DEEP else _FlatGaussian(model, params)
    res = np.stack([_draw(post, sample_rng(seed, iteration, k), cg_tol, cg_maxiter) for k in range(n_pairs)])
    return KLSampleSet(res, post.tau.copy(), coords, seed, iteration)


def _check_fresh(samples, coords, tau_ref):
    if samples.coords != coords:
        raise StaleSamplesError(f"samples were drawn in {samples.coords} coordinates, objective is {coords}")
    if not np.array_equal(samples.tau_ref, tau_ref):
        raise StaleSamplesError("samples were drawn for a different spectrum than the current mean")


class DeepSpectrumKL:
    """Sampled KL as a function of ``tau``, samples ``s = m +- r`` frozen.

    Value: ``<1/2 |d-Rs|^2/sn^2 + 1/2 s^T S(tau)^{-1} s> + 1/2 sum n_b tau_b
    + 1/2 tau^T T^{-1} tau``.
    """

    coords = DEEP

    def __init__(self, model, m, tau_ref, samples):
        _check_fresh(samples, DEEP, np.asarray(tau_ref, dtype=float))
        self.model = model
        lik = 0.0
        power = np.zeros(model.n_bins)
        n = 0
        for r in samples.residuals:
            for sign in (1.0, -1.0):
                s = m + sign * r
                lik += model.likelihood_info(s)
                u = model.H(s)
                power += model.collect(u * u)
                n += 1
        self.likelihood_term = lik / n
        self.bin_power = power / n

    def value_and_grad(self, tau):
        m = self.model
        tau = np.asarray(tau, dtype=float)
        w = guarded_exp(-tau)
        val = (self.likelihood_term + 0.5 * float(w @ self.bin_power) + 0.5 * float(m.mult @ tau)
               + m.smooth.information(tau))
        grad = -0.5 * w * self.bin_power + 0.5 * m.mult + m.smooth.inverse_kernel_apply(tau)
        return val, grad

    def __call__(self, tau):
        return self.value_and_grad(tau)[0]


class FlatSpectrumKL:
    """Sampled KL as a function of ``zeta``, excitation samples ``m_xi +- r`` frozen."""

    coords = FLAT

    def __init__(self, model, m_xi, zeta_ref, samples):
        model_tau = model.tau_from_zeta(np.asarray(zeta_ref, dtype=float))
        _check_fresh(samples, FLAT, model_tau)
        self.model = model
        self.xis = [m_xi + sign * r for r in samples.residuals for sign in (1.0, -1.0)]
        self.prior_xi = float(np.mean([0.5 * x @ x for x in self.xis]))

    def value_and_grad(self, zeta):
        m = self.model
        zeta = np.asarray(zeta, dtype=float)
        a = m.amplitudes(m.tau_from_zeta(zeta))
        lik = 0.0
        g_tau = np.zeros(m.n_bins)
        for xi in self.xis:
            ax = a * xi
            r = m.data - m.R(m.H(ax))
            lik += 0.5 * float(r @ r) / m.noise_var
            v = m.H(m.RT(r)) / m.noise_var
            g_tau -= 0.5 * m.collect(ax * v)
        n = len(self.xis)
        val = lik / n + self.prior_xi + 0.5 * float(zeta @ zeta)
        grad = m.smooth.tau_from_zeta_adjoint(g_tau / n) + zeta
        return val, grad

    def __call__(self, zeta):
        return self.value_and_grad(zeta)[0]


def minimize_spectrum(kl, x_init, inner_iterations=20, gtol=1e-8):
    """L-BFGS on a frozen-sample KL; returns the optimizer result."""
    return lbfgs(kl.value_and_grad, x_init, maxiter=inner_iterations, gtol=gtol)


def rms_error(m, m_ref):
    """sqrt((m - m_ref)^T (m - m_ref))."""
    m = np.asarray(m, dtype=float)
    m_ref = np.asarray(m_ref, dtype=float)
    if m.shape != m_ref.shape:
        raise DomainError("fields live on different grids")
    diff = (m - m_ref).ravel()
    return float(np.sqrt(diff @ diff))


def initial_tau(model):
    """Constant log spectrum at the log of the data variance."""
    if model.data.size < 2:
        return np.zeros(model.n_bins)
    var = float(np.var(model.data))
    return np.full(model.n_bins, np.log(var) if var > 0 else 0.0)


# -- outer loops ---------------------------------------------------------------

def _mode_sequence(mode, n, schedule):
    if mode == DEEP:
        return [DEEP] * n
    if mode == FLAT:
        return [FLAT] * n
    if mode != ALTERNATING:
        raise DomainError(f"unknown mode {mode!r}")
    nd, nf = schedule
    cycle = [DEEP] * nd + [FLAT] * nf
    return [cycle[i % len(cycle)] for i in range(n)]


class _Tracker:
    """Current spectrum parameters and Gaussian mean in one coordinate system."""

    def __init__(self, model, config, tau):
        self.model = model
        self.cfg = config
        self.coords = DEEP
        self.params = np.array(tau, dtype=float)
        self.mean = None

    @property
    def tau(self):
        return self.params if self.coords == DEEP else self.model.tau_from_zeta(self.params)

    def signal_mean(self):
        if self.coords == DEEP:
            return self.mean
        return self.model.H(self.model.amplitudes(self.tau) * self.mean)

    def switch(self, coords):
        if coords == self.coords:
            return
        m = self.model
        if coords == FLAT:
            amp = m.amplitudes(self.params)
            guess = None if self.mean is None else m.H(self.mean) / amp
            self.params = m.zeta_from_tau(self.params)
        else:
            guess = None if self.mean is None else self.signal_mean()
            self.params = m.tau_from_zeta(self.params)
        self.coords = coords
        self.mean = guess
        self.refresh_mean()

    def refresh_mean(self):
        cfg = self.cfg
        solve = wiener_filter if self.coords == DEEP else wiener_filter_flat
        self.mean = solve(self.model, self.params, cfg.cg_tol, cfg.cg_maxiter, x0=self.mean).m

    def step(self, iteration):
        cfg = self.cfg
        samples = draw_kl_samples(self.model, self.params, self.coords, cfg.n_sample_pairs, cfg.seed,
                                  iteration, cfg.cg_tol, cfg.cg_maxiter)
        if self.coords == DEEP:
            kl = DeepSpectrumKL(self.model, self.mean, self.params, samples)
        else:
            kl = FlatSpectrumKL(self.model, self.mean, self.params, samples)
        if not cfg.fix_spectrum:
            self.params = minimize_spectrum(kl, self.params, cfg.inner_iterations).x
        self.refresh_mean()


def run_inference(model, config, mode, m_ref=None, tau_init=None, on_record=None):
    """Run the outer loop; returns ``(VariationalState, [ConvergenceRecord])``.

    Each outer iteration draws antithetic samples from the current Gaussian,
    updates the spectrum on the frozen-sample KL and recomputes the Wiener
    mean; ``eps`` is measured after that.  In alternating mode the schedule
    ``(deep_steps, flat_steps)`` repeats.
    """
    tau0 = initial_tau(model) if tau_init is None else np.asarray(tau_init, dtype=float)
    modes = _mode_sequence(mode, config.outer_iterations, config.schedule)
    tr = _Tracker(model, config, tau0)
    first = modes[0] if modes else DEEP
    if first == FLAT:
        tr.coords = FLAT
        tr.params = model.zeta_from_tau(tau0)
    tr.refresh_mean()
    records = []
    t0 = time.perf_counter()
    for it, coords in enumerate(modes, start=1):
        tr.switch(coords)
        tr.step(it)
        m_sig = tr.signal_mean()
        eps = rms_error(m_sig, np.ravel(m_ref)) if m_ref is not None else float("nan")
        wall = (time.perf_counter() - t0) * 1e3
        rec = ConvergenceRecord(it, eps, wall, coords, np.exp(tr.tau))
        records.append(rec)
        if on_record is not None:
            on_record(rec)
    state = VariationalState(
        m=tr.signal_mean().reshape(model.grid.shape).copy(),
        tau_star=tr.tau.copy(),
        coordinate_mode=tr.coords,
        m_xi=tr.mean.copy() if tr.coords == FLAT else None,
        model=model,
        cg_tol=config.cg_tol,
    )
    return state, records


def run_deep(model, config, m_ref=None, tau_init=None, on_record=None):
    return run_inference(model, config, DEEP, m_ref, tau_init, on_record)


def run_flat(model, config, m_ref=None, tau_init=None, on_record=None):
    return run_inference(model, config, FLAT, m_ref, tau_init, on_record)


def run_alternating(model, config, m_ref=None, tau_init=None, on_record=None):
    return run_inference(model, config, ALTERNATING, m_ref, tau_init, on_record)


# -- point estimates -------------------------------------------------------------

def numerical_gradient(f, x, step=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def map_estimate(info, x0, grad=None, gtol=1e-9, maxiter=500):
    """Minimise an information functional; central differences if ``grad`` is None.

    Returns the optimizer result; ``success`` is False with a message when
    the gradient tolerance was not reached.
    """
    if grad is None:
        def fg(x):
            return info(x), numerical_gradient(info, x)
    else:
        def fg(x):
            return info(x), grad(x)
    return lbfgs(fg, x0, maxiter=maxiter, gtol=gtol)


def hierarchy_map(model, likelihood_info=None, coordinates="flat", x0=None, gtol=1e-9, maxiter=500):
    """MAP of a :class:`~flatprior.hierarchy.HierarchicalModel`.

    In flat coordinates the minimiser is found in ``xi`` and mapped forward;
    in deep coordinates ``theta`` is optimised directly (points outside the
    support count as infinite information).  Returns ``(theta, result)``.
    """
    from . import hierarchy

    if coordinates == "flat":
        start = np.zeros(model.n) if x0 is None else np.asarray(x0, dtype=float)
        res = map_estimate(lambda xi: hierarchy.flat_information(model, xi, likelihood_info), start,
                           gtol=gtol, maxiter=maxiter)
        return hierarchy.forward_transform(model, res.x), res
    if coordinates == "deep":
        start = hierarchy.forward_transform(model, np.zeros(model.n)) if x0 is None else np.asarray(x0, dtype=float)

        def info(theta):
            try:
                return hierarchy.deep_information(model, theta, likelihood_info)
            except DomainError:
                return np.inf

        def fg(theta):
            f = info(theta)
            if not np.isfinite(f):
                return np.inf, np.zeros_like(theta)
            step = 1e-7 * np.maximum(1.0, np.abs(theta))
            g = np.empty_like(theta)
            for i in range(theta.size):
                e = np.zeros_like(theta)
                e[i] = step[i]
                fp, fm = info(theta + e), info(theta - e)
                if np.isfinite(fp) and np.isfinite(fm):
                    g[i] = (fp - fm) / (2 * step[i])
                elif np.isfinite(fp):
                    g[i] = (fp - f) / step[i]
                else:
                    g[i] = (f - fm) / step[i]
            return f, g

        res = lbfgs(fg, start, maxiter=maxiter, gtol=gtol)
        return res.x, res
    raise DomainError("coordinates must be 'flat' or 'deep'")


def gp_flat_map(model, xi0=None, zeta0=None, gtol=1e-6, maxiter=200):
    """Joint MAP of ``(xi, zeta)`` for the spectral GP in flat coordinates."""
    x0 = np.concatenate([
        np.zeros(model.npix) if xi0 is None else np.ravel(xi0),
        np.zeros(model.n_bins) if zeta0 is None else np.asarray(zeta0, dtype=float),
    ])

    def fg(x):
        xi, zeta = model.unpack_flat(x)
        return model.flat_info(xi, zeta), np.concatenate(model.flat_grad(xi, zeta))

    res = lbfgs(fg, x0, maxiter=maxiter, gtol=gtol)
    return model.unpack_flat(res.x), res
