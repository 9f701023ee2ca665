"""Fast self-checks behind ``flatprior check``.

Each check compares the implementation with an independent oracle (dense
matrices, finite differences, closed forms) on a small problem and returns
``(name, passed, detail)``.  The full suite lives in the test directory.
"""

import math

import numpy as np

from . import fieldops, hierarchy, stdnormal
from .gpmodel import SmoothnessHyper, SpectralGPModel, condition_report
from .inference import DeepSpectrumKL, draw_kl_samples, hierarchy_map, numerical_gradient, wiener_filter, DEEP


def _small_model(n_side=8, n_points=20, seed=0, noise=0.5):
    rng = np.random.default_rng(seed)
    binning = fieldops.build_k_grid(fieldops.Grid2D(n_side))
    mask = np.sort(rng.choice(n_side * n_side, n_points, replace=False))
    data = rng.standard_normal(n_points)
    model = SpectralGPModel(binning, mask, data, noise, SmoothnessHyper(3.0))
    tau = 0.3 * rng.standard_normal(binning.n_bins)
    return model, tau, rng


def check_round_trip():
    xi = np.linspace(-6, 6, 2001)
    err = float(np.max(np.abs(stdnormal.std_normal_quantile(stdnormal.std_normal_cdf(xi)) - xi)))
    return "cdf/quantile round trip on [-6, 6]", err < 1e-10, f"max error {err:.2e}"


def check_jacobian_cancellation():
    model = hierarchy.exponential_gaussian_model(0.0, 1.0)
    rng = np.random.default_rng(1)
    diffs = []
    for xi in rng.standard_normal((100, 2)):
        theta = hierarchy.forward_transform(model, xi)
        diffs.append(hierarchy.deep_information(model, theta) - hierarchy.flat_information(model, xi)
                     - hierarchy.log_jacobian(model, xi))
    sd = float(np.std(diffs))
    return "jacobian cancellation", sd < 1e-8, f"std {sd:.2e}"


def check_map_median():
    theta, _ = hierarchy_map(hierarchy.exponential_gaussian_model(0.0, 1.0))
    err = abs(theta[0] - math.log(2))
    return "flat MAP is the prior median", err < 1e-6, f"|sigma - ln 2| = {err:.2e}"


def check_wiener_dense():
    model, tau, _ = _small_model()
    S = fieldops.to_dense(model.covariance(tau))
    R = fieldops.to_dense(model.response_operator())
    Dinv = R.T @ R / model.noise_var + np.linalg.inv(S)
    m_dense = np.linalg.solve(Dinv, model.j)
    m = wiener_filter(model, tau, cg_tol=1e-12).m
    err = float(np.linalg.norm(m - m_dense) / np.linalg.norm(m_dense))
    return "wiener filter vs dense solve", err < 1e-6, f"relative error {err:.2e}"


def check_amplitude_covariance():
    model, tau, _ = _small_model()
    A = fieldops.to_dense(model.amplitude_operator(tau))
    S = fieldops.to_dense(model.covariance(tau))
    err = float(np.max(np.abs(A @ A.T - S)))
    return "A A^T equals S", err < 1e-10, f"max deviation {err:.2e}"


def check_gradients():
    model, tau, rng = _small_model()
    s = rng.standard_normal(model.npix)
    x = np.concatenate([s, tau])
    num = numerical_gradient(lambda v: model.deep_info(*model.unpack_deep(v)), x)
    ana = np.concatenate(model.deep_grad(s, tau))
    err_deep = float(np.linalg.norm(num - ana) / np.linalg.norm(ana))
    zeta = model.zeta_from_tau(tau)
    x = np.concatenate([s, zeta])
    num = numerical_gradient(lambda v: model.flat_info(*model.unpack_flat(v)), x)
    ana = np.concatenate(model.flat_grad(s, zeta))
    err_flat = float(np.linalg.norm(num - ana) / np.linalg.norm(ana))
    m = wiener_filter(model, tau).m
    kl = DeepSpectrumKL(model, m, tau, draw_kl_samples(model, tau, DEEP, 2, seed=0))
    num = numerical_gradient(kl, tau)
    ana = kl.value_and_grad(tau)[1]
    err_kl = float(np.linalg.norm(num - ana) / np.linalg.norm(ana))
    worst = max(err_deep, err_flat, err_kl)
    return "information and KL gradients", worst < 1e-4, f"worst relative error {worst:.2e}"


def check_conditioning():
    model, tau, rng = _small_model()
    zeta = model.zeta_from_tau(tau)
    xi = rng.standard_normal(model.npix)
    full = fieldops.to_dense(model.flat_curvature(xi, zeta))
    lam_min = float(np.linalg.eigvalsh(0.5 * (full + full.T))[0])
    return "flat curvature bounded below by 1", lam_min >= 1 - 1e-6, f"lambda_min {lam_min:.6f}"


def check_empty_mask_kappa():
    binning = fieldops.build_k_grid(fieldops.Grid2D(8))
    model = SpectralGPModel(binning, np.array([], dtype=int), np.array([]), 1.0)
    rep = condition_report(model.flat_likelihood_curvature(np.zeros(model.npix), np.zeros(model.n_bins)))
    return "kappa of the empty mask", rep.kappa == 1.0, f"kappa {rep.kappa}"


CHECKS = (
    check_round_trip,
    check_jacobian_cancellation,
    check_map_median,
    check_wiener_dense,
    check_amplitude_covariance,
    check_gradients,
    check_conditioning,
    check_empty_mask_kappa,
)


def run_checks(out=print):
    """Run every check, print one line each, return True if all passed."""
    ok = True
    for check in CHECKS:
        name, passed, detail = check()
        out(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        ok &= bool(passed)
    return ok
