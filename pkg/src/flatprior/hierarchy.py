"""Hierarchical priors as ordered conditionals and their flattening to white
Gaussian coordinates.

A model is a list of :class:`ConditionalLayer` objects.  Layer ``i`` draws
``theta[i]`` conditional on the values of the layers listed in its
``parents`` (all with smaller index).  The standardizing map sends a white
vector ``xi`` to ``theta`` one layer at a time through
``theta_i = quantile_i(Phi(xi_i) | parents)``.

Information functionals keep normalised log densities, so
``deep_information`` includes the usual ``ln(2 pi)/2``-type constants while
``flat_information`` drops the white-prior constant.  Only differences are
meaningful.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import stdnormal
from .errors import DomainError, OverflowGuardError, TransformError


@dataclass(frozen=True)
class ConditionalLayer:
    """One conditional ``P(theta_i | theta_parents)``.

    ``quantile``, ``cdf`` and ``log_density`` take the value (or ``u``) and a
    tuple of parent values.  ``from_standard``/``to_standard`` are optional
    closed forms of ``quantile(Phi(xi))`` and ``Phi^{-1}(cdf(theta))``; when
    present they replace the composition, which loses precision once
    ``Phi(xi)`` rounds towards 1.
    """

    quantile: Callable
    cdf: Callable
    log_density: Callable
    parents: tuple = ()
    name: str = ""
    from_standard: Optional[Callable] = None
    to_standard: Optional[Callable] = None

    def standardize(self, xi, pvals):
        if self.from_standard is not None:
            return self.from_standard(xi, pvals)
        return self.quantile(stdnormal.std_normal_cdf(xi), pvals)

    def unstandardize(self, theta, pvals):
        if self.to_standard is not None:
            return self.to_standard(theta, pvals)
        return stdnormal.std_normal_quantile(self.cdf(theta, pvals))


@dataclass(frozen=True)
class HierarchicalModel:
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for i, layer in enumerate(self.layers):
            for p in layer.parents:
                if not 0 <= p < i:
                    raise DomainError(f"layer {i} has parent {p}; parents must precede the layer")

    @property
    def n(self):
        return len(self.layers)

    def _check(self, v, name):
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape != (self.n,):
            raise DomainError(f"{name} must have length {self.n}")
        return v


def _parent_values(layer, theta):
    return tuple(float(theta[p]) for p in layer.parents)


def forward_transform(model, xi):
    """White coordinates -> model parameters, evaluated in layer order."""
    xi = model._check(xi, "xi")
    if not np.all(np.isfinite(xi)):
        raise DomainError("xi must be finite")
    theta = np.empty(model.n)
    for i, layer in enumerate(model.layers):
        try:
            t = float(layer.standardize(xi[i], _parent_values(layer, theta)))
        except (DomainError, ArithmeticError, OverflowGuardError) as exc:
            raise TransformError(str(exc), layer=i) from exc
        if not np.isfinite(t):
            raise TransformError("non-finite parameter", layer=i)
        theta[i] = t
    return theta


def inverse_transform(model, theta):
    theta = model._check(theta, "theta")
    xi = np.empty(model.n)
    for i, layer in enumerate(model.layers):
        try:
            xi[i] = float(layer.unstandardize(theta[i], _parent_values(layer, theta)))
        except (DomainError, ArithmeticError) as exc:
            raise TransformError(str(exc), layer=i) from exc
    return xi


def prior_information(model, theta):
    """-sum_i ln P(theta_i | parents), with normalisation constants."""
    theta = model._check(theta, "theta")
    total = 0.0
    for i, layer in enumerate(model.layers):
        try:
            lp = float(layer.log_density(theta[i], _parent_values(layer, theta)))
        except DomainError as exc:
            raise TransformError(str(exc), layer=i) from exc
        if not np.isfinite(lp):
            raise TransformError("parameter outside the support", layer=i)
        total -= lp
    return total


def _null_likelihood(theta):
    return 0.0


def deep_information(model, theta, likelihood_info=None):
    likelihood_info = likelihood_info or _null_likelihood
    theta = model._check(theta, "theta")
    return float(likelihood_info(theta)) + prior_information(model, theta)


def flat_information(model, xi, likelihood_info=None):
    likelihood_info = likelihood_info or _null_likelihood
    theta = forward_transform(model, xi)
    xi = np.asarray(xi, dtype=float).reshape(-1)
    return float(likelihood_info(theta)) + 0.5 * float(xi @ xi)


def log_jacobian(model, xi):
    """ln|d theta / d xi|.

    The Jacobian is lower triangular, its diagonal entries are
    ``phi(xi_i) / P(theta_i | parents)``.
    """
    theta = forward_transform(model, xi)
    xi = np.asarray(xi, dtype=float).reshape(-1)
    return float(np.sum(stdnormal.std_normal_logpdf(xi))) + prior_information(model, theta)


def standardize_multivariate_gaussian(eigenbasis, eigenvalues, xi):
    """``s = F sqrt(S~) xi`` for covariance ``S = F diag(S~) F^T``.

    ``eigenbasis`` is a square matrix whose columns are the orthonormal
    eigenvectors, or any object with a ``matvec`` method.  ``xi`` may carry
    a batch of vectors as columns.
    """
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    if np.any(eigenvalues <= 0) or not np.all(np.isfinite(eigenvalues)):
        raise DomainError("eigenvalues must be strictly positive")
    xi = np.asarray(xi, dtype=float)
    scaled = np.sqrt(eigenvalues).reshape((-1,) + (1,) * (xi.ndim - 1)) * xi
    if hasattr(eigenbasis, "matvec"):
        return eigenbasis.matvec(scaled) if xi.ndim == 1 else eigenbasis.matmat(scaled)
    return np.asarray(eigenbasis) @ scaled


# -- layer library ---------------------------------------------------------

def gaussian_layer(mu=0.0, sigma=1.0, name="gaussian"):
    """Fixed location-scale Gaussian N(mu, sigma^2)."""
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    return ConditionalLayer(
        quantile=lambda u, p: stdnormal.gaussian_quantile(u, mu, sigma),
        cdf=lambda x, p: stdnormal.gaussian_cdf(x, mu, sigma),
        log_density=lambda x, p: stdnormal.std_normal_logpdf((x - mu) / sigma) - np.log(sigma),
        name=name,
        from_standard=lambda xi, p: stdnormal.standardize_gaussian(xi, mu, sigma),
        to_standard=lambda x, p: (x - mu) / sigma,
    )


def _scale(p):
    sigma = p[0]
    if not sigma > 0:
        raise DomainError("scale parent must be positive")
    return sigma


def scaled_gaussian_layer(mu, scale_parent, name="gaussian|scale"):
    """N(mu, sigma^2) with sigma taken from an earlier layer."""
    return ConditionalLayer(
        quantile=lambda u, p: stdnormal.gaussian_quantile(u, mu, _scale(p)),
        cdf=lambda x, p: stdnormal.gaussian_cdf(x, mu, _scale(p)),
        log_density=lambda x, p: stdnormal.std_normal_logpdf((x - mu) / _scale(p)) - np.log(_scale(p)),
        parents=(scale_parent,),
        name=name,
        from_standard=lambda xi, p: stdnormal.standardize_gaussian(xi, mu, _scale(p)),
        to_standard=lambda x, p: (x - mu) / _scale(p),
    )


def _exp_logpdf(x, lam):
    if x <= 0:
        raise DomainError("exponential variates must be positive")
    return np.log(lam) - lam * x


def exponential_layer(lam, name="exponential"):
    if lam <= 0:
        raise DomainError("rate must be positive")
    return ConditionalLayer(
        quantile=lambda u, p: stdnormal.exp_quantile(u, lam),
        cdf=lambda x, p: stdnormal.exp_cdf(x, lam),
        log_density=lambda x, p: _exp_logpdf(x, lam),
        name=name,
        from_standard=lambda xi, p: stdnormal.standardize_exponential(xi, lam),
        to_standard=lambda x, p: stdnormal.unstandardize_exponential(x, lam),
    )


def exponential_gaussian_model(mu=0.0, lam=1.0):
    """Two-level model ``sigma ~ Exp(lam)``, ``alpha | sigma ~ N(mu, sigma^2)``.

    Parameter order is ``(sigma, alpha)``.
    """
    return HierarchicalModel((exponential_layer(lam, "sigma"), scaled_gaussian_layer(mu, 0, "alpha")))
