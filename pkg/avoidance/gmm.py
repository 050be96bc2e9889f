"""
Gaussian mixture models over (phase, position): expectation-maximisation,
Gaussian mixture regression on phase, and rasterisation onto policy grids.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .demonstrations import DemoSet
from .exceptions import AllMassNegative, InvalidConfig, InvalidDemonstration, SpecMismatch
from .grid import GridDistribution, GridSpec

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 300
COVARIANCE_FLOOR = 1e-6
# Responsibility mass below which a negatively weighted component is dropped.
COLLAPSE_MASS = 1e-8
LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    converged: bool = True
    degenerate: bool = False
    n_iter: int = 0
    log_likelihood_trace: Tuple[float, ...] = ()

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        means = np.atleast_2d(np.array(self.means, dtype=float))
        covariances = np.array(self.covariances, dtype=float).reshape(means.shape[0], means.shape[1], means.shape[1])
        if weights.shape != (means.shape[0],):
            raise InvalidConfig(f"{weights.shape[0]} weights for {means.shape[0]} components")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise InvalidConfig("Mixture weights must be positive and sum to 1")
        for array in (weights, means, covariances):
            array.setflags(write=False)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'means', means)
        object.__setattr__(self, 'covariances', covariances)
        object.__setattr__(self, 'log_likelihood_trace', tuple(self.log_likelihood_trace))

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_density(self, points: np.ndarray) -> np.ndarray:
        """log(weight_k) + log N(x | mean_k, cov_k), shape (n, k)"""
        points = np.atleast_2d(points)
        return _component_log_density(points, self.weights, self.means, self.covariances)

    def log_density(self, points: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_log_density(points), axis=1)


def _component_log_density(points, weights, means, covariances) -> np.ndarray:
    n, d = points.shape
    logprobs = np.empty((n, len(weights)))
    for i, (mean, cov) in enumerate(zip(means, covariances)):
        L = scipy.linalg.cholesky(cov, lower=True)
        soln = scipy.linalg.solve_triangular(L, (points - mean).T, lower=True)
        logprobs[:, i] = (np.log(weights[i]) - np.sum(np.log(np.diag(L)))
                          - 0.5 * d * LOG_2PI - 0.5 * np.sum(soln ** 2, axis=0))
    return logprobs


def _mahalanobis_sq(points, means, covariances) -> np.ndarray:
    """Squared Mahalanobis distance of every point to every component, shape (n, k)"""
    out = np.empty((points.shape[0], len(means)))
    for i, (mean, cov) in enumerate(zip(means, covariances)):
        L = scipy.linalg.cholesky(cov, lower=True)
        soln = scipy.linalg.solve_triangular(L, (points - mean).T, lower=True)
        out[:, i] = np.sum(soln ** 2, axis=0)
    return out


def _prior_penalty(covariances: np.ndarray, psi: float) -> float:
    """0.5 * psi * sum_k tr(cov_k^-1), the covariance floor's log-prior term"""
    total = 0.0
    for cov in covariances:
        L = scipy.linalg.cholesky(cov, lower=True)
        L_inv = scipy.linalg.solve_triangular(L, np.eye(cov.shape[0]), lower=True)
        total += np.sum(L_inv ** 2)
    return 0.5 * psi * total


def _kmeans_pp_centers(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [points[rng.integers(points.shape[0])]]
    closest = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            index = rng.choice(points.shape[0], p=closest / total)
        else:
            index = rng.integers(points.shape[0])
        centers.append(points[index])
        closest = np.minimum(closest, np.sum((points - points[index]) ** 2, axis=1))
    return np.array(centers)


def _m_step(points, weights, resp, psi, min_var, clamp_psd, floor):
    """Weighted MAP M-step; returns (mix weights, means, covariances, kept component mask)"""
    mass = resp.T @ weights
    keep = mass > COLLAPSE_MASS
    if not np.any(keep):
        # Failures outweigh every component: keep the best supported one, failure weights clamped to 0.
        positive = weights > 0
        support = resp[positive].T @ weights[positive]
        best = int(np.argmax(support))
        if support[best] <= COLLAPSE_MASS:
            raise AllMassNegative("Negative weighting removed every mixture component")
        logger.warning(f"Negative mass exceeded all {len(mass)} component(s); "
                       f"keeping component {best} fitted to the positive samples")
        weights = np.where(positive, weights, 0.0)
        keep = np.arange(len(mass)) == best
        mass = resp.T @ weights
    elif not np.all(keep):
        logger.warning(f"Dropping {int(np.sum(~keep))} mixture component(s) whose weighted mass collapsed")
    resp, mass = resp[:, keep], mass[keep]

    weighted = resp * weights[:, None]
    means = (weighted.T @ points) / mass[:, None]
    d = points.shape[1]
    covariances = np.empty((len(mass), d, d))
    for i in range(len(mass)):
        diff = points - means[i]
        scatter = (weighted[:, i, None] * diff).T @ diff
        cov = (scatter + psi * np.eye(d)) / mass[i]
        cov = 0.5 * (cov + cov.T)
        if clamp_psd:
            eigvals, eigvecs = scipy.linalg.eigh(cov)
            cov = (eigvecs * np.maximum(eigvals, floor)) @ eigvecs.T
            cov = 0.5 * (cov + cov.T)
        if min_var is not None:
            cov = cov + np.diag(np.maximum(min_var - np.diag(cov), 0.0))
        covariances[i] = cov
    return mass / mass.sum(), means, covariances, keep


def _single_component(points, weights, psi, min_var, floor, degenerate):
    total = weights.sum()
    resp = np.ones((points.shape[0], 1))
    mix, means, covariances, _ = _m_step(points, weights, resp, psi, min_var, True, floor)
    comp = _component_log_density(points, mix, means, covariances)
    ll = float(weights @ logsumexp(comp, axis=1) - _prior_penalty(covariances, psi))
    logger.debug(f"Single-component fit over total weight {total:.3f}")
    return GaussianMixture(mix, means, covariances, converged=True, degenerate=degenerate,
                           n_iter=1, log_likelihood_trace=(ll,))


def fit_weighted(samples: np.ndarray, weights: np.ndarray, k: int, seed: int,
                 tol: Optional[float] = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                 min_std: Optional[Sequence[float]] = None,
                 allow_negative: bool = False) -> GaussianMixture:
    """
    Weighted EM over raw (n, d) samples.

    Zero-weight samples are dropped before anything else, and seeding only
    looks at positively weighted samples. With tol=None the iteration cap is
    always run and the fit counts as converged.

    log_likelihood_trace holds the penalized objective that EM climbs: the
    weighted log-likelihood minus the covariance prior term
    0.5 * psi * sum_k tr(cov_k^-1). The plain likelihood is
    mixture.log_density(samples) @ weights.

    When failure samples outweigh every component the M-step keeps the
    best supported component, refitted on the positive samples alone, so a
    refit over many accumulated failures still returns a mixture.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    weights = np.asarray(weights, dtype=float)
    if k < 1:
        raise InvalidConfig(f"Component count must be at least 1, got {k}")
    if np.any(weights < 0) and not allow_negative:
        raise InvalidDemonstration("Negative sample weights are only accepted by the negative weighting refit")

    active = weights != 0
    points, weights = samples[active], weights[active]
    positive = weights > 0
    if not np.any(positive):
        raise InvalidDemonstration("Fitting needs at least one positively weighted sample")
    if points.shape[0] < k:
        raise InvalidConfig(f"Cannot fit {k} components to {points.shape[0]} samples")

    pos_points, pos_weights = points[positive], weights[positive]
    total = pos_weights.sum()
    mean = pos_weights @ pos_points / total
    data_cov = ((pos_weights[:, None] * (pos_points - mean)).T @ (pos_points - mean)) / total
    d = points.shape[1]
    floor = max(COVARIANCE_FLOOR * np.trace(data_cov) / d, 1e-12)
    # Prior strength chosen so every covariance eigenvalue stays >= floor.
    psi = floor * total
    min_var = None if min_std is None else np.asarray(min_std, dtype=float) ** 2
    negative = bool(np.any(weights < 0))

    if np.any(np.ptp(pos_points, axis=0) == 0):
        logger.warning("Degenerate demonstration data (samples coincide in a dimension); "
                       "returning a regularised single-component fit")
        return _single_component(pos_points, pos_weights, psi, min_var, floor, degenerate=True)
    if k == 1 and not negative:
        return _single_component(pos_points, pos_weights, psi, min_var, floor, degenerate=False)

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_centers(pos_points, k, rng)
    nearest = np.argmin(((pos_points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2), axis=1)
    resp = np.full((pos_points.shape[0], k), 1e-6)
    resp[np.arange(pos_points.shape[0]), nearest] = 1.0
    resp /= resp.sum(axis=1, keepdims=True)
    mix, means, covs, _ = _m_step(pos_points, pos_weights, resp, psi, min_var, negative, floor)

    def objective(mix, means, covs):
        comp = _component_log_density(points, mix, means, covs)
        norm = logsumexp(comp, axis=1)
        return float(weights @ norm - _prior_penalty(covs, psi)), comp, norm

    ll, comp, norm = objective(mix, means, covs)
    trace = [ll]
    best = (ll, mix, means, covs)
    converged = tol is None
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        resp = np.exp(comp - norm[:, None])
        if negative:
            # A failure sample only pulls on components that actually cover it.
            resp[weights < 0] *= np.exp(-0.5 * _mahalanobis_sq(points[weights < 0], means, covs))
        mix, means, covs, _ = _m_step(points, weights, resp, psi, min_var, negative, floor)
        new_ll, comp, norm = objective(mix, means, covs)
        trace.append(new_ll)
        improvement = new_ll - ll
        ll = new_ll
        if negative or ll >= best[0]:
            best = (ll, mix, means, covs)
        if tol is not None and abs(improvement) < tol:
            converged = True
            break

    if not converged:
        logger.warning(f"EM hit the {max_iter}-iteration cap without converging; returning best-so-far fit")
    _, mix, means, covs = best
    return GaussianMixture(mix, means, covs, converged=converged, degenerate=False,
                           n_iter=n_iter, log_likelihood_trace=tuple(trace))


def fit_em(demos: DemoSet, k: int, seed: int, tol: Optional[float] = DEFAULT_TOL,
           max_iter: int = DEFAULT_MAX_ITER, min_std: Optional[Sequence[float]] = None) -> GaussianMixture:
    """Fit a k-component mixture to every (phase, position) sample of the demos"""
    if len(demos) == 0:
        raise InvalidDemonstration("Cannot fit a mixture to an empty demonstration set")
    samples, weights = demos.stack()
    mixture = fit_weighted(samples, weights, k, seed, tol=tol, max_iter=max_iter, min_std=min_std)
    logger.info(f"Fitted {mixture.k}-component mixture to {samples.shape[0]} samples "
                f"in {mixture.n_iter} iterations (converged={mixture.converged})")
    return mixture


@dataclass(frozen=True, eq=False)
class ConditionalMixture:
    """Position distribution of a (phase, position) mixture at one phase"""
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def mean(self) -> np.ndarray:
        return self.weights @ self.means


def gmr_condition(gmm: GaussianMixture, phase: float) -> ConditionalMixture:
    if not 0.0 <= phase <= 1.0:
        raise InvalidConfig(f"Phase must lie in [0, 1], got {phase}")
    mu_p = gmm.means[:, 0]
    var_p = gmm.covariances[:, 0, 0]
    cross = gmm.covariances[:, 1:, 0]
    log_resp = np.log(gmm.weights) - 0.5 * (LOG_2PI + np.log(var_p) + (phase - mu_p) ** 2 / var_p)
    resp = np.exp(log_resp - logsumexp(log_resp))
    means = gmm.means[:, 1:] + cross * ((phase - mu_p) / var_p)[:, None]
    covariances = gmm.covariances[:, 1:, 1:] - np.einsum('ki,kj->kij', cross, cross) / var_p[:, None, None]
    return ConditionalMixture(weights=resp, means=means, covariances=covariances)


def rasterize(gmm: GaussianMixture, spec: GridSpec) -> GridDistribution:
    """Mixture density at each cell center times cell volume, normalized"""
    if gmm.dim != spec.ndim:
        raise SpecMismatch(f"Mixture has {gmm.dim} dimensions but the grid has {spec.ndim}")
    centers = spec.cell_centers().reshape(-1, spec.ndim)
    log_mass = gmm.log_density(centers) + np.log(spec.cell_volume)
    values = np.exp(log_mass - log_mass.max())
    return GridDistribution.from_values(spec, values.reshape(spec.shape))
