"""Two-dimensional Gaussian mixtures grown greedily and fitted with EM.

The functional layer (``component_density``, ``em_step``, ``greedy_fit`` ...)
works on raw arrays in whatever space it is handed.  ``GreedyGaussianMixture``
wraps it as a scikit-learn style density estimator that z-scores each
feature before training and reports densities back in the original units.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_array, check_is_fitted

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
MIN_WEIGHT = 1e-8
# weight + 2 means + 3 covariance entries
PARAMS_PER_COMPONENT = 6


class GaussianComponent(NamedTuple):
    weight: float
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class EmConfig:
    max_components: int = 8
    max_iterations: int = 200
    rel_tolerance: float = 1e-6
    covariance_floor: float = 1e-6
    seed: int = 0
    # random data points tried as insertion sites besides the worst-explained one
    n_candidates: int = 4
    # "bic": a new component must raise L by more than 3 ln(n) (its parameter
    # count times ln(n) / 2); "likelihood": any increase is accepted.
    stopping: str = "bic"
    # a candidate whose smallest component explains fewer points than this is
    # rejected; such components collapse onto the covariance floor
    min_support: float = 3.0

    def __post_init__(self):
        if self.min_support < 0:
            raise ValueError("min_support must be non-negative")
        if self.n_candidates < 0:
            raise ValueError("n_candidates must be non-negative")
        for name in ("max_components", "max_iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.rel_tolerance <= 0 or self.covariance_floor <= 0:
            raise ValueError("rel_tolerance and covariance_floor must be positive")
        if self.stopping not in ("bic", "likelihood"):
            raise ValueError(f"unknown stopping rule {self.stopping!r}")

    def insertion_penalty(self, n: int) -> float:
        if self.stopping == "likelihood":
            return 0.0
        return 0.5 * PARAMS_PER_COMPONENT * np.log(n)


@dataclass
class MixtureModel:
    """Mixture parameters: weights (M,), means (M, 2), covariances (M, 2, 2)."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: float = float("nan")
    relation_index: int | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.means = np.asarray(self.means, dtype=float).reshape(-1, 2)
        self.covariances = np.asarray(self.covariances, dtype=float).reshape(-1, 2, 2)
        if not (len(self.weights) == len(self.means) == len(self.covariances)):
            raise ValueError("weights, means and covariances disagree on M")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def components(self) -> list[GaussianComponent]:
        return [GaussianComponent(float(w), m, c)
                for w, m, c in zip(self.weights, self.means, self.covariances)]

    def copy(self) -> "MixtureModel":
        return MixtureModel(self.weights.copy(), self.means.copy(),
                            self.covariances.copy(), self.log_likelihood,
                            self.relation_index)


def _as_points(d) -> np.ndarray:
    return np.atleast_2d(np.asarray(d, dtype=float))


def _log_gaussian(X: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """Log pdf of every point under every component, shape (n, M)."""
    a = covs[:, 0, 0]
    b = covs[:, 0, 1]
    c = covs[:, 1, 1]
    det = a * c - b * b
    dx = X[:, None, 0] - means[None, :, 0]
    dy = X[:, None, 1] - means[None, :, 1]
    # closed-form 2x2 quadratic form with the inverse covariance
    maha = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    return -LOG_2PI - 0.5 * np.log(det) - 0.5 * maha


def component_density(d, comp: GaussianComponent) -> float:
    X = _as_points(d)
    logp = _log_gaussian(X, np.asarray(comp.mean, float)[None, :],
                         np.asarray(comp.cov, float)[None, :, :])
    return float(np.exp(logp[0, 0]))


def log_mixture_density(X, model: MixtureModel) -> np.ndarray:
    X = _as_points(X)
    log_w = np.log(model.weights)
    return logsumexp(_log_gaussian(X, model.means, model.covariances) + log_w, axis=1)


def mixture_density(d, model: MixtureModel):
    """p(d | model); a float for a single point, an array for several."""
    dens = np.exp(log_mixture_density(d, model))
    return float(dens[0]) if np.ndim(d) == 1 else dens


def log_likelihood(data, model: MixtureModel) -> float:
    X = _as_points(data)
    if len(X) == 0:
        raise ValueError("log-likelihood of an empty dataset")
    return float(np.sum(log_mixture_density(X, model)))


def responsibilities(data, model: MixtureModel) -> np.ndarray:
    X = _as_points(data)
    log_r = _log_gaussian(X, model.means, model.covariances) + np.log(model.weights)
    return np.exp(log_r - logsumexp(log_r, axis=1, keepdims=True))


def floor_covariance(cov: np.ndarray, floor: float) -> np.ndarray:
    """Symmetrize and clip eigenvalues from below at ``floor``."""
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    vals, vecs = np.linalg.eigh(cov)
    if np.all(vals >= floor):
        return cov
    vals = np.maximum(vals, floor)
    out = (vecs * vals[..., None, :]) @ np.swapaxes(vecs, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def sample_covariance(X: np.ndarray) -> np.ndarray:
    diff = X - X.mean(axis=0)
    return diff.T @ diff / len(X)


def em_step(data, model: MixtureModel, covariance_floor: float = 1e-6) -> MixtureModel:
    """One EM re-estimation of weights, means and covariances.

    Components whose weight drops below 1e-8 are removed and the remaining
    weights renormalized.
    """
    X = _as_points(data)
    n = len(X)
    resp = responsibilities(X, model)
    nk = resp.sum(axis=0)
    keep = nk / n >= MIN_WEIGHT
    if not keep.any():
        keep[np.argmax(nk)] = True
    resp, nk = resp[:, keep], nk[keep]

    weights = nk / n
    means = resp.T @ X / nk[:, None]
    covs = np.empty((len(nk), 2, 2))
    for i in range(len(nk)):
        diff = X - means[i]
        covs[i] = (resp[:, i, None] * diff).T @ diff / nk[i]
    covs = floor_covariance(covs, covariance_floor)
    weights = weights / weights.sum()
    return MixtureModel(weights, means, covs, relation_index=model.relation_index)


def fit_em(data, model: MixtureModel, config: EmConfig | None = None):
    """Iterate ``em_step`` until the relative change of the log-likelihood
    drops below ``config.rel_tolerance``.

    Returns the fitted model and the log-likelihood trace, whose first entry
    belongs to the starting model.
    """
    config = config or EmConfig()
    X = _as_points(data)
    current = model
    trace = [log_likelihood(X, current)]
    for _ in range(config.max_iterations):
        current = em_step(X, current, config.covariance_floor)
        trace.append(log_likelihood(X, current))
        prev = trace[-2]
        if abs(trace[-1] - prev) <= config.rel_tolerance * max(abs(prev), 1e-300):
            break
    current.log_likelihood = trace[-1]
    return current, trace


def _single_component(X: np.ndarray, floor: float) -> MixtureModel:
    return MixtureModel(np.ones(1), X.mean(axis=0)[None, :],
                        floor_covariance(sample_covariance(X), floor)[None, :, :])


def insert_component(X: np.ndarray, model: MixtureModel, floor: float,
                     at: int | None = None) -> MixtureModel:
    """Add a component at data point ``at``.

    By default the point the current mixture explains worst is used.  The new
    component gets weight 1/(M+1) and half the global sample covariance.
    """
    m = model.n_components
    if at is None:
        at = int(np.argmin(log_mixture_density(X, model)))
    cov = floor_covariance(0.5 * sample_covariance(X), floor)
    return MixtureModel(
        np.append(model.weights * m / (m + 1), 1.0 / (m + 1)),
        np.vstack([model.means, X[at]]),
        np.concatenate([model.covariances, cov[None, :, :]]),
        relation_index=model.relation_index,
    )


def _insertion_sites(X: np.ndarray, model: MixtureModel, rng: np.random.Generator,
                     n_random: int) -> list[int]:
    sites = [int(np.argmin(log_mixture_density(X, model)))]
    if n_random and len(X) > 1:
        extra = rng.choice(len(X), size=min(n_random, len(X)), replace=False)
        sites.extend(int(i) for i in extra if int(i) != sites[0])
    return sites


@dataclass
class GreedyResult:
    model: MixtureModel
    accepted_log_likelihoods: list[float] = field(default_factory=list)
    em_traces: list[list[float]] = field(default_factory=list)


def greedy_fit(data, config: EmConfig | None = None, *, return_details: bool = False):
    """Grow a mixture one component at a time.

    Each round tries the worst-explained data point plus
    ``config.n_candidates`` seeded random points as the site of the new
    component and keeps the best EM result whose every component carries
    at least ``config.min_support`` points of responsibility mass.  Stops
    when no such candidate exists, when it fails to raise the log-likelihood by more
    than ``config.insertion_penalty(n)`` or when ``config.max_components``
    is reached.
    """
    config = config or EmConfig()
    X = _as_points(data)
    if len(X) == 0:
        raise ValueError("cannot fit a mixture to an empty dataset")
    floor = config.covariance_floor

    rng = np.random.default_rng(config.seed)

    model, trace = fit_em(X, _single_component(X, floor), config)
    result = GreedyResult(model, [model.log_likelihood], [trace])
    while model.n_components < config.max_components:
        candidate, trace = None, None
        for site in _insertion_sites(X, model, rng, config.n_candidates):
            fitted, fitted_trace = fit_em(X, insert_component(X, model, floor, site), config)
            if len(X) * fitted.weights.min() < config.min_support:
                continue
            if candidate is None or fitted.log_likelihood > candidate.log_likelihood:
                candidate, trace = fitted, fitted_trace
        if candidate is None:
            break
        # gains below rounding noise are not an improvement
        margin = config.insertion_penalty(len(X)) + 1e-9 * max(1.0, abs(model.log_likelihood))
        if not candidate.log_likelihood > model.log_likelihood + margin:
            break
        model = candidate
        result.model = model
        result.accepted_log_likelihoods.append(model.log_likelihood)
        result.em_traces.append(trace)
    logger.debug("greedy fit: M=%d, L=%.6f", model.n_components, model.log_likelihood)
    return result if return_details else model


class GreedyGaussianMixture(DensityMixin, BaseEstimator):
    """Greedy EM mixture as a scikit-learn density estimator.

    Features are z-scored with the training statistics before fitting;
    ``score_samples`` undoes the transform (Jacobian included), so densities
    from models trained on different data are directly comparable.

    Parameters
    ----------
    max_components : int
        Upper bound on the number of components.
    max_iter : int
        EM iterations per fit.
    tol : float
        Relative log-likelihood change that ends an EM run.
    reg_covar : float
        Lower bound on covariance eigenvalues (standardized units).
    n_candidates : int
        Random insertion sites tried per greedy round.
    stopping : {"bic", "likelihood"}
        Acceptance test for a new component.
    min_support : float
        Smallest responsibility mass (in points) a component may carry.
    standardize : bool
        Z-score features before fitting.
    random_state : int
        Seed for the candidate insertion sites.
    """

    def __init__(self, max_components=8, max_iter=200, tol=1e-6, reg_covar=1e-6,
                 n_candidates=4, stopping="bic", min_support=3.0, standardize=True,
                 random_state=0):
        self.max_components = max_components
        self.max_iter = max_iter
        self.tol = tol
        self.reg_covar = reg_covar
        self.n_candidates = n_candidates
        self.stopping = stopping
        self.min_support = min_support
        self.standardize = standardize
        self.random_state = random_state

    @classmethod
    def from_config(cls, config: EmConfig) -> "GreedyGaussianMixture":
        return cls(max_components=config.max_components, max_iter=config.max_iterations,
                   tol=config.rel_tolerance, reg_covar=config.covariance_floor,
                   n_candidates=config.n_candidates, stopping=config.stopping,
                   min_support=config.min_support, random_state=config.seed)

    def _config(self) -> EmConfig:
        return EmConfig(max_components=self.max_components, max_iterations=self.max_iter,
                        rel_tolerance=self.tol, covariance_floor=self.reg_covar,
                        seed=self.random_state, n_candidates=self.n_candidates,
                        stopping=self.stopping, min_support=self.min_support)

    def _validate(self, X, reset):
        X = check_array(X, dtype=np.float64, ensure_min_samples=1)
        if X.shape[1] != 2:
            raise ValueError(f"expected 2 features, got {X.shape[1]}")
        if not reset:
            check_is_fitted(self, "model_")
        return X

    def fit(self, X, y=None):
        X = self._validate(X, reset=True)
        if self.standardize:
            center = X.mean(axis=0)
            scale = X.std(axis=0)
            scale[scale == 0] = 1.0
        else:
            center, scale = np.zeros(2), np.ones(2)
        self.center_, self.scale_ = center, scale
        result = greedy_fit((X - center) / scale, self._config(), return_details=True)
        self._set_model(result.model)
        self.greedy_log_likelihoods_ = result.accepted_log_likelihoods
        self.em_traces_ = result.em_traces
        self.n_samples_ = len(X)
        return self

    def _set_model(self, model: MixtureModel):
        self.model_ = model
        self.n_components_ = model.n_components
        self.weights_ = model.weights
        self.means_ = model.means
        self.covariances_ = model.covariances
        self.log_likelihood_ = model.log_likelihood

    def transform_features(self, X):
        X = self._validate(X, reset=False)
        return (X - self.center_) / self.scale_

    def score_samples(self, X):
        """Log density of each sample in the original feature units."""
        Z = self.transform_features(X)
        return log_mixture_density(Z, self.model_) - np.sum(np.log(self.scale_))

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def predict_proba(self, X):
        return responsibilities(self.transform_features(X), self.model_)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def raw_components(self) -> list[GaussianComponent]:
        """Components mapped back into the original feature units."""
        check_is_fitted(self, "model_")
        S = np.diag(self.scale_)
        return [GaussianComponent(w, self.center_ + self.scale_ * m, S @ c @ S)
                for w, m, c in self.model_.components]

    def to_dict(self, relation: str | None = None) -> dict:
        check_is_fitted(self, "model_")
        m = self.model_
        return {
            "relation": relation,
            "relation_index": m.relation_index,
            "standardization": {"means": self.center_.tolist(), "scales": self.scale_.tolist()},
            "components": [{"weight": float(w), "mean": mu.tolist(), "cov": c.tolist()}
                           for w, mu, c in zip(m.weights, m.means, m.covariances)],
            "log_likelihood": m.log_likelihood,
            "n_samples": getattr(self, "n_samples_", None),
            "params": self.get_params(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GreedyGaussianMixture":
        est = cls(**data.get("params", {}))
        comps = data["components"]
        model = MixtureModel([c["weight"] for c in comps], [c["mean"] for c in comps],
                             [c["cov"] for c in comps], data["log_likelihood"],
                             data.get("relation_index"))
        est.center_ = np.asarray(data["standardization"]["means"], dtype=float)
        est.scale_ = np.asarray(data["standardization"]["scales"], dtype=float)
        est._set_model(model)
        if data.get("n_samples") is not None:
            est.n_samples_ = data["n_samples"]
        return est

    def save(self, path, relation: str | None = None):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(relation), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GreedyGaussianMixture":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
