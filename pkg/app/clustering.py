"""
Clustering
Gaussian mixture models fitted by EM, BIC model selection with a discrete elbow,
and per-cell labels.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.special import logsumexp

from .errors import DataError, NumericalError
from .models import BicPoint, SelectionResult
from .parallel import parallel_map

logger = logging.getLogger(__name__)

MIN_WEIGHT = 1e-8


# ============== FEATURE PREPARATION ==============

@dataclass
class StandardizationParams:
    columns: List[str]
    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray  # bool per column

    @property
    def constant_columns(self) -> List[str]:
        return [c for c, flag in zip(self.columns, self.constant) if flag]

    def to_dict(self) -> Dict:
        return {
            "columns": self.columns,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "constant": [bool(c) for c in self.constant],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "StandardizationParams":
        return cls(
            columns=list(data["columns"]),
            mean=np.asarray(data["mean"], dtype=float),
            scale=np.asarray(data["scale"], dtype=float),
            constant=np.asarray(data["constant"], dtype=bool),
        )


def standardize(matrix: Union[pd.DataFrame, np.ndarray]) -> Tuple[np.ndarray, StandardizationParams]:
    """
    Column z-scores (population standard deviation).

    Zero-variance columns become all zeros and are flagged.
    """
    if isinstance(matrix, pd.DataFrame):
        columns = [str(c) for c in matrix.columns]
        x = matrix.to_numpy(dtype=float)
    else:
        x = np.asarray(matrix, dtype=float)
        columns = [str(i) for i in range(x.shape[1])]
    if not np.all(np.isfinite(x)):
        raise DataError("Cannot standardise a matrix with missing or infinite values")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    # exact test: the float mean of a repeated value can miss it by an ulp
    constant = np.ptp(x, axis=0) == 0
    scale = np.where(constant, 1.0, std)
    z = (x - mean) / scale
    z[:, constant] = 0.0
    if constant.any():
        logger.warning("%d constant columns standardised to 0", int(constant.sum()))
    return z, StandardizationParams(columns=columns, mean=mean, scale=scale, constant=constant)


def inverse_standardize(z: np.ndarray, params: StandardizationParams) -> np.ndarray:
    x = np.asarray(z, dtype=float) * params.scale + params.mean
    x[:, params.constant] = params.mean[params.constant]
    return x


def drop_constant(z: np.ndarray, params: StandardizationParams) -> np.ndarray:
    """
    Standardised columns that carry variance, in their original order.

    A zero-variance column only adds the ridge term to every component, so it
    is left out of the mixture. If nothing varies, one zero column remains.
    """
    keep = ~params.constant
    if not keep.any():
        return np.zeros((len(z), 1))
    return np.asarray(z, dtype=float)[:, keep]


@dataclass
class PcaParams:
    mean: np.ndarray
    components: np.ndarray  # (m, d)
    scale: np.ndarray  # sqrt of retained eigenvalues
    explained: float

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) @ self.components.T / self.scale

    def to_dict(self) -> Dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "scale": self.scale.tolist(),
            "explained": self.explained,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "PcaParams":
        return cls(
            mean=np.asarray(data["mean"], dtype=float),
            components=np.asarray(data["components"], dtype=float),
            scale=np.asarray(data["scale"], dtype=float),
            explained=float(data["explained"]),
        )


def pca_whiten(x: np.ndarray, variance: float = 0.95) -> Tuple[np.ndarray, PcaParams]:
    """Project onto the leading principal components explaining `variance`, scaled to unit variance."""
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    eigen = s ** 2 / len(x)
    total = eigen.sum()
    if total <= 0:
        raise NumericalError("PCA on a matrix without variance")
    ratio = np.cumsum(eigen) / total
    m = int(np.searchsorted(ratio, variance - 1e-12) + 1)
    m = min(m, int(np.sum(eigen > 1e-12 * eigen[0])))
    # fix component signs so the projection is reproducible
    signs = np.sign(vt[np.arange(m), np.argmax(np.abs(vt[:m]), axis=1)])
    components = vt[:m] * np.where(signs == 0, 1.0, signs)[:, None]
    params = PcaParams(mean=mean, components=components, scale=np.sqrt(eigen[:m]), explained=float(ratio[m - 1]))
    logger.info("PCA guard: %d -> %d dimensions (%.3f variance)", x.shape[1], m, params.explained)
    return params.transform(x), params


# ============== GAUSSIAN MIXTURE ==============

@dataclass
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    covariances: np.ndarray  # (K, d, d)
    covariance_type: str = "full"
    loglik: float = float("-inf")
    seed: int = 0
    n_iter: int = 0
    reg: float = 0.0
    trace: List[float] = field(default_factory=list)
    standardization: Optional[StandardizationParams] = None
    pca: Optional[PcaParams] = None

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> Dict:
        return {
            "k": self.k,
            "covariance_type": self.covariance_type,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "loglik": self.loglik,
            "seed": self.seed,
            "n_iter": self.n_iter,
            "reg": self.reg,
            "trace": list(self.trace),
            "standardization": self.standardization.to_dict() if self.standardization else None,
            "pca": self.pca.to_dict() if self.pca else None,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "GmmModel":
        return cls(
            weights=np.asarray(data["weights"], dtype=float),
            means=np.asarray(data["means"], dtype=float),
            covariances=np.asarray(data["covariances"], dtype=float),
            covariance_type=data["covariance_type"],
            loglik=float(data["loglik"]),
            seed=int(data["seed"]),
            n_iter=int(data["n_iter"]),
            reg=float(data.get("reg", 0.0)),
            trace=list(data.get("trace", [])),
            standardization=StandardizationParams.from_dict(data["standardization"]) if data.get("standardization") else None,
            pca=PcaParams.from_dict(data["pca"]) if data.get("pca") else None,
        )


@dataclass
class Labeling:
    labels: np.ndarray
    responsibilities: np.ndarray


class _Degenerate(Exception):
    pass


def _weighted_log_prob(x: np.ndarray, weights: np.ndarray, means: np.ndarray, covariances: np.ndarray) -> np.ndarray:
    """log(pi_k) + log N(x | mu_k, Sigma_k) for every row and component."""
    n, d = x.shape
    out = np.empty((n, len(weights)))
    for k in range(len(weights)):
        try:
            chol = scipy.linalg.cholesky(covariances[k], lower=True)
        except np.linalg.LinAlgError as e:
            raise _Degenerate(f"component {k} covariance not positive definite") from e
        soln = scipy.linalg.solve_triangular(chol, (x - means[k]).T, lower=True)
        out[:, k] = (
            np.log(weights[k])
            - 0.5 * d * np.log(2 * np.pi)
            - np.sum(np.log(np.diag(chol)))
            - 0.5 * np.sum(soln ** 2, axis=0)
        )
    return out


def _m_step(x: np.ndarray, resp: np.ndarray, reg: float, covariance_type: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, d = x.shape
    nk = resp.sum(axis=0)
    weights = nk / n
    if np.any(weights < MIN_WEIGHT):
        raise _Degenerate(f"component weight {weights.min():.3g} below {MIN_WEIGHT}")
    means = resp.T @ x / nk[:, None]
    covariances = np.empty((len(nk), d, d))
    for k in range(len(nk)):
        diff = x - means[k]
        cov = (resp[:, k][:, None] * diff).T @ diff / nk[k]
        if covariance_type == "diag":
            cov = np.diag(np.diag(cov))
        covariances[k] = 0.5 * (cov + cov.T) + reg * np.eye(d)
    return weights, means, covariances


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of k seeding rows chosen with D² weighting."""
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            nxt = int(rng.integers(n))
        chosen.append(nxt)
        closest = np.minimum(closest, np.sum((x - x[nxt]) ** 2, axis=1))
    return np.asarray(chosen)


def _initial_responsibilities(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centres = x[_kmeans_pp(x, k, rng)]
    dist = ((x[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
    resp = np.zeros((len(x), k))
    resp[np.arange(len(x)), np.argmin(dist, axis=1)] = 1.0
    return resp


def regularization(x: np.ndarray, reg_scale: float = 1e-6) -> float:
    """reg_scale times the mean variance of the data (reg_scale itself for variance-free data)."""
    mean_var = float(np.mean(x.var(axis=0))) if len(x) else 0.0
    return reg_scale * mean_var if mean_var > 0 else reg_scale


def _run_em(x, k, rng, reg, covariance_type, max_iter, tol):
    weights, means, covs = _m_step(x, _initial_responsibilities(x, k, rng), reg, covariance_type)
    trace: List[float] = []
    prev = None
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        log_prob = _weighted_log_prob(x, weights, means, covs)
        lse = logsumexp(log_prob, axis=1)
        ll = float(lse.sum())
        if trace and ll < trace[-1]:
            # a regularised M-step can lower the likelihood; keep the previous parameters
            weights, means, covs = prev
            logger.debug("Log-likelihood decreased by %.3g at iteration %d; stopping", trace[-1] - ll, n_iter)
            break
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol:
            break
        prev = (weights, means, covs)
        weights, means, covs = _m_step(x, np.exp(log_prob - lse[:, None]), reg, covariance_type)
    else:
        # iteration cap: the last M-step was never scored
        weights, means, covs = prev
    return weights, means, covs, trace, n_iter


def fit_gmm(
    x: np.ndarray,
    k: int,
    seed: int = 0,
    covariance: str = "full",
    max_iter: int = 300,
    tol: float = 1e-6,
    reg_scale: float = 1e-6,
) -> GmmModel:
    """
    Fit a Gaussian mixture by expectation-maximisation.

    Args:
        x: (n, d) standardised features
        k: Number of components
        seed: Seed of the k-means++ initialisation
        covariance: "full" or "diag"
        max_iter: Iteration cap
        tol: Absolute log-likelihood change that counts as converged
        reg_scale: Covariance ridge as a share of the mean data variance

    Returns:
        Fitted GmmModel

    Raises:
        DataError: k < 1 or more components than rows
        NumericalError: a component degenerates twice
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DataError("Feature matrix must be two-dimensional")
    if k < 1:
        raise DataError(f"Number of components must be >= 1, got {k}")
    if k > len(x):
        raise DataError(f"Cannot fit {k} components to {len(x)} rows")
    if covariance not in ("full", "diag"):
        raise DataError(f"Unknown covariance type: {covariance}")

    rng = np.random.default_rng(seed)
    reg = regularization(x, reg_scale)
    for attempt in (1, 2):
        try:
            weights, means, covs, trace, n_iter = _run_em(x, k, rng, reg, covariance, max_iter, tol)
            break
        except _Degenerate as e:
            if attempt == 2:
                raise NumericalError(f"GMM with K={k}, seed={seed} degenerated twice: {e}") from e
            logger.warning("GMM K=%d seed=%d: %s; reinitialising", k, seed, e)
    return GmmModel(
        weights=weights, means=means, covariances=covs, covariance_type=covariance,
        loglik=trace[-1], seed=seed, n_iter=n_iter, reg=reg, trace=trace,
    )


def log_likelihood(model: GmmModel, x: np.ndarray) -> float:
    try:
        log_prob = _weighted_log_prob(np.asarray(x, dtype=float), model.weights, model.means, model.covariances)
    except _Degenerate as e:
        raise NumericalError(str(e)) from e
    return float(logsumexp(log_prob, axis=1).sum())


def n_parameters(k: int, d: int, covariance: str = "full") -> int:
    cov_params = k * d * (d + 1) // 2 if covariance == "full" else k * d
    return (k - 1) + k * d + cov_params


def bic_from_loglik(loglik: float, n: int, k: int, d: int, covariance: str = "full") -> float:
    """p ln(n) - 2 lnL."""
    return n_parameters(k, d, covariance) * np.log(n) - 2.0 * loglik


def bic(model: GmmModel, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape[1] != model.d:
        raise DataError(f"Model has {model.d} dimensions, data has {x.shape[1]}")
    return float(bic_from_loglik(log_likelihood(model, x), len(x), model.k, model.d, model.covariance_type))


def assign_labels(model: GmmModel, x: np.ndarray) -> Labeling:
    """Posterior responsibilities (log-sum-exp normalised) and argmax labels, ties to the lower component."""
    try:
        log_prob = _weighted_log_prob(np.asarray(x, dtype=float), model.weights, model.means, model.covariances)
    except _Degenerate as e:
        raise NumericalError(str(e)) from e
    resp = np.exp(log_prob - logsumexp(log_prob, axis=1)[:, None])
    return Labeling(labels=np.argmax(resp, axis=1).astype(int), responsibilities=resp)


# ============== MODEL SELECTION ==============

def elbow(curve: Sequence[BicPoint]) -> Tuple[int, str]:
    """
    Discrete elbow of a BIC curve: the K maximising b[K-1] - 2 b[K] + b[K+1].

    A curve without positive curvature falls back to k_min + 1; two points
    pick the lower BIC; one point is returned as is.
    """
    if not curve:
        raise DataError("Empty BIC curve")
    points = sorted(curve, key=lambda p: p.k)
    if len(points) == 1:
        return points[0].k, "only"
    if len(points) == 2:
        best = min(points, key=lambda p: (p.bic, p.k))
        return best.k, "lowest"
    b = np.array([p.bic for p in points])
    second = b[:-2] - 2 * b[1:-1] + b[2:]
    scale = np.max(np.abs(b)) + 1.0
    if np.max(second) <= 1e-9 * scale:
        logger.warning("BIC curve has no elbow; falling back to K=%d", points[1].k)
        return points[1].k, "fallback"
    return points[1 + int(np.argmax(second))].k, "elbow"


def _fit_point(x, k, seed, covariance, max_iter, tol, reg_scale) -> Optional[Tuple[BicPoint, GmmModel]]:
    try:
        model = fit_gmm(x, k, seed=seed, covariance=covariance, max_iter=max_iter, tol=tol, reg_scale=reg_scale)
    except NumericalError as e:
        logger.warning("Fit K=%d seed=%d failed: %s", k, seed, e)
        return None
    value = bic_from_loglik(model.loglik, len(x), k, x.shape[1], covariance)
    return BicPoint(k=k, bic=float(value), loglik=model.loglik, seed=seed, n_iter=model.n_iter), model


def candidate_ks(n_rows: int, k_min: int, k_max: int) -> List[int]:
    """Component counts worth trying: at most half the rows (but always K=1 for one row)."""
    upper = min(k_max, max(1, n_rows // 2))
    return list(range(k_min, upper + 1))


def select_k(
    x: np.ndarray,
    k_min: int = 1,
    k_max: int = 8,
    seeds_per_k: int = 3,
    seed: int = 42,
    covariance: str = "full",
    max_iter: int = 300,
    tol: float = 1e-6,
    reg_scale: float = 1e-6,
    threads: Optional[int] = None,
) -> Tuple[SelectionResult, Dict[int, GmmModel]]:
    """
    Best-of-seeds BIC for every K in range and the elbow choice.

    Returns:
        (SelectionResult with the full curve, best model per K)
    """
    x = np.asarray(x, dtype=float)
    ks = candidate_ks(len(x), k_min, k_max)
    if not ks:
        raise DataError(f"Empty K range [{k_min}, {k_max}] for {len(x)} rows")
    jobs = [(k, seed + s) for k in ks for s in range(seeds_per_k)]
    results = parallel_map(lambda job: _fit_point(x, job[0], job[1], covariance, max_iter, tol, reg_scale), jobs, threads=threads)

    best: Dict[int, Tuple[BicPoint, GmmModel]] = {}
    for result in results:
        if result is None:
            continue
        point, model = result
        current = best.get(point.k)
        if current is None or point.bic < current[0].bic:
            best[point.k] = (point, model)
    if not best:
        raise NumericalError("Every GMM fit failed")
    curve = [best[k][0] for k in sorted(best)]
    k_star, method = elbow(curve)
    for point in curve:
        logger.debug("K=%d BIC=%.4f (seed %d)", point.k, point.bic, point.seed)
    logger.info("Selected K=%d (%s) from %d candidates", k_star, method, len(curve))
    return SelectionResult(k=k_star, method=method, curve=curve), {k: best[k][1] for k in best}


def bic_curve_frame(result: SelectionResult) -> pd.DataFrame:
    return pd.DataFrame([p.model_dump() for p in result.curve], columns=["k", "bic", "loglik", "seed", "n_iter"])
