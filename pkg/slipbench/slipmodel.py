"""
Slip model: epsilon-SVR trained with a two-variable SMO dual solver, model selection
and evaluation metrics.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from slipbench.models import (
    ConfigError,
    Dataset,
    DegenerateError,
    KernelEnum,
    MetricsReport,
    ShapeError,
    SvrModel,
    SvrParams,
)
from slipbench.utils import Stream, derive_rng

logger = logging.getLogger(__name__)

TAU = 1e-12
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 200_000


def kernel_matrix(a: np.ndarray, b: np.ndarray, kernel: KernelEnum, gamma: float) -> np.ndarray:
    if kernel == KernelEnum.LINEAR:
        return a @ b.T
    return np.exp(-gamma * cdist(a, b, "sqeuclidean"))


class Solver:
    """
    Minimizes 0.5 a'Qa + p'a subject to y'a = 0 and 0 <= a <= C, updating two
    variables per iteration chosen by second order working set selection
    """

    def __init__(
        self,
        Q: np.ndarray,
        p: np.ndarray,
        y: np.ndarray,
        C: float,
        tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER,
    ):
        self.Q = Q
        self.QD = np.diag(Q).copy()
        self.p = p
        self.y = y
        self.C = C
        self.tol = tol
        self.max_iter = max_iter
        self.alpha = np.zeros(len(p))
        self.G = p.copy()
        self.iterations = 0
        self.converged = False

    def _upper(self) -> np.ndarray:
        return self.alpha >= self.C

    def _lower(self) -> np.ndarray:
        return self.alpha <= 0

    def select_working_set(self) -> Optional[tuple[int, int]]:
        y, G = self.y, self.G
        # i maximizes -y_i G_i over the indices allowed to move up
        up = np.where(y > 0, ~self._upper(), ~self._lower())
        if not up.any():
            return None
        score = np.where(up, -y * G, -np.inf)
        i = int(np.argmax(score))
        g_max = score[i]

        low = np.where(y > 0, ~self._lower(), ~self._upper())
        low_score = np.where(low, y * G, -np.inf)
        g_max2 = low_score.max() if low.any() else -np.inf
        if g_max + g_max2 < self.tol:
            return None

        Q_i = self.Q[i]
        grad_diff = g_max + y * G
        quad = self.QD[i] + self.QD - 2.0 * y[i] * y * Q_i
        quad = np.where(quad > 0, quad, TAU)
        candidates = low & (grad_diff > 0)
        if not candidates.any():
            return None
        obj = np.where(candidates, -(grad_diff**2) / quad, np.inf)
        return i, int(np.argmin(obj))

    def update(self, i: int, j: int) -> None:
        C, a, G = self.C, self.alpha, self.G
        Q_i, Q_j = self.Q[i], self.Q[j]
        old_i, old_j = a[i], a[j]
        if self.y[i] != self.y[j]:
            quad = self.QD[i] + self.QD[j] + 2 * Q_i[j]
            delta = (-G[i] - G[j]) / (quad if quad > 0 else TAU)
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j], a[i] = 0.0, diff
            elif a[i] < 0:
                a[i], a[j] = 0.0, -diff
            if diff > 0:
                if a[i] > C:
                    a[i], a[j] = C, C - diff
            elif a[j] > C:
                a[j], a[i] = C, C + diff
        else:
            quad = self.QD[i] + self.QD[j] - 2 * Q_i[j]
            delta = (G[i] - G[j]) / (quad if quad > 0 else TAU)
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i], a[j] = C, total - C
            elif a[j] < 0:
                a[j], a[i] = 0.0, total
            if total > C:
                if a[j] > C:
                    a[j], a[i] = C, total - C
            elif a[i] < 0:
                a[i], a[j] = 0.0, total
        G += Q_i * (a[i] - old_i) + Q_j * (a[j] - old_j)

    def solve(self) -> np.ndarray:
        while self.iterations < self.max_iter:
            pair = self.select_working_set()
            if pair is None:
                self.converged = True
                break
            self.update(*pair)
            self.iterations += 1
        if not self.converged:
            logger.warning(f"SMO stopped after {self.max_iter} iterations without reaching tol={self.tol}")
        return self.alpha

    def rho(self) -> float:
        yG = self.y * self.G
        upper, lower = self._upper(), self._lower()
        free = ~upper & ~lower
        if free.any():
            return float(yG[free].mean())
        ub_mask = (upper & (self.y < 0)) | (lower & (self.y > 0))
        lb_mask = (upper & (self.y > 0)) | (lower & (self.y < 0))
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        return float((ub + lb) / 2)


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Per-dimension mean and scale of the training features, zero variance dimensions dropped
    :return: (kept dimension indices, mean, scale) over the kept dimensions
    """
    std = X.std(axis=0)
    kept = np.nonzero(std > 1e-12)[0]
    dropped = X.shape[1] - len(kept)
    if dropped:
        logger.warning(f"Dropping {dropped} constant feature dimension(s) out of {X.shape[1]}")
    return kept, X[:, kept].mean(axis=0), std[kept]


def train_svr(
    X: np.ndarray,
    y: np.ndarray,
    params: SvrParams,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    config_hash: Optional[str] = None,
) -> SvrModel:
    """
    Fits an epsilon-SVR on standardized features
    :param X: features, shape (n, d)
    :param y: targets, shape (n,)
    :param params: kernel and hyper parameters
    :param tol: stopping tolerance on the maximal KKT violation
    :param max_iter: maximal number of SMO iterations
    :param config_hash: hash of the configuration the model was trained under
    :return: trained model
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n < 2:
        raise ShapeError(f"At least 2 samples are required, got {n}")
    if len(y) != n:
        raise ShapeError(f"{n} feature rows for {len(y)} targets")

    kept, mean, scale = standardize(X)
    if len(kept) == 0:
        logger.warning("All features are constant, falling back to the mean target")
        return SvrModel(
            support_vectors=np.zeros((0, 0)),
            dual_coefs=np.zeros(0),
            bias=float(y.mean()),
            params=params,
            feature_mean=mean,
            feature_scale=scale,
            kept_dims=kept,
            n_features_in=d,
            config_hash=config_hash,
        )

    Z = (X[:, kept] - mean) / scale
    gamma = (params.gamma or 1.0) / len(kept)
    K = kernel_matrix(Z, Z, params.kernel, gamma)
    sign = np.concatenate([np.ones(n), -np.ones(n)])
    Q = np.outer(sign, sign) * np.tile(K, (2, 2))
    p = np.concatenate([params.epsilon - y, params.epsilon + y])
    solver = Solver(Q, p, sign, params.c, tol, max_iter)
    alpha = solver.solve()
    beta = alpha[:n] - alpha[n:]
    support = np.abs(beta) > 0
    logger.debug(
        f"SVR {params.label()}: {solver.iterations} iterations, {int(support.sum())}/{n} support vectors"
    )
    return SvrModel(
        support_vectors=Z[support],
        dual_coefs=beta[support],
        bias=-solver.rho(),
        params=params,
        feature_mean=mean,
        feature_scale=scale,
        kept_dims=kept,
        n_features_in=d,
        config_hash=config_hash,
    )


def decision_function(model: SvrModel, X: np.ndarray) -> np.ndarray:
    """Raw regression output, before clamping"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.n_features_in:
        raise ShapeError(f"Model expects {model.n_features_in} features, got {X.shape[1]}")
    if len(model.dual_coefs) == 0:
        return np.full(len(X), model.bias)
    Z = (X[:, model.kept_dims] - model.feature_mean) / model.feature_scale
    K = kernel_matrix(Z, model.support_vectors, model.params.kernel, model.gamma_eff)
    return K @ model.dual_coefs + model.bias


def predict(model: SvrModel, X: np.ndarray) -> np.ndarray:
    """
    Stick ratio estimates clamped to [0, 1]; accepts one feature vector or a batch
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    out = np.clip(decision_function(model, X.reshape(1, -1) if single else X), 0.0, 1.0)
    return out[0] if single else out


def model_to_dict(model: SvrModel) -> dict:
    return {
        "params": model.params.model_dump(mode="json"),
        "bias": model.bias,
        "support_vectors": model.support_vectors.tolist(),
        "dual_coefs": model.dual_coefs.tolist(),
        "feature_mean": model.feature_mean.tolist(),
        "feature_scale": model.feature_scale.tolist(),
        "kept_dims": model.kept_dims.tolist(),
        "n_features_in": model.n_features_in,
        "config_hash": model.config_hash,
    }


def model_from_dict(data: dict) -> SvrModel:
    kept = np.array(data["kept_dims"], dtype=int)
    vectors = np.array(data["support_vectors"], dtype=float).reshape(-1, len(kept))
    return SvrModel(
        support_vectors=vectors,
        dual_coefs=np.array(data["dual_coefs"], dtype=float),
        bias=float(data["bias"]),
        params=SvrParams.model_validate(data["params"]),
        feature_mean=np.array(data["feature_mean"], dtype=float),
        feature_scale=np.array(data["feature_scale"], dtype=float),
        kept_dims=kept,
        n_features_in=int(data["n_features_in"]),
        config_hash=data.get("config_hash"),
    )


def rmse(errors: np.ndarray) -> float:
    errors = np.asarray(errors, dtype=float)
    return float(np.sqrt(np.mean(errors**2))) if len(errors) else 0.0


def worst10_rmse(errors: np.ndarray) -> float:
    """RMSE over the top decile of absolute errors"""
    errors = np.sort(np.abs(np.asarray(errors, dtype=float)))[::-1]
    k = max(1, math.ceil(0.1 * len(errors)))
    return rmse(errors[:k])


def assign_folds(groups: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """
    Fold of every row, whole groups (trials) kept in the same fold
    """
    unique = np.unique(groups)
    if folds > len(unique):
        raise ConfigError(f"{folds} folds requested for {len(unique)} groups")
    order = derive_rng(seed, Stream.FOLDS).permutation(len(unique))
    fold_of = {unique[g]: position % folds for position, g in enumerate(order)}
    return np.array([fold_of[g] for g in groups], dtype=int)


def cross_validate(
    X: np.ndarray,
    y: np.ndarray,
    params: SvrParams,
    fold_index: np.ndarray,
    tol: float = DEFAULT_TOL,
) -> float:
    errors = np.zeros(len(y))
    for fold in np.unique(fold_index):
        test = fold_index == fold
        model = train_svr(X[~test], y[~test], params, tol=tol)
        errors[test] = predict(model, X[test]) - y[test]
    return rmse(errors)


def grid_search(
    X: np.ndarray,
    y: np.ndarray,
    grid: list[SvrParams],
    folds: int,
    seed: int = 0,
    groups: Optional[np.ndarray] = None,
    jobs: int = 1,
) -> tuple[SvrParams, list[dict]]:
    """
    K-fold cross validated grid search
    :param X: features
    :param y: targets
    :param grid: candidate parameters
    :param folds: number of folds, at least 2
    :param seed: fold assignment seed
    :param groups: group of every row (trial ids), rows are their own group when None
    :param jobs: worker processes
    :return: selected parameters and the cv table
    """
    if not grid:
        raise ConfigError("Empty parameter grid")
    if folds < 2:
        raise ConfigError(f"At least 2 folds are required, got {folds}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    groups = np.arange(len(y)) if groups is None else np.asarray(groups)
    fold_index = assign_folds(groups, folds, seed)

    if jobs > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            scores = list(
                executor.map(
                    cross_validate,
                    [X] * len(grid),
                    [y] * len(grid),
                    grid,
                    [fold_index] * len(grid),
                )
            )
    else:
        scores = [cross_validate(X, y, params, fold_index) for params in grid]

    table = [
        {"params": params.model_dump(mode="json"), "label": params.label(), "cv_rmse": score}
        for params, score in zip(grid, scores)
    ]
    best = min(
        range(len(grid)), key=lambda i: (round(scores[i], 12), grid[i].c, -grid[i].epsilon)
    )
    logger.info(f"Grid search selected {grid[best].label()} (cv rmse {scores[best]:.4f})")
    return grid[best], table


def evaluate(model: SvrModel, test: Dataset) -> MetricsReport:
    """
    Test set metrics of a trained model
    """
    if len(test) == 0:
        raise ShapeError("Empty test set")
    errors = predict(model, test.X) - test.y
    materials = np.array(test.materials)
    return MetricsReport(
        method=test.method,
        rmse=rmse(errors),
        worst10_rmse=worst10_rmse(errors),
        per_material_rmse={str(m): rmse(errors[materials == m]) for m in sorted(set(test.materials))},
        n_test=len(test),
    )


def per_trial_rmse(errors: np.ndarray, trial_ids: np.ndarray) -> dict[int, float]:
    return {int(t): rmse(errors[trial_ids == t]) for t in np.unique(trial_ids)}


def welch_t_test(sample_a, sample_b) -> tuple[float, float]:
    """
    Welch's unequal variance two-sample t-test, two sided
    :return: (t statistic, p value)
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise DegenerateError(f"Each sample needs at least 2 values, got {len(a)} and {len(b)}")
    if a.var() == 0 and b.var() == 0:
        raise DegenerateError("Both samples have zero variance")
    result = stats.ttest_ind(a, b, equal_var=False)
    t_stat, p_value = float(result.statistic), float(result.pvalue)
    if np.isnan(p_value):
        t_stat, p_value = 0.0, 1.0
    return t_stat, p_value


def split_trials(dataset: Dataset, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Seeded per-material split of whole trials into train and test row indices
    """
    materials = np.array(dataset.materials)
    test_trials = []
    rng = derive_rng(seed, Stream.SPLIT)
    for material in sorted(set(dataset.materials)):
        trials = np.unique(dataset.trial_ids[materials == material])
        if len(trials) < 2:
            continue
        n_test = max(1, int(round(fraction * len(trials))))
        test_trials.extend(trials[rng.permutation(len(trials))[:n_test]].tolist())
    test = np.isin(dataset.trial_ids, test_trials)
    return np.nonzero(~test)[0], np.nonzero(test)[0]


def subsample(index: np.ndarray, max_samples: int, seed: int) -> np.ndarray:
    if len(index) <= max_samples:
        return index
    chosen = derive_rng(seed, Stream.SUBSAMPLE).choice(len(index), size=max_samples, replace=False)
    return index[np.sort(chosen)]
