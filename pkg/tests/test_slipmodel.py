import math
from typing import Optional

import numpy as np
import pytest
from scipy import optimize

from slipbench.models import (
    ConfigError,
    Dataset,
    DegenerateError,
    KernelEnum,
    ShapeError,
    SvrModel,
    SvrParams,
)
from slipbench.slipmodel import (
    assign_folds,
    decision_function,
    evaluate,
    grid_search,
    kernel_matrix,
    model_from_dict,
    model_to_dict,
    predict,
    rmse,
    split_trials,
    subsample,
    train_svr,
    welch_t_test,
    worst10_rmse,
)
from tests import TEST_SEED

LINEAR = SvrParams(kernel=KernelEnum.LINEAR, c=1.0, epsilon=0.01, gamma=None)
RBF = SvrParams(kernel=KernelEnum.RBF, c=10.0, epsilon=0.01, gamma=1.0)


def make_dataset(y, X=None, trial_ids=None, materials=None) -> Dataset:
    y = np.asarray(y, dtype=float)
    n = len(y)
    return Dataset(
        X=np.zeros((n, 1)) if X is None else X,
        y=y,
        trial_ids=np.arange(n) if trial_ids is None else np.asarray(trial_ids),
        materials=materials or ["pla"] * n,
        f_n=np.full(n, 2.3),
        steps=np.arange(n),
        method="injection",
    )


def constant_model(bias: float, n_features: int = 1) -> SvrModel:
    return SvrModel(
        support_vectors=np.zeros((0, 0)),
        dual_coefs=np.zeros(0),
        bias=bias,
        params=LINEAR,
        feature_mean=np.zeros(0),
        feature_scale=np.zeros(0),
        kept_dims=np.zeros(0, dtype=int),
        n_features_in=n_features,
    )


def dual_objective(K: np.ndarray, y: np.ndarray, beta: np.ndarray, epsilon: float) -> float:
    return float(0.5 * beta @ K @ beta + epsilon * np.abs(beta).sum() - y @ beta)


def reference_dual(
    K: np.ndarray, y: np.ndarray, c: float, epsilon: float
) -> tuple[np.ndarray, Optional[float]]:
    """
    Solves the 2n variable dual with a general purpose constrained optimizer,
    then solves the KKT system on the free coefficients exactly
    :return: coefficients and bias, the bias is None without free coefficients
    """
    n = len(y)

    def objective(alpha):
        beta = alpha[:n] - alpha[n:]
        return 0.5 * beta @ K @ beta + epsilon * alpha.sum() - y @ beta

    def gradient(alpha):
        g = K @ (alpha[:n] - alpha[n:])
        return np.concatenate([g + epsilon - y, -g + epsilon + y])

    result = optimize.minimize(
        objective,
        np.zeros(2 * n),
        jac=gradient,
        method="SLSQP",
        bounds=[(0.0, c)] * (2 * n),
        constraints=[
            {
                "type": "eq",
                "fun": lambda a: a[:n].sum() - a[n:].sum(),
                "jac": lambda a: np.concatenate([np.ones(n), -np.ones(n)]),
            }
        ],
        options={"ftol": 1e-14, "maxiter": 2000},
    )
    beta = result.x[:n] - result.x[n:]
    free = (np.abs(beta) > 1e-5) & (np.abs(beta) < c - 1e-5)
    if not free.any():
        return beta, None
    fixed = np.where(np.abs(beta) >= c - 1e-5, np.sign(beta) * c, 0.0)
    fixed[free] = 0.0
    m = int(free.sum())
    A = np.zeros((m + 1, m + 1))
    A[:m, :m] = K[np.ix_(free, free)]
    A[:m, m] = 1.0
    A[m, :m] = 1.0
    rhs = np.concatenate(
        [y[free] - epsilon * np.sign(beta[free]) - K[free] @ fixed, [-fixed.sum()]]
    )
    solution = np.linalg.lstsq(A, rhs, rcond=None)[0]
    fixed[free] = solution[:m]
    return fixed, float(solution[m])


def full_coefs(model: SvrModel, Z: np.ndarray) -> np.ndarray:
    beta = np.zeros(len(Z))
    for vector, coef in zip(model.support_vectors, model.dual_coefs):
        beta[int(np.argmin(np.linalg.norm(Z - vector, axis=1)))] = coef
    return beta


def linear_weights(model: SvrModel) -> np.ndarray:
    """Primal weights of a linear kernel model, in standardized feature units"""
    return model.dual_coefs @ model.support_vectors


def check_against_reference(X: np.ndarray, y: np.ndarray, params: SvrParams, X_new: np.ndarray):
    model = train_svr(X, y, params)
    Z = (X[:, model.kept_dims] - model.feature_mean) / model.feature_scale
    K = kernel_matrix(Z, Z, params.kernel, model.gamma_eff)
    beta = full_coefs(model, Z)
    ref_beta, ref_bias = reference_dual(K, y, params.c, params.epsilon)
    assert np.all(np.abs(beta) <= params.c + 1e-9)
    assert abs(beta.sum()) < 1e-9
    assert np.abs(beta - ref_beta).max() <= 1e-4
    assert dual_objective(K, y, beta, params.epsilon) == pytest.approx(
        dual_objective(K, y, ref_beta, params.epsilon), abs=1e-6
    )
    if ref_bias is not None:
        Z_new = (X_new[:, model.kept_dims] - model.feature_mean) / model.feature_scale
        expected = kernel_matrix(Z_new, Z, params.kernel, model.gamma_eff) @ ref_beta + ref_bias
        assert np.abs(decision_function(model, X_new) - expected).max() <= 1e-4


def test_constant_target():
    X = np.random.default_rng(TEST_SEED).normal(0, 1, (30, 4))
    model = train_svr(X, np.full(30, 0.7), RBF)
    assert np.allclose(predict(model, X), 0.7, atol=1e-9)
    assert len(model.dual_coefs) == 0


def test_constant_features():
    model = train_svr(np.ones((10, 3)), np.linspace(0, 1, 10), RBF)
    assert np.allclose(predict(model, np.random.default_rng(0).normal(0, 1, (5, 3))), 0.5)


@pytest.mark.parametrize("kernel", [KernelEnum.RBF, KernelEnum.LINEAR])
def test_dual_matches_reference_optimizer(kernel: KernelEnum):
    rng = np.random.default_rng(TEST_SEED)
    params = SvrParams(
        kernel=kernel, c=10.0, epsilon=0.05, gamma=1.0 if kernel == KernelEnum.RBF else None
    )
    for _ in range(25):
        n = int(rng.integers(3, 11))
        X = rng.normal(0, 1, (n, 3))
        y = rng.uniform(0, 1, n)
        check_against_reference(X, y, params, rng.normal(0, 1, (5, 3)))


def test_five_point_linear_dual():
    X = np.arange(5, dtype=float).reshape(-1, 1)
    y = np.array([0.0, 0.3, 0.45, 0.55, 1.0])
    params = SvrParams(kernel=KernelEnum.LINEAR, c=1.0, epsilon=0.05, gamma=None)
    check_against_reference(X, y, params, np.array([[-1.0], [0.5], [2.5], [6.0]]))


def test_exactly_linear_target():
    rng = np.random.default_rng(TEST_SEED)
    X = rng.normal(0, 1, (40, 3))
    w = np.array([1.0, -2.0, 0.5])
    y = 0.5 + 0.05 * X @ w
    model = train_svr(
        X, y, SvrParams(kernel=KernelEnum.LINEAR, c=100.0, epsilon=0.001, gamma=None), tol=1e-9
    )
    assert np.abs(predict(model, X) - y).max() <= 0.001 + 1e-6
    assert np.allclose(linear_weights(model), 0.05 * w * X.std(axis=0), atol=5e-3)


def test_predict_clamped_and_batched():
    rng = np.random.default_rng(TEST_SEED)
    X = rng.normal(0, 1, (30, 2))
    model = train_svr(X, np.clip(0.5 + 0.3 * X[:, 0], 0, 1), LINEAR)
    far = 100 * rng.normal(0, 1, (20, 2))
    batch = predict(model, far)
    assert np.all((batch >= 0) & (batch <= 1))
    assert np.abs(decision_function(model, far)).max() > 1
    assert np.allclose([predict(model, x) for x in far], batch)


def test_predict_dimension_mismatch():
    X = np.random.default_rng(0).normal(0, 1, (10, 3))
    model = train_svr(X, np.linspace(0, 1, 10), RBF)
    with pytest.raises(ShapeError):
        predict(model, np.zeros(4))


def test_train_too_few_samples():
    with pytest.raises(ShapeError):
        train_svr(np.zeros((1, 3)), np.zeros(1), RBF)


def test_model_dict():
    X = np.random.default_rng(0).normal(0, 1, (20, 3))
    model = train_svr(X, np.linspace(0, 1, 20), RBF, config_hash="abc")
    restored = model_from_dict(model_to_dict(model))
    assert restored.config_hash == "abc"
    assert np.allclose(predict(restored, X), predict(model, X))


def test_grid_single_point():
    X = np.random.default_rng(0).normal(0, 1, (20, 2))
    best, table = grid_search(X, np.linspace(0, 1, 20), [RBF], folds=2)
    assert best == RBF
    assert len(table) == 1
    assert table[0]["label"] == RBF.label()


def test_grid_prefers_rbf_on_nonlinear_target():
    x = np.random.default_rng(TEST_SEED).uniform(-2, 2, (80, 1))
    y = 0.5 + 0.4 * np.sin(3 * x[:, 0])
    best, table = grid_search(x, y, [LINEAR, RBF], folds=3, seed=1)
    assert best == RBF
    assert table[1]["cv_rmse"] < table[0]["cv_rmse"]


def test_grid_search_deterministic():
    rng = np.random.default_rng(TEST_SEED)
    X = rng.normal(0, 1, (40, 3))
    y = rng.uniform(0, 1, 40)
    groups = np.repeat(np.arange(8), 5)
    first = grid_search(X, y, [LINEAR, RBF], folds=4, seed=5, groups=groups)
    second = grid_search(X, y, [LINEAR, RBF], folds=4, seed=5, groups=groups)
    assert first == second


def test_grid_tie_prefers_smaller_c():
    X = np.ones((10, 2))
    y = np.linspace(0, 1, 10)
    large = SvrParams(kernel=KernelEnum.RBF, c=10.0, epsilon=0.01, gamma=1.0)
    small = SvrParams(kernel=KernelEnum.RBF, c=0.1, epsilon=0.01, gamma=1.0)
    best, _ = grid_search(X, y, [large, small], folds=2)
    assert best == small


@pytest.mark.parametrize("folds,grid", [(1, [RBF]), (30, [RBF]), (2, [])])
def test_grid_search_invalid(folds: int, grid: list):
    X = np.random.default_rng(0).normal(0, 1, (20, 2))
    with pytest.raises(ConfigError):
        grid_search(X, np.linspace(0, 1, 20), grid, folds=folds)


def test_assign_folds_keeps_groups():
    groups = np.repeat(np.arange(9), 4)
    folds = assign_folds(groups, 3, TEST_SEED)
    for g in range(9):
        assert len(set(folds[groups == g])) == 1
    assert sorted(np.bincount(folds)) == [12, 12, 12]


def test_evaluate_single_outlier():
    report = evaluate(constant_model(0.0), make_dataset([0.0] * 9 + [1.0]))
    assert report.rmse == pytest.approx(math.sqrt(0.1), abs=1e-3)
    assert report.worst10_rmse == pytest.approx(1.0)
    assert report.n_test == 10
    assert report.method == "injection"


def test_evaluate_per_material():
    dataset = make_dataset([0.5, 0.5, 0.0, 1.0], materials=["pla", "pla", "tpu", "tpu"])
    report = evaluate(constant_model(0.5), dataset)
    assert report.per_material_rmse == {"pla": 0.0, "tpu": pytest.approx(0.5)}


def test_evaluate_empty():
    with pytest.raises(ShapeError):
        evaluate(constant_model(0.5), make_dataset([]))


def test_worst10_not_below_rmse():
    rng = np.random.default_rng(TEST_SEED)
    for n in [1, 5, 10, 37, 200]:
        errors = rng.normal(0, 1, n)
        assert worst10_rmse(errors) >= rmse(errors)


def test_welch_identical_samples():
    assert welch_t_test([1, 2, 3], [1, 2, 3]) == (0.0, 1.0)


def test_welch_shifted_samples():
    t_stat, p_value = welch_t_test([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
    assert abs(t_stat) == pytest.approx(1.0)
    assert p_value == pytest.approx(0.347, abs=1e-3)


def test_welch_separated_samples():
    rng = np.random.default_rng(TEST_SEED)
    _, p_value = welch_t_test(rng.normal(0, 1, 30), rng.normal(3, 1, 30))
    assert p_value < 1e-6


@pytest.mark.parametrize("a,b", [([1.0], [1.0, 2.0]), ([1.0, 1.0], [2.0, 2.0])])
def test_welch_degenerate(a, b):
    with pytest.raises(DegenerateError):
        welch_t_test(a, b)


def test_split_trials_by_material():
    trial_ids = np.repeat(np.arange(20), 3)
    materials = ["pla"] * 30 + ["tpu"] * 30
    dataset = make_dataset(np.zeros(60), trial_ids=trial_ids, materials=materials)
    train, test = split_trials(dataset, 0.2, TEST_SEED)
    assert len(train) + len(test) == 60
    assert not set(trial_ids[train]) & set(trial_ids[test])
    test_materials = [materials[i] for i in test]
    assert test_materials.count("pla") == test_materials.count("tpu") == 6
    assert np.array_equal(split_trials(dataset, 0.2, TEST_SEED)[1], test)


def test_subsample():
    index = np.arange(100, 200)
    assert np.array_equal(subsample(index, 500, 0), index)
    chosen = subsample(index, 30, TEST_SEED)
    assert len(chosen) == 30
    assert np.all(np.diff(chosen) > 0)
    assert set(chosen) <= set(index)
    assert np.array_equal(subsample(index, 30, TEST_SEED), chosen)
