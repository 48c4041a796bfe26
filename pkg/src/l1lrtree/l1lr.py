"""L1-penalized logistic regression: path fitting, CV penalty selection.

The objective is the mean negative log-likelihood plus ``lam * ||beta||_1``
with an unpenalized intercept, solved on the standardized design.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _cd
from .data import DataError, DesignMatrix, FoldAssignment

BETA_CAP = 1e3
ZERO_TOL = 1e-12


class ConvergenceWarning(UserWarning):
    pass


class SeparationWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class RegularizedLogisticModel:
    """Coefficients on the standardized scale, plus the design metadata.

    ``raw_intercept``/``raw_coefficients`` are the same model expressed on the
    unstandardized design columns.
    """

    lam: float
    intercept: float
    coefficients: np.ndarray
    column_map: tuple
    means: np.ndarray
    sds: np.ndarray
    converged: bool = True
    kkt_residual: float = 0.0
    capped: bool = False
    separated: bool = False
    objective_trace: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def raw_coefficients(self) -> np.ndarray:
        return self.coefficients / self.sds

    @property
    def raw_intercept(self) -> float:
        return float(self.intercept - np.sum(self.coefficients * self.means / self.sds))

    @property
    def column_names(self) -> list[str]:
        return [f if lv is None else f"{f}={lv}" for f, lv in self.column_map]

    def dump(self) -> dict:
        """Flat record of destandardized coefficients (nonzero only)."""
        rec = {"lambda": self.lam, "intercept": self.raw_intercept}
        for name, b in zip(self.column_names, self.raw_coefficients):
            if abs(b) > ZERO_TOL:
                rec[name] = float(b)
        return rec


@dataclass(frozen=True, eq=False)
class CvCurve:
    lambda_grid: np.ndarray
    mean_error: np.ndarray
    se_error: np.ndarray
    lambda_min: float
    lambda_1se: float

    @property
    def index_min(self) -> int:
        return int(np.flatnonzero(self.lambda_grid == self.lambda_min)[0])

    @property
    def index_1se(self) -> int:
        return int(np.flatnonzero(self.lambda_grid == self.lambda_1se)[0])


def _sigmoid(eta):
    return np.where(eta >= 0, 1.0 / (1.0 + np.exp(-np.abs(eta))),
                    np.exp(-np.abs(eta)) / (1.0 + np.exp(-np.abs(eta))))


def log_likelihood_arrays(intercept: float, beta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    eta = intercept + X @ beta
    return float(np.mean(y * eta - np.logaddexp(0.0, eta)))


def log_likelihood(model: RegularizedLogisticModel, design: DesignMatrix, y) -> float:
    """Mean log-likelihood of ``model`` on the (standardized) design."""
    return log_likelihood_arrays(model.intercept, model.coefficients, design.matrix, np.asarray(y, float))


def objective(model: RegularizedLogisticModel, design: DesignMatrix, y) -> float:
    return -log_likelihood(model, design, y) + model.lam * float(np.abs(model.coefficients).sum())


def gradient(intercept, beta, X, y) -> np.ndarray:
    """Gradient of the mean log-likelihood, intercept first."""
    r = np.asarray(y, float) - _sigmoid(intercept + X @ beta)
    return np.concatenate([[r.mean()], X.T @ r / len(r)])


def kkt_residual(model: RegularizedLogisticModel, design: DesignMatrix, y) -> float:
    g = gradient(model.intercept, model.coefficients, design.matrix, y)
    b, gj = model.coefficients, g[1:]
    viol = np.where(b == 0, np.maximum(np.abs(gj) - model.lam, 0.0), np.abs(gj - model.lam * np.sign(b)))
    return float(max(abs(g[0]), viol.max(initial=0.0)))


def predict_proba(model: RegularizedLogisticModel, rows) -> np.ndarray | float:
    """Probability of class 1 for standardized design rows (one row or a matrix)."""
    rows = np.asarray(rows, dtype=float)
    p = _sigmoid(model.intercept + rows @ model.coefficients)
    return float(p) if p.ndim == 0 else p


def predict_proba_raw(model: RegularizedLogisticModel, raw_rows) -> np.ndarray:
    raw_rows = np.asarray(raw_rows, dtype=float)
    return _sigmoid(model.raw_intercept + raw_rows @ model.raw_coefficients)


def lambda_max(design: DesignMatrix, y) -> float:
    y = np.asarray(y, float)
    X = design.matrix
    if X.shape[1] == 0 or not np.any(X.std(axis=0) > 0):
        raise DataError("all-constant design: no penalty path exists")
    return float(np.max(np.abs(X.T @ (y - y.mean()))) / len(y))


def lambda_grid(design: DesignMatrix, y, n_lambda: int = 100, eps: float = 1e-3) -> np.ndarray:
    """``n_lambda`` log-spaced penalties from ``lambda_max`` down to ``eps * lambda_max``."""
    lmax = lambda_max(design, y)
    return lmax * np.exp(np.linspace(0.0, math.log(eps), n_lambda))


def _null_intercept(y):
    pbar = float(np.mean(y))
    return math.log(pbar / (1.0 - pbar))


def _run_path(X, y, lambdas, tol, max_iter, b0=None, beta=None):
    X = np.asfortranarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    lambdas = np.ascontiguousarray(lambdas, dtype=np.float64)
    q = X.shape[1]
    L = len(lambdas)
    out_b0 = np.empty(L)
    out_beta = np.empty((L, q))
    info = np.zeros((L, 5))
    trace = np.full(_cd.TRACE_LEN, np.nan)
    if beta is None:
        beta = np.zeros(q)
        b0 = _null_intercept(y)
    nt = _cd.solve_path(X, y, lambdas, float(b0), np.ascontiguousarray(beta, dtype=np.float64),
                        float(tol), int(max_iter), BETA_CAP, out_b0, out_beta, info, trace)
    return out_b0, out_beta, info, trace[:nt]


def _check_y(y, n):
    y = np.asarray(y, dtype=float)
    if y.shape != (n,):
        raise DataError(f"labels have shape {y.shape}, expected ({n},)")
    if n < 2 or y.min() == y.max() or not np.isin(y, (0.0, 1.0)).all():
        raise DataError("fit requires binary labels with both classes present")
    return y


SEPARATION_GAP = 1e-4
POLISH_STEPS = 8


def _polish(X, y, lam, b0, beta, info):
    """Newton steps on the active set with signs held fixed.

    Coordinate descent meets the KKT tolerance with a coefficient error that
    grows with the conditioning of the Hessian; a few exact Newton steps on the
    smooth restricted problem remove it. A step is kept only if it preserves
    every sign and lowers the KKT residual.
    """
    active = np.flatnonzero(beta != 0.0)
    A = np.column_stack([np.ones(len(y)), X[:, active]])
    s = np.concatenate([[0.0], np.sign(beta[active])])
    theta = np.concatenate([[b0], beta[active]])

    def residual(th):
        full = beta.copy()
        full[active] = th[1:]
        g = gradient(th[0], full, X, y)
        gj = g[1:]
        viol = np.where(full == 0, np.maximum(np.abs(gj) - lam, 0.0), np.abs(gj - lam * np.sign(full)))
        return float(max(abs(g[0]), viol.max(initial=0.0))), full

    best, _ = residual(theta)
    for _ in range(POLISH_STEPS):
        p = _sigmoid(A @ theta)
        w = p * (1 - p)
        if best <= 1e-14 or w.max() == 0.0:
            break
        g = A.T @ (y - p) / len(y) - lam * s
        H = (A * w[:, None]).T @ A / len(y)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        cand = theta + step
        if not np.all(np.sign(cand[1:]) == s[1:]) or not np.all(np.isfinite(cand)):
            break
        r, _ = residual(cand)
        if r >= best:
            break
        theta, best = cand, r
    _, full = residual(theta)
    info = info.copy()
    info[_cd.INFO_KKT] = best
    return theta[0], full, info


def _make_model(design, lam, b0, beta, info, trace, y=None):
    separated = False
    if y is not None:
        # every fitted probability pinned to its label: the likelihood has no finite maximizer
        p = _sigmoid(b0 + design.matrix @ beta)
        separated = bool(np.all(np.abs(y - p) < SEPARATION_GAP))
    model = RegularizedLogisticModel(
        lam=float(lam), intercept=float(b0), coefficients=beta.copy(), column_map=design.column_map,
        means=design.means, sds=design.sds, converged=bool(info[_cd.INFO_CONVERGED]),
        kkt_residual=float(info[_cd.INFO_KKT]), capped=bool(info[_cd.INFO_CAPPED]), separated=separated,
        objective_trace=trace,
    )
    if model.capped:
        warnings.warn(f"coefficients capped at {BETA_CAP:g} (perfect separation?) at lambda={lam:g}",
                      SeparationWarning, stacklevel=3)
    elif model.separated:
        warnings.warn(f"perfect separation at lambda={lam:g}: fitted probabilities equal the labels; "
                      "coefficients are a finite stop on a diverging path", SeparationWarning, stacklevel=3)
    elif not model.converged:
        warnings.warn(f"no convergence at lambda={lam:g}; KKT residual {model.kkt_residual:.3g}",
                      ConvergenceWarning, stacklevel=3)
    return model


def fit(design: DesignMatrix, y, lam: float, tol: float = 1e-7, max_iter: int = 10_000,
        warm_start: RegularizedLogisticModel | None = None) -> RegularizedLogisticModel:
    """Minimize the L1-penalized negative mean log-likelihood at one penalty.

    Outer proximal-Newton (IRLS) passes, each solving the penalized quadratic
    model by cyclic coordinate descent with soft-thresholding, followed by a
    backtracking step. Stops when the KKT residual or the coefficient change
    falls under ``tol``; ``max_iter`` caps the coordinate sweeps. The result
    is then refined by sign-preserving Newton steps on the active set.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    y = _check_y(y, design.matrix.shape[0])
    b0 = beta = None
    if warm_start is not None:
        b0, beta = warm_start.intercept, warm_start.coefficients
    ob0, obeta, info, trace = _run_path(design.matrix, y, [lam], tol, max_iter, b0, beta)
    b0, beta, info = _polish(design.matrix, y, lam, ob0[0], obeta[0], info[0])
    if info[_cd.INFO_KKT] <= tol:
        info[_cd.INFO_CONVERGED] = 1.0
    return _make_model(design, lam, b0, beta, info, trace, y)


def fit_path(design: DesignMatrix, y, grid, tol: float = 1e-7, max_iter: int = 10_000):
    """Warm-started fits along a descending grid; one model per penalty."""
    y = _check_y(y, design.matrix.shape[0])
    ob0, obeta, info, _ = _run_path(design.matrix, y, grid, tol, max_iter)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return [_make_model(design, lam, ob0[k], obeta[k], info[k], np.empty(0)) for k, lam in enumerate(grid)]


def fit_at(design: DesignMatrix, y, grid, index: int, tol: float = 1e-7, max_iter: int = 10_000):
    """Fit at ``grid[index]`` by walking the warm-start chain from ``grid[0]``."""
    y = _check_y(y, design.matrix.shape[0])
    ob0, obeta, info, trace = _run_path(design.matrix, y, grid[: index + 1], tol, max_iter)
    return _make_model(design, grid[index], ob0[-1], obeta[-1], info[-1], trace, y)


def _standardize_fold(raw, train):
    mu = raw[train].mean(axis=0)
    sd = raw[train].std(axis=0)
    live = sd > 1e-12 * np.maximum(1.0, np.abs(mu))
    sd = np.where(live, sd, 1.0)
    Z = (raw - mu) / sd
    Z[:, ~live] = 0.0
    return np.asfortranarray(Z)


def cv_lambda(design: DesignMatrix, y, folds: FoldAssignment, grid, tol: float = 1e-7,
              max_iter: int = 10_000) -> CvCurve:
    """K-fold squared-error curve over ``grid`` with lambda_min and lambda_1se.

    Each training complement is standardized afresh. Held-out error is the
    mean of ``(p_hat - y)**2``; ``se_error`` is the fold-mean standard
    deviation over ``sqrt(K)``.
    """
    y = np.asarray(y, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if len(folds.fold_of_row) != len(y):
        raise DataError("fold assignment does not match the number of rows")
    K = folds.K
    fold_err = np.empty((K, len(grid)))
    for k in range(K):
        train, test = folds.train_test(k)
        ytr = y[train]
        if ytr.min() == ytr.max():
            raise DataError(f"training complement of fold {k} lacks a class")
        Z = _standardize_fold(design.raw, train)
        ob0, obeta, _, _ = _run_path(Z[train], ytr, grid, tol, max_iter)
        phat = _sigmoid(ob0[None, :] + Z[test] @ obeta.T)
        fold_err[k] = np.mean((phat - y[test, None]) ** 2, axis=0)
    mean_error = fold_err.mean(axis=0)
    se_error = fold_err.std(axis=0, ddof=1) / math.sqrt(K)
    best = mean_error.min()
    # grid is descending: the first minimum is the largest penalty among ties
    i_min = int(np.flatnonzero(mean_error <= best)[0])
    bound = mean_error[i_min] + se_error[i_min]
    i_1se = int(np.flatnonzero(mean_error <= bound)[0])
    return CvCurve(grid, mean_error, se_error, float(grid[i_min]), float(grid[i_1se]))


def selected_features(model: RegularizedLogisticModel) -> list[str]:
    """Original feature names with any nonzero design coefficient, in column order."""
    out = []
    for (name, _), b in zip(model.column_map, model.coefficients):
        if abs(b) > ZERO_TOL and name not in out:
            out.append(name)
    return out
