"""From-scratch linear probes: multinomial logistic and one-vs-rest linear SVM.

Both probes z-score features with train-fold statistics and minimize a
convex objective by full-batch gradient descent with Armijo backtracking
line search — no stochastic steps, so training is deterministic.

Objectives (N training rows, K classes, weights W (K, d), biases b):

* logistic: mean softmax cross-entropy + (l2 / 2) * ||W||_F^2
* linear SVM: sum over classes of 0.5 * ||w_k||^2 + c * mean_i
  max(0, 1 - s_ik * (w_k . x_i + b_k))^2 with s_ik = +/-1, the squared
  hinge averaged per sample.  The K one-vs-rest problems are independent;
  they are fitted jointly as one separable objective.

Biases are never regularized.  Logistic weights start at zero with biases
at the log class priors, which is already optimal when regularization is
strong, so heavily penalized fits converge immediately to prior
predictions.

High-dimensional fits (d > N) are solved in an orthonormal basis of the
span of the scaled training rows.  Any weight component orthogonal to that
span leaves the data term unchanged and only grows the penalty, so the
optimum lives in the span; gradient descent started at zero never leaves
it either.  The basis comes from an economy QR factorization, after which
each fit costs O(N^2) per iteration instead of O(N d).  Solutions are
mapped back to full feature space.

The solver is batched: it minimizes many independent problems at once,
one per (evaluation fold, label assignment) pair.  Parameters live in a
(folds, r + 1, assignments, classes) tensor so each fold's forward pass is
one matrix product covering every assignment.  Because the decision values
are linear in the parameters, a line-search trial at step t only needs the
current values Z, the directional values D of the gradient, and a
quadratic expansion of the penalty: loss(theta - t g) is evaluated from
Z - t D without touching the parameters.  Step sizes, Armijo tests, and
stopping are tracked per problem, and every problem's trajectory depends
only on its own slice of the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ProbeFailure

STD_FLOOR = 1e-8
ARMIJO_C1 = 1e-4
MAX_BACKTRACKS = 60
MAX_STEP = 1e6


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by the linear probe trainers.

    l2 is the logistic ridge weight; None resolves to 1/N at fit time so
    the penalty is per-sample normalized.  c weights the squared-hinge
    term of the SVM.  seed is reserved: both solvers are deterministic.
    """

    l2: float | None = None
    c: float = 1.0
    max_iterations: int = 200
    tol: float = 1e-4
    seed: int = 0

    def validate(self) -> None:
        if self.l2 is not None and not (self.l2 >= 0.0):
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")
        if not (self.c > 0.0):
            raise ConfigError(f"c must be > 0, got {self.c}")
        if self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not (self.tol > 0.0):
            raise ConfigError(f"tol must be > 0, got {self.tol}")


@dataclass(frozen=True)
class Scaler:
    """Per-feature z-scoring statistics with a floored std."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


def fit_scaler(X: np.ndarray) -> Scaler:
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    return Scaler(mean=mean, std=np.maximum(std, STD_FLOOR))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-stable softmax over the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def one_hot(y: np.ndarray, n_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    out = np.zeros(y.shape + (n_classes,), dtype=np.float64)
    np.put_along_axis(out, y[..., None], 1.0, axis=-1)
    return out


# ---------------------------------------------------------------------------
# Batched objective cores.
#
# Parameter layout: theta has shape (F, r + 1, P, K) for F folds, reduced
# feature dimension r, P label assignments, K classes.  Rows 0..r-1 hold
# each problem's transposed weights; row r holds the biases, realized as a
# constant ones column appended to the design so decision values are one
# matrix product per fold.  The problem grid is (F, P).  Decision values Z
# (and gradient directions D) have shape (F, N, P, K).
#
# The inner loop is memory-bound, so the cores keep preallocated
# workspaces, reduce over the small class axis with unrolled slice ops
# (axis reductions over a tiny trailing axis are far slower in numpy), and
# fold constant factors into stored matrices.


class _LinearCore:
    """Shared machinery: decision values, gradients, the penalty ray."""

    penalty_weight: float  # multiplies 0.5 * ||W||^2
    grad_scale: float  # constant multiplier folded into the gradient GEMM

    def __init__(self, X: np.ndarray):
        f, n, r = X.shape
        ones = np.ones((f, n, 1), dtype=np.float64)
        self.Xa = np.ascontiguousarray(np.concatenate([X, ones], axis=2))
        self.n = n
        self.r = r
        self._ws_key = None

    def _setup(self):
        # deferred: grad_scale is set by subclasses after super().__init__
        self.XaT = np.ascontiguousarray(np.swapaxes(self.Xa, 1, 2)) * self.grad_scale

    def _workspace(self, p: int, k: int):
        if self._ws_key != (p, k):
            f, n, s = self.Xa.shape
            self.buf1 = np.empty((f, n, p, k))  # trial values / exp scratch
            self.buf2 = np.empty((f, n, p, k))  # gradient residual scratch
            self.red1 = np.empty((f, n, p))
            self.red2 = np.empty((f, n, p))
            self.G = np.empty((f, s, p, k))  # parameter gradient
            self.Tmp = np.empty((f, s, p, k))  # parameter-shaped scratch
            self._ws_key = (p, k)

    def decision_values(self, theta: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        f, s, p, k = theta.shape
        target = out.reshape(f, self.n, p * k) if out is not None else None
        z = np.matmul(self.Xa, theta.reshape(f, s, p * k), out=target)
        return z.reshape(f, self.n, p, k)

    def _grad_from_resid(self, theta: np.ndarray, resid: np.ndarray) -> np.ndarray:
        """Parameter gradient given d(data term)/d(Z) / grad_scale in resid."""
        f, s, p, k = theta.shape
        np.matmul(self.XaT, resid.reshape(f, self.n, p * k),
                  out=self.G.reshape(f, s, p * k))
        gw, w = self.G[:, : s - 1], theta[:, : s - 1]
        if self.penalty_weight == 1.0:
            np.add(gw, w, out=gw)
        elif self.penalty_weight != 0.0:
            tw = self.Tmp[:, : s - 1]
            np.multiply(w, self.penalty_weight, out=tw)
            np.add(gw, tw, out=gw)
        return self.G

    def penalty_and_ray(self, theta: np.ndarray, grad: np.ndarray):
        """(0.5 cw ||W||^2, cw <W, gW>, cw ||gW||^2) per problem.

        Along theta - t * grad the penalty is the exact quadratic
        p0 - t p1 + 0.5 t^2 p2.
        """
        w = theta[:, :-1]
        gw = grad[:, :-1]
        cw = self.penalty_weight
        p0 = 0.5 * cw * np.einsum("frpk,frpk->fp", w, w)
        p1 = cw * np.einsum("frpk,frpk->fp", w, gw)
        p2 = cw * np.einsum("frpk,frpk->fp", gw, gw)
        return p0, p1, p2

    def _slice_max(self, a: np.ndarray, out: np.ndarray) -> np.ndarray:
        k = a.shape[-1]
        np.copyto(out, a[..., 0])
        for j in range(1, k):
            np.maximum(out, a[..., j], out=out)
        return out

    def _slice_sum(self, a: np.ndarray, out: np.ndarray) -> np.ndarray:
        k = a.shape[-1]
        np.copyto(out, a[..., 0])
        for j in range(1, k):
            np.add(out, a[..., j], out=out)
        return out


class _LogisticCore(_LinearCore):
    def __init__(self, X: np.ndarray, y_index: np.ndarray, l2: float):
        super().__init__(X)
        self.y_index = y_index  # (F, N, P, 1) int64 true-class positions
        self.penalty_weight = float(l2)
        self.grad_scale = 1.0 / self.n
        self._setup()

    def data_loss(self, Z: np.ndarray) -> np.ndarray:
        """Mean cross-entropy per problem; may overwrite the scratch Z."""
        k = Z.shape[-1]
        self._workspace(Z.shape[2], k)
        m, acc = self.red1, self.red2
        self._slice_max(Z, m)
        true_logit = np.take_along_axis(Z, self.y_index, axis=-1)[..., 0]
        e = self.buf1
        for j in range(k):
            np.subtract(Z[..., j], m, out=e[..., j])
        np.exp(e, out=e)
        self._slice_sum(e, acc)
        np.log(acc, out=acc)
        np.add(acc, m, out=acc)  # log-sum-exp
        np.subtract(acc, true_logit, out=acc)
        return acc.mean(axis=1)

    def grad(self, theta: np.ndarray, Z: np.ndarray) -> np.ndarray:
        k = Z.shape[-1]
        self._workspace(Z.shape[2], k)
        m, denom, e = self.red1, self.red2, self.buf2
        self._slice_max(Z, m)
        for j in range(k):
            np.subtract(Z[..., j], m, out=e[..., j])
        np.exp(e, out=e)
        self._slice_sum(e, denom)
        for j in range(k):
            np.divide(e[..., j], denom, out=e[..., j])  # softmax
        true_p = np.take_along_axis(e, self.y_index, axis=-1)
        np.put_along_axis(e, self.y_index, true_p - 1.0, axis=-1)
        return self._grad_from_resid(theta, e)


class _SquaredHingeCore(_LinearCore):
    def __init__(self, X: np.ndarray, S: np.ndarray, c: float):
        super().__init__(X)
        self.S = S  # (F, N, P, K) of +/-1
        self.c = float(c)
        self.penalty_weight = 1.0
        self.grad_scale = -2.0 * c / self.n
        self._setup()

    def _violations(self, Z: np.ndarray, out: np.ndarray) -> np.ndarray:
        np.multiply(self.S, Z, out=out)
        np.subtract(1.0, out, out=out)
        np.maximum(out, 0.0, out=out)
        return out

    def data_loss(self, Z: np.ndarray) -> np.ndarray:
        self._workspace(Z.shape[2], Z.shape[-1])
        viol = self._violations(Z, self.buf1)
        return (self.c / self.n) * np.einsum("fnpk,fnpk->fp", viol, viol)

    def grad(self, theta: np.ndarray, Z: np.ndarray) -> np.ndarray:
        self._workspace(Z.shape[2], Z.shape[-1])
        resid = self._violations(Z, self.buf2)
        np.multiply(resid, self.S, out=resid)  # -2c/n folded into XaT
        return self._grad_from_resid(theta, resid)


def _theta_from_wb(W: np.ndarray, b: np.ndarray) -> np.ndarray:
    k, r = W.shape
    theta = np.zeros((1, r + 1, 1, k), dtype=np.float64)
    theta[0, :r, 0, :] = W.T
    theta[0, r, 0, :] = b
    return theta


def _wb_from_theta(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r = theta.shape[1] - 1
    return theta[0, :r, 0, :].T.copy(), theta[0, r, 0, :].copy()


def _core_for(family: str, X: np.ndarray, y_grid: np.ndarray, n_classes: int, reg: float):
    """Build a solver core. X is (F, N, r); y_grid is (F, N, P) int labels."""
    if family == "logistic":
        return _LogisticCore(X, y_grid[..., None].astype(np.int64), reg)
    S = 2.0 * one_hot(y_grid, n_classes) - 1.0
    return _SquaredHingeCore(X, S, reg)


# Public single-problem objective wrappers (useful for finite-difference
# verification of the analytic gradients).


def _single_loss_grad(family, W, b, X, y, reg):
    X = np.asarray(X, dtype=np.float64)
    y_grid = np.asarray(y, dtype=np.int64)[None, :, None]
    core = _core_for(family, X[None], y_grid, W.shape[0], reg)
    theta = _theta_from_wb(np.asarray(W, float), np.asarray(b, float))
    Z = core.decision_values(theta)
    p0 = 0.5 * core.penalty_weight * float((W * W).sum())
    loss = float(core.data_loss(Z)[0, 0]) + p0
    gW, gb = _wb_from_theta(core.grad(theta, Z))
    return loss, gW, gb


def logistic_loss_grad(W, b, X, y, l2):
    """Loss and analytic gradients of the logistic objective at (W, b)."""
    return _single_loss_grad("logistic", W, b, X, y, l2)


def squared_hinge_loss_grad(W, b, X, y, c):
    """Loss and analytic gradients of the SVM objective at (W, b)."""
    return _single_loss_grad("svm", W, b, X, y, c)


# ---------------------------------------------------------------------------
# Batched deterministic minimizer.


def _minimize_batched(
    core, theta0: np.ndarray, tol: float, max_iterations: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient descent with per-problem Armijo backtracking.

    Returns (theta, iterations, converged) with bookkeeping on the (F, P)
    problem grid.  Every problem follows the trajectory it would follow
    alone: step sizes, acceptance tests, and freezes are per problem, so
    batch composition cannot change any individual result.
    """
    theta = np.array(theta0, dtype=np.float64, copy=True)
    f, s, p, k = theta.shape
    grid = (f, p)
    core._workspace(p, k)

    def expand(a):
        return a[:, None, :, None]

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        Z = core.decision_values(theta, out=np.empty((f, core.n, p, k)))
        data = core.data_loss(Z)
        w0 = theta[:, :-1]
        start = data + 0.5 * core.penalty_weight * np.einsum("frpk,frpk->fp", w0, w0)
        if not np.all(np.isfinite(start)):
            raise ProbeFailure("non-finite loss at the starting point")

        D = np.empty_like(Z)
        iterations = np.zeros(grid, dtype=np.int64)
        converged = np.zeros(grid, dtype=bool)
        active = np.ones(grid, dtype=bool)
        step = np.ones(grid, dtype=np.float64)

        while active.any():
            grad = core.grad(theta, Z)  # shared buffer, valid until next call
            gnorm_sq = np.einsum("fspk,fspk->fp", grad, grad)
            newly_done = active & (np.sqrt(gnorm_sq) <= tol)
            converged |= newly_done
            active &= ~newly_done
            if not active.any():
                break

            core.decision_values(grad, out=D)  # directional values
            p0, p1, p2 = core.penalty_and_ray(theta, grad)
            base = data + p0  # fresh penalty, no accumulation drift

            t = np.where(active, step, 0.0)
            t_acc = np.zeros(grid, dtype=np.float64)
            remaining = active.copy()
            for _ in range(MAX_BACKTRACKS):
                np.multiply(expand(t), D, out=core.buf1)
                np.subtract(Z, core.buf1, out=core.buf1)
                trial_data = core.data_loss(core.buf1)
                trial_loss = trial_data + p0 - t * p1 + 0.5 * t * t * p2
                ok = remaining & np.isfinite(trial_loss) & (
                    trial_loss <= base - ARMIJO_C1 * t * gnorm_sq
                )
                if ok.any():
                    t_acc = np.where(ok, t, t_acc)
                    data = np.where(ok, trial_data, data)
                    remaining &= ~ok
                if not remaining.any():
                    break
                t = np.where(remaining, t * 0.5, t)

            # Problems that exhausted the line search cannot make progress
            # at floating-point resolution; freeze them where they stand.
            active &= ~remaining
            accepted = t_acc > 0.0
            np.multiply(expand(t_acc), grad, out=core.Tmp)
            np.subtract(theta, core.Tmp, out=theta)
            np.multiply(expand(t_acc), D, out=core.buf1)
            np.subtract(Z, core.buf1, out=Z)
            iterations += accepted
            step = np.where(accepted, np.minimum(t_acc * 2.0, MAX_STEP), step)
            active &= iterations < max_iterations

    if not np.all(np.isfinite(theta)):
        raise ProbeFailure("training produced non-finite parameters")
    return theta, iterations, converged


# ---------------------------------------------------------------------------
# Span reduction for wide problems.


def _reduce_design(Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Express scaled training rows in an orthonormal basis of their span.

    Returns (X_reduced, basis) where basis is None when no reduction is
    applied (d <= N).  With Xs^T = Q R (economy), the reduced design
    Xs @ Q equals R^T, so no extra product is needed.
    """
    n, d = Xs.shape
    if d <= n:
        return Xs, None
    q, r = np.linalg.qr(Xs.T, mode="reduced")
    return r.T.copy(), q


def _initial_theta(family: str, y_grid: np.ndarray, r: int, n_classes: int) -> np.ndarray:
    f, n, p = y_grid.shape
    theta = np.zeros((f, r + 1, p, n_classes), dtype=np.float64)
    if family == "logistic":
        counts = one_hot(y_grid, n_classes).sum(axis=1)  # (F, P, K)
        theta[:, r] = np.log(counts / n)
    return theta


def _validate_training_inputs(X: np.ndarray, y: np.ndarray, n_classes: int | None):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DataError(f"bad training shapes X{X.shape} y{y.shape}")
    if X.shape[0] < 2:
        raise DataError("need at least 2 training rows")
    if not np.all(np.isfinite(X)):
        raise DataError("training features contain non-finite values")
    k = int(y.max()) + 1 if n_classes is None else int(n_classes)
    if k < 2:
        raise DataError("need at least 2 classes")
    if y.min() < 0 or y.max() >= k:
        raise DataError(f"labels outside [0, {k - 1}]")
    present = np.bincount(y, minlength=k)
    if np.any(present == 0):
        missing = [int(c) for c in np.nonzero(present == 0)[0]]
        raise DataError(f"every class must appear in y; missing {missing}")
    return X, y, k


# ---------------------------------------------------------------------------
# Public models.


@dataclass(frozen=True)
class LogisticModel:
    W: np.ndarray  # (K, d)
    b: np.ndarray  # (K,)
    scaler: Scaler
    l2: float
    config: TrainConfig
    iterations: int = 0
    converged: bool = True

    @property
    def n_classes(self) -> int:
        return int(self.W.shape[0])

    def to_json_dict(self) -> dict:
        return {
            "family": "logistic",
            "w": self.W.tolist(),
            "b": self.b.tolist(),
            "scaler_mean": self.scaler.mean.tolist(),
            "scaler_std": self.scaler.std.tolist(),
            "l2": self.l2,
            "max_iterations": self.config.max_iterations,
            "tol": self.config.tol,
            "iterations": self.iterations,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class LinearSvmModel:
    W: np.ndarray
    b: np.ndarray
    scaler: Scaler
    c: float
    config: TrainConfig
    iterations: int = 0
    converged: bool = True

    @property
    def n_classes(self) -> int:
        return int(self.W.shape[0])

    def to_json_dict(self) -> dict:
        return {
            "family": "linear_svm",
            "w": self.W.tolist(),
            "b": self.b.tolist(),
            "scaler_mean": self.scaler.mean.tolist(),
            "scaler_std": self.scaler.std.tolist(),
            "c": self.c,
            "max_iterations": self.config.max_iterations,
            "tol": self.config.tol,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def _train_linear(family: str, X, y, config: TrainConfig | None, n_classes=None):
    config = config or TrainConfig()
    config.validate()
    X, y, k = _validate_training_inputs(X, y, n_classes)
    n = X.shape[0]
    scaler = fit_scaler(X)
    Xr, basis = _reduce_design(scaler.apply(X))
    r = Xr.shape[1]
    y_grid = y[None, :, None]

    if family == "logistic":
        reg = (1.0 / n) if config.l2 is None else float(config.l2)
    else:
        reg = config.c
    core = _core_for(family, Xr[None], y_grid, k, reg)
    theta0 = _initial_theta(family, y_grid, r, k)
    theta, iters, conv = _minimize_batched(core, theta0, config.tol, config.max_iterations)
    Wr, b = _wb_from_theta(theta)
    W = Wr @ basis.T if basis is not None else Wr
    if family == "logistic":
        return LogisticModel(
            W=W, b=b, scaler=scaler, l2=reg, config=config,
            iterations=int(iters[0, 0]), converged=bool(conv[0, 0]),
        )
    return LinearSvmModel(
        W=W, b=b, scaler=scaler, c=reg, config=config,
        iterations=int(iters[0, 0]), converged=bool(conv[0, 0]),
    )


def train_logistic(X, y, config: TrainConfig | None = None, n_classes: int | None = None) -> LogisticModel:
    """Fit the softmax probe; see the module docstring for the objective."""
    return _train_linear("logistic", X, y, config, n_classes)


def train_linear_svm(X, y, config: TrainConfig | None = None, n_classes: int | None = None) -> LinearSvmModel:
    """Fit the one-vs-rest squared-hinge probe."""
    return _train_linear("svm", X, y, config, n_classes)


def linear_scores(model: LogisticModel | LinearSvmModel, X: np.ndarray) -> np.ndarray:
    """Per-class decision scores (logits / signed margins) for rows of X."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None]
    scores = model.scaler.apply(X) @ model.W.T + model.b
    return scores[0] if single else scores


def logistic_scores(model: LogisticModel, X: np.ndarray) -> np.ndarray:
    return linear_scores(model, X)


def logistic_probabilities(model: LogisticModel, X: np.ndarray) -> np.ndarray:
    return softmax(linear_scores(model, X))


def svm_scores(model: LinearSvmModel, X: np.ndarray) -> np.ndarray:
    return linear_scores(model, X)


# ---------------------------------------------------------------------------
# Stacked leave-one-out designs for repeated refits under relabelings.


@dataclass
class LinearFoldBank:
    """Per-fold scaled (and span-reduced) designs, stacked for batched fits.

    The feature side of every evaluation fold is fixed once; refitting under
    a new label vector only rebuilds the target tensors.  Scores for P label
    assignments come from one batched solve over F x P independent problems.
    Callers that need bit-identical results across runs must group label
    assignments into identical batches, because BLAS products over a batch
    depend on its width at floating-point resolution.
    """

    family: str
    config: TrainConfig
    n_classes: int
    Xr: np.ndarray  # (F, N, r)
    x_test: np.ndarray  # (F, r)
    train_row_index: np.ndarray  # (F, N) rows of the full set used per fold
    reg: float

    @classmethod
    def build(cls, family: str, config: TrainConfig | None, n_classes: int,
              fold_train_X: list[np.ndarray], fold_test_x: list[np.ndarray],
              train_row_index: np.ndarray) -> "LinearFoldBank":
        config = config or TrainConfig()
        config.validate()
        n = fold_train_X[0].shape[0]
        reduced = []
        tests = []
        for Xf, xt_full in zip(fold_train_X, fold_test_x):
            scaler = fit_scaler(Xf)
            Xr, basis = _reduce_design(scaler.apply(Xf))
            xt = scaler.apply(xt_full[None])[0]
            tests.append(basis.T @ xt if basis is not None else xt)
            reduced.append(Xr)
        if family == "logistic":
            reg = (1.0 / n) if config.l2 is None else float(config.l2)
        else:
            reg = config.c
        return cls(
            family=family, config=config, n_classes=n_classes,
            Xr=np.stack(reduced), x_test=np.stack(tests),
            train_row_index=np.asarray(train_row_index, dtype=np.int64),
            reg=reg,
        )

    def pooled_scores(self, y_batch: np.ndarray) -> np.ndarray:
        """Test-row scores for each label assignment.

        y_batch is (P, n_rows) full-set labels; fold f trains on the rows
        in train_row_index[f] and scores its held-out row.  Returns
        (P, F, K).
        """
        y_batch = np.asarray(y_batch, dtype=np.int64)
        k = self.n_classes
        n_folds, r = self.Xr.shape[0], self.Xr.shape[2]
        p = y_batch.shape[0]
        # (F, N, P): per-fold training labels for each assignment
        y_grid = np.ascontiguousarray(y_batch.T[self.train_row_index])
        core = _core_for(self.family, self.Xr, y_grid, k, self.reg)
        theta0 = _initial_theta(self.family, y_grid, r, k)
        theta, _, _ = _minimize_batched(
            core, theta0, self.config.tol, self.config.max_iterations
        )
        wt = theta[:, :r].reshape(n_folds, r, p * k)
        scores = np.matmul(self.x_test[:, None, :], wt).reshape(n_folds, p, k)
        scores += theta[:, r]
        return np.ascontiguousarray(scores.transpose(1, 0, 2))  # (P, F, K)
