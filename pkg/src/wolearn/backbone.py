"""Small fully-connected networks with hand-written reverse-mode gradients.

Supports weighted regression (squared error) and binary classification
(logistic loss) on flat feature vectors. Sample weights may be negative:
the objective is (1/sum_i w_i) * sum_i w_i * loss_i, normalized once over
the full training set so per-batch gradients stay stable. All randomness
flows from a single seed, so fits are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ParameterError


@dataclass(frozen=True)
class Hyperparameters:
    """Training settings; optimization is Adam with the usual moment decays."""

    hidden: tuple = (20,)
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("learning_rate, epochs, batch_size must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


def _init_params(layer_dims, rng):
    params = []
    for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_in, d_out))
        params.append((w, np.zeros(d_out)))
    return params


def _forward(params, x, dropout=0.0, rng=None):
    """Returns (output (n,), per-layer activations for backprop). With
    dropout > 0 hidden units are dropped (inverted scaling) and the kept
    masks are returned alongside the activations."""
    acts = [x]
    masks = [None]
    h = x
    for i, (w, b) in enumerate(params):
        z = h @ w + b
        if i < len(params) - 1:
            h = np.maximum(z, 0.0)
            if dropout > 0.0:
                keep = (rng.uniform(size=h.shape) >= dropout) / (1.0 - dropout)
                h = h * keep
                masks.append(keep)
            else:
                masks.append(None)
        else:
            h = z
            masks.append(None)
        acts.append(h)
    return h[:, 0], (acts, masks)


def _backward(params, cache, dout):
    """dout: gradient of the objective w.r.t. the linear output, shape (n,).
    Returns per-layer (dW, db) matching params."""
    acts, masks = cache
    grads = [None] * len(params)
    delta = dout[:, None]
    for i in range(len(params) - 1, -1, -1):
        w, _ = params[i]
        h_in = acts[i]
        grads[i] = (h_in.T @ delta, delta.sum(axis=0))
        if i > 0:
            # (acts > 0) covers the ReLU gate; the mask re-applies the
            # inverted-dropout keep/scale factor where one was used.
            delta = (delta @ w.T) * (acts[i] > 0.0)
            if masks[i] is not None:
                delta = delta * masks[i]
    return grads


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


@dataclass
class _Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x):
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale = np.where(scale < 1e-12, 1.0, scale)
        return cls(mean, scale)

    def apply(self, x):
        return (x - self.mean) / self.scale


class Network:
    """A trained network; `task` is "regression" or "classification"."""

    def __init__(self, params, x_std, task, y_mean=0.0, y_scale=1.0):
        self.params = params
        self.x_std = x_std
        self.task = task
        self.y_mean = y_mean
        self.y_scale = y_scale

    def predict(self, x):
        """Regression: predicted value. Classification: P(label = 1)."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        out, _ = _forward(self.params, self.x_std.apply(x))
        if self.task == "regression":
            out = out * self.y_scale + self.y_mean
        else:
            out = _sigmoid(out)
        return out[0] if squeeze else out

    def save(self, path):
        arrays = {"task": np.array(self.task)}
        arrays["x_mean"], arrays["x_scale"] = self.x_std.mean, self.x_std.scale
        arrays["y_mean"], arrays["y_scale"] = np.array(self.y_mean), np.array(self.y_scale)
        for i, (w, b) in enumerate(self.params):
            arrays[f"w{i}"], arrays[f"b{i}"] = w, b
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            n_layers = sum(1 for k in z.files if k.startswith("w"))
            params = [(z[f"w{i}"], z[f"b{i}"]) for i in range(n_layers)]
            return cls(
                params,
                _Standardizer(z["x_mean"], z["x_scale"]),
                str(z["task"]),
                float(z["y_mean"]),
                float(z["y_scale"]),
            )


def _loss_grad(task, pred, target):
    """Per-sample (loss, dloss/dlinear-output)."""
    if task == "regression":
        r = pred - target
        return r * r, 2.0 * r
    p = _sigmoid(pred)
    eps = 1e-12
    loss = -(target * np.log(p + eps) + (1.0 - target) * np.log(1.0 - p + eps))
    return loss, p - target


def _fit(x, y, weights, hp: Hyperparameters, task: str):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ParameterError("x must be (n, d) and y (n,)")
    n = x.shape[0]
    if weights is None:
        w_norm = np.ones(n)
        abs_w = np.ones(n)
    else:
        weights = np.asarray(weights, dtype=float)
        abs_w = np.abs(weights)
        total = weights.sum()
        if abs_w.sum() < 1e-12:
            raise ParameterError("sample weights are all ~0; objective is undefined")
        # With signed weights the net sum can cancel toward zero; normalize
        # by the absolute mass instead so gradient scale stays bounded.
        if total < 0.01 * abs_w.sum():
            total = abs_w.sum()
        w_norm = weights * (n / total)

    x_std = _Standardizer.fit(x)
    xs = x_std.apply(x)
    if task == "regression":
        # Weight-aware target scaling: with signed weights, a handful of
        # huge targets on near-zero-weight rows must not set the scale.
        y_mean = float(np.sum(abs_w * y) / abs_w.sum())
        y_scale = float(np.sqrt(np.sum(abs_w * (y - y_mean) ** 2) / abs_w.sum()))
        if y_scale < 1e-12:
            y_scale = 1.0
        ys = (y - y_mean) / y_scale
    else:
        y_mean, y_scale = 0.0, 1.0
        ys = y

    rng = np.random.default_rng(np.random.SeedSequence((hp.seed, 0xB0)))
    params = _init_params([x.shape[1], *hp.hidden, 1], rng)
    m1 = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
    m2 = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]

    step = 0
    for _ in range(hp.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, hp.batch_size):
            idx = order[lo : lo + hp.batch_size]
            pred, cache = _forward(params, xs[idx], dropout=hp.dropout, rng=rng)
            _, dpred = _loss_grad(task, pred, ys[idx])
            grads = _backward(params, cache, dpred * w_norm[idx] / len(idx))
            step += 1
            params, m1, m2 = _adam_step(params, grads, m1, m2, hp, step)

    return Network(params, x_std, task, y_mean, y_scale)


def _adam_step(params, grads, m1, m2, hp, step):
    corr1 = 1.0 - hp.beta1**step
    corr2 = 1.0 - hp.beta2**step
    for i, ((w, b), (gw, gb)) in enumerate(zip(params, grads)):
        m1w = hp.beta1 * m1[i][0] + (1 - hp.beta1) * gw
        m1b = hp.beta1 * m1[i][1] + (1 - hp.beta1) * gb
        m2w = hp.beta2 * m2[i][0] + (1 - hp.beta2) * gw**2
        m2b = hp.beta2 * m2[i][1] + (1 - hp.beta2) * gb**2
        m1[i], m2[i] = (m1w, m1b), (m2w, m2b)
        params[i] = (
            w - hp.learning_rate * (m1w / corr1) / (np.sqrt(m2w / corr2) + hp.adam_eps),
            b - hp.learning_rate * (m1b / corr1) / (np.sqrt(m2b / corr2) + hp.adam_eps),
        )
    return params, m1, m2


def fit_regressor(x, y, weights=None, hp: Hyperparameters = Hyperparameters()) -> Network:
    return _fit(x, y, weights, hp, "regression")


def fit_weighted_quadratic(x, weights, linear, hp: Hyperparameters = Hyperparameters()) -> Network:
    """Minimize (1/sum_i w_i) sum_i [w_i g(x_i)^2 - 2 q_i g(x_i)].

    This is weighted least squares with weights w and implied targets q / w,
    but the targets are never formed: when w_i is near zero with q_i
    moderate, the ratio explodes while the quadratic coefficients stay
    bounded, so optimizing the product form directly is numerically stable.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(weights, dtype=float)
    q = np.asarray(linear, dtype=float)
    if x.ndim != 2 or w.shape != (x.shape[0],) or q.shape != w.shape:
        raise ParameterError("x must be (n, d); weights and linear must be (n,)")
    n = x.shape[0]
    abs_w = np.abs(w)
    if abs_w.sum() < 1e-12:
        raise ParameterError("sample weights are all ~0; objective is undefined")
    total = w.sum()
    if total < 0.01 * abs_w.sum():
        total = abs_w.sum()

    # Center at the weighted level and scale by the weighted mean absolute
    # deviation, both robust to individual near-zero weights.
    m = float(q.sum() / total)
    q_c = q - m * w
    s = float(np.abs(q_c).sum() / abs_w.sum())
    if s < 1e-12:
        s = 1.0

    x_std = _Standardizer.fit(x)
    xs = x_std.apply(x)
    w_norm = w * (n / total)
    q_norm = (q_c / s) * (n / total)

    rng = np.random.default_rng(np.random.SeedSequence((hp.seed, 0xB0)))
    params = _init_params([x.shape[1], *hp.hidden, 1], rng)
    m1 = [(np.zeros_like(wm), np.zeros_like(b)) for wm, b in params]
    m2 = [(np.zeros_like(wm), np.zeros_like(b)) for wm, b in params]
    step = 0
    for _ in range(hp.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, hp.batch_size):
            idx = order[lo : lo + hp.batch_size]
            pred, cache = _forward(params, xs[idx], dropout=hp.dropout, rng=rng)
            dpred = 2.0 * (w_norm[idx] * pred - q_norm[idx]) / len(idx)
            grads = _backward(params, cache, dpred)
            step += 1
            params, m1, m2 = _adam_step(params, grads, m1, m2, hp, step)
    return Network(params, x_std, "regression", m, s)


def fit_classifier(x, y, hp: Hyperparameters = Hyperparameters()) -> Network:
    y = np.asarray(y, dtype=float)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ParameterError("classification labels must be binary")
    return _fit(x, y, None, hp, "classification")


def _objective(params, x, y, w, task):
    pred, _ = _forward(params, x)
    loss, _ = _loss_grad(task, pred, y)
    return float(np.sum(w * loss) / len(y))


def gradient_check(seed: int = 0, task: str = "regression", eps: float = 1e-6) -> float:
    """Max relative error between backprop and central finite differences on
    a small random problem; validates the hand-written gradients."""
    rng = np.random.default_rng(seed)
    n, d = 12, 4
    x = rng.normal(size=(n, d))
    if task == "regression":
        y = rng.normal(size=n)
        w = rng.normal(size=n)  # exercise negative weights
    else:
        y = (rng.uniform(size=n) < 0.5).astype(float)
        w = np.ones(n)
    params = _init_params([d, 5, 3, 1], rng)

    pred, cache = _forward(params, x)
    _, dpred = _loss_grad(task, pred, y)
    grads = _backward(params, cache, dpred * w / n)

    worst = 0.0
    for i, (wmat, b) in enumerate(params):
        for arr, garr, which in ((wmat, grads[i][0], 0), (b, grads[i][1], 1)):
            flat = arr.ravel()
            gflat = np.asarray(garr, dtype=float).ravel()
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + eps
                up = _objective(params, x, y, w, task)
                flat[k] = orig - eps
                down = _objective(params, x, y, w, task)
                flat[k] = orig
                fd = (up - down) / (2.0 * eps)
                denom = max(abs(fd), abs(gflat[k]), 1e-8)
                worst = max(worst, abs(fd - gflat[k]) / denom)
    return worst
