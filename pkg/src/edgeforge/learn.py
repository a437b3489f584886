"""Streaming standardization and incremental one-vs-rest linear models.

Four model kinds share one weight layout (a C x D matrix plus per-class
bias) and differ only in their per-sample update rule: fixed-rate logistic
SGD with L2 shrinkage, the classic perceptron mistake rule, and the two
passive-aggressive variants (hinge with a hard aggressiveness cap, squared
hinge with a soft one). Updates touch state only for classes whose loss is
active, so a sample with margin >= 1 everywhere leaves the model state
bitwise unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .imaging import resize, to_grayscale, validate_image

MODEL_KINDS = ("sgd_logistic", "perceptron", "pa_hinge", "pa_squared_hinge")


class NotFittedError(RuntimeError):
    """Transform or predict was called before any data was seen."""


@dataclass(frozen=True)
class LearnerParams:
    eta0: float = 0.01
    alpha: float = 1e-4
    c_agg: float = 1.0

    def __post_init__(self) -> None:
        if self.eta0 <= 0:
            raise ValueError("eta0 must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.c_agg <= 0:
            raise ValueError("c_agg must be > 0")


def _as_batch(X: np.ndarray, dim: int) -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected shape (n, {dim}), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("batch contains non-finite values")
    return arr


class StreamingScaler:
    """Running per-feature mean/variance with a parallel-merge update.

    Population variance (m2 / count) is used; zero-variance features
    transform to 0.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim, dtype=np.float64)
        self.m2 = np.zeros(dim, dtype=np.float64)

    def update(self, X: np.ndarray) -> None:
        X = _as_batch(X, self.dim)
        n = X.shape[0]
        if n == 0:
            return
        batch_mean = X.mean(axis=0)
        batch_m2 = ((X - batch_mean) ** 2).sum(axis=0)
        if self.count == 0:
            self.count = n
            self.mean = batch_mean
            self.m2 = batch_m2
            return
        total = self.count + n
        delta = batch_mean - self.mean
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + batch_m2 + delta * delta * (self.count * n / total)
        self.count = total

    def variance(self) -> np.ndarray:
        if self.count == 0:
            raise NotFittedError("scaler has seen no data")
        return self.m2 / self.count

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.count == 0:
            raise NotFittedError("scaler has seen no data")
        single = np.asarray(X).ndim == 1
        X = _as_batch(X, self.dim)
        sigma = np.sqrt(self.variance())
        safe = np.where(sigma > 0.0, sigma, 1.0)
        out = np.where(sigma > 0.0, (X - self.mean) / safe, 0.0)
        return out[0] if single else out


class LinearModel:
    """One-vs-rest linear classifier trained one sample at a time."""

    def __init__(self, kind: str, num_classes: int, dim: int,
                 params: LearnerParams = LearnerParams()):
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        if num_classes < 2:
            raise ValueError("need at least two classes")
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.kind = kind
        self.num_classes = num_classes
        self.dim = dim
        self.params = params
        self.weights = np.zeros((num_classes, dim), dtype=np.float64)
        self.bias = np.zeros(num_classes, dtype=np.float64)
        self.steps = 0

    def _fit_one(self, x: np.ndarray, label: int) -> None:
        scores = self.weights @ x + self.bias
        ysign = np.full(self.num_classes, -1.0)
        ysign[label] = 1.0
        z = ysign * scores
        p = self.params

        if self.kind == "sgd_logistic":
            # d/ds log(1 + exp(-y s)) = y (sigmoid(y s) - 1); L2 shrinks
            # weights only, never the bias.
            g = (expit(z) - 1.0) * ysign
            self.weights *= 1.0 - p.eta0 * p.alpha
            self.weights -= p.eta0 * g[:, np.newaxis] * x[np.newaxis, :]
            self.bias -= p.eta0 * g
            self.steps += 1
        elif self.kind == "perceptron":
            wrong = z <= 0.0
            if wrong.any():
                self.weights[wrong] += ysign[wrong, np.newaxis] * x[np.newaxis, :]
                self.bias[wrong] += ysign[wrong]
                self.steps += 1
        else:
            loss = np.maximum(0.0, 1.0 - z)
            active = loss > 0.0
            # A sample with margin >= 1 for every class must not touch any
            # state, counters included.
            if active.any():
                sqn = float(x @ x)
                if self.kind == "pa_hinge":
                    if sqn > 0.0:
                        tau = np.minimum(p.c_agg, loss[active] / sqn)
                    else:
                        tau = np.full(int(active.sum()), p.c_agg)
                else:
                    tau = loss[active] / (sqn + 1.0 / (2.0 * p.c_agg))
                step = tau * ysign[active]
                self.weights[active] += step[:, np.newaxis] * x[np.newaxis, :]
                self.bias[active] += step
                self.steps += 1

    def partial_fit(self, X: np.ndarray, y: np.ndarray) -> "LinearModel":
        X = _as_batch(X, self.dim)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError(f"labels shape {y.shape} does not match batch")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError("labels out of range")
        for i in range(X.shape[0]):
            self._fit_one(X[i], int(y[i]))
        return self

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        if self.steps == 0:
            raise NotFittedError("model has seen no data")
        single = np.asarray(X).ndim == 1
        X = _as_batch(X, self.dim)
        scores = X @ self.weights.T + self.bias
        return scores[0] if single else scores

    def predict(self, X: np.ndarray) -> np.ndarray | int:
        scores = self.decision_scores(X)
        if scores.ndim == 1:
            return int(np.argmax(scores))
        return np.argmax(scores, axis=1)


def extract_features(img: np.ndarray, side: int) -> np.ndarray:
    """Grayscale, resize to side x side, flatten to float64."""
    if side < 1:
        raise ValueError("side must be >= 1")
    img = validate_image(img)
    gray = to_grayscale(img)
    return resize(gray, side, side).astype(np.float64).ravel()


def save_checkpoint(path: str | Path, model: LinearModel,
                    scaler: StreamingScaler) -> None:
    """Persist model + scaler; reload reproduces scores bit for bit."""
    if scaler.dim != model.dim:
        raise ValueError("scaler and model dims differ")
    meta = {
        "format": 1,
        "kind": model.kind,
        "num_classes": model.num_classes,
        "dim": model.dim,
        "steps": model.steps,
        "eta0": model.params.eta0,
        "alpha": model.params.alpha,
        "c_agg": model.params.c_agg,
        "scaler_count": scaler.count,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode("utf-8"),
                                      dtype=np.uint8),
             weights=model.weights, bias=model.bias,
             scaler_mean=scaler.mean, scaler_m2=scaler.m2)


def load_checkpoint(path: str | Path) -> tuple[LinearModel, StreamingScaler]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("format") != 1:
            raise ValueError(f"unsupported checkpoint format in {path}")
        params = LearnerParams(eta0=meta["eta0"], alpha=meta["alpha"],
                               c_agg=meta["c_agg"])
        model = LinearModel(meta["kind"], meta["num_classes"], meta["dim"],
                            params)
        model.weights = data["weights"].astype(np.float64)
        model.bias = data["bias"].astype(np.float64)
        model.steps = int(meta["steps"])
        scaler = StreamingScaler(meta["dim"])
        scaler.count = int(meta["scaler_count"])
        scaler.mean = data["scaler_mean"].astype(np.float64)
        scaler.m2 = data["scaler_m2"].astype(np.float64)
    return model, scaler
