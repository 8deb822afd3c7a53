"""Error classifiers and the evaluation protocol around them.

Standardize on the train split, fit a regularized logistic regression or a
fixed 512-512 MLP (Adam, 20 epochs, batch 32, no early stopping), threshold
the predicted error probability, and report per-class precision/recall/F1
averaged across seeds. Everything is deterministic given the seeds.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("expected a nonempty 2-d feature matrix")
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        return cls(mean=mean, std=std)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        scale = np.where(self.std > 0, 1.0 / np.where(self.std > 0, self.std, 1.0), 0.0)
        return (X - self.mean) * scale


def stratified_split(
    e: Sequence[int], ratio: float = 0.8, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded stratified train/test split; class proportions deviate <= 1.

    Both classes must be present (a single-class set cannot train an error
    detector).
    """
    e = np.asarray(e, dtype=int)
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    classes = np.unique(e)
    if len(classes) < 2:
        raise ValueError("both classes must be present to split")
    rng = np.random.default_rng(seed)
    train_parts: list[np.ndarray] = []
    test_parts: list[np.ndarray] = []
    for cls in classes:
        idx = np.where(e == cls)[0]
        rng.shuffle(idx)
        n_train = int(math.floor(len(idx) * ratio + 0.5))
        n_train = min(max(n_train, 0), len(idx))
        train_parts.append(idx[:n_train])
        test_parts.append(idx[n_train:])
    train = np.sort(np.concatenate(train_parts))
    test = np.sort(np.concatenate(test_parts))
    if len(test) == 0:
        raise ValueError("split produced an empty test set")
    return train, test


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class LogRegConfig:
    l2: float = 1.0
    max_iter: int = 2500
    tol: float = 1e-6


@dataclass
class LogRegModel:
    weights: np.ndarray
    bias: float
    config: LogRegConfig = field(default_factory=LogRegConfig)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        p = _sigmoid(np.asarray(X, dtype=float) @ self.weights + self.bias)
        return np.clip(p, 1e-12, 1.0 - 1e-12)


def fit_logreg(X: np.ndarray, e: Sequence[int], config: LogRegConfig | None = None) -> LogRegModel:
    """L2-regularized logistic regression via L-BFGS from a zero start.

    Deterministic given inputs; converges to gradient-norm tol or the
    iteration cap. The bias is unpenalized.
    """
    config = config or LogRegConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(e, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix contains non-finite values")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and labels are misaligned")
    sign = 2.0 * y - 1.0

    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        w, b = theta[:-1], theta[-1]
        z = X @ w + b
        loss = float(np.sum(np.logaddexp(0.0, -sign * z))) + 0.5 * config.l2 * float(w @ w)
        p = _sigmoid(z)
        residual = p - y
        grad = np.concatenate([X.T @ residual + config.l2 * w, [residual.sum()]])
        return loss, grad

    result = minimize(
        objective,
        x0=np.zeros(X.shape[1] + 1),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": config.max_iter, "gtol": config.tol, "ftol": 1e-14},
    )
    theta = result.x
    if not np.all(np.isfinite(theta)):
        raise ValueError("logistic regression diverged to non-finite parameters")
    return LogRegModel(weights=theta[:-1], bias=float(theta[-1]), config=config)


@dataclass(frozen=True)
class MlpConfig:
    hidden_sizes: tuple[int, int] = (512, 512)
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if len(self.hidden_sizes) != 2:
            raise ValueError("architecture is fixed to three fully connected layers")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class MlpModel:
    params: list[np.ndarray]
    config: MlpConfig
    seed: int
    epochs_run: int = 0
    steps_run: int = 0
    history: list[dict[str, float]] = field(default_factory=list)

    def _forward(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        W1, b1, W2, b2, W3, b3 = self.params
        h1 = np.maximum(X @ W1 + b1, 0.0)
        h2 = np.maximum(h1 @ W2 + b2, 0.0)
        z = (h2 @ W3 + b3).ravel()
        return h1, h2, z

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        _, _, z = self._forward(np.asarray(X, dtype=float))
        return np.clip(_sigmoid(z), 1e-12, 1.0 - 1e-12)


def _init_mlp_params(d: int, config: MlpConfig, rng: np.random.Generator) -> list[np.ndarray]:
    h1, h2 = config.hidden_sizes
    W1 = rng.normal(0.0, math.sqrt(2.0 / d), size=(d, h1))
    W2 = rng.normal(0.0, math.sqrt(2.0 / h1), size=(h1, h2))
    W3 = rng.normal(0.0, math.sqrt(1.0 / h2), size=(h2, 1))
    return [W1, np.zeros(h1), W2, np.zeros(h2), W3, np.zeros(1)]


def fit_mlp(
    X: np.ndarray, e: Sequence[int], config: MlpConfig | None = None, seed: int = 0
) -> MlpModel:
    """Train the fixed three-layer MLP with Adam; no early stopping.

    Runs exactly config.epochs epochs of seeded shuffled mini-batches and
    records train loss/accuracy per epoch; evaluation happens only after
    training completes.
    """
    config = config or MlpConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(e, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix contains non-finite values")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and labels are misaligned")
    n, d = X.shape
    rng = np.random.default_rng(seed)
    model = MlpModel(params=_init_mlp_params(d, config, rng), config=config, seed=seed)

    m_state = [np.zeros_like(p) for p in model.params]
    v_state = [np.zeros_like(p) for p in model.params]
    step = 0
    sign = 2.0 * y - 1.0

    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            Xb, yb = X[batch], y[batch]
            W1, b1, W2, b2, W3, b3 = model.params
            h1_pre = Xb @ W1 + b1
            h1 = np.maximum(h1_pre, 0.0)
            h2_pre = h1 @ W2 + b2
            h2 = np.maximum(h2_pre, 0.0)
            z = (h2 @ W3 + b3).ravel()
            p = _sigmoid(z)
            dz = (p - yb)[:, None] / len(batch)
            gW3 = h2.T @ dz
            gb3 = dz.sum(axis=0)
            dh2 = (dz @ W3.T) * (h2_pre > 0)
            gW2 = h1.T @ dh2
            gb2 = dh2.sum(axis=0)
            dh1 = (dh2 @ W2.T) * (h1_pre > 0)
            gW1 = Xb.T @ dh1
            gb1 = dh1.sum(axis=0)
            grads = [gW1, gb1, gW2, gb2, gW3, gb3]
            step += 1
            for k, grad in enumerate(grads):
                m_state[k] = config.beta1 * m_state[k] + (1 - config.beta1) * grad
                v_state[k] = config.beta2 * v_state[k] + (1 - config.beta2) * grad * grad
                m_hat = m_state[k] / (1 - config.beta1**step)
                v_hat = v_state[k] / (1 - config.beta2**step)
                model.params[k] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        _, _, z_all = model._forward(X)
        loss = float(np.mean(np.logaddexp(0.0, -sign * z_all)))
        acc = float(np.mean((z_all >= 0).astype(float) == y))
        model.history.append({"loss": loss, "accuracy": acc})
        model.epochs_run += 1
    model.steps_run = step
    return model


def predict_proba(model: LogRegModel | MlpModel, X: np.ndarray) -> np.ndarray:
    return model.predict_proba(X)


def decide(p: np.ndarray, tau: float = 0.5) -> np.ndarray:
    """Threshold probabilities into labels: 1 iff p >= tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {tau}")
    return (np.asarray(p, dtype=float) >= tau).astype(int)


@dataclass(frozen=True)
class EvalReport:
    """Per-class metrics (percent scale); mean across seeds when several ran."""

    accuracy: float
    error_precision: float
    error_recall: float
    error_f1: float
    ok_precision: float
    ok_recall: float
    ok_f1: float
    seeds: tuple[int, ...] = ()
    per_seed: tuple["EvalReport", ...] = ()

    def to_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "error_precision": self.error_precision,
            "error_recall": self.error_recall,
            "error_f1": self.error_f1,
            "ok_precision": self.ok_precision,
            "ok_recall": self.ok_recall,
            "ok_f1": self.ok_f1,
            "seeds": list(self.seeds),
        }
        if self.per_seed:
            out["per_seed"] = [rep.to_dict() for rep in self.per_seed]
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        return cls(
            accuracy=float(obj["accuracy"]),
            error_precision=float(obj["error_precision"]),
            error_recall=float(obj["error_recall"]),
            error_f1=float(obj["error_f1"]),
            ok_precision=float(obj["ok_precision"]),
            ok_recall=float(obj["ok_recall"]),
            ok_f1=float(obj["ok_f1"]),
            seeds=tuple(obj.get("seeds", ())),
            per_seed=tuple(cls.from_dict(o) for o in obj.get("per_seed", ())),
        )


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    # Degenerate denominators yield 0, matching the zero-F1 convention.
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return 100.0 * precision, 100.0 * recall, 100.0 * f1


def evaluate(preds: Sequence[int], e: Sequence[int]) -> EvalReport:
    """Per-class precision/recall/F1 with the error class (e=1) as positive."""
    preds = np.asarray(preds, dtype=int)
    e = np.asarray(e, dtype=int)
    if preds.shape != e.shape:
        raise ValueError("predictions and labels are misaligned")
    if len(e) == 0:
        raise ValueError("cannot evaluate on an empty set")
    tp = int(np.sum((preds == 1) & (e == 1)))
    fp = int(np.sum((preds == 1) & (e == 0)))
    fn = int(np.sum((preds == 0) & (e == 1)))
    tn = int(np.sum((preds == 0) & (e == 0)))
    err_p, err_r, err_f1 = _prf(tp, fp, fn)
    ok_p, ok_r, ok_f1 = _prf(tn, fn, fp)
    accuracy = 100.0 * (tp + tn) / len(e)
    return EvalReport(
        accuracy=accuracy,
        error_precision=err_p,
        error_recall=err_r,
        error_f1=err_f1,
        ok_precision=ok_p,
        ok_recall=ok_r,
        ok_f1=ok_f1,
    )


def _mean_report(reports: Sequence[EvalReport], seeds: Sequence[int]) -> EvalReport:
    def mean(attr: str) -> float:
        return float(np.mean([getattr(rep, attr) for rep in reports]))

    return EvalReport(
        accuracy=mean("accuracy"),
        error_precision=mean("error_precision"),
        error_recall=mean("error_recall"),
        error_f1=mean("error_f1"),
        ok_precision=mean("ok_precision"),
        ok_recall=mean("ok_recall"),
        ok_f1=mean("ok_f1"),
        seeds=tuple(seeds),
        per_seed=tuple(reports),
    )


def run_protocol(
    X: np.ndarray,
    e: Sequence[int],
    model_kind: str = "logreg",
    seeds: Sequence[int] = (0, 1, 2),
    ratio: float = 0.8,
    tau: float = 0.5,
    logreg_config: LogRegConfig | None = None,
    mlp_config: MlpConfig | None = None,
) -> EvalReport:
    """Refit per seed (fresh split, standardizer, and init) and average."""
    if model_kind not in ("logreg", "mlp"):
        raise ValueError(f"unknown model kind {model_kind!r}")
    X = np.asarray(X, dtype=float)
    e = np.asarray(e, dtype=int)
    reports = []
    for seed in seeds:
        train_idx, test_idx = stratified_split(e, ratio=ratio, seed=seed)
        standardizer = Standardizer.fit(X[train_idx])
        X_train = standardizer.transform(X[train_idx])
        X_test = standardizer.transform(X[test_idx])
        if model_kind == "logreg":
            model: LogRegModel | MlpModel = fit_logreg(X_train, e[train_idx], logreg_config)
        else:
            model = fit_mlp(X_train, e[train_idx], mlp_config, seed=seed)
        preds = decide(model.predict_proba(X_test), tau)
        reports.append(evaluate(preds, e[test_idx]))
    return _mean_report(reports, seeds)


def fit_single(
    X: np.ndarray,
    e: Sequence[int],
    model_kind: str,
    seed: int,
    ratio: float = 0.8,
    tau: float = 0.5,
    logreg_config: LogRegConfig | None = None,
    mlp_config: MlpConfig | None = None,
) -> tuple[LogRegModel | MlpModel, Standardizer, EvalReport]:
    """One seed's split/standardize/fit/evaluate; returns the fitted pieces."""
    X = np.asarray(X, dtype=float)
    e = np.asarray(e, dtype=int)
    train_idx, test_idx = stratified_split(e, ratio=ratio, seed=seed)
    standardizer = Standardizer.fit(X[train_idx])
    if model_kind == "logreg":
        model: LogRegModel | MlpModel = fit_logreg(
            standardizer.transform(X[train_idx]), e[train_idx], logreg_config
        )
    elif model_kind == "mlp":
        model = fit_mlp(standardizer.transform(X[train_idx]), e[train_idx], mlp_config, seed=seed)
    else:
        raise ValueError(f"unknown model kind {model_kind!r}")
    preds = decide(model.predict_proba(standardizer.transform(X[test_idx])), tau)
    return model, standardizer, evaluate(preds, e[test_idx])


def manifest_hash(names: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(names).encode("utf-8")).hexdigest()


def save_artifact(
    path: str | Path,
    model: LogRegModel | MlpModel,
    standardizer: Standardizer,
    feature_names: Sequence[str],
    tau: float = 0.5,
) -> None:
    """Persist a trained model, its standardizer, and the manifest hash."""
    if isinstance(model, LogRegModel):
        payload_model = {
            "kind": "logreg",
            "weights": model.weights.tolist(),
            "bias": model.bias,
            "l2": model.config.l2,
        }
    elif isinstance(model, MlpModel):
        payload_model = {
            "kind": "mlp",
            "params": [p.tolist() for p in model.params],
            "seed": model.seed,
            "epochs_run": model.epochs_run,
        }
    else:
        raise ValueError(f"cannot serialize model of type {type(model).__name__}")
    payload = {
        "model": payload_model,
        "standardizer": {"mean": standardizer.mean.tolist(), "std": standardizer.std.tolist()},
        "manifest_hash": manifest_hash(feature_names),
        "tau": tau,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload), encoding="utf-8")


@dataclass(frozen=True)
class ModelArtifact:
    model: LogRegModel | MlpModel
    standardizer: Standardizer
    manifest_hash: str
    tau: float


def load_artifact(path: str | Path) -> ModelArtifact:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    spec = payload["model"]
    if spec["kind"] == "logreg":
        model: LogRegModel | MlpModel = LogRegModel(
            weights=np.asarray(spec["weights"], dtype=float),
            bias=float(spec["bias"]),
            config=LogRegConfig(l2=float(spec.get("l2", 1.0))),
        )
    elif spec["kind"] == "mlp":
        model = MlpModel(
            params=[np.asarray(p, dtype=float) for p in spec["params"]],
            config=MlpConfig(),
            seed=int(spec.get("seed", 0)),
            epochs_run=int(spec.get("epochs_run", 0)),
        )
    else:
        raise ValueError(f"unknown model kind {spec['kind']!r} in artifact")
    return ModelArtifact(
        model=model,
        standardizer=Standardizer(
            mean=np.asarray(payload["standardizer"]["mean"], dtype=float),
            std=np.asarray(payload["standardizer"]["std"], dtype=float),
        ),
        manifest_hash=str(payload["manifest_hash"]),
        tau=float(payload["tau"]),
    )


def score_with_artifact(
    artifact: ModelArtifact, feature_names: Sequence[str], X: np.ndarray
) -> np.ndarray:
    """Score a feature matrix, refusing on manifest hash mismatch."""
    found = manifest_hash(feature_names)
    if found != artifact.manifest_hash:
        raise ValueError(
            "feature manifest hash mismatch: artifact was trained on "
            f"{artifact.manifest_hash[:12]}..., got {found[:12]}..."
        )
    return artifact.model.predict_proba(artifact.standardizer.transform(X))
