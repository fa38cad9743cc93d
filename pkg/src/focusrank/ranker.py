"""Attention-based co-change ranker with hand-derived gradients.

The network scores an (anchor, candidate) embedding pair: the two vectors
form a two-token sequence, pass through one self-attention layer (learned
Q/K/V projections, scaled dot-product), are mean-pooled, and a linear head
emits a single logit. Training minimizes a focal-style reshaping of
BCE-with-logits under Adam. All gradients are computed analytically; there
is no autograd dependency.
"""

from __future__ import annotations

import base64
import copy
import json
import math
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Optional, Sequence

import numpy as np

from .errors import CheckpointFormatError, DimensionMismatchError, EmptyDatasetError

CHECKPOINT_FORMAT = "focusrank-checkpoint"
CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def sigmoid(z):
    """Numerically stable logistic function; scalar in, scalar out."""
    arr = np.asarray(z, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ez = np.exp(arr[~pos])
    out[~pos] = ez / (1.0 + ez)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class LossConfig:
    """Factors of the reshaped BCE loss.

    alpha weighs the positive class, beta sharpens the down-weighting of
    easy examples, lambda_penalty scales the extra cost of high-probability
    negatives.
    """

    alpha: float = 0.5
    beta: float = 2.0
    lambda_penalty: float = 4.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if self.beta < 0.0:
            raise ValueError("beta must be >= 0")
        if self.lambda_penalty < 0.0:
            raise ValueError("lambda_penalty must be >= 0")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "lambda_penalty": self.lambda_penalty}

    @staticmethod
    def from_dict(record: dict) -> "LossConfig":
        return LossConfig(**record)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 64
    epochs: int = 200
    seed: int = 7
    early_stop_patience: int = 10
    loss: LossConfig = field(default_factory=LossConfig)
    h: int = 64
    init_scale: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.h <= 0:
            raise ValueError("learning_rate, batch_size and h must be positive")
        if self.epochs < 0 or self.early_stop_patience < 0:
            raise ValueError("epochs and early_stop_patience must be >= 0")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "early_stop_patience": self.early_stop_patience,
            "loss": self.loss.to_dict(),
            "h": self.h,
            "init_scale": self.init_scale,
        }

    @staticmethod
    def from_dict(record: dict) -> "TrainConfig":
        record = dict(record)
        record["loss"] = LossConfig.from_dict(record["loss"])
        return TrainConfig(**record)


@dataclass
class RankerParams:
    """Q/K/V projections (d x h), output head (h,) and bias."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    w_out: np.ndarray
    b_out: float

    @property
    def d(self) -> int:
        return self.wq.shape[0]

    @property
    def h(self) -> int:
        return self.wq.shape[1]

    def copy(self) -> "RankerParams":
        return RankerParams(
            wq=self.wq.copy(), wk=self.wk.copy(), wv=self.wv.copy(),
            w_out=self.w_out.copy(), b_out=self.b_out,
        )

    def arrays(self) -> list[np.ndarray]:
        return [self.wq, self.wk, self.wv, self.w_out, np.asarray([self.b_out])]


def init_params(d: int, h: int, init_scale: float, seed: int) -> RankerParams:
    """Uniform projections scaled by 1/sqrt(d); zero head, so an untrained
    ranker emits logit b_out = 0 for every input."""
    rng = np.random.default_rng(seed)
    bound = init_scale / math.sqrt(d)
    return RankerParams(
        wq=rng.uniform(-bound, bound, size=(d, h)),
        wk=rng.uniform(-bound, bound, size=(d, h)),
        wv=rng.uniform(-bound, bound, size=(d, h)),
        w_out=np.zeros(h, dtype=np.float64),
        b_out=0.0,
    )


def _stack_pairs(params: RankerParams, anchors: np.ndarray, cands: np.ndarray) -> np.ndarray:
    anchors = np.asarray(anchors, dtype=np.float64)
    cands = np.asarray(cands, dtype=np.float64)
    if anchors.ndim == 1:
        anchors = anchors[None, :]
    if cands.ndim == 1:
        cands = cands[None, :]
    if anchors.shape != cands.shape or anchors.shape[1] != params.d:
        raise DimensionMismatchError(
            f"expected two (n, {params.d}) blocks, got {anchors.shape} and {cands.shape}"
        )
    return np.stack([anchors, cands], axis=1)  # (n, 2, d)


def _attention_forward(params: RankerParams, x: np.ndarray) -> dict:
    """Forward pass keeping every intermediate needed for backprop."""
    q = x @ params.wq  # (n, 2, h)
    k = x @ params.wk
    v = x @ params.wv
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(params.h)  # (n, 2, 2)
    shifted = scores - scores.max(axis=2, keepdims=True)
    expo = np.exp(shifted)
    attn = expo / expo.sum(axis=2, keepdims=True)
    out = attn @ v  # (n, 2, h)
    pooled = out.mean(axis=1)  # (n, h)
    logits = pooled @ params.w_out + params.b_out  # (n,)
    return {"x": x, "q": q, "k": k, "v": v, "attn": attn, "pooled": pooled, "logits": logits}


def forward(params: RankerParams, anchor: np.ndarray, cand: np.ndarray):
    """Logit for one pair, or a vector of logits for batched inputs."""
    single = np.asarray(anchor).ndim == 1
    state = _attention_forward(params, _stack_pairs(params, anchor, cand))
    return float(state["logits"][0]) if single else state["logits"]


def predict_proba(params: RankerParams, anchor: np.ndarray, cand: np.ndarray):
    return sigmoid(forward(params, anchor, cand))


def bce_with_logits(z, y):
    """max(0, z) - z*y + log(1 + exp(-|z|)); stable for large |z|."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def per_sample_loss(z, y, cfg: LossConfig):
    """Product of the four loss factors for each sample."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    scalar = z.ndim == 0
    p = np.atleast_1d(np.asarray(sigmoid(z)))
    z = np.atleast_1d(z)
    y = np.atleast_1d(y)
    l = bce_with_logits(z, y)
    t = p * y + (1.0 - p) * (1.0 - y)
    w = 1.0 - t**cfg.beta
    a = cfg.alpha * y + (1.0 - cfg.alpha) * (1.0 - y)
    m = (1.0 - y) * p * cfg.lambda_penalty + 1.0
    values = a * w * l * m
    return float(values[0]) if scalar else values


def batch_loss(z, y, cfg: LossConfig) -> float:
    return float(np.mean(per_sample_loss(z, y, cfg)))


def loss_grad_z(z, y, cfg: LossConfig) -> np.ndarray:
    """d(per-sample loss)/dz, elementwise."""
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    p = np.asarray(sigmoid(z))
    l = bce_with_logits(z, y)
    t = p * y + (1.0 - p) * (1.0 - y)
    a = cfg.alpha * y + (1.0 - cfg.alpha) * (1.0 - y)
    m = (1.0 - y) * p * cfg.lambda_penalty + 1.0

    dp = p * (1.0 - p)
    dl = p - y
    dt = dp * (2.0 * y - 1.0)
    if cfg.beta == 0.0:
        w = np.zeros_like(z)
        dw = np.zeros_like(z)
    else:
        w = 1.0 - t**cfg.beta
        dw = -cfg.beta * t ** (cfg.beta - 1.0) * dt
    dm = (1.0 - y) * cfg.lambda_penalty * dp
    return a * (dw * l * m + w * dl * m + w * l * dm)


@dataclass
class RankerGrads:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    w_out: np.ndarray
    b_out: float

    def arrays(self) -> list[np.ndarray]:
        return [self.wq, self.wk, self.wv, self.w_out, np.asarray([self.b_out])]


def grad(
    params: RankerParams,
    anchors: np.ndarray,
    cands: np.ndarray,
    labels: np.ndarray,
    cfg: LossConfig,
) -> tuple[float, RankerGrads]:
    """Mean loss over the batch and its exact gradient."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size == 0:
        raise EmptyDatasetError("gradient of an empty batch")
    x = _stack_pairs(params, anchors, cands)
    state = _attention_forward(params, x)
    z = state["logits"]
    n = z.shape[0]
    loss = batch_loss(z, labels, cfg)

    gz = loss_grad_z(z, labels, cfg) / n  # (n,)

    pooled = state["pooled"]
    db_out = float(gz.sum())
    dw_out = pooled.T @ gz  # (h,)

    dpooled = gz[:, None] * params.w_out[None, :]  # (n, h)
    dout = np.repeat(dpooled[:, None, :], 2, axis=1) * 0.5  # (n, 2, h)

    attn, v, q, k = state["attn"], state["v"], state["q"], state["k"]
    dattn = dout @ v.transpose(0, 2, 1)  # (n, 2, 2)
    dv = attn.transpose(0, 2, 1) @ dout  # (n, 2, h)

    # softmax backward per row
    dscores = attn * (dattn - (dattn * attn).sum(axis=2, keepdims=True))
    scale = 1.0 / math.sqrt(params.h)
    dq = dscores @ k * scale
    dk = dscores.transpose(0, 2, 1) @ q * scale

    grads = RankerGrads(
        wq=np.einsum("nij,nik->jk", x, dq),
        wk=np.einsum("nij,nik->jk", x, dk),
        wv=np.einsum("nij,nik->jk", x, dv),
        w_out=dw_out,
        b_out=db_out,
    )
    return loss, grads


def finite_difference_grad(
    params: RankerParams,
    anchors: np.ndarray,
    cands: np.ndarray,
    labels: np.ndarray,
    cfg: LossConfig,
    epsilon: float = 1e-4,
) -> RankerGrads:
    """Central-difference gradient; the reference the analytic path is
    checked against in `gradient_check` and the gradcheck command."""

    def loss_at(p: RankerParams) -> float:
        state = _attention_forward(p, _stack_pairs(p, anchors, cands))
        return batch_loss(state["logits"], labels, cfg)

    out = RankerGrads(
        wq=np.zeros_like(params.wq),
        wk=np.zeros_like(params.wk),
        wv=np.zeros_like(params.wv),
        w_out=np.zeros_like(params.w_out),
        b_out=0.0,
    )
    work = params.copy()
    for name in ("wq", "wk", "wv", "w_out"):
        target = getattr(work, name)
        dest = getattr(out, name)
        it = np.nditer(target, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            saved = target[idx]
            target[idx] = saved + epsilon
            plus = loss_at(work)
            target[idx] = saved - epsilon
            minus = loss_at(work)
            target[idx] = saved
            dest[idx] = (plus - minus) / (2.0 * epsilon)
            it.iternext()
    saved = work.b_out
    work.b_out = saved + epsilon
    plus = loss_at(work)
    work.b_out = saved - epsilon
    minus = loss_at(work)
    work.b_out = saved
    out.b_out = (plus - minus) / (2.0 * epsilon)
    return out


def gradient_check(
    trials: int = 20,
    seed: int = 0,
    rel_tol: float = 1e-4,
    abs_tol: float = 1e-7,
    epsilon: float = 1e-4,
) -> list[dict]:
    """Random small configurations compared against central differences."""
    rng = np.random.default_rng(seed)
    results = []
    for trial in range(trials):
        d = int(rng.integers(2, 9))
        h = int(rng.integers(1, 5))
        n = int(rng.integers(1, 17))
        params = RankerParams(
            wq=rng.normal(scale=0.7, size=(d, h)),
            wk=rng.normal(scale=0.7, size=(d, h)),
            wv=rng.normal(scale=0.7, size=(d, h)),
            w_out=rng.normal(scale=0.7, size=h),
            b_out=float(rng.normal(scale=0.7)),
        )
        anchors = rng.normal(size=(n, d))
        cands = rng.normal(size=(n, d))
        labels = rng.integers(0, 2, size=n).astype(np.float64)
        cfg = LossConfig(
            alpha=float(rng.uniform(0.1, 0.9)),
            beta=float(rng.choice([0.0, 1.0, 2.0, 3.0])),
            lambda_penalty=float(rng.choice([0.0, 1.0, 4.0])),
        )
        _, analytic = grad(params, anchors, cands, labels, cfg)
        numeric = finite_difference_grad(params, anchors, cands, labels, cfg, epsilon=epsilon)
        worst = 0.0
        for a_arr, n_arr in zip(analytic.arrays(), numeric.arrays()):
            diff = np.abs(a_arr - n_arr)
            denom = np.maximum(np.maximum(np.abs(a_arr), np.abs(n_arr)), 1.0e-300)
            rel = np.where(diff <= abs_tol, 0.0, diff / denom)
            worst = max(worst, float(rel.max()) if rel.size else 0.0)
        results.append({
            "trial": trial, "d": d, "h": h, "batch": n,
            "max_rel_error": worst, "passed": worst <= rel_tol,
        })
    return results


@dataclass
class Checkpoint:
    params: RankerParams
    train_config: TrainConfig
    provider_fingerprint: str
    history: list[dict] = field(default_factory=list)


def _encode_array(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode_array(text: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = base64.b64decode(text.encode("ascii"))
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise CheckpointFormatError(f"array has {arr.size} values, expected {expected}")
    return arr.reshape(shape)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "d": ckpt.params.d,
        "h": ckpt.params.h,
        "train_config": ckpt.train_config.to_dict(),
        "provider_fingerprint": ckpt.provider_fingerprint,
        "history": ckpt.history,
        "params": {
            "wq": _encode_array(ckpt.params.wq),
            "wk": _encode_array(ckpt.params.wk),
            "wv": _encode_array(ckpt.params.wv),
            "w_out": _encode_array(ckpt.params.w_out),
            "b_out": ckpt.params.b_out,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: not a checkpoint file ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointFormatError(f"{path}: unrecognized checkpoint format")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"{path}: checkpoint version {payload.get('version')} unsupported"
        )
    try:
        d, h = int(payload["d"]), int(payload["h"])
        raw = payload["params"]
        params = RankerParams(
            wq=_decode_array(raw["wq"], (d, h)),
            wk=_decode_array(raw["wk"], (d, h)),
            wv=_decode_array(raw["wv"], (d, h)),
            w_out=_decode_array(raw["w_out"], (h,)),
            b_out=float(raw["b_out"]),
        )
        train_config = TrainConfig.from_dict(payload["train_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: corrupted checkpoint ({exc})") from exc
    return Checkpoint(
        params=params,
        train_config=train_config,
        provider_fingerprint=payload.get("provider_fingerprint", ""),
        history=payload.get("history", []),
    )


class _Adam:
    def __init__(self, shapes: list[tuple[int, ...]], learning_rate: float):
        self.learning_rate = learning_rate
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, values: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        for i, (value, g) in enumerate(zip(values, grads)):
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g
            m_hat = self.m[i] / (1.0 - ADAM_BETA1**self.t)
            v_hat = self.v[i] / (1.0 - ADAM_BETA2**self.t)
            value -= self.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def train(
    train_set: tuple[np.ndarray, np.ndarray, np.ndarray],
    val_set: tuple[np.ndarray, np.ndarray, np.ndarray],
    cfg: TrainConfig,
    provider_fingerprint: str = "",
) -> Checkpoint:
    """Mini-batch Adam with early stopping on validation mean loss.

    Inputs are (anchors, candidates, labels) arrays with matching first
    dimensions; balancing is the caller's responsibility. Returns the
    best-validation parameters. Deterministic given cfg.seed.
    """
    tr_anchors, tr_cands, tr_labels = (np.asarray(a, dtype=np.float64) for a in train_set)
    va_anchors, va_cands, va_labels = (np.asarray(a, dtype=np.float64) for a in val_set)
    if tr_labels.size == 0 or va_labels.size == 0:
        raise EmptyDatasetError("train and validation sets must be non-empty")
    d = tr_anchors.shape[1]

    params = init_params(d, cfg.h, cfg.init_scale, cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    adam = _Adam([p.shape for p in params.arrays()], cfg.learning_rate)

    def val_loss_of(p: RankerParams) -> float:
        return batch_loss(forward(p, va_anchors, va_cands), va_labels, cfg.loss)

    best_params = params.copy()
    best_val = math.inf
    history: list[dict] = []
    stale = 0
    n = tr_labels.shape[0]

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = grad(params, tr_anchors[idx], tr_cands[idx], tr_labels[idx], cfg.loss)
            epoch_losses.append(loss)
            values = [params.wq, params.wk, params.wv, params.w_out]
            gs = [grads.wq, grads.wk, grads.wv, grads.w_out]
            b_holder = np.asarray([params.b_out])
            adam.step(values + [b_holder], gs + [np.asarray([grads.b_out])])
            params.b_out = float(b_holder[0])
        val_loss = val_loss_of(params)
        history.append({
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)),
            "val_loss": val_loss,
        })
        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience > 0:
                break

    return Checkpoint(
        params=best_params,
        train_config=cfg,
        provider_fingerprint=provider_fingerprint,
        history=history,
    )


def grid_search(
    train_set: tuple[np.ndarray, np.ndarray, np.ndarray],
    val_set: tuple[np.ndarray, np.ndarray, np.ndarray],
    base_cfg: TrainConfig,
    grid: dict[str, Sequence],
    provider_fingerprint: str = "",
) -> tuple[Checkpoint, list[dict]]:
    """Exhaustive search over explicit value lists for selected knobs.

    Grid keys: learning_rate, alpha, beta, lambda_penalty, h. Returns the
    checkpoint with the lowest best-epoch validation loss plus one result
    row per combination; ties resolve to the earliest combination in
    sorted-key order.
    """
    allowed = {"learning_rate", "alpha", "beta", "lambda_penalty", "h"}
    unknown = set(grid) - allowed
    if unknown:
        raise ValueError(f"unknown grid keys: {sorted(unknown)}")

    keys = sorted(grid)
    combos = list(product(*(grid[k] for k in keys))) if keys else [()]
    best: Optional[Checkpoint] = None
    best_val = math.inf
    rows = []
    for combo in combos:
        chosen = dict(zip(keys, combo))
        loss_cfg = replace(
            base_cfg.loss,
            **{k: v for k, v in chosen.items() if k in ("alpha", "beta", "lambda_penalty")},
        )
        cfg = replace(
            base_cfg,
            loss=loss_cfg,
            **{k: v for k, v in chosen.items() if k in ("learning_rate", "h")},
        )
        ckpt = train(train_set, val_set, cfg, provider_fingerprint)
        val = min((row["val_loss"] for row in ckpt.history), default=math.inf)
        rows.append({"combo": chosen, "val_loss": val})
        if val < best_val:
            best_val = val
            best = ckpt
    if best is None:
        best = train(train_set, val_set, base_cfg, provider_fingerprint)
    return best, rows


def copy_checkpoint(ckpt: Checkpoint) -> Checkpoint:
    return Checkpoint(
        params=ckpt.params.copy(),
        train_config=ckpt.train_config,
        provider_fingerprint=ckpt.provider_fingerprint,
        history=copy.deepcopy(ckpt.history),
    )
