"""Additive angular margin fine-tuning of the projection head.

Everything here is plain numpy with hand-written gradients:

* ``aam_forward`` / ``aam_backward`` -- margin softmax over cosine logits
  against unit-norm class prototypes;
* ``chain_through_head`` -- backprop through ``normalize(tanh(W e + b))``;
* ``adam_step`` -- bias-corrected Adam, followed by prototype renormalization.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .embedder import EMBEDDING_DIM, ProjectionHead
from .errors import (
    ConfigurationError,
    InsufficientClassesError,
    PreconditionError,
    SingularGradientError,
    TrainingDivergenceError,
)

log = logging.getLogger(__name__)

COS_CLAMP = 1e-7
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class AamConfig:
    scale_s: float = 30.0
    margin_m: float = 0.2
    num_classes: int | None = None
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.scale_s > 0:
            raise ConfigurationError("scale_s must be positive")
        if not 0.0 <= self.margin_m <= 0.5:
            raise ConfigurationError("margin_m must lie in [0, 0.5] radians")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")


# ---------------------------------------------------------------------------
# margin softmax


def _aam_terms(x, label, weights, s, m):
    raw = weights @ x
    cos = np.clip(raw, -1.0 + COS_CLAMP, 1.0 - COS_CLAMP)
    live = (raw > -1.0 + COS_CLAMP) & (raw < 1.0 - COS_CLAMP)
    c = cos[label]
    if c > math.cos(math.pi - m):
        sin = math.sqrt(1.0 - c * c)
        target = c * math.cos(m) - sin * math.sin(m)
        dtarget = math.cos(m) + c * math.sin(m) / sin
    else:
        target = c - m * math.sin(m)
        dtarget = 1.0
    logits = s * cos
    logits[label] = s * target
    return logits, live, dtarget


def _xent(logits, label):
    top = logits.max()
    lse = top + math.log(np.sum(np.exp(logits - top)))
    return lse - logits[label]


def aam_loss(x, label, weights, s, m) -> float:
    """Unchecked loss; ``x`` need not be unit-norm (used by gradient checks)."""
    logits, _, _ = _aam_terms(np.asarray(x, dtype=np.float64), label, weights, s, m)
    return _xent(logits, label)


def _check_inputs(x, label, weights):
    x = np.asarray(x, dtype=np.float64)
    if abs(np.linalg.norm(x) - 1.0) > 1e-6:
        raise PreconditionError(f"embedding norm {np.linalg.norm(x):.9f} is not 1")
    if not 0 <= label < weights.shape[0]:
        raise PreconditionError(f"label {label} outside [0, {weights.shape[0]})")
    if weights.shape[1] != x.size:
        raise PreconditionError(f"class weights are {weights.shape[1]}-d, embedding is {x.size}-d")
    return x


def aam_forward(embedding, label: int, cfg: AamConfig, weights: np.ndarray):
    """Return ``(loss, logits)`` for one unit-norm embedding and its class index."""
    x = _check_inputs(embedding, label, weights)
    logits, _, _ = _aam_terms(x, label, weights, cfg.scale_s, cfg.margin_m)
    return _xent(logits, label), logits


def aam_backward(embedding, label: int, cfg: AamConfig, weights: np.ndarray):
    """Gradients ``(d loss / d embedding, d loss / d weights)``.

    Cosines that hit the clamp contribute no gradient.
    """
    x = _check_inputs(embedding, label, weights)
    return _aam_grad(x, label, weights, cfg.scale_s, cfg.margin_m)


def _aam_grad(x, label, weights, s, m):
    logits, live, dtarget = _aam_terms(x, label, weights, s, m)
    p = np.exp(logits - logits.max())
    p /= p.sum()
    dlogit = p
    dlogit[label] -= 1.0
    dcos = s * dlogit
    dcos[label] *= dtarget
    dcos[~live] = 0.0
    return dcos @ weights, np.outer(dcos, x)


# ---------------------------------------------------------------------------
# head


def chain_through_head(base: np.ndarray, head: ProjectionHead, upstream: np.ndarray):
    """Pull ``upstream`` (gradient w.r.t. the head output) back to ``(dW, db)``."""
    v = head.pre_normalized(base)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise SingularGradientError("head output is the zero vector")
    x = v / norm
    dv = (upstream - x * (x @ upstream)) / norm
    du = dv * (1.0 - v * v)
    return np.outer(du, base), du


# ---------------------------------------------------------------------------
# optimizer


def adam_update(param, grad, m, v, step, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """One Adam update; ``step`` is the 1-based step index. Returns ``(param, m, v)``."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


@dataclass
class TrainState:
    head: ProjectionHead
    class_weights: np.ndarray
    moments: dict = field(default_factory=dict)
    step: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    @classmethod
    def initial(cls, num_classes: int, dim: int = EMBEDDING_DIM, seed: int = 0, base_seed: int = 0):
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((num_classes, dim))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        head = ProjectionHead.identity(dim, base_seed)
        return cls(head, w, {}, 0, rng)

    def params(self) -> dict:
        return {"weight": self.head.weight, "bias": self.head.bias, "class_weights": self.class_weights}


def adam_step(state: TrainState, gradients: dict, cfg: AamConfig) -> TrainState:
    """Apply one Adam step in place and renormalize class prototypes.

    ``gradients`` maps ``"weight"``, ``"bias"`` and ``"class_weights"`` to
    arrays shaped like the parameters.
    """
    for name, g in gradients.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient for {name} at step {state.step + 1}")
    step = state.step + 1
    params = state.params()
    updated = {}
    for name, g in gradients.items():
        m, v = state.moments.get(name, (np.zeros_like(g), np.zeros_like(g)))
        updated[name], m, v = adam_update(params[name], g, m, v, step, cfg.learning_rate)
        state.moments[name] = (m, v)
    if "weight" in updated:
        state.head.weight = updated["weight"]
    if "bias" in updated:
        state.head.bias = updated["bias"]
    if "class_weights" in updated:
        cw = updated["class_weights"]
        # rows the step left untouched are already unit-norm; dividing again would drift by an ulp
        moved = np.any(cw != state.class_weights, axis=1)
        cw[moved] /= np.linalg.norm(cw[moved], axis=1, keepdims=True)
        state.class_weights = cw
    state.step = step
    return state


# ---------------------------------------------------------------------------
# training loop


def sample_gradients(base: np.ndarray, label: int, state: TrainState, cfg: AamConfig):
    """Loss and parameter gradients for one training example."""
    x = state.head.apply(base)
    logits, _, _ = _aam_terms(x, label, state.class_weights, cfg.scale_s, cfg.margin_m)
    loss = _xent(logits, label)
    gx, gcw = _aam_grad(x, label, state.class_weights, cfg.scale_s, cfg.margin_m)
    gw, gb = chain_through_head(base, state.head, gx)
    return loss, {"weight": gw, "bias": gb, "class_weights": gcw}


def data_hash(bases: np.ndarray, labels: np.ndarray, ids=None) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(bases, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(labels, dtype=np.int64).tobytes())
    for i in ids or ():
        h.update(str(i).encode())
    return h.hexdigest()[:16]


def train_on_embeddings(bases, labels, cfg: AamConfig, base_seed: int = 0, class_names=None,
                        log_path=None, val=None):
    """Fit a head on precomputed base embeddings.

    ``labels`` are class indices. Returns ``(head, history)`` where history is
    a list of per-epoch dicts. ``val`` is an optional ``(bases, labels)`` pair
    whose mean loss is recorded each epoch (not used for model selection).
    """
    bases = np.asarray(bases, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = cfg.num_classes or (int(labels.max()) + 1 if labels.size else 0)
    if len(np.unique(labels)) < 2 or n_classes < 2:
        raise InsufficientClassesError("need at least two driver identities to train")
    state = TrainState.initial(n_classes, bases.shape[1], cfg.seed, base_seed)
    n = len(labels)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = state.rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = np.sort(order[start : start + cfg.batch_size])
            acc = None
            for i in batch:
                loss, grads = sample_gradients(bases[i], int(labels[i]), state, cfg)
                if not math.isfinite(loss):
                    raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}")
                total += loss
                if acc is None:
                    acc = grads
                else:
                    for k in acc:
                        acc[k] = acc[k] + grads[k]
            adam_step(state, acc, cfg)
        row = {"epoch": epoch, "mean_loss": float(total / n), "wall_seconds": time.perf_counter() - t0}
        if val is not None and len(val[1]):
            row["val_loss"] = float(np.mean([
                aam_loss(state.head.apply(b), int(y), state.class_weights, cfg.scale_s, cfg.margin_m)
                for b, y in zip(*val)
            ]))
        log.info("epoch %d mean loss %.6f", epoch, row["mean_loss"])
        history.append(row)

    head = state.head
    head.provenance = {
        "aam_config": {**asdict(cfg), "num_classes": n_classes},
        "seed": cfg.seed,
        "data_hash": data_hash(bases, labels, class_names),
        "classes": list(class_names) if class_names is not None else None,
        "epoch_mean_loss": [r["mean_loss"] for r in history],
    }
    if log_path is not None:
        write_training_log(history, log_path)
    return head, history


def write_training_log(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss", "wall_seconds"])
        for r in history:
            w.writerow([r["epoch"], repr(float(r["mean_loss"])), f"{r['wall_seconds']:.6f}"])


def train_head(manifest, cfg: AamConfig, encoder, log_path=None, val_manifest=None):
    """Train on every synthetic clip of ``manifest``, labelled by its driver.

    Returns ``(head, history)`` like :func:`train_on_embeddings`.
    """
    from .corpus import load_clip

    entries = sorted(manifest.entries, key=lambda e: e.clip_id)
    if any(e.label.authenticity != "synthetic" for e in entries):
        raise ConfigurationError("training manifest must contain synthetic clips only")
    drivers = sorted({e.label.driver for e in entries})
    if len(drivers) < 2:
        raise InsufficientClassesError(f"training split has {len(drivers)} driver identities; need >= 2")
    index = {d: i for i, d in enumerate(drivers)}

    def encode(m):
        es = [e for e in sorted(m.entries, key=lambda e: e.clip_id) if e.label.driver in index]
        b = np.array([encoder.base_embedding(load_clip(m, e)) for e in es])
        return b, np.array([index[e.label.driver] for e in es], dtype=np.int64), [e.clip_id for e in es]

    bases, labels, ids = encode(manifest)
    val = None
    if val_manifest is not None:
        vb, vl, _ = encode(val_manifest)
        # an empty validation split (val_fraction 0, tiny corpora) just means no val loss
        val = (vb, vl) if vl.size else None
    cfg = AamConfig(**{**asdict(cfg), "num_classes": len(drivers)})
    base_seed = getattr(getattr(encoder, "encoder", encoder), "seed", 0)
    head, history = train_on_embeddings(bases, labels, cfg, base_seed, drivers, log_path, val)
    head.provenance["data_hash"] = data_hash(bases, labels, ids)
    return head, history
