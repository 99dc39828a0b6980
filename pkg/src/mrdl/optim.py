"""Momentum-SGD training loop, gradient checking and run metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .fusion import ModelConfig, init_model, model_backward, model_forward

__all__ = [
    "TrainConfig",
    "RunMetrics",
    "GradcheckReport",
    "sgd_step",
    "init_velocity",
    "predict_logits",
    "evaluate",
    "train",
    "gradcheck",
    "gradcheck_groups",
]


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    dict_size: int = 8
    levels: tuple[int, ...] = (1, 2, 3)
    shared_dim: int = 64
    lr_decay_epoch: int | None = None  # lr *= 0.1 at the start of this epoch

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass
class RunMetrics:
    """Per-epoch training loss, validation accuracy and fusion weights."""

    train_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    omega: list[tuple[float, ...]] = field(default_factory=list)

    def to_csv(self) -> str:
        n_levels = len(self.omega[0]) if self.omega else 0
        header = "epoch,loss,val_acc," + ",".join(
            f"omega_{i + 1}" for i in range(n_levels)
        )
        lines = [header.rstrip(",")]
        for e, (loss, acc, om) in enumerate(zip(self.train_loss, self.val_acc, self.omega)):
            cells = [str(e), f"{loss:.17g}", f"{acc:.17g}"]
            cells += [f"{w:.17g}" for w in om]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())


def init_velocity(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(p) for name, p in params.items()}


def sgd_step(params, grads, velocity, lr: float, momentum: float):
    """One momentum step, ``v <- mu*v - lr*g; p <- p + v``, for every group.

    Updates ``params`` and ``velocity`` in place and returns ``params``.
    """
    if set(grads) != set(params):
        missing = set(params) ^ set(grads)
        raise ValueError(f"sgd_step: parameter/gradient name mismatch: {sorted(missing)}")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(
                f"sgd_step: gradient shape {g.shape} does not match "
                f"parameter '{name}' shape {p.shape}"
            )
        v = velocity[name]
        v *= momentum
        v -= lr * g
        p += v
    return params


def predict_logits(params, config: ModelConfig, images, batch_size: int = 64) -> np.ndarray:
    """Class logits for a stack of images, evaluated in mini-batches."""
    images = np.asarray(images, dtype=np.float64)
    outs = []
    for start in range(0, images.shape[0], batch_size):
        out, _ = model_forward(images[start : start + batch_size], params, config)
        outs.append(out.logits)
    return np.concatenate(outs, axis=0)


def evaluate(params, config: ModelConfig, images, labels, batch_size: int = 64) -> float:
    """Fraction of samples whose argmax logit matches the label."""
    logits = predict_logits(params, config, images, batch_size)
    return float(np.mean(logits.argmax(axis=1) == np.asarray(labels)))


def train(params, config: ModelConfig, data, cfg: TrainConfig, val_data=None,
          shuffle_rng=None):
    """Train in place on ``data`` (a texdata.Dataset); returns (params, metrics).

    Deterministic for fixed (params, config, data, cfg): each epoch's
    shuffle comes from a dedicated stream split off the run seed (pass
    ``shuffle_rng`` to own that stream, e.g. for checkpointing its
    state). The fusion weights are validated against the simplex
    constraint after every optimizer step.
    """
    n = len(data.labels)
    if n == 0:
        raise ValueError("train: empty dataset")
    velocity = init_velocity(params)
    metrics = RunMetrics()
    if shuffle_rng is None:
        shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    lr = cfg.lr
    for epoch in range(cfg.epochs):
        if cfg.lr_decay_epoch is not None and epoch == cfg.lr_decay_epoch:
            lr *= 0.1
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            out, cache = model_forward(data.images[idx], params, config)
            loss, grad_logits = nk.softmax_xent(out.logits, data.labels[idx])
            grads = model_backward(grad_logits, params, config, cache)
            sgd_step(params, grads, velocity, lr, cfg.momentum)
            total_loss += loss * idx.size
            # Fusion weights must stay on the simplex after every step
            # (interior is the whole simplex when only one level is active).
            omega = nk.softmax(params["fusion.logits"][None])[0]
            assert abs(omega.sum() - 1.0) <= 1e-12 and np.all(omega > 0)
            assert omega.size == 1 or np.all(omega < 1)
        metrics.train_loss.append(total_loss / n)
        if val_data is not None and len(val_data.labels):
            acc = evaluate(params, config, val_data.images, val_data.labels)
        else:
            acc = float("nan")
        metrics.val_acc.append(acc)
        metrics.omega.append(tuple(nk.softmax(params["fusion.logits"][None])[0]))
    return params, metrics


@dataclass
class GradcheckReport:
    tolerance: float
    max_rel_err: dict[str, float]

    @property
    def failures(self) -> list[str]:
        return [k for k, v in self.max_rel_err.items() if not v < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    def format(self) -> str:
        lines = []
        for name in sorted(self.max_rel_err):
            err = self.max_rel_err[name]
            status = "ok" if err < self.tolerance else "FAIL"
            lines.append(f"{name:<24s} max_rel_err={err:.3e}  {status}")
        lines.append(f"gradcheck {'passed' if self.passed else 'FAILED'} at tol={self.tolerance:g}")
        return "\n".join(lines)


def _rel_err(a: np.ndarray, n: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def gradcheck_groups(loss_fn, params, analytic, h: float = 1e-5, tolerance: float = 1e-4):
    """Central-difference check of ``analytic`` against ``loss_fn(params)``.

    Perturbs every scalar of every parameter group; reports the max
    relative error per group. An empty parameter mapping yields an empty
    report that trivially passes.
    """
    errs: dict[str, float] = {}
    for name, p in params.items():
        numeric = np.zeros_like(p)
        flat, nflat = p.reshape(-1), numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = loss_fn(params)
            flat[j] = orig - h
            fm = loss_fn(params)
            flat[j] = orig
            nflat[j] = (fp - fm) / (2.0 * h)
        errs[name] = _rel_err(analytic[name], numeric)
    return GradcheckReport(tolerance=tolerance, max_rel_err=errs)


def gradcheck(
    config: ModelConfig,
    seed: int = 0,
    tolerance: float = 1e-4,
    h: float = 1e-5,
    image_size: int = 8,
    batch_size: int = 2,
) -> GradcheckReport:
    """Verify every parameter group of a freshly initialized model against
    finite differences on one random mini-batch."""
    rng = np.random.default_rng(seed)
    params = init_model(config, seed)
    images = rng.uniform(0.0, 1.0, size=(batch_size, config.in_channels, image_size, image_size))
    labels = rng.integers(0, config.num_classes, size=batch_size)

    def loss_fn(p):
        out, _ = model_forward(images, p, config)
        return nk.softmax_xent(out.logits, labels)[0]

    out, cache = model_forward(images, params, config)
    _, grad_logits = nk.softmax_xent(out.logits, labels)
    analytic = model_backward(grad_logits, params, config, cache)
    return gradcheck_groups(loss_fn, params, analytic, h=h, tolerance=tolerance)
