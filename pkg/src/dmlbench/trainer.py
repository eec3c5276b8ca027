"""Mini-batch trainer: AdamW with linear warmup/decay over the encoder,
the classifier head, and (for proxy losses) the proxy bank.

Determinism contract: every random decision draws from its own stream
derived from the run seed ("init", "proxies", "shuffle", "mining"), so
e.g. adding proxies or mining does not shift the shuffle order. Training
twice with the same data, seed, and config reproduces every parameter
bit for bit. Two consequences the tests lean on:

* with blend weight 1.0 the metric loss contributes exact zeros, so the
  encoder trajectory is bit-identical to a plain cross-entropy run;
* with blend weight 0.0 the cross-entropy side contributes exact zeros,
  matching a run that skips the classifier loss entirely (dml_only).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoder import (
    DEFAULT_EMBED_DIM,
    DEFAULT_OUT_DIM,
    DEFAULT_VOCAB,
    EncoderParams,
    backward_batch,
    classify_logits,
    forward_batch,
    init_encoder,
    tokenize,
)
from .errors import ConfigError, ScheduleError, TrainingDivergedError
from .losses import (
    EmbeddingBatch,
    LossConfig,
    LossOutput,
    cce_loss,
    combined_loss,
    dml_loss,
)
from .numeric import Rng, derive_seed, l2_normalize_rows, softmax_rows
from .proxies import ProxyBank, init_proxies

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def lr_schedule(step: int, total_steps: int, base_lr: float, warmup_fraction: float) -> float:
    """Linear warmup to base_lr, then linear decay toward zero.

    Warmup spans ceil(warmup_fraction * total_steps) steps; the decay leg
    interpolates from base_lr at the warmup boundary down to base_lr /
    (total - warmup) at the final step, never reaching zero while training.
    """
    if total_steps < 1:
        raise ScheduleError("total_steps must be >= 1")
    if step < 0 or step >= total_steps:
        raise ScheduleError(f"step {step} outside [0, {total_steps})")
    if not 0.0 <= warmup_fraction <= 1.0:
        raise ScheduleError("warmup_fraction must lie in [0, 1]")
    warmup_steps = math.ceil(warmup_fraction * total_steps)
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr * (total_steps - step) / (total_steps - warmup_steps)


class AdamW:
    """AdamW over named parameter blocks, updated in place.

    Bias-corrected moments, decoupled weight decay scaled by the current
    learning rate (lr 0 freezes parameters exactly), and global L2 norm
    clipping across all blocks before any moment update.
    """

    def __init__(self, blocks: list[tuple[str, np.ndarray]], clip_norm: float = 5.0):
        self.blocks = blocks
        self.clip_norm = clip_norm
        self.m = {name: np.zeros_like(arr) for name, arr in blocks}
        self.v = {name: np.zeros_like(arr) for name, arr in blocks}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float, weight_decay: float) -> None:
        sq = 0.0
        for name, _ in self.blocks:
            g = grads[name]
            sq += float((g * g).sum())
        norm = math.sqrt(sq)
        scale = self.clip_norm / norm if norm > self.clip_norm else 1.0
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1 ** self.t
        bc2 = 1.0 - ADAM_BETA2 ** self.t
        for name, param in self.blocks:
            g = grads[name] * scale
            m = self.m[name]
            v = self.v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
            param -= lr * (update + weight_decay * param)


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    epochs: int = 8
    batch_size: int = 64
    lr: float = 3e-3
    weight_decay: float = 0.01
    warmup_fraction: float = 0.06
    clip_norm: float = 5.0
    seed: int = 0
    vocab_size: int = DEFAULT_VOCAB
    embed_dim: int = DEFAULT_EMBED_DIM
    out_dim: int = DEFAULT_OUT_DIM
    mining_cap: int = 512
    proxy_renorm: bool = True  # re-unit proxies after each step (proxy losses)
    dml_only: bool = False  # skip the classifier loss entirely

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr < 0.0 or self.weight_decay < 0.0 or self.clip_norm <= 0.0:
            raise ConfigError("lr/weight_decay must be >= 0 and clip_norm > 0")
        if self.dml_only and self.loss.variant == "cce":
            raise ConfigError("dml_only needs a metric-learning variant")


@dataclass
class TrainedModel:
    params: EncoderParams
    bank: ProxyBank | None
    config: TrainConfig
    steps: list[tuple[int, float]]

    def log_dict(self) -> dict:
        return {
            "steps": [{"step": s, "loss": v} for s, v in self.steps],
            "config": asdict(self.config),
        }


def train(texts: list[str], labels, num_classes: int, config: TrainConfig) -> TrainedModel:
    labels = np.asarray(labels, dtype=np.int64)
    n = len(texts)
    if n == 0 or labels.shape != (n,):
        raise ConfigError("texts and labels must be non-empty and aligned")
    if num_classes < 1 or np.any(labels < 0) or np.any(labels >= num_classes):
        raise ConfigError("labels must lie in [0, num_classes)")
    loss_cfg = config.loss

    init_rng = Rng(derive_seed(config.seed, "init"))
    shuffle_rng = Rng(derive_seed(config.seed, "shuffle"))
    mining_rng = Rng(derive_seed(config.seed, "mining"))
    params = init_encoder(
        num_classes, config.vocab_size, config.embed_dim, config.out_dim, init_rng
    )
    bank = None
    if loss_cfg.is_proxy_based:
        proxy_rng = Rng(derive_seed(config.seed, "proxies"))
        bank = init_proxies(
            num_classes, loss_cfg.proxies_per_class(), config.out_dim, proxy_rng
        )

    tokenized = [tokenize(t, config.vocab_size) for t in texts]
    batches_per_epoch = math.ceil(n / config.batch_size)
    total_steps = config.epochs * batches_per_epoch
    blocks = params.blocks()
    if bank is not None:
        blocks = blocks + [("proxies", bank.matrix)]
    optimizer = AdamW(blocks, config.clip_norm)

    log: list[tuple[int, float]] = []
    step = 0
    for _epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            chosen = order[start : start + config.batch_size]
            yb = labels[chosen]
            z, cache = forward_batch(params, [tokenized[i] for i in chosen])

            grad_logits = None
            if loss_cfg.variant == "cce":
                logits = classify_logits(params, z)
                out = cce_loss(softmax_rows(logits), yb)
                value = out.value
                grad_logits = 1.0 * out.grad_embeddings
                grad_z = out.grad_embeddings @ params.classifier.T
                grad_proxies = None
            else:
                batch = EmbeddingBatch(z, yb, num_classes)
                dml_out = dml_loss(batch, loss_cfg, bank, mining_rng, config.mining_cap)
                if config.dml_only:
                    value = dml_out.value
                    grad_z = dml_out.grad_embeddings
                    grad_proxies = dml_out.grad_proxies
                else:
                    logits = classify_logits(params, z)
                    c_out = cce_loss(softmax_rows(logits), yb)
                    cce_emb = LossOutput(
                        c_out.value, c_out.grad_embeddings @ params.classifier.T
                    )
                    blended = combined_loss(cce_emb, dml_out, loss_cfg.beta)
                    value = blended.value
                    grad_z = blended.grad_embeddings
                    grad_proxies = blended.grad_proxies
                    grad_logits = loss_cfg.beta * c_out.grad_embeddings
                if grad_proxies is None and bank is not None:
                    grad_proxies = np.zeros_like(bank.matrix)

            if not np.isfinite(value):
                raise TrainingDivergedError(f"step {step}: loss is not finite")
            log.append((step, float(value)))

            # classifier is chained by hand so the blend weight scales it too
            grads = backward_batch(params, cache, grad_z, grad_logits=None)
            if grad_logits is not None:
                grads["classifier"] = z.T @ grad_logits
                grads["classifier_bias"] = grad_logits.sum(axis=0)
            if bank is not None:
                grads["proxies"] = grad_proxies

            lr = lr_schedule(step, total_steps, config.lr, config.warmup_fraction)
            optimizer.step(grads, lr, config.weight_decay)
            if bank is not None and config.proxy_renorm:
                bank.matrix[:] = l2_normalize_rows(bank.matrix)
            step += 1

    return TrainedModel(params, bank, config, log)
