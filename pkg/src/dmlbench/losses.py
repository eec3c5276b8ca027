"""Forward values and analytic gradients for the training objectives.

Seven losses: categorical cross-entropy plus six metric-learning objectives
(triplet, n-pairs, supervised contrastive, and the proxy-based trio:
proxy-NCA, soft-triple, proxy-anchor). Every loss returns a `LossOutput`
carrying the scalar value, the gradient w.r.t. the batch embeddings, and,
for proxy-based losses, the gradient w.r.t. the proxy bank. Gradients are
derived by hand and verified against the central-difference oracle in the
test suite; there is no autograd anywhere.

Conventions:

* triplet uses squared Euclidean distances;
* proxy-NCA and soft-triple L2-normalize embeddings and proxies internally
  (gradients are still w.r.t. the raw inputs, chained through the
  normalization); proxy-anchor normalizes implicitly via cosine similarity;
* proxy-NCA's denominator ranges over the non-target proxies only, so its
  value can go negative;
* mixing happens through `combined_loss`, an affine blend with weight
  `beta` on the cross-entropy side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DegenerateBatchError,
    DimensionError,
    InvalidTripletError,
    LabelError,
    PairingError,
)
from .numeric import (
    Rng,
    as_matrix,
    l2_normalize_rows,
    log_sum_exp,
    normalize_backward,
    sigmoid,
    softmax_rows,
)
from .proxies import ProxyBank

PROB_FLOOR = 1e-12
VARIANTS = ("cce", "triplet", "npairs", "supcon", "proxynca", "softtriple", "proxyanchor")
PROXY_VARIANTS = ("proxynca", "softtriple", "proxyanchor")
DEFAULT_MINING_CAP = 512


@dataclass
class EmbeddingBatch:
    """L embedding rows with aligned class labels in [0, num_classes)."""

    embeddings: np.ndarray  # (L, d)
    labels: np.ndarray  # (L,) int
    num_classes: int

    def __post_init__(self):
        self.embeddings = as_matrix(self.embeddings)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.shape[0] != self.embeddings.shape[0]:
            raise DimensionError("labels must align with embedding rows")
        if self.embeddings.shape[0] < 1 or self.embeddings.shape[1] < 1:
            raise DimensionError("batch needs at least one row and one dimension")
        if self.num_classes < 1:
            raise LabelError("num_classes must be >= 1")
        if np.any(self.labels < 0) or np.any(self.labels >= self.num_classes):
            raise LabelError(f"labels must lie in [0, {self.num_classes})")

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass
class TripletSpec:
    """Index triple into a batch: anchor/positive share a class, negative differs."""

    anchor: int
    positive: int
    negative: int
    margin: float = 1.0


@dataclass
class LossOutput:
    value: float
    grad_embeddings: np.ndarray
    grad_proxies: np.ndarray | None = None

    def __post_init__(self):
        self.value = float(self.value)
        if not np.isfinite(self.value):
            raise ConfigError("loss value is not finite")
        if not np.all(np.isfinite(self.grad_embeddings)):
            raise ConfigError("embedding gradient contains NaN or Inf")
        if self.grad_proxies is not None and not np.all(np.isfinite(self.grad_proxies)):
            raise ConfigError("proxy gradient contains NaN or Inf")


@dataclass
class LossConfig:
    """Variant tag plus every per-loss hyperparameter; only the tagged
    variant's fields are ever read."""

    variant: str = "cce"
    beta: float = 0.5  # weight on the cross-entropy side of the blend
    margin: float = 1.0  # triplet
    tau: float = 0.1  # supcon temperature
    softmax_scale: float = 1.0  # proxynca
    st_k: int = 5  # softtriple proxies per class
    st_gamma: float = 0.05
    st_lambda: float = 1.0
    st_delta: float = 0.1
    pa_alpha: float = 32.0  # proxyanchor
    pa_delta: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown loss variant {self.variant!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")
        if self.tau <= 0.0:
            raise ConfigError("tau must be positive")
        if self.st_gamma <= 0.0:
            raise ConfigError("st_gamma must be positive")
        if self.st_k < 1:
            raise ConfigError("st_k must be >= 1")
        if self.pa_alpha <= 0.0:
            raise ConfigError("pa_alpha must be positive")
        if self.softmax_scale <= 0.0:
            raise ConfigError("softmax_scale must be positive")

    @property
    def is_proxy_based(self) -> bool:
        return self.variant in PROXY_VARIANTS

    def proxies_per_class(self) -> int:
        return self.st_k if self.variant == "softtriple" else 1


def zero_output(batch: EmbeddingBatch, bank: ProxyBank | None = None) -> LossOutput:
    """Zero loss with zero gradients, for steps where no valid structure exists."""
    grad_p = np.zeros_like(bank.matrix) if bank is not None else None
    return LossOutput(0.0, np.zeros_like(batch.embeddings), grad_p)


# ---------------------------------------------------------------------------
# categorical cross-entropy


def cce_loss(probs, labels) -> LossOutput:
    """Mean negative log-likelihood of the true class.

    `probs` rows are softmax outputs; the returned gradient is w.r.t. the
    pre-softmax logits (the usual fused softmax cross-entropy form
    (probs - onehot) / N), so it can be chained straight into the
    classifier head.
    """
    probs = as_matrix(probs)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = probs.shape
    if labels.shape != (n,):
        raise DimensionError("labels must align with probability rows")
    if np.any(labels < 0) or np.any(labels >= c):
        raise LabelError(f"labels must lie in [0, {c})")
    row_sums = probs.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-9):
        raise ConfigError("probability rows must sum to 1")
    picked = np.clip(probs[np.arange(n), labels], PROB_FLOOR, 1.0)
    value = -float(np.log(picked).sum()) / n
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return LossOutput(value, grad)


# ---------------------------------------------------------------------------
# triplet


def _check_triplet(spec: TripletSpec, labels: np.ndarray) -> None:
    a, p, n = spec.anchor, spec.positive, spec.negative
    if len({a, p, n}) != 3:
        raise InvalidTripletError(f"indices must be distinct, got ({a}, {p}, {n})")
    if labels[a] != labels[p]:
        raise InvalidTripletError(f"anchor {a} and positive {p} differ in class")
    if labels[a] == labels[n]:
        raise InvalidTripletError(f"anchor {a} and negative {n} share a class")
    if spec.margin < 0.0:
        raise InvalidTripletError("margin must be >= 0")


def triplet_loss(batch: EmbeddingBatch, triplets) -> LossOutput:
    """Sum of hinge terms [d²(a,p) - d²(a,n) + margin]+ over the given triplets.

    Squared Euclidean distances; the subgradient at the hinge kink is zero.
    """
    triplets = list(triplets)
    if not triplets:
        raise InvalidTripletError("need at least one triplet")
    z = batch.embeddings
    grad = np.zeros_like(z)
    value = 0.0
    for spec in triplets:
        _check_triplet(spec, batch.labels)
        ap = z[spec.anchor] - z[spec.positive]
        an = z[spec.anchor] - z[spec.negative]
        slack = float(ap @ ap - an @ an) + spec.margin
        if slack > 0.0:
            value += slack
            grad[spec.anchor] += 2.0 * (ap - an)
            grad[spec.positive] -= 2.0 * ap
            grad[spec.negative] += 2.0 * an
    return LossOutput(value, grad)


def mine_triplets(
    batch: EmbeddingBatch,
    margin: float,
    rng: Rng | None = None,
    cap: int = DEFAULT_MINING_CAP,
) -> list[TripletSpec]:
    """All valid (anchor, positive, negative) index triples in the batch,
    subsampled to `cap` with the given rng when there are more."""
    labels = batch.labels
    triples = []
    for a in range(batch.size):
        positives = np.nonzero(labels == labels[a])[0]
        negatives = np.nonzero(labels != labels[a])[0]
        for p in positives:
            if p == a:
                continue
            for n in negatives:
                triples.append((a, int(p), int(n)))
    if len(triples) > cap:
        if rng is None:
            raise ConfigError(f"{len(triples)} triplets exceed cap {cap}; rng required")
        keep = rng.choice(len(triples), cap)
        triples = [triples[i] for i in sorted(keep)]
    return [TripletSpec(a, p, n, margin) for a, p, n in triples]


# ---------------------------------------------------------------------------
# n-pairs


def npairs_loss(batch: EmbeddingBatch) -> LossOutput:
    """Softmax of the anchor-positive dot product against anchor-negative ones.

    Anchors are the batch members with a same-class partner; each must have
    exactly one (more raises PairingError). Members of singleton classes
    act as negatives only. Negatives are all cross-class members; the value
    is averaged over anchors.
    """
    z = batch.embeddings
    labels = batch.labels
    anchors = []
    for i in range(batch.size):
        partners = np.nonzero(labels == labels[i])[0]
        partners = partners[partners != i]
        if partners.size > 1:
            raise PairingError(f"anchor {i} has {partners.size} positives, needs 1")
        if partners.size == 1:
            anchors.append((i, int(partners[0])))
    if not anchors:
        raise PairingError("no anchor has a positive partner")
    grad = np.zeros_like(z)
    value = 0.0
    for i, pos in anchors:
        negatives = np.nonzero(labels != labels[i])[0]
        idx = np.concatenate(([pos], negatives))
        scores = z[idx] @ z[i]
        lse = log_sum_exp(scores)
        value += lse - float(scores[0])
        coeff = np.exp(scores - lse)
        coeff[0] -= 1.0
        grad[i] += coeff @ z[idx]
        grad[idx] += np.outer(coeff, z[i])
    n_anchors = len(anchors)
    return LossOutput(value / n_anchors, grad / n_anchors)


def select_npairs_members(labels, rng: Rng | None = None) -> np.ndarray:
    """Pick two members from every class with >= 2 of them, so the sub-batch
    gives each anchor exactly one positive. Classes with one member are
    dropped. Returns sorted batch indices (possibly empty)."""
    labels = np.asarray(labels)
    chosen = []
    for cls in np.unique(labels):
        members = np.nonzero(labels == cls)[0]
        if members.size < 2:
            continue
        if rng is None or members.size == 2:
            pick = members[:2]
        else:
            pick = members[rng.choice(members.size, 2)]
        chosen.extend(int(i) for i in pick)
    return np.array(sorted(chosen), dtype=np.int64)


# ---------------------------------------------------------------------------
# supervised contrastive


def supcon_loss(batch: EmbeddingBatch, tau: float) -> LossOutput:
    """Supervised contrastive loss over raw dot products at temperature tau.

    Every batch member is an anchor; its positives are all same-class
    others and the contrast set is everything else in the batch. Anchors
    without a positive contribute zero (singleton classes are common in
    few-shot batches); a batch where no anchor has one is degenerate.
    """
    if tau <= 0.0:
        raise ConfigError("tau must be positive")
    z = batch.embeddings
    labels = batch.labels
    length = batch.size
    sims = (z @ z.T) / tau
    grad = np.zeros_like(z)
    value = 0.0
    any_anchor = False
    for i in range(length):
        positives = np.nonzero(labels == labels[i])[0]
        positives = positives[positives != i]
        if positives.size == 0:
            continue
        any_anchor = True
        others = np.concatenate((np.arange(i), np.arange(i + 1, length)))
        row = sims[i, others]
        lse = log_sum_exp(row)
        value += lse - float(sims[i, positives].mean())
        coeff = np.exp(row - lse)
        pos_mask = labels[others] == labels[i]
        coeff[pos_mask] -= 1.0 / positives.size
        grad[i] += (coeff @ z[others]) / tau
        grad[others] += np.outer(coeff, z[i]) / tau
    if not any_anchor:
        raise DegenerateBatchError("no anchor in the batch has a positive")
    return LossOutput(value, grad)


# ---------------------------------------------------------------------------
# proxy-NCA


def proxynca_loss(
    batch: EmbeddingBatch,
    bank: ProxyBank,
    scale: float,
    normalize: bool = True,
) -> LossOutput:
    """Negative log-ratio of the target-proxy term over the non-target proxies.

    Distances are plain Euclidean, scaled by `scale` inside both exponents.
    The denominator excludes the target proxy, so the value can be negative.
    With `normalize` (the training default) embeddings and proxies are
    L2-normalized first and the returned gradients chain back to the raw
    inputs; the raw geometry is available with normalize=False.
    """
    if scale <= 0.0:
        raise ConfigError("scale must be positive")
    if bank.proxies_per_class != 1:
        raise ConfigError("proxy-NCA needs exactly one proxy per class")
    if bank.classes < 2:
        raise DegenerateBatchError("proxy-NCA needs >= 2 classes for its denominator")
    if batch.num_classes > bank.classes:
        raise LabelError("batch classes exceed the proxy bank")
    z_raw = batch.embeddings
    p_raw = bank.matrix
    z = l2_normalize_rows(z_raw) if normalize else z_raw
    p = l2_normalize_rows(p_raw) if normalize else p_raw
    n = batch.size
    grad_z = np.zeros_like(z)
    grad_p = np.zeros_like(p)
    value = 0.0
    for i in range(n):
        y = int(batch.labels[i])
        diffs = z[i] - p  # (C, d)
        dists = np.linalg.norm(diffs, axis=1)
        # unit direction of d(z, p_c) w.r.t. z; subgradient 0 at d == 0
        safe = np.where(dists > 0.0, dists, 1.0)
        dirs = diffs / safe[:, None]
        dirs[dists == 0.0] = 0.0
        others = np.concatenate((np.arange(y), np.arange(y + 1, bank.classes)))
        neg_scores = -scale * dists[others]
        lse = log_sum_exp(neg_scores)
        value += scale * float(dists[y]) + lse
        grad_z[i] += (scale / n) * dirs[y]
        grad_p[y] -= (scale / n) * dirs[y]
        weights = np.exp(neg_scores - lse)
        pull = (scale / n) * weights[:, None] * dirs[others]
        grad_z[i] -= pull.sum(axis=0)
        grad_p[others] += pull
    value /= n
    if normalize:
        grad_z = np.vstack(
            [normalize_backward(z_raw[i], grad_z[i]) for i in range(n)]
        )
        grad_p = np.vstack(
            [normalize_backward(p_raw[c], grad_p[c]) for c in range(bank.classes)]
        )
    return LossOutput(value, grad_z, grad_p)


# ---------------------------------------------------------------------------
# soft-triple


def softtriple_loss(
    batch: EmbeddingBatch,
    bank: ProxyBank,
    scale: float,
    gamma: float,
    delta: float,
) -> LossOutput:
    """Cross-entropy over relaxed class similarities with K proxies per class.

    The per-class similarity is the softmax(s/gamma)-weighted mean of the
    K proxy similarities; the margin `delta` is subtracted from the true
    class only, and `scale` multiplies every logit. Embeddings and proxies
    are L2-normalized before the inner products; gradients flow through
    the softmax weights, the similarities, and the normalization.
    """
    if gamma <= 0.0:
        raise ConfigError("gamma must be positive")
    if scale <= 0.0:
        raise ConfigError("scale must be positive")
    if batch.num_classes > bank.classes:
        raise LabelError("batch classes exceed the proxy bank")
    n, d = batch.embeddings.shape
    classes, per_class = bank.classes, bank.proxies_per_class
    z_raw = batch.embeddings
    w_raw = bank.matrix
    z = l2_normalize_rows(z_raw)
    w = l2_normalize_rows(w_raw).reshape(classes, per_class, d)

    sims = np.einsum("ld,ckd->lck", z, w)  # (L, C, K)
    shifted = sims / gamma
    shifted -= shifted.max(axis=2, keepdims=True)
    weights = np.exp(shifted)
    weights /= weights.sum(axis=2, keepdims=True)  # softmax over k
    relaxed = np.einsum("lck,lck->lc", weights, sims)  # (L, C)

    logits = scale * relaxed
    rows = np.arange(n)
    logits[rows, batch.labels] -= scale * delta
    probs = softmax_rows(logits)
    picked = np.clip(probs[rows, batch.labels], PROB_FLOOR, 1.0)
    value = -float(np.log(picked).sum()) / n

    grad_relaxed = probs.copy()
    grad_relaxed[rows, batch.labels] -= 1.0
    grad_relaxed *= scale / n  # (L, C)

    # dS'/ds_k = a_k + (a_k / gamma) (s_k - S')
    inner = weights * (1.0 + (sims - relaxed[:, :, None]) / gamma)
    grad_sims = grad_relaxed[:, :, None] * inner  # (L, C, K)

    grad_z = np.einsum("lck,ckd->ld", grad_sims, w)
    grad_w = np.einsum("lck,ld->ckd", grad_sims, z).reshape(classes * per_class, d)
    grad_z = np.vstack([normalize_backward(z_raw[i], grad_z[i]) for i in range(n)])
    grad_w = np.vstack(
        [normalize_backward(w_raw[r], grad_w[r]) for r in range(classes * per_class)]
    )
    return LossOutput(value, grad_z, grad_w)


# ---------------------------------------------------------------------------
# proxy-anchor


def proxyanchor_loss(
    batch: EmbeddingBatch,
    bank: ProxyBank,
    alpha: float,
    delta: float,
) -> LossOutput:
    """Proxies act as anchors: a softplus pull toward each in-batch class
    proxy and a push from every proxy's out-of-class batch members.

    Cosine similarities throughout; the pull term averages over the proxies
    whose class appears in the batch, the push term over all proxies. Inner
    sums go through log-sum-exp + log1p so large `alpha` cannot overflow.
    """
    if alpha <= 0.0:
        raise ConfigError("alpha must be positive")
    if delta < 0.0:
        raise ConfigError("delta must be >= 0")
    if bank.proxies_per_class != 1:
        raise ConfigError("proxy-anchor needs exactly one proxy per class")
    if batch.num_classes > bank.classes:
        raise LabelError("batch classes exceed the proxy bank")
    z_raw = batch.embeddings
    p_raw = bank.matrix
    z = l2_normalize_rows(z_raw)
    p = l2_normalize_rows(p_raw)
    sims = z @ p.T  # (L, C) cosine similarities
    labels = batch.labels
    classes = bank.classes
    present = sorted(set(int(c) for c in labels))

    grad_sims = np.zeros_like(sims)
    value = 0.0
    for c in present:
        members = np.nonzero(labels == c)[0]
        x = -alpha * (sims[members, c] - delta)
        lse = log_sum_exp(x)
        value += _softplus_from_lse(lse) / len(present)
        coeff = sigmoid(lse) * np.exp(x - lse)
        grad_sims[members, c] += (-alpha / len(present)) * coeff
    for c in range(classes):
        outsiders = np.nonzero(labels != c)[0]
        if outsiders.size == 0:
            continue
        x = alpha * (sims[outsiders, c] + delta)
        lse = log_sum_exp(x)
        value += _softplus_from_lse(lse) / classes
        coeff = sigmoid(lse) * np.exp(x - lse)
        grad_sims[outsiders, c] += (alpha / classes) * coeff

    grad_z = grad_sims @ p
    grad_p = grad_sims.T @ z
    grad_z = np.vstack(
        [normalize_backward(z_raw[i], grad_z[i]) for i in range(batch.size)]
    )
    grad_p = np.vstack(
        [normalize_backward(p_raw[c], grad_p[c]) for c in range(classes)]
    )
    return LossOutput(value, grad_z, grad_p)


def _softplus_from_lse(lse: float) -> float:
    # log(1 + exp(lse)) with the lse already computed stably
    if lse > 0.0:
        return lse + float(np.log1p(np.exp(-lse)))
    return float(np.log1p(np.exp(lse)))


# ---------------------------------------------------------------------------
# blending


def combined_loss(cce: LossOutput, dml: LossOutput, beta: float) -> LossOutput:
    """Affine blend: beta * cce + (1 - beta) * dml, for value and every gradient.

    At the endpoints the dominant side is returned exactly (copies), which
    keeps beta=1 runs bit-identical to pure cross-entropy runs. A missing
    grad_proxies on either side is treated as zero.
    """
    if not 0.0 <= beta <= 1.0:
        raise ConfigError("beta must lie in [0, 1]")
    if cce.grad_embeddings.shape != dml.grad_embeddings.shape:
        raise DimensionError(
            "cannot blend gradients of shapes "
            f"{cce.grad_embeddings.shape} and {dml.grad_embeddings.shape}"
        )
    proxy_shape = None
    for side in (cce, dml):
        if side.grad_proxies is not None:
            if proxy_shape is not None and side.grad_proxies.shape != proxy_shape:
                raise DimensionError("proxy gradient shapes differ")
            proxy_shape = side.grad_proxies.shape
    if beta == 1.0:
        grad_p = np.zeros(proxy_shape) if proxy_shape is not None else None
        if cce.grad_proxies is not None:
            grad_p = cce.grad_proxies.copy()
        return LossOutput(cce.value, cce.grad_embeddings.copy(), grad_p)
    if beta == 0.0:
        grad_p = np.zeros(proxy_shape) if proxy_shape is not None else None
        if dml.grad_proxies is not None:
            grad_p = dml.grad_proxies.copy()
        return LossOutput(dml.value, dml.grad_embeddings.copy(), grad_p)
    value = beta * cce.value + (1.0 - beta) * dml.value
    grad_e = beta * cce.grad_embeddings + (1.0 - beta) * dml.grad_embeddings
    grad_p = None
    if proxy_shape is not None:
        grad_p = np.zeros(proxy_shape)
        if cce.grad_proxies is not None:
            grad_p += beta * cce.grad_proxies
        if dml.grad_proxies is not None:
            grad_p += (1.0 - beta) * dml.grad_proxies
    return LossOutput(value, grad_e, grad_p)


# ---------------------------------------------------------------------------
# dispatch


def dml_loss(
    batch: EmbeddingBatch,
    config: LossConfig,
    bank: ProxyBank | None = None,
    rng: Rng | None = None,
    mining_cap: int = DEFAULT_MINING_CAP,
) -> LossOutput:
    """Evaluate the configured metric-learning loss on one batch.

    Handles mining for triplet/n-pairs and degrades to a zero contribution
    when the batch lacks the structure a non-proxy loss needs (no valid
    triplet, fewer than two pairable classes, all classes singleton).
    """
    variant = config.variant
    if variant == "cce":
        raise ConfigError("cce is not a metric-learning loss")
    if config.is_proxy_based and bank is None:
        raise ConfigError(f"{variant} requires a proxy bank")

    if variant == "triplet":
        triplets = mine_triplets(batch, config.margin, rng, mining_cap)
        if not triplets:
            return zero_output(batch)
        return triplet_loss(batch, triplets)
    if variant == "npairs":
        members = select_npairs_members(batch.labels, rng)
        if members.size < 2:
            return zero_output(batch)
        sub = EmbeddingBatch(
            batch.embeddings[members], batch.labels[members], batch.num_classes
        )
        out = npairs_loss(sub)
        grad = np.zeros_like(batch.embeddings)
        grad[members] = out.grad_embeddings
        return LossOutput(out.value, grad)
    if variant == "supcon":
        labels = batch.labels
        counts = np.bincount(labels, minlength=batch.num_classes)
        if not np.any(counts[labels] > 1):
            return zero_output(batch)
        return supcon_loss(batch, config.tau)
    if variant == "proxynca":
        return proxynca_loss(batch, bank, config.softmax_scale)
    if variant == "softtriple":
        return softtriple_loss(
            batch, bank, config.st_lambda, config.st_gamma, config.st_delta
        )
    if variant == "proxyanchor":
        return proxyanchor_loss(batch, bank, config.pa_alpha, config.pa_delta)
    raise ConfigError(f"unknown loss variant {variant!r}")
