"""Few-shot benchmark harness: datasets, fold plans, hyperparameter grids,
grid execution, and report emission.

A run is fully specified by (dataset, fold plan, grid, master seed) and is
reproducible to the byte: fold plans serialize to canonical JSON, every
training cell derives its own seed from the master seed and its (point,
fold) coordinates, and reports re-serialize to identical bytes after a
JSON round trip. Failed cells (diverged training) poison their grid point,
which is excluded from best-point selection but still listed.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .encoder import forward_batch, tokenize
from .errors import (
    ConfigError,
    DatasetParseError,
    StratificationError,
    TrainingDivergedError,
)
from .evaluation import blended_scores, macro_f1, paired_significance, predict
from .losses import PROXY_VARIANTS, LossConfig
from .numeric import Rng, derive_seed
from .trainer import TrainConfig, train

SHOT_CHOICES = (20, 100, 1000, "full")
BETA_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_EPOCHS_BY_SHOT = {20: 128, 100: 64, 1000: 8, "full": 8}
NOISE_POOL = 64  # distinct filler tokens shared by all classes


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    texts: list[str]
    labels: np.ndarray  # (n,) dense ints, first-appearance order
    label_names: list[str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.texts) != self.labels.shape[0]:
            raise ConfigError("texts and labels must be aligned")

    @property
    def size(self) -> int:
        return len(self.texts)

    @property
    def num_classes(self) -> int:
        return len(self.label_names)


def load_dataset(path) -> Dataset:
    """Read a tab-separated file of "<label>\\t<text>" lines (UTF-8).

    Labels are remapped to dense integers in order of first appearance.
    Text may contain further tabs; only the first one separates. A dataset
    with a single class cannot be benchmarked and is rejected.
    """
    texts: list[str] = []
    labels: list[int] = []
    names: list[str] = []
    index: dict[str, int] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if line == "":
                raise DatasetParseError("empty line", lineno)
            if "\t" not in line:
                raise DatasetParseError("missing tab separator", lineno)
            label, text = line.split("\t", 1)
            if label == "":
                raise DatasetParseError("empty label", lineno)
            if label not in index:
                index[label] = len(names)
                names.append(label)
            labels.append(index[label])
            texts.append(text)
    if not texts:
        raise DatasetParseError("file has no data lines", 1)
    if len(names) < 2:
        raise ConfigError("dataset must contain at least two classes")
    return Dataset(texts, np.array(labels, dtype=np.int64), names)


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for text, label in zip(dataset.texts, dataset.labels):
            fh.write(f"{dataset.label_names[int(label)]}\t{text}\n")


def synth_dataset(
    num_classes: int,
    size: int,
    signal_tokens: int = 8,
    noise: float = 0.35,
    seed: int = 0,
    tokens_per_text: int = 8,
) -> Dataset:
    """Synthetic classification corpus with a tunable signal-to-noise mix.

    Each class owns `signal_tokens` private tokens ("c<c>t<j>"); all
    classes share one pool of filler tokens ("n<j>"). Every text draws
    `tokens_per_text` tokens, each one a class token with probability
    1 - noise and a filler otherwise. Class sizes are balanced to within
    one text. noise 0 gives a perfectly separable dataset.
    """
    if num_classes < 2 or size < num_classes:
        raise ConfigError("need >= 2 classes and at least one text per class")
    if not 0.0 <= noise <= 1.0:
        raise ConfigError("noise must lie in [0, 1]")
    if signal_tokens < 1 or tokens_per_text < 1:
        raise ConfigError("signal_tokens and tokens_per_text must be >= 1")
    rng = Rng(derive_seed(seed, "synth"))
    texts = []
    labels = []
    base, extra = divmod(size, num_classes)
    for c in range(num_classes):
        for _ in range(base + (1 if c < extra else 0)):
            words = []
            for _ in range(tokens_per_text):
                if rng.random() < noise:
                    words.append(f"n{rng.randint(NOISE_POOL)}")
                else:
                    words.append(f"c{c}t{rng.randint(signal_tokens)}")
            texts.append(" ".join(words))
            labels.append(c)
    names = [f"class{c}" for c in range(num_classes)]
    return Dataset(texts, np.array(labels, dtype=np.int64), names)


# ---------------------------------------------------------------------------
# fold plans


@dataclass
class FoldPlan:
    fold_id: int
    seed: int  # the fold's derived seed, recorded for audit
    train_indices: list[int]
    test_indices: list[int]
    fewshot_indices: list[int]  # subset of train_indices actually trained on


def _largest_remainder_quotas(counts: np.ndarray, shot: int) -> np.ndarray:
    """Integer quotas proportional to counts summing to shot, capped at the
    class sizes, with at least one per non-empty class when shot allows.
    All tie-breaks go to the lower class index."""
    total = int(counts.sum())
    if shot >= total:
        return counts.copy()
    raw = shot * counts / total
    quota = np.floor(raw).astype(np.int64)
    remainder = raw - quota
    order = np.lexsort((np.arange(len(counts)), -remainder))
    for idx in order[: shot - int(quota.sum())]:
        quota[idx] += 1
    # cap at class size, handing the overflow to classes with spare room
    overflow = int(np.maximum(quota - counts, 0).sum())
    quota = np.minimum(quota, counts)
    while overflow > 0:
        spare = counts - quota
        if spare.max() <= 0:
            break
        quota[int(np.argmax(spare))] += 1
        overflow -= 1
    # guarantee representation when the budget covers every class
    nonempty = int(np.count_nonzero(counts))
    if shot >= nonempty:
        for c in range(len(counts)):
            if counts[c] > 0 and quota[c] == 0:
                donor = int(np.argmax(quota))
                if quota[donor] <= 1:
                    break
                quota[donor] -= 1
                quota[c] = 1
    return quota


def make_fold_plans(
    labels,
    num_folds: int,
    shot,
    master_seed: int,
    strict: bool = False,
) -> list[FoldPlan]:
    """num_folds independent shuffle-and-split plans over one dataset.

    Each fold reshuffles the whole dataset with its own derived seed and
    splits 80/20 into train/test; the few-shot subset takes `shot`
    training examples stratified by class frequency (or every one for
    "full"). strict refuses shots too small to cover every class.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    if num_folds < 1:
        raise ConfigError("num_folds must be >= 1")
    if n < 5:
        raise ConfigError("need at least 5 examples for an 80/20 split")
    if shot not in SHOT_CHOICES:
        raise ConfigError(f"shot must be one of {SHOT_CHOICES}")
    num_classes = int(labels.max()) + 1
    plans = []
    for fold_id in range(num_folds):
        fold_seed = derive_seed(master_seed, "fold", fold_id)
        rng = Rng(fold_seed)
        perm = rng.permutation(n)
        n_test = max(1, n // 5)
        test = perm[:n_test]
        train = perm[n_test:]
        if shot == "full":
            few = np.sort(train)
        else:
            counts = np.bincount(labels[train], minlength=num_classes)
            present = int(np.count_nonzero(counts))
            if strict and shot < present:
                raise StratificationError(
                    f"fold {fold_id}: shot {shot} cannot cover {present} classes"
                )
            quota = _largest_remainder_quotas(counts, shot)
            taken = np.zeros(num_classes, dtype=np.int64)
            few_list = []
            for idx in train:  # train is already in shuffled order
                c = labels[idx]
                if taken[c] < quota[c]:
                    few_list.append(int(idx))
                    taken[c] += 1
            few = np.sort(np.array(few_list, dtype=np.int64))
        plans.append(
            FoldPlan(
                fold_id=fold_id,
                seed=fold_seed,
                train_indices=[int(i) for i in np.sort(train)],
                test_indices=[int(i) for i in np.sort(test)],
                fewshot_indices=[int(i) for i in few],
            )
        )
    return plans


def fold_plans_to_json(plans: list[FoldPlan], shot, master_seed: int) -> str:
    obj = {
        "master_seed": master_seed,
        "num_folds": len(plans),
        "shot": shot,
        "folds": [
            {
                "fold_id": p.fold_id,
                "seed": p.seed,
                "train_indices": p.train_indices,
                "test_indices": p.test_indices,
                "fewshot_indices": p.fewshot_indices,
            }
            for p in plans
        ],
    }
    return canonical_json(obj)


def fold_plans_from_json(text: str) -> tuple[list[FoldPlan], object, int]:
    obj = json.loads(text)
    plans = [
        FoldPlan(
            fold_id=f["fold_id"],
            seed=f["seed"],
            train_indices=list(f["train_indices"]),
            test_indices=list(f["test_indices"]),
            fewshot_indices=list(f["fewshot_indices"]),
        )
        for f in obj["folds"]
    ]
    return plans, obj["shot"], obj["master_seed"]


def canonical_json(obj) -> str:
    """One fixed JSON shape so identical content means identical bytes."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# hyperparameter grids


def _points(variant: str, **axes) -> list[dict]:
    names = list(axes)
    points = [{}]
    for name in names:
        points = [dict(p, **{name: v}) for p in points for v in axes[name]]
    return [dict(variant=variant, **p) for p in points]


def full_grid(variant: str) -> list[dict]:
    """The complete search space per loss; beta is swept everywhere."""
    beta = list(BETA_GRID)
    if variant == "triplet":
        return _points(variant, margin=[1, 3, 5, 7, 9], beta=beta)
    if variant == "supcon":
        return _points(variant, tau=[0.1, 0.3, 0.5, 0.7, 0.9], beta=beta)
    if variant == "npairs":
        return _points(variant, beta=beta)
    if variant == "proxynca":
        return _points(
            variant,
            softmax_scale=[0.4, 0.6, 0.8, 1, 1.2, 1.4, 1.6, 1.8, 2, 3, 5],
            beta=beta,
        )
    if variant == "softtriple":
        return _points(
            variant,
            st_k=[5, 25, 1000, 2000],
            st_gamma=[0.01, 0.03, 0.05, 0.07, 0.1],
            st_lambda=[1, 3, 3.3, 4, 6, 8, 10],
            st_delta=[0.1, 0.3, 0.5, 0.7, 0.9, 1],
            beta=beta,
        )
    if variant == "proxyanchor":
        return _points(
            variant,
            pa_alpha=[16, 32, 64, 128],
            pa_delta=[0, 0.1, 0.3, 0.5, 0.7, 0.9],
            beta=beta,
        )
    raise ConfigError(f"no grid for variant {variant!r}")


def desk_grid(variant: str) -> list[dict]:
    """Trimmed grids (at most 25 points) for quick local runs; the beta
    sweep is kept intact, the per-loss axes are thinned."""
    beta = list(BETA_GRID)
    if variant == "triplet":
        return _points(variant, margin=[1, 5, 9], beta=beta)
    if variant == "supcon":
        return _points(variant, tau=[0.1, 0.5, 0.9], beta=beta)
    if variant == "npairs":
        return _points(variant, beta=beta)
    if variant == "proxynca":
        return _points(variant, softmax_scale=[0.4, 1, 2, 5], beta=beta)
    if variant == "softtriple":
        return _points(
            variant,
            st_k=[5],
            st_gamma=[0.05],
            st_lambda=[1, 10],
            st_delta=[0.1, 0.9],
            beta=beta,
        )
    if variant == "proxyanchor":
        return _points(variant, pa_alpha=[32, 128], pa_delta=[0, 0.5], beta=beta)
    raise ConfigError(f"no grid for variant {variant!r}")


def make_loss_config(point: dict) -> LossConfig:
    return LossConfig(**{k: v for k, v in point.items()})


# ---------------------------------------------------------------------------
# grid execution


@dataclass
class GridResult:
    variant: str
    points: list[dict]
    fold_scores: np.ndarray  # (P, F) dense-head macro-F1, NaN where a cell failed
    blended_fold_scores: np.ndarray | None  # (P, F) for proxy losses
    baseline_scores: np.ndarray  # (F,) plain cross-entropy
    best_index: int | None
    p_value: float | None  # best point vs baseline
    blended_p_value: float | None  # best point's blended row vs baseline
    beta_inf: float
    shot: object
    master_seed: int
    dataset_size: int
    num_classes: int

    def failed_points(self) -> list[int]:
        return [
            i for i in range(len(self.points)) if np.isnan(self.fold_scores[i]).any()
        ]


def _train_eval_cell(
    texts: list[str],
    labels: np.ndarray,
    num_classes: int,
    plan: FoldPlan,
    point: dict | None,
    seed: int,
    overrides: dict,
    beta_inf: float,
) -> tuple[float, float]:
    """Train one (grid point, fold) cell and evaluate on the fold's test
    split. point None means the plain cross-entropy baseline. Returns
    (dense F1, blended F1); the latter is NaN for proxy-free models, both
    are NaN when training diverges."""
    loss_cfg = make_loss_config(point) if point is not None else LossConfig("cce")
    cfg = TrainConfig(loss=loss_cfg, seed=seed, **overrides)
    few = plan.fewshot_indices
    try:
        model = train([texts[i] for i in few], labels[few], num_classes, cfg)
    except TrainingDivergedError:
        return (float("nan"), float("nan"))
    test = plan.test_indices
    tokenized = [tokenize(texts[i], cfg.vocab_size) for i in test]
    z, _ = forward_batch(model.params, tokenized)
    dense = predict(blended_scores(model.params, z, None, 1.0))
    dense_f1 = macro_f1(dense, labels[test], num_classes).macro_f1
    blended_f1 = float("nan")
    if model.bank is not None:
        blend = predict(blended_scores(model.params, z, model.bank, beta_inf))
        blended_f1 = macro_f1(blend, labels[test], num_classes).macro_f1
    return (dense_f1, blended_f1)


_POOL_STATE: dict = {}


def _pool_init(texts, labels, num_classes, plans, overrides, beta_inf):
    _POOL_STATE.update(
        texts=texts,
        labels=labels,
        num_classes=num_classes,
        plans=plans,
        overrides=overrides,
        beta_inf=beta_inf,
    )


def _pool_cell(task):
    point_idx, fold_idx, point, seed = task
    s = _POOL_STATE
    dense, blended = _train_eval_cell(
        s["texts"],
        s["labels"],
        s["num_classes"],
        s["plans"][fold_idx],
        point,
        seed,
        s["overrides"],
        s["beta_inf"],
    )
    return point_idx, fold_idx, dense, blended


def run_grid(
    dataset: Dataset,
    plans: list[FoldPlan],
    points: list[dict],
    master_seed: int,
    shot,
    beta_inf: float = 0.5,
    workers: int = 1,
    train_overrides: dict | None = None,
) -> GridResult:
    """Evaluate every grid point on every fold, plus the cross-entropy
    baseline on the same folds.

    The best point is the highest mean dense-head F1 among points with no
    failed fold; its significance against the baseline is a paired t-test
    over per-fold scores. Proxy-based variants also carry a proxy-blended
    score per cell (mixing weight beta_inf at inference only).
    """
    if not points:
        raise ConfigError("grid needs at least one point")
    variant = points[0]["variant"]
    if any(p["variant"] != variant for p in points):
        raise ConfigError("grid points must share one variant")
    overrides = dict(train_overrides or {})
    overrides.setdefault("epochs", DEFAULT_EPOCHS_BY_SHOT.get(shot, 8))
    n_points, n_folds = len(points), len(plans)

    tasks = []
    for pi, point in enumerate(points):
        for fi in range(n_folds):
            seed = derive_seed(master_seed, "train", pi, plans[fi].fold_id)
            tasks.append((pi, fi, point, seed))
    for fi in range(n_folds):
        seed = derive_seed(master_seed, "baseline", plans[fi].fold_id)
        tasks.append((-1, fi, None, seed))

    dense = np.full((n_points, n_folds), np.nan)
    blended = np.full((n_points, n_folds), np.nan)
    baseline = np.full(n_folds, np.nan)

    if workers <= 1:
        _pool_init(dataset.texts, dataset.labels, dataset.num_classes, plans, overrides, beta_inf)
        results = map(_pool_cell, tasks)
        results = list(results)
        _POOL_STATE.clear()
    else:
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_pool_init,
            initargs=(dataset.texts, dataset.labels, dataset.num_classes, plans, overrides, beta_inf),
        ) as pool:
            results = list(pool.map(_pool_cell, tasks, chunksize=4))

    for pi, fi, d, b in results:
        if pi < 0:
            baseline[fi] = d
        else:
            dense[pi, fi] = d
            blended[pi, fi] = b

    if np.isnan(baseline).any():
        raise TrainingDivergedError("cross-entropy baseline diverged on some fold")

    means = dense.mean(axis=1)  # NaN propagates for failed points
    valid = ~np.isnan(means)
    best_index = int(np.nanargmax(np.where(valid, means, -np.inf))) if valid.any() else None
    p_value = None
    blended_p = None
    has_blend = variant in PROXY_VARIANTS
    if best_index is not None:
        p_value = paired_significance(dense[best_index], baseline)
        if has_blend:
            blended_p = paired_significance(blended[best_index], baseline)
    return GridResult(
        variant=variant,
        points=points,
        fold_scores=dense,
        blended_fold_scores=blended if has_blend else None,
        baseline_scores=baseline,
        best_index=best_index,
        p_value=p_value,
        blended_p_value=blended_p,
        beta_inf=beta_inf,
        shot=shot,
        master_seed=master_seed,
        dataset_size=dataset.size,
        num_classes=dataset.num_classes,
    )


# ---------------------------------------------------------------------------
# reports


def _row(name, scores, p_value, point):
    scores = [float(s) for s in scores]
    mean = float(np.mean(scores))
    # sample std across folds, the spread quoted after the +/- sign
    std = float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0
    return {
        "name": name,
        "per_fold": scores,
        "mean": mean,
        "std": std,
        "p_value": p_value,
        "point": point,
    }


def result_to_report(result: GridResult) -> dict:
    rows = [_row("cce", result.baseline_scores, None, None)]
    if result.best_index is not None:
        bi = result.best_index
        rows.append(
            _row(result.variant, result.fold_scores[bi], result.p_value, result.points[bi])
        )
        if result.blended_fold_scores is not None:
            rows.append(
                _row(
                    result.variant + "+inf",
                    result.blended_fold_scores[bi],
                    result.blended_p_value,
                    dict(result.points[bi], beta_inf=result.beta_inf),
                )
            )
    return {
        "variant": result.variant,
        "dataset": {"n": result.dataset_size, "num_classes": result.num_classes},
        "shot": result.shot,
        "num_folds": int(result.baseline_scores.shape[0]),
        "master_seed": result.master_seed,
        "beta_inf": result.beta_inf,
        "grid": {
            "n_points": len(result.points),
            "failed_points": result.failed_points(),
            "best_point": None if result.best_index is None else result.points[result.best_index],
        },
        "rows": rows,
    }


def format_cell(mean: float, std: float, p_value: float | None) -> str:
    """Table cell "67.50±4.87", starred when the paired test is significant
    at 0.05."""
    star = "*" if p_value is not None and p_value < 0.05 else ""
    return f"{mean * 100:.2f}±{std * 100:.2f}{star}"


def render_table(report: dict) -> str:
    names = [r["name"] for r in report["rows"]]
    width = max(len(n) for n in names) + 2
    lines = [f"{'loss':<{width}}macro_f1"]
    for r in report["rows"]:
        lines.append(f"{r['name']:<{width}}{format_cell(r['mean'], r['std'], r['p_value'])}")
    return "\n".join(lines) + "\n"


def render_csv(report: dict) -> str:
    """Long-format per-fold scores: one data row per (loss row, fold)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "fold", "macro_f1"])
    for r in report["rows"]:
        for fold_id, score in enumerate(r["per_fold"]):
            writer.writerow([r["name"], fold_id, repr(score)])
    return buf.getvalue()
