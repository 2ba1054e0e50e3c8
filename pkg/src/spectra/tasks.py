"""Experiment harnesses: splits, full-batch training loops and metrics."""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import DivergenceError, DomainError
from .graph import SignedDiGraph, SsbmParams, ssbm_generate, symmetrize
from .linalg import truncated_svd
from .models import EdgeMLP, ModelConfig, build_model
from .rng import make_rng, spawn_seeds

TASKS = ("nodeclass", "linksign", "cluster")
POS, NEG, NOLINK = 0, 1, 2
LINK_LABELS = ("+", "-", "?")
LR_RANGE = (1e-3, 1e-1)
WD_RANGE = (1e-6, 1e-3)
DEFAULT_GRID = {"lr": (1e-3, 1e-2, 1e-1), "weight_decay": (1e-6, 1e-5, 1e-4, 1e-3)}


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    task: str = "nodeclass"
    data: dict = field(default_factory=lambda: {"kind": "ssbm"})
    features: str = "svd"
    feature_dim: int | None = None
    lr: float = 0.01
    weight_decay: float = 1e-4
    epochs: int = 300
    seed: int = 0
    known_label_ratio: float = 0.01
    known_per_class: int | None = None
    train_edge_ratio: float = 0.8
    neg_sample_factor: float = 2.0
    val_edge_ratio: float = 0.0
    propagate_test_edges: bool = False
    mlp_hidden: int | None = None
    n_repeats: int | None = None
    report: str = "best-val"
    cluster_k: int = 2

    def __post_init__(self):
        if self.task not in TASKS:
            raise DomainError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.features not in ("svd", "onehot"):
            raise DomainError("features must be 'svd' or 'onehot'")
        if self.report not in ("best-val", "best-test", "final"):
            raise DomainError("report must be 'best-val', 'best-test' or 'final'")
        for name in ("known_label_ratio", "train_edge_ratio"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise DomainError(f"{name} must lie in (0, 1), got {v}")
        if not 0.0 <= self.val_edge_ratio < 1.0:
            raise DomainError("val_edge_ratio must lie in [0, 1)")
        if self.epochs < 0 or self.neg_sample_factor < 0:
            raise DomainError("epochs and neg_sample_factor must be non-negative")
        if self.lr <= 0 or self.weight_decay < 0:
            raise DomainError("lr must be positive and weight_decay non-negative")

    @property
    def resolved_feature_dim(self):
        if self.feature_dim is not None:
            return self.feature_dim
        return 30 if self.task == "linksign" else 64

    @property
    def resolved_repeats(self):
        if self.n_repeats is not None:
            return self.n_repeats
        return 10 if self.task == "linksign" else 20

    def out_of_range(self):
        """Hyperparameters outside the documented search ranges."""
        msgs = []
        if not LR_RANGE[0] <= self.lr <= LR_RANGE[1]:
            msgs.append(f"lr={self.lr} outside documented range {LR_RANGE}")
        if not WD_RANGE[0] <= self.weight_decay <= WD_RANGE[1]:
            msgs.append(f"weight_decay={self.weight_decay} outside documented range {WD_RANGE}")
        return msgs

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class NodeSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def _quota(total, fractions):
    """Floor each share, then hand leftover slots to the largest remainders."""
    exact = total * fractions
    base = np.floor(exact + 1e-9).astype(np.int64)
    left = int(total - base.sum())
    if left > 0:
        order = np.argsort(-(exact - base), kind="stable")
        base[order[:left]] += 1
    return base


def split_nodes(labels, known_ratio=0.01, seed=0, known_per_class=None, test_fraction=0.9):
    """Stratified train set, remainder split test/validation.

    Train size is floor(ratio * N) distributed over classes by largest
    remainder (or exactly `known_per_class` per class). Of the rest,
    floor(test_fraction * rest) nodes go to test and the others to validation.
    """
    labels = np.asarray(labels)
    rng = make_rng(seed)
    classes, inv = np.unique(labels, return_inverse=True)
    counts = np.bincount(inv, minlength=len(classes))
    if known_per_class is not None:
        per = np.full(len(classes), int(known_per_class))
    else:
        total = math.floor(known_ratio * len(labels) + 1e-9)
        per = _quota(total, counts / counts.sum())
    for c, k, cnt in zip(classes, per, counts):
        if k < 1:
            raise DomainError(f"class {c!r} gets no training representatives at this ratio")
        if k > cnt:
            raise DomainError(f"class {c!r} has only {cnt} nodes, {k} requested")
    train = []
    for ci, k in enumerate(per):
        members = np.flatnonzero(inv == ci)
        train.append(rng.choice(members, size=int(k), replace=False))
    train = np.sort(np.concatenate(train))
    rest = np.setdiff1d(np.arange(len(labels)), train)
    rest = rest[rng.permutation(len(rest))]
    n_test = math.floor(test_fraction * len(rest) + 1e-9)
    return NodeSplit(train, np.sort(rest[n_test:]), np.sort(rest[:n_test]))


@dataclass(frozen=True)
class LinkTriplets:
    u: np.ndarray
    v: np.ndarray
    label: np.ndarray

    def __len__(self):
        return len(self.u)

    def one_hot(self):
        y = np.zeros((len(self), 3))
        y[np.arange(len(self)), self.label] = 1.0
        return y


@dataclass(frozen=True)
class EdgeSplit:
    train: LinkTriplets
    test: LinkTriplets
    val: LinkTriplets | None
    train_edge_mask: np.ndarray


def _sign_label(sign):
    return np.where(sign > 0, POS, NEG).astype(np.int64)


def split_edges(g: SignedDiGraph, train_ratio=0.8, neg_factor=2.0, seed=0, val_ratio=0.0):
    """Random split of the signed links plus negatively sampled '?' pairs.

    floor(train_ratio * m) links train the model; `val_ratio` of those are
    held out for validation. round(neg_factor * |train links|) '?' pairs
    are drawn uniformly among ordered non-adjacent pairs (both directions of
    every existing link excluded, no self pairs) and join the training set.
    Test triplets are true links only.
    """
    rng = make_rng(seed)
    m = g.n_edges
    for s, name in ((1, "positive"), (-1, "negative")):
        if np.sum(g.sign == s) < 2:
            warnings.warn(f"graph has fewer than 2 {name} links", stacklevel=2)
    perm = rng.permutation(m)
    n_train = math.floor(train_ratio * m + 1e-9)
    tr, te = perm[:n_train], perm[n_train:]
    n_val = math.floor(val_ratio * len(tr) + 1e-9)
    va, tr = tr[:n_val], tr[n_val:]
    mask = np.zeros(m, dtype=bool)
    mask[tr] = True
    k = int(round(neg_factor * len(tr)))
    nu, nv = sample_non_edges(g, k, rng)
    labels = _sign_label(g.sign)
    train = LinkTriplets(np.concatenate([g.src[tr], nu]), np.concatenate([g.dst[tr], nv]),
                         np.concatenate([labels[tr], np.full(k, NOLINK)]))
    test = LinkTriplets(g.src[te], g.dst[te], labels[te])
    val = LinkTriplets(g.src[va], g.dst[va], labels[va]) if n_val else None
    return EdgeSplit(train, test, val, mask)


def sample_non_edges(g: SignedDiGraph, k, rng):
    n = g.n_nodes
    existing = np.unique(np.concatenate([g.src * n + g.dst, g.dst * n + g.src]))
    available = n * (n - 1) - len(existing)
    if k > available:
        raise DomainError(f"cannot sample {k} non-links; only {available} non-adjacent pairs exist")
    if k == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    if available <= 4 * k:
        allk = np.arange(n * n, dtype=np.int64)
        allk = allk[(allk // n != allk % n)]
        allk = np.setdiff1d(allk, existing)
        pick = rng.choice(allk, size=k, replace=False)
        return pick // n, pick % n
    chosen = np.zeros(0, np.int64)
    while len(chosen) < k:
        need = k - len(chosen)
        cand = rng.integers(0, n, size=(2 * need + 16, 2))
        keys = cand[:, 0] * n + cand[:, 1]
        keys = keys[cand[:, 0] != cand[:, 1]]
        keys = keys[~np.isin(keys, existing)]
        keys = keys[~np.isin(keys, chosen)]
        _, first = np.unique(keys, return_index=True)
        keys = keys[np.sort(first)]
        chosen = np.concatenate([chosen, keys[:need]])
    return chosen // n, chosen % n


# ---------------------------------------------------------------- metrics


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    micro_f1: float
    auc: float = float("nan")
    per_class_f1: tuple = ()
    loss_curve: list = field(default_factory=list)

    def as_dict(self):
        return {"accuracy": self.accuracy, "macro_f1": self.macro_f1,
                "micro_f1": self.micro_f1, "auc": self.auc}


def roc_auc(truth_pos, score):
    from sklearn.metrics import roc_auc_score

    truth_pos = np.asarray(truth_pos, dtype=bool)
    if truth_pos.all() or not truth_pos.any():
        warnings.warn("AUC undefined with a single class present", stacklevel=2)
        return float("nan")
    return float(roc_auc_score(truth_pos, score))


def compute_metrics(predictions, truths, scores=None, classes=(POS, NEG)) -> MetricsReport:
    """Accuracy, macro/micro F1 over `classes` and binary AUC of classes[0].

    Predictions outside `classes` (e.g. '?') count as misses for the true
    class. A class absent from both truths and predictions scores F1 = 0.
    """
    pred = np.asarray(predictions)
    truth = np.asarray(truths)
    if pred.shape != truth.shape:
        raise DomainError("predictions and truths must be aligned")
    if pred.size == 0:
        raise DomainError("cannot compute metrics on empty input")
    f1s, tp_all, fp_all, fn_all = [], 0, 0, 0
    for c in classes:
        tp = int(np.sum((pred == c) & (truth == c)))
        fp = int(np.sum((pred == c) & (truth != c)))
        fn = int(np.sum((pred != c) & (truth == c)))
        tp_all, fp_all, fn_all = tp_all + tp, fp_all + fp, fn_all + fn
        denom = 2 * tp + fp + fn
        if not np.any(truth == c):
            warnings.warn(f"class {c} absent from evaluation truths; its F1 is 0", stacklevel=2)
        f1s.append(2 * tp / denom if denom else 0.0)
    micro_den = tp_all + 0.5 * (fp_all + fn_all)
    auc = float("nan")
    if scores is not None:
        auc = roc_auc(truth == classes[0], np.asarray(scores))
    return MetricsReport(
        accuracy=float(np.mean(pred == truth)),
        macro_f1=float(np.mean(f1s)),
        micro_f1=float(tp_all / micro_den) if micro_den else 0.0,
        auc=auc,
        per_class_f1=tuple(f1s),
    )


def sign_scores(logits):
    """P(+) / (P(+) + P(-)) from 3-way logits."""
    p = ad.softmax(np.asarray(logits))
    return p[:, POS] / (p[:, POS] + p[:, NEG])


# ---------------------------------------------------------------- training


@dataclass
class RunResult:
    seed: int
    metrics: dict
    history: list
    best_epoch: int
    state: dict = field(default_factory=dict, repr=False)


def node_features(g: SignedDiGraph, kind, dim, seed):
    if kind == "onehot":
        return np.eye(g.n_nodes)
    return truncated_svd(symmetrize(g), min(dim, g.n_nodes), seed=seed)


def _check_loss(loss, epoch):
    v = float(loss.data)
    if not math.isfinite(v):
        raise DivergenceError(f"non-finite training loss at epoch {epoch}")
    return v


def train_node_classification_run(g, labels, cfg: ExperimentConfig, seed, features=None) -> RunResult:
    """One repeat: split, init, full-batch Adam for `cfg.epochs` epochs."""
    rng = make_rng(seed)
    classes, y = np.unique(np.asarray(labels), return_inverse=True)
    split = split_nodes(y, cfg.known_label_ratio, rng, cfg.known_per_class)
    x = features if features is not None else node_features(
        g, cfg.features, cfg.resolved_feature_dim, seed)
    binary = len(classes) == 2
    out_dim = 1 if binary else len(classes)
    model = build_model(cfg.model, g, x.shape[1], out_dim, rng)
    params = model.params
    opt = ad.AdamState()
    target = y[split.train].reshape(-1, 1) if binary else np.eye(len(classes))[y[split.train]]

    def predict():
        out = model.forward(x).data
        return (out[:, 0] > 0).astype(np.int64) if binary else out.argmax(axis=1)

    def loss_of(out):
        o = ad.gather_rows(out, split.train)
        if binary:
            return ad.binary_cross_entropy_with_logits(o, target)
        return ad.softmax_cross_entropy(o, target)

    history = []
    pred = predict()
    val_acc = float(np.mean(pred[split.val] == y[split.val])) if len(split.val) else 0.0
    test_acc = float(np.mean(pred[split.test] == y[split.test]))
    best = (val_acc, test_acc, 0)
    best_test = (test_acc, 0)
    for epoch in range(1, cfg.epochs + 1):
        ad.zero_grad(params)
        loss = loss_of(model.forward(x, train=True, rng=rng))
        lv = _check_loss(loss, epoch)
        loss.backward()
        ad.adam_step(params, opt, cfg.lr, cfg.weight_decay)
        pred = predict()
        val_acc = float(np.mean(pred[split.val] == y[split.val])) if len(split.val) else 0.0
        test_acc = float(np.mean(pred[split.test] == y[split.test]))
        history.append({"epoch": epoch, "loss": lv, "val_acc": val_acc})
        if val_acc > best[0]:
            best = (val_acc, test_acc, epoch)
        if test_acc > best_test[0]:
            best_test = (test_acc, epoch)
    if cfg.report == "best-test":
        acc, epoch = best_test
    elif cfg.report == "final":
        acc, epoch = test_acc, cfg.epochs
    else:
        acc, epoch = best[1], best[2]
    metrics = {"accuracy": acc, "best_val_acc": best[0],
               "final_loss": history[-1]["loss"] if history else float("nan")}
    return RunResult(seed, metrics, history, epoch, model.state_dict())


def train_link_sign_run(g, cfg: ExperimentConfig, seed) -> RunResult:
    rng = make_rng(seed)
    split = split_edges(g, cfg.train_edge_ratio, cfg.neg_sample_factor, rng, cfg.val_edge_ratio)
    prop = g if cfg.propagate_test_edges else g.subgraph(split.train_edge_mask)
    x = node_features(prop, "svd", cfg.resolved_feature_dim, seed)
    hidden = cfg.model.hidden_dim
    model = build_model(cfg.model, prop, x.shape[1], hidden, rng, allow_isolated=True)
    mlp = EdgeMLP(hidden, cfg.mlp_hidden or hidden, rng)
    params = model.params + mlp.params
    opt = ad.AdamState()
    tr = split.train
    y = tr.one_hot()

    def evaluate(trip):
        h = model.forward(x)
        logits = mlp.forward(h, trip.u, trip.v).data
        return compute_metrics(logits.argmax(axis=1), trip.label, sign_scores(logits))

    history = []
    best_val, best_metrics, best_epoch = -1.0, None, 0
    best_test, best_test_metrics, best_test_epoch = -1.0, None, 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for epoch in range(1, cfg.epochs + 1):
            ad.zero_grad(params)
            h = model.forward(x, train=True, rng=rng)
            loss = ad.softmax_cross_entropy(mlp.forward(h, tr.u, tr.v), y)
            lv = _check_loss(loss, epoch)
            loss.backward()
            ad.adam_step(params, opt, cfg.lr, cfg.weight_decay)
            rec = {"epoch": epoch, "loss": lv}
            if split.val is not None:
                vm = evaluate(split.val)
                rec["val_macro_f1"] = vm.macro_f1
                if vm.macro_f1 > best_val:
                    best_val, best_metrics, best_epoch = vm.macro_f1, evaluate(split.test), epoch
            if cfg.report == "best-test":
                tm = evaluate(split.test)
                if tm.macro_f1 > best_test:
                    best_test, best_test_metrics, best_test_epoch = tm.macro_f1, tm, epoch
            history.append(rec)
    final = evaluate(split.test)
    if cfg.report == "best-test" and best_test_metrics is not None:
        chosen, epoch = best_test_metrics, best_test_epoch
    elif split.val is not None and best_metrics is not None and cfg.report == "best-val":
        chosen, epoch = best_metrics, best_epoch
    else:
        chosen, epoch = final, cfg.epochs
    metrics = chosen.as_dict()
    if split.val is not None:
        metrics["best_val_macro_f1"] = best_val
    metrics["final_loss"] = history[-1]["loss"] if history else float("nan")
    state = {**model.state_dict(), **mlp.state_dict()}
    return RunResult(seed, metrics, history, epoch, state)


def adjusted_rand(labels_true, labels_pred):
    from sklearn.metrics import adjusted_rand_score

    return float(adjusted_rand_score(labels_true, labels_pred))


def cluster_run(g, labels, cfg: ExperimentConfig, seed) -> RunResult:
    from .spectral import magnetic_cluster

    pred = magnetic_cluster(g, cfg.model.q, cfg.cluster_k, seed=seed)
    return RunResult(seed, {"ari": adjusted_rand(labels, pred)}, [], 0)


# ---------------------------------------------------------------- repeats


def load_data(data: dict, seed):
    """(graph, labels or None) from a data section; SSBM instances are seeded per repeat."""
    from .graph import load_edge_list

    kind = data.get("kind", "ssbm")
    if kind == "ssbm":
        p = SsbmParams(
            nodes_per_cluster=int(data.get("nodes_per_cluster", 500)),
            p_intra=float(data.get("p_intra", 0.02)),
            p_inter=float(data.get("p_inter", 0.01)),
            flip_prob=float(data.get("flip_prob", 0.0)),
            n_clusters=int(data.get("n_clusters", 2)),
            directed=bool(data.get("directed", False)),
            seed=seed,
        )
        return ssbm_generate(p)
    if kind == "file":
        g = load_edge_list(data["path"], directed=bool(data.get("directed", True)))
        labels = None
        if data.get("labels"):
            labels = read_labels(data["labels"], g)
        return g, labels
    raise DomainError(f"unknown data kind {kind!r}")


def read_labels(path, g: SignedDiGraph):
    """CSV `node,label` keyed by external node id; a header line is allowed."""
    index = {name: i for i, name in enumerate(g.node_ids or [str(i) for i in range(g.n_nodes)])}
    labels = np.full(g.n_nodes, -1, dtype=np.int64)
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = [p.strip() for p in line.replace("\t", ",").split(",")]
            if len(parts) < 2 or not parts[0] or parts[0].startswith("#"):
                continue
            try:
                lab = int(parts[1])
            except ValueError:
                if lineno == 1:
                    continue
                raise DomainError(f"{path}:{lineno}: label {parts[1]!r} is not an integer") from None
            if parts[0] in index:
                labels[index[parts[0]]] = lab
    if np.any(labels < 0):
        raise DomainError(f"{path}: {int(np.sum(labels < 0))} node(s) have no label")
    return labels


def _one_repeat(args):
    cfg, seed, graph, labels = args
    if graph is None:
        graph, labels = load_data(cfg.data, seed)
    if cfg.task == "nodeclass":
        if labels is None:
            raise DomainError("node classification needs node labels")
        return train_node_classification_run(graph, labels, cfg, seed)
    if cfg.task == "linksign":
        return train_link_sign_run(graph, cfg, seed)
    if labels is None:
        raise DomainError("clustering evaluation needs ground-truth labels")
    return cluster_run(graph, labels, cfg, seed)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    runs: list

    def summary(self):
        keys = sorted({k for r in self.runs for k in r.metrics})
        out = {}
        for k in keys:
            vals = np.array([r.metrics.get(k, np.nan) for r in self.runs], dtype=float)
            out[k] = {"mean": _clean(np.nanmean(vals)) if np.any(np.isfinite(vals)) else None,
                      "std": _clean(np.nanstd(vals)) if np.any(np.isfinite(vals)) else None}
        return out

    def mean(self, key):
        return float(np.mean([r.metrics[key] for r in self.runs]))


def _clean(x):
    x = float(x)
    return x if math.isfinite(x) else None


def default_workers():
    env = os.environ.get("SPECTRA_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_experiment(cfg: ExperimentConfig, graph=None, labels=None, workers=1) -> ExperimentReport:
    """Repeat the configured task over `n_repeats` child seeds of `cfg.seed`.

    With `graph` given the same data is reused; otherwise the data section is
    loaded per repeat (SSBM instances are regenerated from the repeat seed).
    Results do not depend on `workers`.
    """
    if graph is None and cfg.data.get("kind", "ssbm") == "file":
        graph, labels = load_data(cfg.data, cfg.seed)
    seeds = spawn_seeds(cfg.seed, cfg.resolved_repeats)
    jobs = [(cfg, s, graph, labels) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            runs = list(ex.map(_one_repeat, jobs))
    else:
        runs = [_one_repeat(j) for j in jobs]
    return ExperimentReport(cfg, runs)


def train_node_classification(g, labels, cfg: ExperimentConfig, workers=1) -> ExperimentReport:
    return run_experiment(replace(cfg, task="nodeclass"), g, labels, workers)


def train_link_sign(g, cfg: ExperimentConfig, workers=1) -> ExperimentReport:
    return run_experiment(replace(cfg, task="linksign"), g, None, workers)


def hyperparameter_grid(g, cfg: ExperimentConfig, grid=None, labels=None, repeats=1, workers=1):
    """Exhaustive (lr, weight_decay) search on the validation metric.

    Node classification scores best validation accuracy; link sign prediction
    scores validation macro-F1 (a 10% validation carve is enabled if the
    config has none). Ties go to the smaller lr, then smaller weight_decay.
    Returns (best config, [(lr, weight_decay, score), ...]).
    """
    grid = grid or DEFAULT_GRID
    base = replace(cfg, n_repeats=repeats)
    if cfg.task == "linksign" and cfg.val_edge_ratio == 0.0:
        base = replace(base, val_edge_ratio=0.1)
    key = "best_val_acc" if cfg.task == "nodeclass" else "best_val_macro_f1"
    table, best, best_score = [], None, -math.inf
    for lr in sorted(grid["lr"]):
        for wd in sorted(grid["weight_decay"]):
            trial = replace(base, lr=lr, weight_decay=wd)
            report = run_experiment(trial, g, labels, workers)
            score = report.mean(key)
            table.append((lr, wd, score))
            if score > best_score:
                best, best_score = replace(cfg, lr=lr, weight_decay=wd), score
    return best, table
