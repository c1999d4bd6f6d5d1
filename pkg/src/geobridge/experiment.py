"""Training loop, evaluation, leave-one-region-out runner, ablation grid and exports."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .data import Dataset, SplitPlan, compute_stats, split_extrap, split_loro
from .losses import total_loss
from .metrics import EvalReport, argmax_lowest, report_from_predictions
from .model import BridgeModel, build_model
from .nn import INFER, AdamW, ShapeError
from .pca import pca_rgb

logger = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "l_lc", "l_region", "l_con", "total")


class TrainingError(RuntimeError):
    pass


@dataclass
class History:
    rows: list = field(default_factory=list)  # dicts keyed by HISTORY_FIELDS

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: repr(r[k]) if k != "epoch" else r[k] for k in HISTORY_FIELDS})


def train(cfg: TrainConfig, train_ds: Dataset, rng_seed: int | None = None):
    """Fit a fresh model on ``train_ds``; returns ``(model, history)``.

    Mini-batches are reshuffled every epoch; a trailing batch of one sample
    is dropped since batch norm cannot normalise it.  The final-epoch model
    is returned as-is.
    """
    if len(train_ds) < 2:
        raise TrainingError("training set needs at least two samples")
    seed = cfg.seed if rng_seed is None else rng_seed
    init_rng = np.random.default_rng(seed)
    model = build_model(cfg, train_ds.num_features, train_ds.class_scheme,
                        train_ds.region_scheme, init_rng)
    model.stats = compute_stats(train_ds)
    history = History()
    if cfg.epochs == 0:
        return model, history

    x = model.standardize(train_ds.features)
    y, r = train_ds.label, train_ds.region
    lat, lon = train_ds.lat, train_ds.lon
    C = train_ds.class_scheme.num_classes
    R = train_ds.region_scheme.num_regions
    params = model.parameters()
    opt = AdamW(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
    # separate streams so shuffling and dropout don't perturb each other
    shuffle_rng = np.random.default_rng([seed, 1])
    dropout_rng = np.random.default_rng([seed, 2])
    n = len(train_ds)
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        sums = np.zeros(4)
        nb = 0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            if idx.size < 2:
                continue
            model.zero_grad()
            out = model.forward_train(x[idx], lat[idx], lon[idx], dropout_rng)
            try:
                rep, grads = total_loss(out.lc_logits, out.region_logits, out.z_inv, out.z_spec,
                                        y[idx], r[idx], C, R, cfg.loss_weights, cfg.temperature,
                                        cfg.use_region, cfg.con_reduction)
            except (FloatingPointError, ValueError) as exc:
                raise TrainingError(f"epoch {epoch}, batch {bi}: {exc}") from exc
            if not np.isfinite(rep.total):
                raise TrainingError(f"epoch {epoch}, batch {bi}: non-finite total loss")
            model.backward(grads)
            try:
                opt.step(model.gradients())
            except FloatingPointError as exc:
                raise TrainingError(f"epoch {epoch}, batch {bi}: {exc}") from exc
            sums += (rep.l_lc, rep.l_region, rep.l_con, rep.total)
            nb += 1
        if nb == 0:
            raise TrainingError("no usable mini-batch (all had fewer than 2 samples)")
        m = sums / nb
        history.rows.append({"epoch": epoch, "l_lc": float(m[0]), "l_region": float(m[1]),
                             "l_con": float(m[2]), "total": float(m[3])})
        logger.debug("epoch %d total %.5f", epoch, m[3])
    return model, history


def predict(model: BridgeModel, ds: Dataset, batch_size: int = 4096) -> np.ndarray:
    """Class probabilities for every sample (infer mode, row independent)."""
    if ds.num_features != model.n_features:
        raise ShapeError(f"dataset has {ds.num_features} features, model expects {model.n_features}")
    out = []
    for s in range(0, len(ds), batch_size):
        sl = slice(s, s + batch_size)
        out.append(model.forward_infer(ds.features[sl], ds.lat[sl], ds.lon[sl]))
    return np.concatenate(out, axis=0)


def evaluate(model: BridgeModel, test_ds: Dataset) -> EvalReport:
    if len(test_ds) == 0:
        raise ValueError("empty test set")
    pred = argmax_lowest(predict(model, test_ds))
    return report_from_predictions(test_ds.label, pred, model.class_scheme.num_classes)


# --------------------------------------------------------------------------
# protocols


@dataclass
class ExtrapResult:
    model: BridgeModel
    history: History
    plan: SplitPlan
    report: EvalReport
    train_report: EvalReport


def run_extrap(cfg: TrainConfig, ds: Dataset, plan: SplitPlan | None = None) -> ExtrapResult:
    plan = plan or split_extrap(ds, cfg.train_ratio, cfg.seed, cfg.stratified)
    fold = plan.folds[0]
    tr, te = ds.subset(fold.train), ds.subset(fold.test)
    model, hist = train(cfg, tr)
    return ExtrapResult(model, hist, plan, evaluate(model, te), evaluate(model, tr))


@dataclass
class LoroResult:
    plan: SplitPlan
    regions: list  # fold names in canonical order
    reports: list  # EvalReport per fold
    mean_accuracy: float
    mean_weighted_f1: float


def run_loro(cfg: TrainConfig, ds: Dataset) -> LoroResult:
    """Train from scratch per held-out region (seed + region index); unweighted mean over folds."""
    plan = split_loro(ds)
    reports = []
    for fold in plan.folds:
        if fold.train.size == 0:
            raise TrainingError(f"fold {fold.name}: empty training set")
        k = ds.region_scheme.names.index(fold.name)
        fold_cfg = cfg.replace(seed=cfg.seed + k)
        model, _ = train(fold_cfg, ds.subset(fold.train))
        reports.append(evaluate(model, ds.subset(fold.test)))
    accs = [rep.accuracy for rep in reports]
    f1s = [rep.weighted_f1 for rep in reports]
    return LoroResult(plan, [f.name for f in plan.folds], reports,
                      float(np.mean(accs)), float(np.mean(f1s)))


# (use_latlon, learned_pe, use_region) in the published ablation-table order
ABLATION_ROWS = (
    (False, False, False),
    (False, False, True),
    (True, False, False),
    (True, False, True),
    (True, True, False),
    (True, True, True),
)

# LORO reference values per row: (level-1 acc, level-1 F1, level-2 acc, level-2 F1)
REFERENCE_ABLATION = {
    (False, False, False): (74.49, 73.17, 57.76, 53.93),
    (False, False, True): (74.59, 73.26, 58.18, 54.37),
    (True, False, False): (71.90, 70.20, 55.70, 52.14),
    (True, False, True): (70.93, 69.18, 55.61, 52.21),
    (True, True, False): (74.47, 73.03, 58.27, 54.88),
    (True, True, True): (74.77, 73.59, 58.29, 54.44),
}


@dataclass
class AblationRow:
    use_latlon: bool
    learned_pe: bool
    use_region: bool
    accuracy: float
    weighted_f1: float
    plan_digest: str
    reference: tuple  # published (L1 acc, L1 F1, L2 acc, L2 F1)

    @property
    def flags(self):
        return (self.use_latlon, self.learned_pe, self.use_region)


def run_ablation(cfg: TrainConfig, ds: Dataset, scenario: str = "loro") -> list:
    """The six flag combinations, identical splits and seeds across rows."""
    if scenario == "extrap":
        plan = split_extrap(ds, cfg.train_ratio, cfg.seed, cfg.stratified)
    elif scenario == "loro":
        plan = split_loro(ds)
    else:
        raise ValueError(f"unknown scenario {scenario!r}")
    rows = []
    for flags in ABLATION_ROWS:
        row_cfg = cfg.replace(use_latlon=flags[0], learned_pe=flags[1], use_region=flags[2])
        if scenario == "extrap":
            res = run_extrap(row_cfg, ds, plan)
            acc, f1 = res.report.accuracy, res.report.weighted_f1
        else:
            res = run_loro(row_cfg, ds)
            acc, f1 = res.mean_accuracy, res.mean_weighted_f1
        rows.append(AblationRow(*flags, acc, f1, plan.digest(), REFERENCE_ABLATION[flags]))
    return rows


def write_ablation_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["latlon", "learned_pe", "region", "accuracy", "weighted_f1", "plan_sha256",
                    "ref_l1_acc", "ref_l1_f1", "ref_l2_acc", "ref_l2_f1"])
        for row in rows:
            w.writerow([int(row.use_latlon), int(row.learned_pe), int(row.use_region),
                        repr(row.accuracy), repr(row.weighted_f1), row.plan_digest, *row.reference])


# --------------------------------------------------------------------------
# exports


def embeddings(model: BridgeModel, ds: Dataset, which: str) -> np.ndarray:
    """Infer-mode ``z_inv``, ``z_spec`` or ``positional`` vectors for every sample."""
    x = model.standardize(ds.features)
    if which == "positional":
        if not model.cfg.use_latlon:
            raise ValueError("model was trained without coordinates; no positional representation")
        return model.positional(ds.lat, ds.lon, INFER)
    if which == "z_spec" and model.enc_spec is None:
        raise ValueError("model has no region-specific branch")
    branches = ("inv",) if which == "z_inv" else ("inv", "spec")
    out = model.forward(x, ds.lat, ds.lon, INFER, branches=branches)
    if which == "z_inv":
        return out.z_inv
    if which == "z_spec":
        return out.z_spec
    raise ValueError(f"unknown embedding kind {which!r}")


def _write_vectors(ds: Dataset, vectors: np.ndarray, path, prefix: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "lat", "lon", "region", "label"] + [f"{prefix}{k}" for k in range(vectors.shape[1])])
        for i in range(len(ds)):
            w.writerow([ds.ids[i], repr(float(ds.lat[i])), repr(float(ds.lon[i])),
                        int(ds.region[i]), int(ds.label[i])] + [repr(float(v)) for v in vectors[i]])


def export_embeddings(model: BridgeModel, ds: Dataset, which: str, path) -> np.ndarray:
    vec = embeddings(model, ds, which)
    _write_vectors(ds, vec, path, "v")
    return vec


def export_rgb(model: BridgeModel, ds: Dataset, path) -> np.ndarray:
    res = pca_rgb(embeddings(model, ds, "positional"))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "lat", "lon", "r", "g", "b"])
        for i in range(len(ds)):
            w.writerow([ds.ids[i], repr(float(ds.lat[i])), repr(float(ds.lon[i]))]
                       + [repr(float(v)) for v in res.rgb[i]])
    return res.rgb
