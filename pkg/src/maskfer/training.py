"""Training loop, inference path, cross-domain evaluation, ablation harness,
and mask dumping.

The combined training loss is l_cls + sep_weight * l_sep + div_weight * l_div,
with the two channel losses optional (ablation flags).  At inference only the
gated-feature classifier path runs; the channel modules are dropped.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, asdict
from fractions import Fraction

import numpy as np

from .channels import (
    DEFAULT_DROP_RATE,
    backward_channel,
    div_loss,
    sample_drop_mask,
    sep_logits,
    softmax_cross_entropy,
    split_channels,
)
from .feature_store import FeatureDataset, make_batches
from .frozen import FileBackedProvider
from .network import ForwardCache, MaskNetwork, TrainingDivergedError
from .optim import AdamState


@dataclass
class TrainConfig:
    sep_weight: float = 1.5
    div_weight: float = 5.0
    drop_rate: Fraction = DEFAULT_DROP_RATE
    base_lr: float = 2e-4
    gamma: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 60
    batch_size: int = 64
    seed: int = 0
    mask_on: bool = True
    sep_on: bool = True
    div_on: bool = True
    feature_dim: int = 512
    num_classes: int = 7
    input_dim: int = 64
    hidden: tuple = (128,)
    fc_bias: bool = True
    log_steps: bool = False

    def __post_init__(self):
        self.drop_rate = Fraction(self.drop_rate)
        self.hidden = tuple(self.hidden)
        self.validate()

    def validate(self):
        if self.sep_weight < 0 or self.div_weight < 0:
            raise ValueError("loss weights must be non-negative")
        if self.sep_on and not self.mask_on:
            raise ValueError("separation loss requires the mask path")
        if self.div_on and not self.mask_on:
            raise ValueError("diversity loss requires the mask path")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    def to_dict(self):
        d = asdict(self)
        d["drop_rate"] = str(self.drop_rate)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "drop_rate" in d:
            d["drop_rate"] = Fraction(d["drop_rate"])
        return cls(**d)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _plain_cache(net):
    return ForwardCache(
        version=net._version,
        inputs=None,
        pre_activations=[],
        activations=[],
        mask=None,
        mask_sig=None,
    )


def _forward_gated(net, inputs, frozen):
    """Shared forward: returns (gated features, cache ready for backward)."""
    frozen = np.asarray(frozen, dtype=np.float64)
    if net.use_mask:
        _, mask_sig, cache = net.forward_mask(inputs)
        gated = net.apply_mask(mask_sig, frozen)
        cache.frozen = frozen
    else:
        gated = frozen
        cache = _plain_cache(net)
    return gated, cache


def _batch_frozen(provider, batch):
    return np.asarray(
        provider.extract(batch.backbone_inputs, indices=batch.indices),
        dtype=np.float64,
    )


def mean_piece_max(net, dataset, partition, provider=None):
    """Mean over samples and pieces of the per-piece max of the gated features."""
    if provider is None:
        provider = FileBackedProvider(dataset.frozen_features)
        frozen = provider.extract(None, indices=np.arange(dataset.num_samples))
    else:
        frozen = provider.extract(
            np.asarray(dataset.backbone_inputs, dtype=np.float64),
            indices=np.arange(dataset.num_samples),
        )
    gated, _ = _forward_gated(net, np.asarray(dataset.backbone_inputs, np.float64), frozen)
    _, arg = div_loss(gated, partition)
    rows = np.repeat(np.arange(gated.shape[0]), partition.num_classes)
    return float(gated[rows, arg.ravel()].mean())


def train(config: TrainConfig, dataset: FeatureDataset, provider=None):
    """Train a network on one domain; deterministic per seed.

    Returns (network, history).  history holds per-epoch means of the three
    loss components plus their weighted sum, and the train-set mean piece
    max before and after training (used to observe the diversity loss).
    """
    if provider is None:
        provider = FileBackedProvider(dataset.frozen_features)
    if dataset.feature_dim != config.feature_dim:
        raise ValueError("dataset feature width differs from config")
    if dataset.num_classes != config.num_classes:
        raise ValueError("dataset class count differs from config")
    net = MaskNetwork(
        input_dim=dataset.input_dim,
        feature_dim=config.feature_dim,
        num_classes=config.num_classes,
        hidden=config.hidden,
        seed=config.seed,
        use_mask=config.mask_on,
        fc_bias=config.fc_bias,
    )
    partition = split_channels(config.feature_dim, config.num_classes, config.drop_rate)
    adam = AdamState(
        net.parameters(),
        base_lr=config.base_lr,
        gamma=config.gamma,
        weight_decay=config.weight_decay,
    )
    drop_rng = np.random.default_rng([config.seed, 0xD209])
    history = {"epochs": [], "steps": [] if config.log_steps else None}
    if config.mask_on:
        history["piece_max_start"] = mean_piece_max(net, dataset, partition, provider)
    batch_size = min(config.batch_size, dataset.num_samples)
    for epoch in range(config.epochs):
        batches = make_batches(dataset, batch_size, seed=[config.seed, epoch], shuffle=True)
        sums = np.zeros(4)
        for step, batch in enumerate(batches):
            x = np.asarray(batch.backbone_inputs, dtype=np.float64)
            frozen = _batch_frozen(provider, batch)
            y = batch.labels
            b = batch.size
            gated, cache = _forward_gated(net, x, frozen)
            l_cls, logits = net.cls_loss(gated, y, cache)
            probs = np.exp(logits - logits.max(axis=1, keepdims=True))
            probs /= probs.sum(axis=1, keepdims=True)
            grad_logits = probs
            grad_logits[np.arange(b), y] -= 1.0
            grad_logits /= b

            l_sep = 0.0
            l_div = 0.0
            grad_gated_extra = None
            if config.sep_on or config.div_on:
                sep_cache = sep_probs = div_cache = None
                if config.sep_on:
                    drop = sample_drop_mask(partition, drop_rng)
                    piece_logits, sep_cache = sep_logits(gated, drop, partition)
                    l_sep, sep_probs = softmax_cross_entropy(piece_logits, y)
                if config.div_on:
                    l_div, div_cache = div_loss(gated, partition)
                grad_gated_extra = backward_channel(
                    gated,
                    y,
                    partition,
                    sep_cache=sep_cache,
                    sep_probs=sep_probs,
                    div_cache=div_cache,
                    sep_weight=config.sep_weight if config.sep_on else 0.0,
                    div_weight=config.div_weight if config.div_on else 0.0,
                )
            grads = net.backward(cache, grad_logits, grad_gated_extra)
            try:
                adam.step(net.parameters(), grads, epoch)
                net.bump_version()
                net.check_finite()
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(
                    f"{exc} (epoch {epoch}, step {step})"
                ) from exc
            l_train = (
                l_cls
                + (config.sep_weight * l_sep if config.sep_on else 0.0)
                + (config.div_weight * l_div if config.div_on else 0.0)
            )
            sums += (l_cls, l_sep, l_div, l_train)
            if config.log_steps:
                history["steps"].append(
                    {"epoch": epoch, "step": step, "l_cls": l_cls,
                     "l_sep": l_sep, "l_div": l_div, "l_train": l_train}
                )
        means = sums / len(batches)
        history["epochs"].append(
            {"l_cls": means[0], "l_sep": means[1], "l_div": means[2], "l_train": means[3]}
        )
    if config.mask_on:
        history["piece_max_end"] = mean_piece_max(net, dataset, partition, provider)
    return net, history


def predict(net: MaskNetwork, provider, inputs, indices=None):
    """Classify via the gated-feature head only; ties go to the lowest class."""
    inputs = np.asarray(inputs, dtype=np.float64)
    frozen = np.asarray(provider.extract(inputs, indices=indices), dtype=np.float64)
    gated, _ = _forward_gated(net, inputs, frozen)
    logits = net.logits(gated)
    return np.argmax(logits, axis=1), logits


def evaluate_cross_domain(
    net, datasets, train_domain, provider=None, config=None, predict_fn=None
):
    """Accuracy on every domain; Table-style report with per-class recall."""
    if not datasets:
        raise ValueError("need at least one evaluation dataset")
    accuracies = {}
    per_class = {}
    for ds in datasets:
        if ds.num_samples == 0:
            raise ValueError(f"empty dataset {ds.name}")
        if predict_fn is not None:
            pred = np.asarray(predict_fn(ds))
        else:
            ds_provider = provider or FileBackedProvider(ds.frozen_features)
            pred, _ = predict(
                net, ds_provider, ds.backbone_inputs,
                indices=np.arange(ds.num_samples),
            )
        labels = ds.labels.astype(np.int64)
        accuracies[ds.name] = float((pred == labels).mean() * 100.0)
        recalls = []
        for cls in range(ds.num_classes):
            sel = labels == cls
            recalls.append(float((pred[sel] == cls).mean() * 100.0) if sel.any() else None)
        per_class[ds.name] = recalls
    names = [ds.name for ds in datasets]
    mean_acc = float(np.mean([accuracies[n] for n in names]))
    unseen = [n for n in names if n != train_domain]
    report = {
        "train_domain": train_domain,
        "accuracies": accuracies,
        "mean_accuracy": mean_acc,
        "mean_unseen_accuracy": (
            float(np.mean([accuracies[n] for n in unseen])) if unseen else None
        ),
        "per_class_recall": per_class,
        "config": config.to_dict() if config is not None else None,
        "config_hash": config.hash() if config is not None else None,
        "seed": config.seed if config is not None else None,
    }
    return report


def report_to_json(report):
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


ABLATION_VARIANTS = (
    ("baseline", {"mask_on": False, "sep_on": False, "div_on": False}),
    ("mask", {"mask_on": True, "sep_on": False, "div_on": False}),
    ("mask+sep", {"mask_on": True, "sep_on": True, "div_on": False}),
    ("mask+sep+div", {"mask_on": True, "sep_on": True, "div_on": True}),
)


def run_ablation(config: TrainConfig, datasets, train_domain, provider=None):
    """Train the four ablation variants with one seed; Table-shaped output."""
    source = next(ds for ds in datasets if ds.name == train_domain)
    rows = []
    for name, flags in ABLATION_VARIANTS:
        variant = TrainConfig.from_dict({**config.to_dict(), **flags})
        net, _ = train(variant, source, provider)
        report = evaluate_cross_domain(
            net, datasets, train_domain, provider=provider, config=variant
        )
        rows.append(
            {
                "variant": name,
                "mask": flags["mask_on"],
                "separation": flags["sep_on"],
                "diverse": flags["div_on"],
                "accuracies": report["accuracies"],
                "mean_accuracy": report["mean_accuracy"],
                "mean_unseen_accuracy": report["mean_unseen_accuracy"],
                "config_hash": variant.hash(),
                "seed": variant.seed,
            }
        )
    return {"train_domain": train_domain, "rows": rows}


def dump_masks(net, dataset, partition, csv_path, stats_path=None, provider=None):
    """Per-class mean sigmoid mask as CSV, plus per-class piece-max stats.

    Classes with no samples get a row marked 'absent' instead of fabricated
    numbers.
    """
    if not net.use_mask:
        raise ValueError("mask dump requires a mask-enabled network")
    if provider is None:
        provider = FileBackedProvider(dataset.frozen_features)
    x = np.asarray(dataset.backbone_inputs, dtype=np.float64)
    frozen = np.asarray(
        provider.extract(x, indices=np.arange(dataset.num_samples)), dtype=np.float64
    )
    _, mask_sig, _ = net.forward_mask(x)
    gated = net.apply_mask(mask_sig, frozen)
    _, arg = div_loss(gated, partition)
    rows = np.repeat(np.arange(gated.shape[0]), partition.num_classes)
    piece_max = gated[rows, arg.ravel()].reshape(gated.shape[0], -1)
    labels = dataset.labels.astype(np.int64)
    L, C = dataset.num_classes, dataset.feature_dim
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class"] + [str(c) for c in range(C)])
        stats = {}
        for cls in range(L):
            sel = labels == cls
            if not sel.any():
                writer.writerow([str(cls), "absent"])
                stats[str(cls)] = None
                continue
            mean_mask = mask_sig[sel].mean(axis=0)
            writer.writerow([str(cls)] + [repr(float(v)) for v in mean_mask])
            stats[str(cls)] = {
                "piece_max_mean": piece_max[sel].mean(axis=0).tolist(),
                "count": int(sel.sum()),
            }
    if stats_path is not None:
        with open(stats_path, "w") as fh:
            json.dump(stats, fh, sort_keys=True, indent=2)
    return stats


def load_mask_dump(csv_path):
    """Inverse of dump_masks' CSV: {class index: mask vector or None}."""
    out = {}
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            cls = int(row[0])
            if len(row) == 2 and row[1] == "absent":
                out[cls] = None
            else:
                out[cls] = np.array([float(v) for v in row[1:]])
    return out
