"""Channel separation, channel drop, max-pool logits, and the two
regularization losses over gated features, with their backward pass.

The C channels are split into L contiguous pieces (one per class): the
first L-1 pieces get floor(C/L) channels, the last absorbs the remainder.
The separation loss is a softmax cross-entropy over per-piece maxima taken
after channel drop; the diversity loss pushes the per-piece maxima (taken
without drop) upward.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import kernels

DEFAULT_DROP_RATE = Fraction(10, 73)


@dataclass(frozen=True)
class ChannelPartition:
    num_channels: int
    num_classes: int
    piece_sizes: tuple
    piece_offsets: tuple
    drop_rate: Fraction = DEFAULT_DROP_RATE
    c_norm: int = 73

    def drop_counts(self):
        return tuple(int(self.drop_rate * size) for size in self.piece_sizes)

    def offsets_array(self):
        return np.asarray(self.piece_offsets, dtype=np.int64)

    def sizes_array(self):
        return np.asarray(self.piece_sizes, dtype=np.int64)


def split_channels(num_channels, num_classes, drop_rate=DEFAULT_DROP_RATE):
    """Contiguous split of C channels into L pieces, remainder to the last."""
    if num_classes < 1 or num_channels < num_classes:
        raise ValueError(
            f"need num_channels >= num_classes >= 1, got {num_channels}, {num_classes}"
        )
    base = num_channels // num_classes
    sizes = [base] * (num_classes - 1) + [base + num_channels % num_classes]
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).tolist()
    drop_rate = Fraction(drop_rate)
    for size in sizes:
        if int(drop_rate * size) >= size:
            raise ValueError("drop rate would empty a piece")
    return ChannelPartition(
        num_channels=num_channels,
        num_classes=num_classes,
        piece_sizes=tuple(sizes),
        piece_offsets=tuple(offsets),
        drop_rate=drop_rate,
        c_norm=max(base, 1),
    )


@dataclass(frozen=True)
class DropMask:
    """Per-channel keep flags, shared by every row of the batch."""

    keep: np.ndarray  # C, uint8, 1 = keep

    def num_dropped(self, partition):
        return tuple(
            int(size - self.keep[off:off + size].sum())
            for off, size in zip(partition.piece_offsets, partition.piece_sizes)
        )


def sample_drop_mask(partition: ChannelPartition, rng) -> DropMask:
    """Drop exactly floor(drop_rate * size) uniformly chosen channels per piece."""
    keep = np.ones(partition.num_channels, dtype=np.uint8)
    for off, size, count in zip(
        partition.piece_offsets, partition.piece_sizes, partition.drop_counts()
    ):
        if count:
            dropped = rng.choice(size, size=count, replace=False)
            keep[off + dropped] = 0
    return DropMask(keep=keep)


def sep_logits(gated, drop: DropMask, partition: ChannelPartition):
    """Per-piece max over surviving channels; returns (B x L logits, argmax cache)."""
    gated = np.asarray(gated, dtype=np.float64)
    if gated.shape[1] != partition.num_channels:
        raise ValueError("channel count mismatch")
    return kernels.piece_max_dropped(
        gated, partition.offsets_array(), partition.sizes_array(), drop.keep
    )


def softmax_cross_entropy(logits, labels):
    """Mean stabilized softmax cross-entropy; also returns softmax probabilities."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1)
    probs = exp / total[:, None]
    rows = np.arange(logits.shape[0])
    log_probs = shifted[rows, labels] - np.log(total)
    return float(-log_probs.mean()), probs


def sep_loss(piece_logits, labels):
    loss, _ = softmax_cross_entropy(piece_logits, labels)
    return loss


def div_loss(gated, partition: ChannelPartition):
    """1 - sum of per-piece maxima (no drop) / (B * c_norm)."""
    gated = np.asarray(gated, dtype=np.float64)
    maxima, arg = kernels.piece_max(
        gated, partition.offsets_array(), partition.sizes_array()
    )
    b = gated.shape[0]
    loss = 1.0 - float(maxima.sum()) / (b * partition.c_norm)
    return loss, arg


def backward_channel(
    gated,
    labels,
    partition: ChannelPartition,
    sep_cache=None,
    sep_probs=None,
    div_cache=None,
    sep_weight=0.0,
    div_weight=0.0,
):
    """Gradient of sep_weight*l_sep + div_weight*l_div w.r.t. the gated features.

    Max-pooling routes gradient only to the cached winning channel of each
    (row, piece); dropped channels never receive separation gradient because
    they can never win.
    """
    b, c = gated.shape
    grad = np.zeros((b, c), dtype=np.float64)
    if sep_weight != 0.0 and sep_cache is not None:
        delta = sep_probs.copy()
        rows = np.arange(b)
        delta[rows, labels] -= 1.0
        delta *= sep_weight / b
        kernels.scatter_add_at(grad, sep_cache, delta)
    if div_weight != 0.0 and div_cache is not None:
        coeff = np.full(
            (b, partition.num_classes),
            -div_weight / (b * partition.c_norm),
            dtype=np.float64,
        )
        kernels.scatter_add_at(grad, div_cache, coeff)
    return grad
