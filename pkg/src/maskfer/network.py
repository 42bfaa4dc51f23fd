"""The trainable gating network and classifier head.

An MLP over the raw inputs produces a pre-sigmoid mask per feature channel;
the sigmoid of that mask gates the frozen features elementwise, and a fully
connected head classifies the gated features.  Forward saves everything the
hand-derived backward needs.  All parameters are float64 during training.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np


class TrainingDivergedError(RuntimeError):
    pass


class StaleCacheError(RuntimeError):
    pass


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def stable_log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


@dataclass
class ForwardCache:
    version: int
    inputs: np.ndarray
    pre_activations: list
    activations: list
    mask: np.ndarray        # pre-sigmoid, B x C
    mask_sig: np.ndarray    # sigmoid mask, B x C
    frozen: np.ndarray | None = None
    gated: np.ndarray | None = None
    logits: np.ndarray | None = None


class MaskNetwork:
    """Mask-producing MLP (widths input_dim -> hidden... -> feature_dim)
    plus an L x C classifier head.

    With use_mask=False the network degenerates to the head alone applied
    directly to the frozen features (the no-gating baseline).
    """

    def __init__(
        self,
        input_dim,
        feature_dim,
        num_classes,
        hidden=(128,),
        seed=0,
        use_mask=True,
        fc_bias=True,
    ):
        self.input_dim = input_dim
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.hidden = tuple(hidden)
        self.seed = seed
        self.use_mask = use_mask
        self.has_fc_bias = fc_bias
        self._version = 0
        rng = np.random.default_rng(seed)
        self.backbone = []
        if use_mask:
            widths = (input_dim, *self.hidden, feature_dim)
            for fan_in, fan_out in zip(widths[:-1], widths[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
                b = rng.uniform(-bound, bound, size=fan_out)
                self.backbone.append((w, b))
        bound = 1.0 / np.sqrt(feature_dim)
        self.fc_weight = rng.uniform(-bound, bound, size=(num_classes, feature_dim))
        self.fc_bias = np.zeros(num_classes) if fc_bias else None

    # parameters as (name, array, is_bias) in a fixed order
    def parameters(self):
        out = []
        for i, (w, b) in enumerate(self.backbone):
            out.append((f"backbone.{i}.weight", w, False))
            out.append((f"backbone.{i}.bias", b, True))
        out.append(("fc.weight", self.fc_weight, False))
        if self.fc_bias is not None:
            out.append(("fc.bias", self.fc_bias, True))
        return out

    def set_parameters(self, values):
        params = self.parameters()
        if len(values) != len(params):
            raise ValueError("parameter count mismatch")
        for (name, arr, _), val in zip(params, values):
            arr[...] = val
        self.bump_version()

    def bump_version(self):
        self._version += 1

    def check_finite(self):
        for name, arr, _ in self.parameters():
            if not np.isfinite(arr).all():
                raise TrainingDivergedError(f"non-finite parameter {name}")

    def forward_mask(self, x):
        """Run the MLP; returns (pre-sigmoid mask, sigmoid mask, cache)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != self.input_dim:
            raise ValueError(f"expected input width {self.input_dim}, got {x.shape[1]}")
        if not self.use_mask:
            raise RuntimeError("forward_mask called on a no-mask network")
        pre, act = [], []
        a = x
        last = len(self.backbone) - 1
        for i, (w, b) in enumerate(self.backbone):
            z = a @ w + b
            pre.append(z)
            a = z if i == last else np.maximum(z, 0.0)
            act.append(a)
        mask = act[-1]
        if not np.isfinite(mask).all():
            raise TrainingDivergedError("non-finite mask activation")
        mask_sig = sigmoid(mask)
        cache = ForwardCache(
            version=self._version,
            inputs=x,
            pre_activations=pre,
            activations=act,
            mask=mask,
            mask_sig=mask_sig,
        )
        return mask, mask_sig, cache

    @staticmethod
    def apply_mask(mask_sig, frozen):
        """Elementwise gating of the frozen features."""
        mask_sig = np.asarray(mask_sig, dtype=np.float64)
        frozen = np.asarray(frozen, dtype=np.float64)
        if mask_sig.shape != frozen.shape:
            raise ValueError(
                f"shape mismatch: mask {mask_sig.shape} vs features {frozen.shape}"
            )
        return mask_sig * frozen

    def logits(self, gated):
        out = gated @ self.fc_weight.T
        if self.fc_bias is not None:
            out = out + self.fc_bias
        return out

    def cls_loss(self, gated, labels, cache=None):
        """Mean softmax cross-entropy of the classifier head over gated features."""
        labels = np.asarray(labels)
        if labels.size and int(labels.max()) >= self.num_classes:
            raise ValueError("label out of range")
        logits = self.logits(gated)
        log_probs = stable_log_softmax(logits)
        loss = float(-log_probs[np.arange(len(labels)), labels].mean())
        if cache is not None:
            cache.gated = gated
            cache.logits = logits
        return loss, logits

    def backward(self, cache, grad_logits, grad_gated_extra=None):
        """Hand-derived gradients for every parameter.

        grad_logits is d(loss)/d(logits); grad_gated_extra, if given, is an
        additional d(loss)/d(gated features) term from the channel losses.
        The mask path gradient is grad_gated * frozen * s * (1 - s).
        """
        if cache.version != self._version:
            raise StaleCacheError("forward cache predates a parameter update")
        grads = {}
        gated = cache.gated
        grads["fc.weight"] = grad_logits.T @ gated
        if self.fc_bias is not None:
            grads["fc.bias"] = grad_logits.sum(axis=0)
        grad_gated = grad_logits @ self.fc_weight
        if grad_gated_extra is not None:
            grad_gated = grad_gated + grad_gated_extra
        if not self.use_mask:
            return grads
        s = cache.mask_sig
        grad_mask = grad_gated * cache.frozen * s * (1.0 - s)
        dz = grad_mask
        for i in range(len(self.backbone) - 1, -1, -1):
            w, _ = self.backbone[i]
            if i < len(self.backbone) - 1:
                dz = dz * (cache.pre_activations[i] > 0)
            a_prev = cache.inputs if i == 0 else cache.activations[i - 1]
            grads[f"backbone.{i}.weight"] = a_prev.T @ dz
            grads[f"backbone.{i}.bias"] = dz.sum(axis=0)
            if i > 0:
                dz = dz @ w.T
        return grads

    # ---- checkpoint io -------------------------------------------------
    def save(self, path, config_hash=""):
        header = {
            "input_dim": self.input_dim,
            "feature_dim": self.feature_dim,
            "num_classes": self.num_classes,
            "hidden": list(self.hidden),
            "seed": self.seed,
            "use_mask": self.use_mask,
            "fc_bias": self.has_fc_bias,
            "config_hash": config_hash,
        }
        blob = b"".join(
            np.ascontiguousarray(arr, dtype="<f8").tobytes()
            for _, arr, _ in self.parameters()
        )
        head = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<I", len(head)))
            fh.write(head)
            fh.write(blob)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode())
            blob = fh.read()
        net = cls(
            input_dim=header["input_dim"],
            feature_dim=header["feature_dim"],
            num_classes=header["num_classes"],
            hidden=header["hidden"],
            seed=header["seed"],
            use_mask=header["use_mask"],
            fc_bias=header["fc_bias"],
        )
        off = 0
        for _, arr, _ in net.parameters():
            count = arr.size
            arr[...] = np.frombuffer(
                blob, dtype="<f8", count=count, offset=off
            ).reshape(arr.shape)
            off += 8 * count
        if off != len(blob):
            raise ValueError("checkpoint blob size mismatch")
        return net


def adapt_dim(features, target_dim):
    """Reduce channel count by averaging non-overlapping windows.

    Windows are ceil(C'/target)-wide; the final window may be shorter but
    must be non-empty.
    """
    features = np.asarray(features)
    src = features.shape[1]
    if src < target_dim:
        raise ValueError(f"cannot widen {src} channels to {target_dim}")
    if src == target_dim:
        return features.copy()
    window = -(-src // target_dim)
    if (target_dim - 1) * window >= src:
        raise ValueError(
            f"cannot split {src} channels into {target_dim} windows of width {window}"
        )
    out = np.empty((features.shape[0], target_dim), dtype=np.float64)
    for k in range(target_dim):
        start = k * window
        stop = min(start + window, src)
        out[:, k] = features[:, start:stop].mean(axis=1)
    return out
