"""Finite-difference verification of the full training gradient on tiny,
randomly drawn configurations.  Shared by the test suite and the CLI's
gradcheck subcommand.
"""

from __future__ import annotations

import numpy as np

from .channels import (
    backward_channel,
    div_loss,
    sample_drop_mask,
    sep_logits,
    softmax_cross_entropy,
    split_channels,
)
from .network import MaskNetwork
from .optim import grad_check


def random_tiny_case(seed):
    """A small random configuration: B<=4, D<=6, H<=8, C in {14, 21}, L=7."""
    rng = np.random.default_rng(seed)
    batch = int(rng.integers(1, 5))
    input_dim = int(rng.integers(2, 7))
    hidden = int(rng.integers(2, 9))
    feature_dim = int(rng.choice([14, 21]))
    num_classes = 7
    net = MaskNetwork(
        input_dim=input_dim,
        feature_dim=feature_dim,
        num_classes=num_classes,
        hidden=(hidden,),
        seed=int(rng.integers(0, 2**31)),
    )
    x = rng.normal(0.0, 1.0, (batch, input_dim))
    frozen = rng.normal(0.0, 1.0, (batch, feature_dim))
    labels = rng.integers(0, num_classes, batch)
    partition = split_channels(feature_dim, num_classes)
    drop = sample_drop_mask(partition, rng)
    return net, x, frozen, labels, partition, drop


def full_loss(net, x, frozen, labels, partition, drop, sep_weight, div_weight):
    _, mask_sig, cache = net.forward_mask(x)
    gated = net.apply_mask(mask_sig, frozen)
    cache.frozen = np.asarray(frozen, dtype=np.float64)
    l_cls, logits = net.cls_loss(gated, labels, cache)
    piece_logits, sep_cache = sep_logits(gated, drop, partition)
    l_sep, sep_probs = softmax_cross_entropy(piece_logits, labels)
    l_div, div_cache = div_loss(gated, partition)
    total = l_cls + sep_weight * l_sep + div_weight * l_div
    aux = (cache, logits, gated, sep_cache, sep_probs, div_cache)
    return total, l_cls, l_sep, l_div, aux


def full_loss_grads(net, x, frozen, labels, partition, drop, sep_weight, div_weight):
    total, _, _, _, aux = full_loss(
        net, x, frozen, labels, partition, drop, sep_weight, div_weight
    )
    cache, logits, gated, sep_cache, sep_probs, div_cache = aux
    b = len(labels)
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    grad_logits = probs
    grad_logits[np.arange(b), labels] -= 1.0
    grad_logits /= b
    grad_extra = backward_channel(
        gated,
        labels,
        partition,
        sep_cache=sep_cache,
        sep_probs=sep_probs,
        div_cache=div_cache,
        sep_weight=sep_weight,
        div_weight=div_weight,
    )
    grads = net.backward(cache, grad_logits, grad_extra)
    return total, grads


def _flatten(net, grads=None):
    parts = []
    for name, arr, _ in net.parameters():
        src = grads[name] if grads is not None else arr
        parts.append(np.asarray(src, dtype=np.float64).ravel())
    return np.concatenate(parts)


def _unflatten_into(net, theta):
    off = 0
    values = []
    for _, arr, _ in net.parameters():
        values.append(theta[off:off + arr.size].reshape(arr.shape))
        off += arr.size
    net.set_parameters(values)


def check_full_gradient(seed, sep_weight=1.5, div_weight=5.0, step=1e-5):
    """Max relative error between analytic and central-difference gradients
    of the combined training loss for one random tiny configuration."""
    net, x, frozen, labels, partition, drop = random_tiny_case(seed)
    _, grads = full_loss_grads(
        net, x, frozen, labels, partition, drop, sep_weight, div_weight
    )
    analytic = _flatten(net, grads)

    def loss_fn(theta):
        _unflatten_into(net, theta)
        total, *_ = full_loss(
            net, x, frozen, labels, partition, drop, sep_weight, div_weight
        )
        return total

    theta0 = _flatten(net)
    err = grad_check(loss_fn, theta0.copy(), analytic, step=step)
    _unflatten_into(net, theta0)
    return err
