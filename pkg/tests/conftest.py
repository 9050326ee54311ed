"""Shared test helpers, chiefly the central finite-difference gradient oracle."""

import numpy as np
import pytest

from emofuse import tensor as T


def finite_diff_gradients(build_loss, leaf, h=1e-4):
    """Central finite differences of build_loss() w.r.t. one leaf tensor.

    build_loss must be a deterministic function of the current leaf data
    (eval mode, no dropout). The leaf's data is perturbed in place and
    restored.
    """
    flat = leaf.data.reshape(-1)
    num = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = build_loss().item()
        flat[i] = orig - h
        down = build_loss().item()
        flat[i] = orig
        num[i] = (up - down) / (2.0 * h)
    return num.reshape(leaf.data.shape)


def assert_grads_match(build_loss, leaves, h=1e-4, rtol=1e-4, floor=1e-6):
    """Check autodiff gradients of build_loss against finite differences.

    Relative error uses max(|analytic|, |numeric|, floor) as denominator so
    near-zero gradients are compared absolutely.
    """
    T.zero_grads(leaves)
    loss = build_loss()
    T.backward(loss)
    for leaf in leaves:
        # A leaf the loss never touches has no grad; finite differences must
        # then agree that the true gradient is zero.
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        numeric = finite_diff_gradients(build_loss, leaf, h=h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        rel = np.abs(analytic - numeric) / denom
        assert rel.max() < rtol, f"gradient mismatch: max rel err {rel.max():.3e}"
    T.zero_grads(leaves)


def randomize_state(state, rng, scale=0.5):
    """Move an encoder state to a generic, well-conditioned parameter point.

    The default 0.02-scale init leaves layer-norm inputs with tiny variance,
    which blows up the truncation error of the finite-difference oracle at
    the stated step; gradients themselves are checked at an O(1) point.
    """
    for p in state.params.values():
        p.data = rng.normal(0.0, scale, size=p.data.shape)
    return state


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
