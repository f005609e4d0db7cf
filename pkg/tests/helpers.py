"""Shared test utilities: independent oracles and tiny network configs.

Everything here recomputes expected values from first principles (loops,
scalar arithmetic, finite differences) so tests never reuse the code paths
they are checking.
"""

from __future__ import annotations

import numpy as np
import torch

from intrinsic_encoder.data import Dataset, DomainSet
from intrinsic_encoder.nets import (
    BundleConfig,
    DiscriminatorConfig,
    EncoderConfig,
    GeneratorConfig,
    create_model_bundle,
)

# Smallest configs the contracts allow; used for gradient checks (8x8 inputs).
TINY_ENCODER = EncoderConfig(base_channels=4, num_residual_blocks=1)
TINY_GENERATOR = GeneratorConfig(base_channels=2, num_residual_blocks=1)
TINY_DISCRIMINATOR = DiscriminatorConfig(channel_schedule=(2, 4, 1))
TINY_BUNDLE = BundleConfig(TINY_ENCODER, TINY_GENERATOR, TINY_DISCRIMINATOR)

# Small but not minimal; used for short training runs (16x16 inputs).
TOY_BUNDLE = BundleConfig(
    encoder=EncoderConfig(base_channels=8, num_residual_blocks=2),
    generator=GeneratorConfig(base_channels=8, num_residual_blocks=2),
    discriminator=DiscriminatorConfig(channel_schedule=(8, 16, 1)),
)


def tiny_bundle(domains=("a", "b"), seed=0, dtype=torch.float64):
    bundle = create_model_bundle(domains, TINY_BUNDLE, seed=seed)
    return bundle.to(dtype)


def toy_bundle(domains=("a", "b"), seed=0):
    return create_model_bundle(domains, TOY_BUNDLE, seed=seed)


def conv_shape_oracle(size: int, stages) -> int:
    """Independent per-stage floor((n + 2p - k) / s) + 1 recurrence."""
    n = size
    for kernel, stride, padding in stages:
        n = (n + 2 * padding - kernel) // stride + 1
    return n


def array_dataset(arrays_by_domain: dict[str, np.ndarray]) -> Dataset:
    """In-memory Dataset from {domain: (n, 3, H, W) float32} arrays."""
    sets = []
    for domain, arr in arrays_by_domain.items():
        arr = np.asarray(arr, dtype=np.float32)
        sets.append(DomainSet(domain_id=domain, image_size=arr.shape[2:], arrays=arr))
    return Dataset(sets)


def central_difference_gradients(scalar_fn, params, h: float = 1e-5):
    """Per-parameter central finite differences of scalar_fn() (no autograd)."""
    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                plus = scalar_fn()
                flat[i] = orig - h
                minus = scalar_fn()
                flat[i] = orig
                gflat[i] = (plus - minus) / (2.0 * h)
            grads.append(g)
    return grads


def assert_gradients_close(analytic, numeric, rtol: float = 1e-3, atol: float = 1e-8):
    for a, n in zip(analytic, numeric):
        np.testing.assert_allclose(a.detach().numpy(), n.numpy(), rtol=rtol, atol=atol)


def snapshot_parameters(module) -> dict[str, np.ndarray]:
    """Bit-exact copy of every parameter/buffer for later identity comparison."""
    return {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def identical_parameters(before: dict[str, np.ndarray], module) -> bool:
    after = module.state_dict()
    if set(before) != set(after):
        return False
    return all(np.array_equal(before[k], after[k].detach().cpu().numpy()) for k in before)
