"""Shared fixtures and independent oracles used across the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from ovfree import rng as rngmod


@pytest.fixture
def rng():
    """Deterministic generator for a test; independent of every other test."""
    return rngmod.stream(20260814, 0)


def stream(stream_id: int) -> np.random.Generator:
    return rngmod.stream(20260814, stream_id)


def random_hermitian(gen: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    z = gen.standard_normal((dim, dim)) + 1j * gen.standard_normal((dim, dim))
    return scale * (z + z.conj().T) / 2.0


def random_half_plane(gen: np.random.Generator, dim: int, margin: float = 0.5,
                      scale: float = 1.0) -> np.ndarray:
    """Random matrix with imaginary part >= margin (strictly upper half-plane)."""
    re = random_hermitian(gen, dim, scale)
    bump = random_hermitian(gen, dim, scale)
    psd = bump @ bump.conj().T / max(1.0, np.linalg.norm(bump, 2))
    return re + 1j * (psd + margin * np.eye(dim))


# ---------------------------------------------------------------------------
# closed-form oracles (independent of the production quadrature path)


def semicircle_g_oracle(z: complex, variance: float = 1.0) -> complex:
    """Cauchy transform of the semicircle law via the explicit square root.

    The product of principal square roots of (z - edge) and (z + edge) picks
    the branch with a cut exactly on the support, which is the unique choice
    decaying like 1/z at infinity.
    """
    edge = 2.0 * np.sqrt(variance)
    w = np.sqrt(z - edge) * np.sqrt(z + edge)
    return (z - w) / (2.0 * variance)


def arcsine_g_oracle(z: complex, radius: float = 2.0) -> complex:
    """Cauchy transform of the arcsine law: the decaying branch of (z^2-r^2)^(-1/2)."""
    return 1.0 / (np.sqrt(z - radius) * np.sqrt(z + radius))


def central_derivative(fn, z: complex, order: int = 1, h: float = 1e-4) -> complex:
    """Richardson-extrapolated central differences; oracle for analytic derivatives."""
    if order == 1:
        d1 = (fn(z + h) - fn(z - h)) / (2 * h)
        d2 = (fn(z + h / 2) - fn(z - h / 2)) / h
        return (4 * d2 - d1) / 3.0
    if order == 2:
        return (fn(z + h) - 2 * fn(z) + fn(z - h)) / h ** 2
    raise ValueError("orders 1 and 2 only")
