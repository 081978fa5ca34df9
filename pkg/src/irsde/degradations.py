"""Synthetic degradations that produce (clean, degraded) pairs at toy scale,
plus generators for clean signals and images."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .sde import PairedSample

TASKS = ("noise", "blur", "mask", "spikes")


def add_gaussian_noise(x0, sigma: float, rng: np.random.Generator):
    """Additive white Gaussian noise, unclipped."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    x0 = np.asarray(x0, dtype=np.float64)
    return x0 + sigma * rng.standard_normal(x0.shape)


def gaussian_kernel(radius: int, sigma: float) -> np.ndarray:
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def gaussian_blur(x0, kernel_radius: int = 2, kernel_sigma: float = 1.0):
    """Separable normalized Gaussian blur with reflected boundaries."""
    if kernel_radius < 1:
        raise ValueError(f"kernel_radius must be >= 1, got {kernel_radius}")
    k = gaussian_kernel(kernel_radius, kernel_sigma)
    out = np.asarray(x0, dtype=np.float64)
    for ax in range(out.ndim):
        out = correlate1d(out, k, axis=ax, mode="reflect")
    return out


@dataclass(frozen=True)
class MaskSpec:
    """Axis-aligned box: ``start`` and ``size`` per axis."""
    start: tuple
    size: tuple

    def slices(self, shape):
        if len(self.start) != len(shape) or len(self.size) != len(shape):
            raise ValueError(f"mask rank {len(self.start)} does not match state rank {len(shape)}")
        out = []
        for s, n, dim in zip(self.start, self.size, shape):
            if s < 0 or n < 0 or s + n > dim:
                raise ValueError(f"mask [{s}, {s + n}) falls outside axis of length {dim}")
            out.append(slice(s, s + n))
        return tuple(out)

    @classmethod
    def random(cls, shape, rng: np.random.Generator, max_frac: float = 0.5):
        size = tuple(int(rng.integers(1, max(2, int(d * max_frac)) + 1)) for d in shape)
        start = tuple(int(rng.integers(0, d - n + 1)) for d, n in zip(shape, size))
        return cls(start=start, size=size)


def mask_region(x0, mask_spec: MaskSpec, fill_value: float = 0.5):
    out = np.array(x0, dtype=np.float64)
    out[mask_spec.slices(out.shape)] = fill_value
    return out


def spike_positions(shape, density: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {density}")
    return rng.random(shape) < density


def structured_spikes(x0, density: float, amplitude: float, rng: np.random.Generator, streak: int = 1,
                      jitter: float = 0.5):
    """Sparse positive spikes of height ``amplitude * (1 - jitter * u)``,
    ``u ~ U[0, 1)``; with ``streak > 1`` each spike on an image extends
    downwards as a short rain-like streak."""
    x0 = np.asarray(x0, dtype=np.float64)
    hits = spike_positions(x0.shape, density, rng)
    heights = amplitude * (1.0 - jitter * rng.random(x0.shape)) * hits
    if streak > 1 and x0.ndim == 2:
        layer = heights.copy()
        for k in range(1, streak):
            layer[k:, :] = np.maximum(layer[k:, :], heights[:-k, :] * (1.0 - k / streak))
        heights = layer
    return x0 + heights


def smooth_signal(length: int, rng: np.random.Generator) -> np.ndarray:
    """Random low-frequency signal in roughly [0.2, 0.8]."""
    t = np.linspace(0.0, 1.0, length, endpoint=False)
    x = np.full(length, 0.5)
    for k in range(1, 4):
        x += rng.uniform(-0.12, 0.12) / k * np.sin(2 * math.pi * k * t + rng.uniform(0, 2 * math.pi))
    return x


def smooth_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """Random 2-D image: gradient background plus a few Gaussian blobs and a box."""
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    img = 0.3 + 0.2 * (rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy)
    for _ in range(3):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        width = rng.uniform(0.08, 0.25)
        img += rng.uniform(-0.3, 0.3) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
    y0, x0 = rng.integers(0, size // 2, size=2)
    h, w = rng.integers(size // 4, size // 2 + 1, size=2)
    img[y0:y0 + h, x0:x0 + w] += rng.uniform(-0.2, 0.2)
    return np.clip(img, 0.05, 0.95)


DEFAULT_PARAMS = {
    "noise": {"sigma": 25.0 / 255.0},
    "blur": {"kernel_radius": 2, "kernel_sigma": 1.0},
    "mask": {"max_frac": 0.5, "fill_value": 0.5},
    "spikes": {"density": 0.05, "amplitude": 0.3, "streak": 3},
}


def degrade(x0, task: str, params: dict, rng: np.random.Generator):
    """Apply ``task`` to ``x0``; returns ``(mu, params)`` with any random choices recorded."""
    if task not in TASKS:
        raise ValueError(f"unknown degradation {task!r}; expected one of {TASKS}")
    p = {**DEFAULT_PARAMS[task], **(params or {})}
    if task == "noise":
        return add_gaussian_noise(x0, p["sigma"], rng), p
    if task == "blur":
        return gaussian_blur(x0, int(p["kernel_radius"]), p["kernel_sigma"]), p
    if task == "mask":
        if "start" in p and "size" in p:
            spec = MaskSpec(tuple(p["start"]), tuple(p["size"]))
        else:
            spec = MaskSpec.random(np.shape(x0), rng, p["max_frac"])
        p = {**p, "start": list(spec.start), "size": list(spec.size)}
        return mask_region(x0, spec, p["fill_value"]), p
    if task == "spikes":
        streak = int(p.get("streak", 1)) if np.ndim(x0) == 2 else 1
        return structured_spikes(x0, p["density"], p["amplitude"], rng, streak=streak,
                                 jitter=p.get("jitter", 0.5)), p


def make_pair(task: str, seed: int, shape, params: dict | None = None, id: str = "") -> PairedSample:
    """Deterministic pair from ``seed``: clean content, then its degradation."""
    rng = np.random.default_rng(seed)
    if len(shape) == 1:
        x0 = smooth_signal(shape[0], rng)
    elif len(shape) == 2 and shape[0] == shape[1]:
        x0 = smooth_image(shape[0], rng)
    else:
        raise ValueError(f"unsupported shape {shape}; use (length,) or (n, n)")
    mu, p = degrade(x0, task, params or {}, rng)
    return PairedSample(x0=x0, mu=mu, degradation_tag=task, id=id or f"{task}_{seed}", params=p, seed=seed)


def make_dataset(task: str, n: int, shape, master_seed: int = 0, params: dict | None = None) -> list:
    seeds = np.random.SeedSequence(master_seed).generate_state(n)
    return [make_pair(task, int(s), shape, params, id=f"{task}_{k:04d}") for k, s in enumerate(seeds)]
