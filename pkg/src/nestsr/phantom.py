"""Head-like synthetic phantoms used in place of real T1 slices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PhantomSpec", "make_phantom", "make_phantoms"]


@dataclass(frozen=True)
class PhantomSpec:
    count: int = 1
    size: int = 256
    seed: int = 0
    ellipses: tuple[int, int] = (4, 9)
    skull_intensity: tuple[float, float] = (0.8, 1.0)
    brain_intensity: tuple[float, float] = (0.35, 0.55)
    feature_intensity: tuple[float, float] = (0.05, 0.75)
    texture: bool = True

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.size < 8:
            raise ValueError("size must be >= 8")
        lo, hi = self.ellipses
        if not 0 <= lo <= hi:
            raise ValueError(f"bad ellipse count range {self.ellipses}")


def _ellipse(y, x, cy, cx, ay, ax, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (x - cx) * c + (y - cy) * s
    v = -(x - cx) * s + (y - cy) * c
    return (u / ax) ** 2 + (v / ay) ** 2 <= 1.0


def make_phantom(size: int, rng: np.random.Generator, spec: PhantomSpec = PhantomSpec()) -> np.ndarray:
    """One phantom in [0, 1]: skull ring, shaded brain, nested inner structures."""
    y, x = np.mgrid[-1 : 1 : size * 1j, -1 : 1 : size * 1j]
    img = np.zeros((size, size))

    ay, ax = rng.uniform(0.82, 0.95), rng.uniform(0.68, 0.85)
    tilt = rng.uniform(-0.15, 0.15)
    thick = rng.uniform(0.06, 0.11)
    outer = _ellipse(y, x, 0, 0, ay, ax, tilt)
    inner = _ellipse(y, x, 0, 0, ay - thick, ax - thick, tilt)
    img[outer] = rng.uniform(*spec.skull_intensity)

    base = rng.uniform(*spec.brain_intensity)
    gy, gx = rng.uniform(-0.08, 0.08, size=2)
    brain = base + gy * y + gx * x
    if spec.texture:
        fy, fx = rng.uniform(2, 6, size=2)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        brain = brain + 0.04 * np.sin(fy * np.pi * y + phase[0]) * np.cos(fx * np.pi * x + phase[1])
    img[inner] = brain[inner]

    for _ in range(int(rng.integers(spec.ellipses[0], spec.ellipses[1] + 1))):
        r = rng.uniform(0, 0.55)
        ang = rng.uniform(0, 2 * np.pi)
        cy, cx = r * np.sin(ang) * (ay - thick), r * np.cos(ang) * (ax - thick)
        ey, ex = rng.uniform(0.04, 0.3), rng.uniform(0.04, 0.3)
        mask = _ellipse(y, x, cy, cx, ey, ex, rng.uniform(0, np.pi)) & inner
        level = rng.uniform(*spec.feature_intensity)
        img[mask] = level + 0.5 * (img[mask] - base) * spec.texture
    return np.clip(img, 0.0, 1.0)


def make_phantoms(spec: PhantomSpec) -> list[np.ndarray]:
    return [make_phantom(spec.size, np.random.default_rng([spec.seed, k]), spec) for k in range(spec.count)]
