"""Affine-state particle filter: random-walk transition, weighting, resampling, warping.

Image coordinates put pixel ``(row, col)`` over the square
``[col, col + 1) x [row, row + 1)``, so its centre sits at ``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

PARAM_NAMES = ("x", "y", "scale", "aspect", "rotation", "skew")
DEFAULT_STDS = (4.0, 4.0, 0.02, 0.002, 0.002, 0.001)


class TrackingFailure(RuntimeError):
    """All particle likelihoods vanished; the filter has lost the target."""


class DegenerateWarpError(ValueError):
    pass


@dataclass(frozen=True)
class AffineState:
    """Target region as a warp of the canonical patch.

    ``(x, y)`` is the region centre in pixels. ``scale`` is the region width
    measured in canonical-patch widths and ``aspect`` the height/width ratio
    relative to the patch's own ratio. Rotation (radians; positive turns
    clockwise on screen since y points down) and skew act on the centred
    patch before the translation.
    """

    x: float
    y: float
    scale: float = 1.0
    aspect: float = 1.0
    rotation: float = 0.0
    skew: float = 0.0

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite affine state {vals}")
        if self.scale <= 0 or self.aspect <= 0:
            raise ValueError(f"scale and aspect must be positive: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.scale, self.aspect, self.rotation, self.skew])

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "AffineState":
        return cls(*map(float, a))

    @classmethod
    def from_box(cls, box: Sequence[float], patch_size: tuple[int, int]) -> "AffineState":
        """Axis-aligned ``(x, y, w, h)`` box to a state for a ``(w, h)`` patch."""
        bx, by, bw, bh = map(float, box)
        pw, ph = patch_size
        scale = bw / pw
        return cls(bx + bw / 2, by + bh / 2, scale, (bh / ph) / scale)

    def linear(self) -> np.ndarray:
        """2x2 map from centred patch-pixel offsets to image offsets."""
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        rot = np.array([[c, -s], [s, c]])
        shear = np.array([[1.0, self.skew], [0.0, 1.0]])
        return rot @ shear @ np.diag([self.scale, self.scale * self.aspect])

    def matrix(self, patch_size: tuple[int, int]) -> np.ndarray:
        """2x3 affine map taking the unit square ``[0, 1]^2`` onto the target region."""
        pw, ph = patch_size
        L = self.linear() @ np.diag([pw, ph])
        t = np.array([self.x, self.y]) - L @ np.array([0.5, 0.5])
        return np.hstack([L, t[:, None]])

    def corners(self, patch_size: tuple[int, int]) -> np.ndarray:
        A = self.matrix(patch_size)
        unit = np.array([[0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)
        return unit @ A.T

    def bounding_box(self, patch_size, frame_shape=None) -> np.ndarray:
        """Axis-aligned ``(x, y, w, h)`` around the warped region, optionally clamped."""
        pts = self.corners(patch_size)
        x0, y0 = pts.min(axis=0)
        x1, y1 = pts.max(axis=0)
        if frame_shape is not None:
            H, W = frame_shape[:2]
            x0, x1 = np.clip([x0, x1], 0, W)
            y0, y1 = np.clip([y0, y1], 0, H)
        return np.array([x0, y0, x1 - x0, y1 - y0])


@dataclass
class TransitionModel:
    std_per_param: tuple = DEFAULT_STDS

    def __post_init__(self):
        stds = np.asarray(self.std_per_param, dtype=float)
        if stds.shape != (6,) or not np.all(np.isfinite(stds)) or np.any(stds < 0):
            raise ValueError(f"need 6 finite non-negative stds, got {self.std_per_param}")
        self.std_per_param = tuple(float(s) for s in stds)


class ParticleSet:
    """``n`` affine states with importance weights and their own random stream."""

    def __init__(self, states: np.ndarray, weights=None, rng=None, seed=None):
        self.states = np.array(states, dtype=float, copy=True)
        if self.states.ndim != 2 or self.states.shape[1] != 6:
            raise ValueError("states must be an (n, 6) array")
        n = len(self.states)
        self.weights = np.full(n, 1.0 / n) if weights is None else np.array(weights, dtype=float)
        self.rng = rng if rng is not None else np.random.default_rng(seed)

    @classmethod
    def replicate(cls, state: AffineState, n: int, seed=None) -> "ParticleSet":
        return cls(np.tile(state.as_array(), (n, 1)), seed=seed)

    def __len__(self):
        return len(self.states)

    def state(self, i: int) -> AffineState:
        return AffineState.from_array(self.states[i])

    def copy(self) -> "ParticleSet":
        # the copy shares the random stream on purpose: the filter is one trajectory
        return ParticleSet(self.states, self.weights, rng=self.rng)


def propagate(particles: ParticleSet, model: TransitionModel) -> ParticleSet:
    """Add independent zero-mean Gaussian noise to every affine parameter."""
    stds = np.asarray(model.std_per_param)
    noise = particles.rng.standard_normal(particles.states.shape) * stds
    out = particles.copy()
    out.states = particles.states + noise
    # keep scale/aspect valid under large perturbations
    out.states[:, 2:4] = np.maximum(out.states[:, 2:4], 1e-3)
    return out


def update_weights(particles: ParticleSet, likelihoods) -> ParticleSet:
    """Multiply weights by the observation likelihoods and renormalise."""
    lik = np.asarray(likelihoods, dtype=float)
    if lik.shape != particles.weights.shape:
        raise ValueError(f"expected {len(particles)} likelihoods, got {lik.shape}")
    if not np.all(np.isfinite(lik)) or np.any(lik < 0):
        raise ValueError("likelihoods must be finite and non-negative")
    w = particles.weights * lik
    total = w.sum()
    if not total > 0:
        raise TrackingFailure("all particle likelihoods are zero")
    out = particles.copy()
    out.weights = w / total
    return out


def systematic_indices(weights: np.ndarray, u: float, n: int | None = None) -> np.ndarray:
    """Systematic resampling with the single offset ``u`` in ``[0, 1)``.

    Draws ``n`` indices (default ``len(weights)``), one per stratum ``[j, j + 1) / n``.
    """
    n = len(weights) if n is None else n
    positions = (u + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


def resample(particles: ParticleSet) -> ParticleSet:
    idx = systematic_indices(particles.weights, particles.rng.random())
    out = particles.copy()
    out.states = particles.states[idx]
    out.weights = np.full(len(idx), 1.0 / len(idx))
    return out


def _sample_bilinear(image: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Bilinear lookup at continuous image coordinates, clamping to the border."""
    H, W = image.shape[:2]
    cx = np.clip(px - 0.5, 0, W - 1)
    cy = np.clip(py - 0.5, 0, H - 1)
    x0 = np.minimum(np.floor(cx).astype(np.intp), W - 2) if W > 1 else np.zeros_like(cx, dtype=np.intp)
    y0 = np.minimum(np.floor(cy).astype(np.intp), H - 2) if H > 1 else np.zeros_like(cy, dtype=np.intp)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = cx - x0
    fy = cy - y0
    if image.ndim == 3:
        fx, fy = fx[..., None], fy[..., None]
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def warp_many(image: np.ndarray, states: np.ndarray, out_size: tuple[int, int]) -> np.ndarray:
    """Warp a batch of ``(n, 6)`` states to ``(n, h, w, C)`` patches."""
    image = np.asarray(image, dtype=float)
    if image.size == 0:
        raise ValueError("empty image")
    w, h = out_size
    if w < 1 or h < 1:
        raise ValueError(f"invalid patch size {out_size}")
    states = np.atleast_2d(np.asarray(states, dtype=float))
    x, y, s, a, rot, sk = states.T
    c, sn = np.cos(rot), np.sin(rot)
    # rows of the 2x2 linear map R(rot) @ [[1, skew], [0, 1]] @ diag(s, s * a)
    l00 = c * s
    l01 = (c * sk - sn) * s * a
    l10 = sn * s
    l11 = (sn * sk + c) * s * a
    if np.any(np.abs(l00 * l11 - l01 * l10) < 1e-12):
        raise DegenerateWarpError("affine state is not invertible")
    u = np.arange(w) + 0.5 - w / 2
    v = np.arange(h) + 0.5 - h / 2
    U, V = np.meshgrid(u, v)  # h x w
    px = x[:, None, None] + l00[:, None, None] * U + l01[:, None, None] * V
    py = y[:, None, None] + l10[:, None, None] * U + l11[:, None, None] * V
    return _sample_bilinear(image, px, py)


def affine_warp(image: np.ndarray, state: AffineState, out_size: tuple[int, int]) -> np.ndarray:
    """Canonical ``h x w`` patch of ``image`` under ``state`` (bilinear, edge-clamped)."""
    return warp_many(image, state.as_array()[None], out_size)[0]


def jitter(state: AffineState, stds: Sequence[float], rng) -> AffineState:
    return replace(state, **{
        name: getattr(state, name) + float(rng.standard_normal()) * sd
        for name, sd in zip(PARAM_NAMES, stds) if sd
    })
