"""Scripted synthetic sequences with exact ground truth.

A textured target (and optionally identical distractors) moves along
piecewise-linear waypoints over a static cluttered background. Timed events
add an occluder riding on the target, a global illumination gain, or target
rotation. Frames are quantised to 8 bits so the in-memory frames equal what
:func:`~trac.bench.sequence.write_sequence` stores on disk.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from ..motion import _sample_bilinear

EVENT_TYPES = {"occlusion", "illumination", "rotation"}
# pre-gain intensity ceiling, so a gain up to 1.5 never saturates
_CEILING = 0.66


class SyntheticSpecError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    name: str = "synthetic"
    n_frames: int = 100
    frame_size: tuple = (400, 240)  # (w, h)
    target_size: tuple = (32, 32)
    waypoints: list = field(default_factory=lambda: [[0, 48.0, 120.0], [99, 345.0, 120.0]])
    noise_sigma: float = 0.0
    clutter_density: float = 0.0  # rectangles per 10^4 background pixels
    events: list = field(default_factory=list)
    distractors: list = field(default_factory=list)
    texture_seed: int | None = None
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise SyntheticSpecError(f"unknown synthetic spec keys: {sorted(unknown)}")
        spec = cls(**doc)
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def validate(self):
        if self.n_frames < 1:
            raise SyntheticSpecError("n_frames must be >= 1")
        if len(self.frame_size) != 2 or len(self.target_size) != 2:
            raise SyntheticSpecError("frame_size and target_size are (w, h) pairs")
        if min(self.target_size) < 4 or min(self.frame_size) < 8:
            raise SyntheticSpecError("frame or target too small")
        if self.noise_sigma < 0 or self.clutter_density < 0:
            raise SyntheticSpecError("noise_sigma and clutter_density must be >= 0")
        _check_waypoints(self.waypoints)
        for ev in self.events:
            if ev.get("type") not in EVENT_TYPES:
                raise SyntheticSpecError(f"unknown event {ev!r}")
            if "start" not in ev:
                raise SyntheticSpecError(f"event without start frame: {ev!r}")
        for dist in self.distractors:
            _check_waypoints(dist.get("waypoints", []))
        W, H = self.frame_size
        tw, th = self.target_size
        for wps in [self.waypoints] + [d["waypoints"] for d in self.distractors]:
            c = centres(wps, self.n_frames)
            if (np.any(c[:, 0] - tw / 2 < 0) or np.any(c[:, 0] + tw / 2 > W)
                    or np.any(c[:, 1] - th / 2 < 0) or np.any(c[:, 1] + th / 2 > H)):
                raise SyntheticSpecError("trajectory leaves the frame")

    @property
    def attributes(self) -> list[str]:
        tags = {"occlusion": "occlusion", "illumination": "illumination variation",
                "rotation": "rotation"}
        out = sorted({tags[e["type"]] for e in self.events})
        if self.clutter_density > 0 or self.distractors:
            out.append("background clutter")
        return out


def _check_waypoints(wps):
    if not wps or any(len(w) != 3 for w in wps):
        raise SyntheticSpecError("waypoints must be non-empty [frame, x, y] triples")
    frames = [w[0] for w in wps]
    if any(b <= a for a, b in zip(frames, frames[1:])):
        raise SyntheticSpecError("waypoint frames must increase strictly")


def centres(waypoints, n_frames: int) -> np.ndarray:
    """Centre per frame by linear interpolation (held constant outside the waypoints)."""
    wp = np.asarray(waypoints, dtype=float)
    t = np.arange(n_frames, dtype=float)
    return np.column_stack([np.interp(t, wp[:, 0], wp[:, 1]), np.interp(t, wp[:, 0], wp[:, 2])])


def _upsample(coarse: np.ndarray, w: int, h: int) -> np.ndarray:
    ch, cw = coarse.shape[:2]
    px = (np.arange(w) + 0.5) * cw / w
    py = (np.arange(h) + 0.5) * ch / h
    X, Y = np.meshgrid(px, py)
    return _sample_bilinear(coarse, X, Y)


def make_texture(size, rng) -> np.ndarray:
    w, h = size
    tex = 0.1 + 0.5 * _upsample(rng.random((4, 4, 3)), w, h)
    for _ in range(3):
        x0, y0 = rng.integers(0, w // 2), rng.integers(0, h // 2)
        x1, y1 = x0 + rng.integers(w // 4, w // 2), y0 + rng.integers(h // 4, h // 2)
        tex[y0:y1, x0:x1] = 0.05 + 0.6 * rng.random(3)
    return np.clip(tex, 0.0, _CEILING)


def make_background(spec: SyntheticSpec, rng) -> np.ndarray:
    W, H = spec.frame_size
    bg = 0.2 + 0.25 * _upsample(rng.random((6, 8, 3)), W, H)
    n_rect = rng.poisson(spec.clutter_density * W * H / 1e4) if spec.clutter_density else 0
    for _ in range(n_rect):
        rw, rh = rng.integers(4, 20, size=2)
        x0, y0 = rng.integers(0, W - rw), rng.integers(0, H - rh)
        bg[y0:y0 + rh, x0:x0 + rw] = 0.05 + 0.6 * rng.random(3)
    return np.clip(bg, 0.0, _CEILING)


def _paste(frame, texture, cx, cy, angle, mask_cols=None):
    """Draw ``texture`` centred at ``(cx, cy)`` rotated by ``angle`` (in place)."""
    H, W = frame.shape[:2]
    th, tw = texture.shape[:2]
    rad = 0.5 * np.hypot(tw, th) + 2
    x0, x1 = max(int(cx - rad), 0), min(int(np.ceil(cx + rad)), W)
    y0, y1 = max(int(cy - rad), 0), min(int(np.ceil(cy + rad)), H)
    X, Y = np.meshgrid(np.arange(x0, x1) + 0.5 - cx, np.arange(y0, y1) + 0.5 - cy)
    c, s = np.cos(angle), np.sin(angle)
    u = c * X + s * Y + tw / 2
    v = -s * X + c * Y + th / 2
    inside = (u >= 0) & (u < tw) & (v >= 0) & (v < th)
    if mask_cols is not None:
        lo, hi = mask_cols
        inside &= (u >= lo) & (u < hi)
    vals = _sample_bilinear(texture, u, v)
    region = frame[y0:y1, x0:x1]
    region[inside] = vals[inside]


def _active(ev, t):
    return ev["start"] <= t and (ev.get("end") is None or t < ev["end"])


def generate(spec: SyntheticSpec):
    """Render ``spec``; returns ``(frames, boxes)`` with boxes as ``(x, y, w, h)`` rows."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    tex_rng = np.random.default_rng(spec.seed if spec.texture_seed is None else spec.texture_seed)
    texture = make_texture(spec.target_size, tex_rng)
    background = make_background(spec, rng)
    noise_rng = np.random.default_rng([spec.seed, 1])
    tw, th = spec.target_size
    path = centres(spec.waypoints, spec.n_frames)
    dist_paths = [(centres(d["waypoints"], spec.n_frames), d.get("layer", "behind"))
                  for d in spec.distractors]
    occluder = np.full((th, tw, 3), 0.5)

    frames, boxes = [], []
    for t in range(spec.n_frames):
        frame = background.copy()
        angle = 0.0
        for ev in spec.events:
            if ev["type"] == "rotation" and t >= ev["start"]:
                stop = t if ev.get("end") is None else min(t, ev["end"])
                angle += ev["rate"] * (stop - ev["start"])
        for dp, layer in dist_paths:
            if layer == "behind":
                _paste(frame, texture, *dp[t], 0.0)
        cx, cy = path[t]
        _paste(frame, texture, cx, cy, angle)
        for dp, layer in dist_paths:
            if layer != "behind":
                _paste(frame, texture, *dp[t], 0.0)
        for ev in spec.events:
            if ev["type"] == "occlusion" and _active(ev, t):
                frac = float(ev.get("fraction", 0.4))
                if ev.get("side", "left") == "left":
                    cols = (0.0, frac * tw)
                else:
                    cols = (tw * (1 - frac), float(tw))
                _paste(frame, occluder, cx, cy, angle, mask_cols=cols)
        gain = 1.0
        for ev in spec.events:
            if ev["type"] == "illumination" and _active(ev, t):
                gain *= float(ev["gain"])
        frame *= gain
        if spec.noise_sigma:
            frame += noise_rng.normal(0.0, spec.noise_sigma, frame.shape)
        frame = np.rint(np.clip(frame, 0.0, 1.0) * 255.0) / 255.0
        frames.append(frame)
        boxes.append([cx - tw / 2, cy - th / 2, tw, th])
    return frames, np.array(boxes, dtype=float)
