"""Per-patch appearance features: intensity, colour histogram, HOG and uniform LBP.

Every extractor works on a batch of patches shaped ``(n, h, w, 3)`` with
values in ``[0, 1]`` and returns an ``(n, d)`` array of unit-norm rows; the
single-patch wrappers accept ``(h, w, 3)`` and return a ``(d,)`` vector.
A patch whose feature vanishes (e.g. a flat patch) is mapped to the uniform
unit vector so the solver never sees a zero column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .motion import AffineState, warp_many

MODALITIES = ("intensity", "color", "hog", "lbp")
LUMA = np.array([0.299, 0.587, 0.114])
LBP_BINS = 59
# neighbour offsets (drow, dcol), clockwise from top-left; bit k is neighbour k
_LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


@dataclass(frozen=True)
class FeatureConfig:
    patch_size: tuple = (32, 32)  # (w, h)
    color_bins: int = 8
    hog_cell: int = 8
    hog_orientations: int = 9
    hog_clip: float = 0.2
    modalities: tuple = field(default=MODALITIES)

    def __post_init__(self):
        object.__setattr__(self, "patch_size", tuple(int(v) for v in self.patch_size))
        object.__setattr__(self, "modalities", tuple(self.modalities))
        unknown = set(self.modalities) - set(MODALITIES)
        if unknown or not self.modalities:
            raise ValueError(f"unknown or empty modality list: {self.modalities}")
        w, h = self.patch_size
        if w < 3 or h < 3:
            raise ValueError("patch must be at least 3x3")
        if self.color_bins < 2:
            raise ValueError("color_bins must be >= 2")
        if "hog" in self.modalities and (w % self.hog_cell or h % self.hog_cell):
            raise ValueError(f"patch {self.patch_size} not divisible into {self.hog_cell}px cells")

    def dims(self) -> list[int]:
        """Feature length per active modality, in modality order."""
        w, h = self.patch_size
        cx, cy = w // self.hog_cell, h // self.hog_cell
        if cx > 1 and cy > 1:
            hog = (cx - 1) * (cy - 1) * 4 * self.hog_orientations
        else:
            hog = cx * cy * self.hog_orientations
        sizes = {"intensity": w * h, "color": 3 * self.color_bins, "hog": hog, "lbp": LBP_BINS}
        return [sizes[name] for name in self.modalities]


def normalize_rows(F: np.ndarray, tiny: float = 1e-12) -> np.ndarray:
    """Scale rows to unit norm; rows with (near) zero norm become uniform."""
    F = np.asarray(F, dtype=float)
    norms = np.linalg.norm(F, axis=-1, keepdims=True)
    uniform = np.full(F.shape[-1], 1.0 / np.sqrt(F.shape[-1]))
    flat = norms[..., 0] <= tiny
    out = F / np.where(flat[..., None], 1.0, norms)
    out[flat] = uniform
    return out


def _batch(p):
    p = np.asarray(p, dtype=float)
    return (p[None], True) if p.ndim == 3 else (p, False)


def grayscale(patches: np.ndarray) -> np.ndarray:
    return np.asarray(patches, dtype=float) @ LUMA


def intensity_batch(patches: np.ndarray) -> np.ndarray:
    g = grayscale(patches).reshape(len(patches), -1)
    g = g - g.mean(axis=1, keepdims=True)
    # flat patches leave rounding residue after centring; treat it as zero
    g[np.ptp(g, axis=1) < 1e-9] = 0.0
    return normalize_rows(g)


def color_hist_batch(patches: np.ndarray, bins: int) -> np.ndarray:
    n = len(patches)
    idx = np.clip((patches * bins).astype(np.intp), 0, bins - 1).reshape(n, -1, 3)
    # bin index offset per (patch, channel) so one bincount fills everything
    offs = (np.arange(n)[:, None, None] * 3 + np.arange(3)[None, None, :]) * bins
    counts = np.bincount((idx + offs).ravel(), minlength=n * 3 * bins).reshape(n, 3 * bins)
    hist = counts / idx.shape[1]
    return normalize_rows(hist)


def _gradients(gray: np.ndarray):
    """Centred [-1, 0, 1] differences with replicated borders."""
    padded = np.pad(gray, ((0, 0), (1, 1), (1, 1)), mode="edge")
    gx = padded[:, 1:-1, 2:] - padded[:, 1:-1, :-2]
    gy = padded[:, 2:, 1:-1] - padded[:, :-2, 1:-1]
    return gx, gy


def hog_cell_histograms(gray: np.ndarray, cell: int, n_orientations: int) -> np.ndarray:
    """Per-cell magnitude histograms over unsigned edge orientation.

    Orientation is that of the edge, perpendicular to the gradient, folded
    into ``[0, pi)``; bin ``b`` covers ``[b, b + 1) * pi / n_orientations``.
    Returns ``(n, cells_y, cells_x, n_orientations)``.
    """
    gray = np.asarray(gray, dtype=float)
    if gray.ndim == 2:
        gray = gray[None]
    n, h, w = gray.shape
    gx, gy = _gradients(gray)
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx) + np.pi / 2, np.pi)
    b = np.minimum((theta * (n_orientations / np.pi)).astype(np.intp), n_orientations - 1)
    cy, cx = h // cell, w // cell
    onehot = (b[..., None] == np.arange(n_orientations)) * mag[..., None]
    onehot = onehot[:, : cy * cell, : cx * cell]
    return onehot.reshape(n, cy, cell, cx, cell, n_orientations).sum(axis=(2, 4))


def hog_batch(patches: np.ndarray, cell: int, n_orientations: int, clip: float = 0.2) -> np.ndarray:
    H = hog_cell_histograms(grayscale(patches), cell, n_orientations)
    n, cy, cx, nb = H.shape
    if cy > 1 and cx > 1:
        blocks = np.concatenate(
            [H[:, :-1, :-1], H[:, :-1, 1:], H[:, 1:, :-1], H[:, 1:, 1:]], axis=-1
        ).reshape(n, (cy - 1) * (cx - 1), 4 * nb)
    else:
        blocks = H.reshape(n, 1, cy * cx * nb)
    # L2-Hys: normalise, clip, renormalise each block
    eps = 1e-6
    blocks = blocks / np.sqrt(np.sum(blocks**2, axis=-1, keepdims=True) + eps**2)
    blocks = np.minimum(blocks, clip)
    blocks = blocks / np.sqrt(np.sum(blocks**2, axis=-1, keepdims=True) + eps**2)
    return normalize_rows(blocks.reshape(n, -1))


def _uniform_lut() -> np.ndarray:
    lut = np.full(256, LBP_BINS - 1, dtype=np.intp)
    nxt = 0
    for code in range(256):
        bits = [(code >> k) & 1 for k in range(8)]
        transitions = sum(bits[k] != bits[(k + 1) % 8] for k in range(8))
        if transitions <= 2:
            lut[code] = nxt
            nxt += 1
    assert nxt == LBP_BINS - 1
    return lut


UNIFORM_LUT = _uniform_lut()


def lbp_codes(gray: np.ndarray) -> np.ndarray:
    """8-neighbour LBP codes of the interior pixels (neighbour >= centre sets the bit)."""
    gray = np.asarray(gray, dtype=float)
    if gray.ndim == 2:
        gray = gray[None]
    h, w = gray.shape[1:]
    centre = gray[:, 1:-1, 1:-1]
    codes = np.zeros(centre.shape, dtype=np.intp)
    for k, (dr, dc) in enumerate(_LBP_OFFSETS):
        nb = gray[:, 1 + dr: h - 1 + dr, 1 + dc: w - 1 + dc]
        codes |= (nb >= centre).astype(np.intp) << k
    return codes


def lbp_batch(patches: np.ndarray) -> np.ndarray:
    codes = UNIFORM_LUT[lbp_codes(grayscale(patches))]
    n = len(codes)
    offs = np.arange(n)[:, None, None] * LBP_BINS
    counts = np.bincount((codes + offs).ravel(), minlength=n * LBP_BINS).reshape(n, LBP_BINS)
    return normalize_rows(counts.astype(float))


def extract_intensity(patch: np.ndarray) -> np.ndarray:
    p, single = _batch(patch)
    out = intensity_batch(p)
    return out[0] if single else out


def extract_color_hist(patch: np.ndarray, bins_per_channel: int = 8) -> np.ndarray:
    if bins_per_channel < 2:
        raise ValueError("bins_per_channel must be >= 2")
    p, single = _batch(patch)
    out = color_hist_batch(p, bins_per_channel)
    return out[0] if single else out


def extract_hog(patch: np.ndarray, cell_size: int = 8, n_orientations: int = 9,
                clip: float = 0.2) -> np.ndarray:
    p, single = _batch(patch)
    out = hog_batch(p, cell_size, n_orientations, clip)
    return out[0] if single else out


def extract_lbp(patch: np.ndarray) -> np.ndarray:
    p, single = _batch(patch)
    if p.shape[1] < 3 or p.shape[2] < 3:
        raise ValueError("LBP needs a patch of at least 3x3")
    out = lbp_batch(p)
    return out[0] if single else out


def extract_all(patches: np.ndarray, cfg: FeatureConfig) -> list[np.ndarray]:
    """All active modalities for a patch batch, each as a ``d_k x n`` matrix."""
    patches = np.asarray(patches, dtype=float)
    out = []
    for name in cfg.modalities:
        if name == "intensity":
            F = intensity_batch(patches)
        elif name == "color":
            F = color_hist_batch(patches, cfg.color_bins)
        elif name == "hog":
            F = hog_batch(patches, cfg.hog_cell, cfg.hog_orientations, cfg.hog_clip)
        else:
            F = lbp_batch(patches)
        out.append(np.ascontiguousarray(F.T))
    return out


def observe_many(frame: np.ndarray, states: np.ndarray, cfg: FeatureConfig) -> list[np.ndarray]:
    """Features of every ``(n, 6)`` state on ``frame``: one ``d_k x n`` matrix per modality."""
    patches = warp_many(frame, states, cfg.patch_size)
    if patches.ndim == 3:  # grayscale frame
        patches = np.repeat(patches[..., None], 3, axis=-1)
    return extract_all(patches, cfg)


def observe(frame: np.ndarray, state: AffineState, cfg: FeatureConfig) -> list[np.ndarray]:
    """Multimodal observation of one state: a list of unit vectors."""
    return [x[:, 0] for x in observe_many(frame, state.as_array()[None], cfg)]
