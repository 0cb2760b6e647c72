"""Template dictionary with short-term candidate selection and long-term pruning."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .features import FeatureConfig, observe_many
from .motion import AffineState, jitter
from .solver import SolverConfig, solve_self_representation

DEFAULT_JITTER = (1.0, 1.0, 0.0, 0.0, 0.0, 0.0)


def stack_modalities(columns: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate per-modality blocks (``d_k x l``) and rescale columns to unit norm."""
    Y = np.vstack([np.atleast_2d(np.asarray(c, dtype=float).T).T for c in columns])
    norms = np.linalg.norm(Y, axis=0, keepdims=True)
    return Y / np.where(norms > 0, norms, 1.0)


@dataclass
class Dictionary:
    templates: list[np.ndarray]  # per modality, d_k x m
    importance: np.ndarray
    representativeness: np.ndarray
    source_frames: np.ndarray

    def __post_init__(self):
        self.templates = [np.asarray(t, dtype=float) for t in self.templates]
        self.importance = np.asarray(self.importance, dtype=float)
        self.representativeness = np.asarray(self.representativeness, dtype=float)
        self.source_frames = np.asarray(self.source_frames, dtype=int)
        m = self.size
        if any(t.shape[1] != m for t in self.templates):
            raise ValueError("all modalities must hold the same number of templates")
        for arr in (self.importance, self.representativeness, self.source_frames):
            if arr.shape != (m,):
                raise ValueError(f"weight/frame arrays must have length {m}")

    @property
    def size(self) -> int:
        return self.templates[0].shape[1]

    def stacked(self) -> np.ndarray:
        return stack_modalities(self.templates)

    def template(self, i: int) -> list[np.ndarray]:
        return [t[:, i] for t in self.templates]

    def to_json(self) -> str:
        return json.dumps({
            "templates": [t.tolist() for t in self.templates],
            "importance": self.importance.tolist(),
            "representativeness": self.representativeness.tolist(),
            "source_frames": self.source_frames.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "Dictionary":
        doc = json.loads(text)
        return cls(
            [np.array(t, dtype=float) for t in doc["templates"]],
            doc["importance"],
            doc["representativeness"],
            doc["source_frames"],
        )


@dataclass
class CandidateBuffer:
    """The ``capacity`` most recent tracking results, newest first."""

    capacity: int = 10
    observations: deque = field(default_factory=deque)
    frames: deque = field(default_factory=deque)

    def push(self, observation: Sequence[np.ndarray], frame: int):
        self.observations.appendleft([np.asarray(o, dtype=float) for o in observation])
        self.frames.appendleft(int(frame))
        while len(self.observations) > self.capacity:
            self.observations.pop()
            self.frames.pop()

    def __len__(self):
        return len(self.observations)

    def stacked(self) -> np.ndarray:
        K = len(self.observations[0])
        return stack_modalities(
            [np.column_stack([obs[k] for obs in self.observations]) for k in range(K)]
        )


def _normalized(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    s = w.sum()
    return w / s if s > 0 else np.full(len(w), 1.0 / len(w))


def init_dictionary(
    frame: np.ndarray,
    gt_box: Sequence[float],
    m: int,
    cfg: FeatureConfig,
    rng: np.random.Generator,
    jitter_stds: Sequence[float] = DEFAULT_JITTER,
    lambda3: float = 0.5,
) -> Dictionary:
    """Templates from the ground-truth box plus ``m - 1`` jittered copies of it."""
    if m < 1:
        raise ValueError("m must be >= 1")
    H, W = frame.shape[:2]
    x, y, w, h = map(float, gt_box)
    if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > W or y + h > H:
        raise ValueError(f"ground-truth box {tuple(gt_box)} lies outside the {W}x{H} frame")
    base = AffineState.from_box(gt_box, cfg.patch_size)
    states = [base] + [jitter(base, jitter_stds, rng) for _ in range(m - 1)]
    templates = observe_many(frame, np.stack([s.as_array() for s in states]), cfg)
    d = Dictionary(templates, np.full(m, 1.0 / m), np.full(m, 1.0 / m), np.zeros(m, dtype=int))
    d.representativeness = long_term_weights(d, lambda3)
    return d


def representativeness(Y: np.ndarray, lambda3: float,
                       config: Optional[SolverConfig] = None) -> np.ndarray:
    """Row sums of ``|U|`` from the self-representation of the columns of ``Y``."""
    U = solve_self_representation(Y, lambda3, config)
    return np.abs(U).sum(axis=1)


def short_term_select(
    buf: CandidateBuffer,
    lambda3: float,
    gamma_rep: float,
    m: int,
    config: Optional[SolverConfig] = None,
) -> list[int]:
    """Buffer positions of the fewest most-representative candidates.

    Rows are ranked by their ``|U|`` row sum; the smallest ``r`` whose top
    rows reach ``gamma_rep`` of the (per-candidate averaged) total is kept,
    with ``r`` capped below both the buffer length and ``m``.
    """
    if len(buf) == 0:
        raise ValueError("candidate buffer is empty")
    if not 0 < gamma_rep <= 1:
        raise ValueError("gamma_rep must lie in (0, 1]")
    l = len(buf)
    sums = representativeness(buf.stacked(), lambda3, config)
    order = np.argsort(-sums, kind="stable")
    coverage = np.cumsum(sums[order]) / l
    hit = np.nonzero(coverage >= gamma_rep)[0]
    r = int(hit[0]) + 1 if hit.size else l
    r = min(r, l - 1, m - 1)
    return [int(i) for i in order[: max(r, 0)]]


def long_term_weights(d: Dictionary, lambda3: float,
                      config: Optional[SolverConfig] = None) -> np.ndarray:
    if d.size == 1:
        return np.ones(1)
    return _normalized(representativeness(d.stacked(), lambda3, config))


def removal_weights(w_rep, w_imp, beta: float) -> np.ndarray:
    if not 0 <= beta <= 1:
        raise ValueError("beta must lie in [0, 1]")
    w = beta * np.asarray(w_rep, dtype=float) + (1 - beta) * np.asarray(w_imp, dtype=float)
    return w / w.sum()


def update_dictionary(
    d: Dictionary,
    buf: CandidateBuffer,
    selected: Sequence[int],
    beta: float,
    lambda3: float,
    config: Optional[SolverConfig] = None,
) -> tuple[Dictionary, list[int]]:
    """Swap the ``r`` lowest-weighted templates for the ``r`` selected candidates.

    Returns the new dictionary and the removed template indices. Ties in the
    combined weight go to the template captured earliest.
    """
    r = len(selected)
    m = d.size
    if r >= m:
        raise ValueError(f"cannot replace {r} of {m} templates")
    if r == 0:
        return d, []
    w = removal_weights(_normalized(d.representativeness), _normalized(d.importance), beta)
    order = np.lexsort((np.arange(m), d.source_frames, np.round(w, 12)))
    removed = sorted(int(i) for i in order[:r])
    keep = np.setdiff1d(np.arange(m), removed)

    new_cols = [buf.observations[i] for i in selected]
    templates = [
        np.column_stack([t[:, keep]] + [obs[k] for obs in new_cols])
        for k, t in enumerate(d.templates)
    ]
    imp_keep = d.importance[keep]
    importance = _normalized(np.concatenate([imp_keep, np.full(r, imp_keep.mean())]))
    frames = np.concatenate([d.source_frames[keep], [buf.frames[i] for i in selected]])
    out = Dictionary(templates, importance, np.full(m, 1.0 / m), frames)
    out.representativeness = long_term_weights(out, lambda3, config)
    return out, removed


def update_importance(w_imp, coefficients) -> np.ndarray:
    """Reinforce templates in proportion to the coefficient mass they carried."""
    w = np.asarray(w_imp, dtype=float) * np.exp(np.abs(np.asarray(coefficients, dtype=float)))
    return _normalized(w)
