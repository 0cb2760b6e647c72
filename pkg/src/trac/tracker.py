"""Frame-by-frame tracking loop."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, fields
from typing import Iterable, Optional

import numpy as np

from .features import FeatureConfig, observe_many
from .motion import (
    DEFAULT_STDS,
    AffineState,
    ParticleSet,
    TransitionModel,
    TrackingFailure,
    propagate,
    resample,
    update_weights,
)
from .solver import SolverConfig, SparseProblem, TemporalTarget, reconstruct, solve
from .templates import (
    DEFAULT_JITTER,
    CandidateBuffer,
    Dictionary,
    init_dictionary,
    short_term_select,
    stack_modalities,
    update_dictionary,
    update_importance,
)

log = logging.getLogger(__name__)


@dataclass
class TrackerConfig:
    lambda1: float = 0.5
    lambda2: float = 0.1
    lambda3: float = 0.5
    alpha: float = 0.1
    beta: float = 0.5
    n_particles: int = 400
    n_templates: int = 10
    gamma_obs: float = 50.0
    gamma_rep: float = 0.75
    window: int = 5
    buffer_size: int = 10
    update_min_buffer: int = 5
    update_corr_gate: float = 0.98
    transition_stds: tuple = DEFAULT_STDS
    jitter_stds: tuple = DEFAULT_JITTER
    max_iters: int = 50
    tol: float = 1e-6
    seed: int = 0
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        if isinstance(self.features, dict):
            self.features = FeatureConfig(**self.features)
        self.transition_stds = tuple(self.transition_stds)
        self.jitter_stds = tuple(self.jitter_stds)
        for name in ("lambda1", "lambda2", "lambda3", "gamma_obs"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        if not 0 < self.gamma_rep <= 1:
            raise ValueError("gamma_rep must lie in (0, 1]")
        for name in ("n_particles", "n_templates", "window", "buffer_size", "max_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if len(self.transition_stds) != 6 or len(self.jitter_stds) != 6:
            raise ValueError("transition_stds and jitter_stds need 6 entries")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def solver_config(self) -> SolverConfig:
        return SolverConfig(max_iters=self.max_iters, tol=self.tol)


@dataclass
class CacheEntry:
    observation: list[np.ndarray]
    coefficients: list[np.ndarray]
    frame: int
    in_dictionary: bool


@dataclass
class TrackResult:
    frame: int
    state: AffineState
    box: np.ndarray
    reconstruction_error: float
    solver_iterations: int
    r: int


def likelihood(residual_sq, gamma_obs: float):
    """Observation score ``exp(-gamma * ||x - x_hat||^2)``."""
    return np.exp(-gamma_obs * np.asarray(residual_sq, dtype=float))


def residuals(problem: SparseProblem, W) -> np.ndarray:
    """Squared reconstruction error per column, summed over modalities."""
    rec = reconstruct(problem, W)
    return sum(np.einsum("ij,ij->j", r - x, r - x) for r, x in zip(rec, problem.observations))


class Tracker:
    def __init__(self, first_frame: np.ndarray, gt_box, cfg: Optional[TrackerConfig] = None):
        self.cfg = cfg = cfg or TrackerConfig()
        seeds = np.random.SeedSequence(cfg.seed).spawn(2)
        self.frame_shape = first_frame.shape
        self.dictionary = init_dictionary(
            first_frame, gt_box, cfg.n_templates, cfg.features,
            np.random.default_rng(seeds[0]), cfg.jitter_stds, cfg.lambda3,
        )
        self.state = AffineState.from_box(gt_box, cfg.features.patch_size)
        self.particles = ParticleSet.replicate(self.state, cfg.n_particles,
                                               seed=np.random.default_rng(seeds[1]))
        self.transition = TransitionModel(cfg.transition_stds)
        self.cache: deque[CacheEntry] = deque(maxlen=cfg.window)
        self.buffer = CandidateBuffer(cfg.buffer_size)
        self.frame_index = 0
        first = self.dictionary.template(0)
        self.buffer.push(first, 0)
        self._push_cache(first, 0)

    # -- temporal cache -------------------------------------------------
    def _coefficients(self, observation) -> list[np.ndarray]:
        """Target coefficients of one observation against the current dictionary."""
        c = self.cfg
        problem = SparseProblem(
            self.dictionary.templates, [o[:, None] for o in observation],
            lambda1=c.lambda1, lambda2=0.0, alpha=c.alpha,
        )
        sol = solve(problem, c.solver_config())
        m = self.dictionary.size
        return [w[:m, 0] for w in sol.coefficients]

    def _push_cache(self, observation, frame: int):
        in_dict = frame in set(self.dictionary.source_frames.tolist())
        self.cache.appendleft(CacheEntry(observation, self._coefficients(observation), frame, in_dict))

    def _refresh_cache(self):
        frames = set(self.dictionary.source_frames.tolist())
        for entry in self.cache:
            entry.coefficients = self._coefficients(entry.observation)
            entry.in_dictionary = entry.frame in frames

    def temporal_targets(self) -> list[TemporalTarget]:
        return [
            TemporalTarget(e.coefficients, lag=i + 1, excluded=e.in_dictionary)
            for i, e in enumerate(self.cache)
        ]

    # -- per-frame ------------------------------------------------------
    def build_problem(self, observations) -> SparseProblem:
        c = self.cfg
        return SparseProblem(
            self.dictionary.templates, observations,
            lambda1=c.lambda1, lambda2=c.lambda2, alpha=c.alpha,
            temporal_targets=self.temporal_targets() if c.lambda2 > 0 else [],
        )

    def step(self, frame: np.ndarray) -> TrackResult:
        c = self.cfg
        self.frame_index += 1
        t = self.frame_index
        self.particles = propagate(self.particles, self.transition)
        X = observe_many(frame, self.particles.states, c.features)
        problem = self.build_problem(X)
        sol = solve(problem, c.solver_config())
        res = residuals(problem, sol.coefficients)
        if not np.all(np.isfinite(res)):
            raise TrackingFailure(f"non-finite reconstruction error at frame {t}")
        scores = likelihood(res, c.gamma_obs)
        win = int(np.argmax(scores))
        self.state = self.particles.state(win)
        winner_obs = [x[:, win].copy() for x in X]

        m = self.dictionary.size
        z = np.mean([w[:m, win] for w in sol.coefficients], axis=0)
        self.dictionary.importance = update_importance(self.dictionary.importance, z)

        # shifting by the best residual rescales every score by the same factor,
        # which the renormalisation removes; it only guards against underflow
        self.particles = resample(update_weights(self.particles, likelihood(res - res.min(), c.gamma_obs)))
        self.buffer.push(winner_obs, t)
        self._push_cache(winner_obs, t)
        r = self._maybe_update_templates(winner_obs)

        box = self.state.bounding_box(c.features.patch_size, frame.shape)
        log.debug("frame %d: winner %d residual %.4g iters %d r %d", t, win, res[win], sol.iterations, r)
        return TrackResult(t, self.state, box, float(res[win]), sol.iterations, r)

    def _maybe_update_templates(self, winner_obs) -> int:
        c = self.cfg
        if len(self.buffer) < c.update_min_buffer:
            return 0
        y = stack_modalities([o[:, None] for o in winner_obs])[:, 0]
        if np.max(self.dictionary.stacked().T @ y) >= c.update_corr_gate:
            return 0
        picked = short_term_select(self.buffer, c.lambda3, c.gamma_rep, self.dictionary.size)
        have = set(self.dictionary.source_frames.tolist())
        picked = [i for i in picked if self.buffer.frames[i] not in have]
        if not picked:
            return 0
        self.dictionary, _ = update_dictionary(self.dictionary, self.buffer, picked,
                                               c.beta, c.lambda3)
        self._refresh_cache()
        return len(picked)


def track_sequence(frames: Iterable[np.ndarray], init_box, cfg: Optional[TrackerConfig] = None,
                   on_result=None) -> list[TrackResult]:
    """Track through ``frames``; the first frame is initialised from ``init_box``.

    The returned list starts with the initial box for frame 0. ``on_result``
    is called with every result as it is produced so callers can flush
    partial output before a :class:`TrackingFailure` propagates.
    """
    it = iter(frames)
    first = next(it)
    tracker = Tracker(first, init_box, cfg)
    results = [TrackResult(0, tracker.state, np.asarray(init_box, dtype=float), 0.0, 0, 0)]
    if on_result:
        on_result(results[0])
    for frame in it:
        res = tracker.step(frame)
        results.append(res)
        if on_result:
            on_result(res)
    return results


__all__ = [
    "TrackerConfig", "Tracker", "TrackResult", "CacheEntry", "likelihood", "residuals",
    "track_sequence", "TrackingFailure", "Dictionary",
]
