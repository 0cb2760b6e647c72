"""Run configuration: one JSON document holding every tracker and feature setting.

Schema (all keys optional; missing keys take the defaults shown by
``trac track --print-config``)::

    {
      "lambda1": 0.5, "lambda2": 0.1, "lambda3": 0.5, "alpha": 0.1, "beta": 0.5,
      "n_particles": 400, "n_templates": 10,
      "gamma_obs": 50.0, "gamma_rep": 0.75, "window": 5,
      "buffer_size": 10, "update_min_buffer": 5, "update_corr_gate": 0.98,
      "transition_stds": [4, 4, 0.02, 0.002, 0.002, 0.001],
      "jitter_stds": [1, 1, 0, 0, 0, 0],
      "max_iters": 50, "tol": 1e-6, "seed": 0,
      "features": {"patch_size": [32, 32], "color_bins": 8, "hog_cell": 8,
                   "hog_orientations": 9, "hog_clip": 0.2,
                   "modalities": ["intensity", "color", "hog", "lbp"]},
      "sequences": ["path/to/otb/Sequence"],
      "output_dir": "runs/out"
    }

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .features import FeatureConfig
from .tracker import TrackerConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    sequences: list = field(default_factory=list)
    output_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        doc = dict(doc)
        sequences = doc.pop("sequences", [])
        output_dir = doc.pop("output_dir", None)
        allowed = set(TrackerConfig.field_names())
        unknown = set(doc) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        feats = doc.pop("features", {})
        if not isinstance(feats, dict):
            raise ConfigError("features must be an object")
        feat_allowed = {f.name for f in fields(FeatureConfig)}
        bad = set(feats) - feat_allowed
        if bad:
            raise ConfigError(f"unknown feature keys: {sorted(bad)}")
        if not isinstance(sequences, list) or not all(isinstance(s, str) for s in sequences):
            raise ConfigError("sequences must be a list of paths")
        try:
            tracker = TrackerConfig(features=FeatureConfig(**feats), **doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(tracker, sequences, output_dir)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def tracker_dict(self) -> dict:
        doc = asdict(self.tracker)
        doc["transition_stds"] = list(doc["transition_stds"])
        doc["jitter_stds"] = list(doc["jitter_stds"])
        doc["features"]["patch_size"] = list(doc["features"]["patch_size"])
        doc["features"]["modalities"] = list(doc["features"]["modalities"])
        return doc

    def to_dict(self) -> dict:
        doc = self.tracker_dict()
        doc["sequences"] = list(self.sequences)
        if self.output_dir is not None:
            doc["output_dir"] = self.output_dir
        return doc

    def digest(self) -> str:
        """SHA-256 of the canonical tracker settings (paths excluded)."""
        text = json.dumps(self.tracker_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()
