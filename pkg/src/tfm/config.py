"""Pipeline configuration: one JSON file covering every stage.

All keys are optional; defaults reproduce the reference hyperparameters
(cosine threshold 0.7071, top-K 5, temporal decay 0.9, horizon 3). Bucket
upper bounds of null mean unbounded.

Schema (all sections optional)::

    {
      "schema_version": 1,
      "horizon": 3,
      "ensembling": {"tau_cos": 0.7071, "top_k": 5, "gamma": 0.9,
                     "zero_norm_eps": 1e-6, "use_consensus_matrix": true,
                     "use_reliability_weights": true, "use_aggregation": true},
      "loss": {"enable_dynamic": true, "enable_static": true,
               "enable_geometric": true, "dcls_mode": "both",
               "chamfer_truncation": 2.0},
      "fit": {"parameterization": "per_cluster_translation", "step_size": 0.1,
              "momentum": 0.0, "max_iterations": 500, "tolerance": 1e-9,
              "supervision": "multi_frame"},
      "eval": {"dynamic_threshold": 0.05, "eval_region_half_extent": 35.0,
               "speed_buckets": [[0.05, 0.5], [0.5, 1.0], [1.0, 2.0], [2.0, null]],
               "official_buckets": false}
    }
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from .ensembling import EnsemblingConfig
from .fitter import FitConfig
from .losses import LossConfig
from .metrics import EvalConfig


@dataclass(frozen=True)
class PipelineConfig:
    horizon: int = 3
    ensembling: EnsemblingConfig = field(default_factory=EnsemblingConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def _build(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> PipelineConfig:
    data = dict(data)
    data.pop("schema_version", None)
    eval_data = dict(data.get("eval", {}))
    if "speed_buckets" in eval_data:
        eval_data["speed_buckets"] = tuple(
            (float(lo), math.inf if hi is None else float(hi))
            for lo, hi in eval_data["speed_buckets"])
    return PipelineConfig(
        horizon=int(data.get("horizon", 3)),
        ensembling=_build(EnsemblingConfig, data.get("ensembling", {})),
        loss=_build(LossConfig, data.get("loss", {})),
        fit=_build(FitConfig, data.get("fit", {})),
        eval=_build(EvalConfig, eval_data),
    )


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    from .archive import load_json
    return config_from_dict(load_json(path))
