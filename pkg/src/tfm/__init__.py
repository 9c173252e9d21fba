"""Multi-frame consensus supervision mining for LiDAR scene flow.

Library layout:

- :mod:`tfm.geometry`, :mod:`tfm.frames` — rigid transforms, frames,
  windows, flow fields, validation.
- :mod:`tfm.neighbors` — exact nearest-neighbor index.
- :mod:`tfm.segmentation` — dynamic masks and Euclidean clustering.
- :mod:`tfm.ensembling` — candidate pools, consensus voting, target mining.
- :mod:`tfm.losses` — dynamic cluster / static / geometric losses + gradient.
- :mod:`tfm.metrics` — three-way EPE, bucket-normalized EPE, stability.
- :mod:`tfm.synth` — deterministic synthetic scenes with exact ground truth.
- :mod:`tfm.fitter` — direct flow optimization against the total loss.
- :mod:`tfm.archive`, :mod:`tfm.config`, :mod:`tfm.cli` — file formats,
  configuration, command line.
"""

__version__ = "0.1.0"

from .ensembling import (CandidatePool, ClusterSupervision, ConsensusResult,
                         EnsemblingConfig, MotionCandidate, build_pool,
                         consensus_matrix, external_candidates, internal_candidate,
                         mine_supervision, reliability_weights, targets_of,
                         vote_and_aggregate)
from .fitter import FitConfig, FitDivergence, FitTrace, fit, two_frame_baseline_targets
from .frames import (Diagnostic, FlowField, Frame, FrameWindow, NOISE_LABEL,
                     STATIC_LABEL, align_window, validate_window)
from .geometry import RigidTransform, apply_transform, compose
from .losses import LossConfig, LossReport, dynamic_cluster_loss, geometric_loss, \
    loss_gradient, static_loss, total_loss
from .metrics import EvalConfig, bucket_normalized_epe, supervision_stability, threeway_epe
from .neighbors import NearestNeighborIndex
from .segmentation import (ClusterSet, DynamicCluster, euclidean_cluster,
                           heuristic_dynamic_mask, ingest_labels)
from .synth import ObjectSpec, Scene, SceneSpec, generate
