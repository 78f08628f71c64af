"""Flow-based propagation of sparse key-frame masks plus a surgical-workflow
evaluation toolkit (segmentation, detection, classification, anticipation)."""

from .core import (VOID_ID, AnticipationSeries, ConfidenceMap, Detection,
                   FlowField, FrameTimeline, LabelMask, PseudoLabel,
                   nearest_key_frame, validate_timeline)
from .flow import (ConsistencyParams, FlowParams, compose_flows, estimate_flow,
                   forward_backward_check, forward_backward_confidence,
                   load_flow, save_flow)
from .fuse import (DEFAULT_PSEUDO_WEIGHT, FusionParams, ProbMap,
                   emit_pseudo_label, fuse, load_probmap, refine, save_probmap)
from .metrics import (AnticipationEval, GroundTruthInstance, anticipation_targets,
                      classification_scores, detection_ap, iou_semantic, mae_e,
                      mae_in, mciou, miou)
from .warp import PropagationConfig, propagate_labels, warp_mask

__version__ = "0.1.0"
