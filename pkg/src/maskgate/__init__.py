"""maskgate: prompt-driven enhanced masks that gate noisy attribution maps."""

from .attribution import (
    AttributionMap,
    AttributionMethod,
    AttributionPoint,
    extract_points,
    grad_cam,
    integrated_gradients,
    load_external_map,
    make_baseline,
)
from .config import PipelineConfig, load_config
from .core import BBox, BinaryMask, Detection, GrayImage, box_iou, mask_bbox
from .refine import (
    RefineConfig,
    RefinementRecord,
    SliceWindow,
    dual_filter,
    enhanced_mask,
    instance_normalize,
    mask_iou,
    mask_score,
    n_sweep,
    random_slices,
    refine_attribution,
    refine_instance,
    refine_instances,
)
from .scenegen import Annotation, SceneSpec, generate_scene, load_annotations
from .segment import (
    MockBackend,
    RegionGrowBackend,
    RemoteBackend,
    SegmenterBackend,
    SegmentRequest,
    region_grow,
    remote_segment,
    segment,
)
from .toymodel import ScorerTrace, ToyScorer, score

__version__ = "0.1.0"
