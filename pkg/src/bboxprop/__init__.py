"""Post-processing of fisheye traffic detections into validated vehicle tracks."""

from .geometry import BBox, ImageGeometry, extrapolate_box, interpolate_box, iou, radius
from .ingest import Detection, GroundTruthBox, Modality
from .regions import ICIP2020, RegionSpec, SceneClass, ckmeans_1d, classify_region, fit_region_spec, size_filter
from .tracker import SegmentPlan, Source, Status, Track, plan_segments, run_segment_tracking
from .propagation import ConstantValidator, OracleValidator, PropagationConfig, path_iou
from .pipeline import run_pipeline
from .evaluation import ap50, clear_mot, evaluate

__version__ = "0.1.0"
