"""Ego-vehicle speed from dense optical flow and monocular disparity maps."""

from .calibrate import (
    EvaluationRow,
    FitMethod,
    ScaleFit,
    apply_scale,
    evaluate_configuration,
    fit_scale,
    rmse,
)
from .core import (
    CROP_B,
    CROP_G,
    CROP_R,
    CROPS,
    CropRect,
    DisparityMap,
    EstimatorConfig,
    FlowField,
    Mode,
    Recording,
    ScalarField,
    SpeedSeries,
    ValidityThresholds,
    apply_crop,
    flow_magnitude,
)
from .pipeline import (
    FrameEstimate,
    estimate_recording,
    frame_speed,
    frame_speed_tc,
    run_recording,
    smooth_fields_pixelwise,
    smooth_series,
)

__version__ = "0.1.0"
