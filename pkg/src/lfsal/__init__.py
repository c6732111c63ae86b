"""Light-field salient object detection with a micro-lens feature encoder."""
from .errors import DimensionError, FormatError, LfsalError, NumericError, PairingError
from .lightfield import (AugmentSpec, LightField, MicroLensImage, augment, crop_mla_four, mla_from_sai,
                         photometric_augment, resize_spatial, rotate_lf, sai_from_mla)
from .params import ParamSet, load_checkpoint, save_checkpoint
from .fee import build_fee, fee_forward
from .detector import build_detector, detector_forward, pipeline_forward
from .metrics import MetricsReport, evaluate_dataset, f_beta, mae, weighted_f_beta

__version__ = "0.1.0"
