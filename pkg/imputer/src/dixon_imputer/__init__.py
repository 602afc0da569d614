"""dixon_imputer: learn PDFF and R2* maps from two-point Dixon channels."""

from .data import PairedSliceDataset, denormalize_target, normalize_input, normalize_target
from .models import PatchDiscriminator, UNetGenerator
from .predict import predict_files, predict_raster
from .rasters import Raster, RasterError, read_raster, write_raster
from .training import Checkpoint, TrainSpec, load_checkpoint, train

__version__ = "0.1.0"
