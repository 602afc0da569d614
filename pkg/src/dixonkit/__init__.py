"""dixonkit: synthetic water-fat MRI cohorts, estimators, and evaluation."""

from .estimators import (
    DIXON_CHANNELS,
    TARGET_CHANNELS,
    FitResult,
    NllsConfig,
    baseline_r2star_fit,
    dixon_decompose,
    dixon_fat_fraction,
    fit_map,
    nlls_fit_batch,
    nlls_fit_voxel,
    nlls_residual_jacobian,
)
from .image_ops import (
    RegistrationError,
    apply_mask,
    mutual_information,
    register_translation,
    resample_linear,
    translate,
)
from .metrics import MetricReport, MetricsError, build_report, masked_mae, mean_region_value, regression_r2
from .phantom import PhantomConfig, PhantomSlice, generate_phantom, render_acquisitions
from .pipeline import (
    DatasetManifest,
    ManifestError,
    PipelineConfig,
    SampleRecord,
    build_cohort,
    export_ml,
    mi_quality_filter,
    read_manifest,
    split_dataset,
    validate_manifest,
    write_manifest,
)
from .raster import BinaryMask, RasterFormatError, RasterImage, export_png, read_raster, write_raster
from .signal_model import (
    EchoSchedule,
    FatSpectrum,
    TissueParams,
    add_complex_noise,
    in_opposed_echo_times,
    simulate_multi_echo,
    simulate_multi_echo_map,
    simulate_simple_dixon,
    simulate_two_point_r2star,
)

__version__ = "0.1.0"
