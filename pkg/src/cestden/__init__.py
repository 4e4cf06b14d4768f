"""cestden: CEST z-spectrum denoising via subspace decomposition + coordinate regression."""

__version__ = "0.1.0"

from .lorentz import (
    FitConfig,
    FitMaps,
    FitResult,
    PoolSpec,
    default_fit_config,
    fit_volume,
    fit_voxel,
    model_and_jacobian,
)
from .metrics import (
    MetricReport,
    compute_report,
    ln_tmse,
    mse,
    psnr,
    quartiles,
    ssim,
    ssim_image,
)
from .phantom import (
    ConfigError,
    PhantomConfig,
    PoolParams,
    PoolRange,
    ShapeMasks,
    gaussian_smooth,
    load_phantom_config,
    lorentzian,
    make_shape_masks,
    parse_phantom_config,
    synthesize_phantom,
    zspectrum,
)
from .regression import (
    DivergenceError,
    EncodingConfig,
    IrisResult,
    RegressionNetParams,
    TrainConfig,
    TrainState,
    adam_step,
    backward,
    forward,
    iris_denoise,
    positional_encode,
    read_params,
    run_iris,
    train_regression,
    write_params,
)
from .rng import SplitMix64
from .subspace import (
    ConvergenceError,
    SubspaceDecomposition,
    gram_svd,
    jacobi_eigh,
    project_coefficients,
    read_decomposition,
    reconstruct,
    threshold_median,
    threshold_truncation,
    write_decomposition,
)
from .volume import (
    CoordinateGrid,
    NoiseSpec,
    OffsetSchedule,
    VolumeFormatError,
    ZSpectrumVolume,
    add_gaussian_noise,
    coordinate_grid,
    make_default_schedule,
    read_volume,
    write_volume,
)
