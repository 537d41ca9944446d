"""Seedable fluorescence-image simulator for neutral-atom arrays.

Generates realistic sensor frames (EMCCD or CMOS) from a description of
the trapped-atom state, together with the exact ground truth behind each
frame, and provides fitting tools to calibrate the simulator's parameters
from image datasets.
"""

__version__ = "0.1.0"

from .errors import AtomSimError, ConfigError, FitError, NumericError, ParameterError
from .rng import RandomState, uniform_next
from .sampling import (
    gumbel_from_uniform,
    inverse_regularized_gamma_upper,
    loss_time_from_uniform,
    sample_em_gain,
    sample_gamma,
    sample_gaussian,
    sample_gumbel,
    sample_gumbel_zero_mean,
    sample_loss_time,
    sample_poisson,
)
from .experiment import (
    ExperimentConfig,
    GroundTruth,
    LatticeSpec,
    SiteTruth,
    apply_imaging_loss,
    build_site_map,
    sample_occupancy,
)
from .optics import (
    ABERRATION_TERMS,
    TILT_TERMS,
    ZERNIKE_TERMS,
    OpticalConfig,
    airy_roi_radius,
    apply_optics,
    build_mtf,
    build_pupil,
    encircled_energy,
    psf_to_mtf,
    pupil_to_psf,
    solid_angle,
    zernike_eval,
)
from .cameras import (
    CameraConfigCMOS,
    CameraConfigEMCCD,
    PixelCharacteristics,
    init_cmos_sensor,
    quantize,
    simulate_cmos,
    simulate_emccd,
)
from .fitting import (
    Histogram,
    ThreeComponentFit,
    ZernikeFit,
    average_spot,
    build_histogram,
    fit_em_tail,
    fit_three_component,
    fit_zernike,
    pdf_exp_decay,
    pdf_lost,
    photons_from_separation,
    roi_sums,
)
from .config import SimulationConfig, load_config, parse_config
from .imageio import (
    read_ground_truth,
    read_image,
    truth_from_dict,
    truth_to_dict,
    write_ground_truth,
    write_image,
)
from .pipeline import FrameGenerator, generate_frame, make_generator
