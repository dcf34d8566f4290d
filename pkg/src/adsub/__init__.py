"""Active subsampling with guided diffusion over analytic Gaussian-mixture priors."""

from adsub.schedule import NoiseSchedule, build_linear_schedule, build_schedule, forward_noise
from adsub.prior import (
    IsotropicGmm,
    NoisedGmmView,
    fit_gmm_em,
    noised_view,
    score,
    tweedie_denoise,
    tweedie_jacobian_apply,
)
from adsub.measurement import (
    ActionSet,
    ActionSpace,
    MeasurementModel,
    SparseMeasurement,
    acquire,
    apply_forward,
    build_action_space,
    mask_and_zero_fill,
)
from adsub.guidance import GuidanceConfig, data_fidelity_step, guided_gradient, reverse_step
from adsub.policy import (
    PolicyConfig,
    action_scores,
    baseline_next_action,
    entropy_estimate,
    select_max_entropy,
)
from adsub.agent import AcquisitionTrace, AgentConfig, run_ads, run_fixed_mask

__version__ = "0.1.0"
