"""fairsteer: inference-time contrastive latent correction for a toy
conditional DDPM, plus the benchmark harness that measures the correction.
"""

from .autoencoder import AutoEncoder, decode, encode, reconstruction_gradients, reconstruction_loss, train_autoencoder
from .bench import (
    BayesOracle,
    BiasSpec,
    BiasedDataset,
    MetricsReport,
    group_accuracy,
    group_distance,
    intra_cluster_diversity,
    make_biased_dataset,
    run_ablation,
    run_experiment,
    window_sweep,
)
from .diffusion import (
    Denoiser,
    NoiseSchedule,
    TrainConfig,
    denoise_step,
    forward_sample,
    make_schedule,
    predict_noise,
    sample,
    train_denoiser,
)
from .errors import ConfigError, NumericalError
from .guidance import (
    GuidanceConfig,
    GuidanceContext,
    corrected_step,
    direct_loss,
    guided_sample,
    loss_gradient,
    prior_guidance_loss,
    total_loss,
)
from .prior import (
    Projector,
    SamplePools,
    flatten_normalize,
    prior_loss,
    prior_loss_gradients,
    project,
    similarity,
    train_projector,
)

__version__ = "0.1.0"
