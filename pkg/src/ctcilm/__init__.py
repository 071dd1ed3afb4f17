"""Internal language model estimation for CTC on small, exactly enumerable worlds."""

from .ctc import (
    PosteriorGrid,
    Vocabulary,
    brute_force_seq_distribution,
    ctc_log_prob,
    label_posterior_row,
    prefix_log_prob,
)
from .data import TrainingPair, World, load_dataset, load_world, save_dataset, save_world
from .decoder import DecodeResult, FusionScales, brute_force_decode, decode_fused, label_error_rate
from .errors import (
    CtcIlmError,
    DeadPrefixError,
    DecodeError,
    EnumerationGuardError,
    InputDomainError,
    TrainingDivergedError,
)
from .ilm import (
    FramePrior,
    TrainConfig,
    TrainResult,
    beta_matrix,
    ce_transcription_loss,
    estimate_frame_prior,
    exact_ilm_posterior,
    exact_ilm_seq,
    kd_label_loss,
    kd_label_loss_masked,
    kd_label_loss_smoothed,
    kd_seq_loss,
    train,
    unigram_from_prior,
)
from .kernels import BACKEND
from .lm import FULL, CtxLM, load_lm, perplexity, save_lm, uniform_lm
from .tuning import ScaleGridResult, tune_scales
from .worldgen import WorldSpec, build_world, enumerate_joint, make_elm, sample_dataset

__version__ = "0.1.0"
