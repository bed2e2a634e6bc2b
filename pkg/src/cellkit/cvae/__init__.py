"""Conditional VAE with a ZINB decoder for pseudo-cell generation."""
from .distributions import (
    ZinbParams,
    kl_gaussian,
    kl_lognormal,
    nb_log_pmf,
    sample_zinb_chain,
    zinb_log_pmf,
    zinb_log_prob,
)
from .model import (
    CONDITION_FIELDS,
    ConditionEncoder,
    CvaeArch,
    CvaeParams,
    DecoderOutput,
    ElboTerms,
    LatentSample,
    Posterior,
    condition_vector,
    decode,
    elbo_loss,
    encode,
    init_cvae,
    reparameterize,
)
from .train import (
    CvaeConfig,
    CvaeTrainResult,
    estimate_library_prior,
    generate,
    load_cvae,
    save_cvae,
    train_cvae,
)
