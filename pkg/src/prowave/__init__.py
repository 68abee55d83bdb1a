"""Progressive raw-waveform GAN speech synthesis toolkit."""
import os

# The workloads here are many small float32 matmuls; BLAS thread pools lose
# badly to their own synchronisation on them, and single-threaded kernels are
# also what makes runs bit-reproducible.  Best effort: only works if numpy
# has not been imported yet, and never overrides an explicit user setting.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
del os, _var

from .autodiff import (  # noqa: E402
    ContractError,
    GradientMap,
    ParameterError,
    ShapeError,
    Tape,
    Tensor,
    backward,
    conv1d,
    conv1d_transpose,
    dense,
    input_gradient,
    l2_norm,
    lrelu,
    reduce_mean,
    relu,
    tanh_act,
)
from .audio import (  # noqa: E402
    AudioClip,
    DatasetSummary,
    NoSpeechError,
    TrimConfig,
    WavFormatError,
    fit_length,
    ingest_dataset,
    read_wav,
    short_term_energy,
    synth_fixture,
    trim_onset,
    write_wav,
)
from .models import (  # noqa: E402
    LayerSpec,
    NetworkSpec,
    Pipeline,
    build_autoencoder,
    build_discriminator,
    build_generator,
    chain,
    forward,
    init_params,
    phase_shuffle,
    shape_trace,
)
from .training import (  # noqa: E402
    AdamState,
    Checkpoint,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    critic_loss_wgan_gp,
    generate,
    generator_loss_wgan,
    interpolate,
    load_checkpoint,
    save_checkpoint,
    train_progressive,
    train_stage,
    vanilla_gan_value,
)
from .evaluation import (  # noqa: E402
    RatingRecord,
    SystemStats,
    aggregate,
    clip_diagnostics,
    cohens_d,
    effect_band,
)

__version__ = "0.1.0"
