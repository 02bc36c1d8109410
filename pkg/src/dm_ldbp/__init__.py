"""Dispersion-managed WDM transmission and learned digital backpropagation.

The package splits into three layers:

* physics -- :mod:`~dm_ldbp.field`, :mod:`~dm_ldbp.link`,
  :mod:`~dm_ldbp.transceiver`: split-step fiber propagation, WDM
  transmitters, amplifier noise, polarization effects;
* receivers -- :mod:`~dm_ldbp.rxdsp`, :mod:`~dm_ldbp.dbp`,
  :mod:`~dm_ldbp.ldbp`, :mod:`~dm_ldbp.training`: linear compensation,
  digital backpropagation for dispersion-managed maps, and its learned,
  filter-parameterized counterpart with analytic complex-valued gradients;
* experiments -- :mod:`~dm_ldbp.pipeline`, :mod:`~dm_ldbp.config`,
  :mod:`~dm_ldbp.cli`: seeded end-to-end runs, dataset generation, TOML
  experiment files, and the ``dm-ldbp`` command-line driver.
"""

__version__ = "0.1.0"

from .config import (
    DataConfig,
    EqualizerSpec,
    ExperimentConfig,
    OutputConfig,
    RxConfig,
    default_config,
    load_config,
    parse_config,
)
from .dbp import (
    DbpPlan,
    DbpStep,
    build_dbp_plan,
    dbp_equalize,
    export_plan,
    mirror_backpropagate,
    pmd_aware_dbp,
)
from .errors import (
    AdaptationError,
    ConfigError,
    DmLdbpError,
    NumericalError,
    ParameterError,
    SyncError,
)
from .field import (
    DualPolField,
    apply_fir,
    d_to_beta2,
    dbm_to_watt,
    resample,
    rrc_taps,
    watt_to_dbm,
)
from .ldbp import (
    LdbpModel,
    clone_model,
    init_from_dbp,
    ldbp_backward,
    ldbp_forward,
    load_checkpoint,
    save_checkpoint,
)
from .link import (
    DispersionMap,
    FiberParams,
    PmdRealization,
    SpanConfig,
    SsfmConfig,
    load_pmd,
    propagate_fiber,
    propagate_link,
    save_pmd,
)
from .optimizers import AdamOptimizer, SgdOptimizer
from .pipeline import (
    Arm,
    ArmResult,
    LinkConfig,
    RunSpec,
    clean_reference,
    equalized_symbols,
    evaluate_cell,
    generate_dataset,
    ldbp_equalize_run,
    pmd_for,
    receiver_front_end,
    simulate_run,
)
from .rng import rng_for
from .rxdsp import (
    Mimo2x2,
    MimoConfig,
    cd_compensate,
    channel_select,
    mimo_apply,
    mimo_train,
    synchronize,
)
from .training import (
    Dataset,
    TrainConfig,
    TrainResult,
    load_dataset,
    save_dataset,
    train,
    validation_loss,
    validation_q,
)
from .transceiver import (
    Metrics,
    SymbolFrame,
    WdmConfig,
    build_wdm,
    measure,
    q_from_ber,
    qam16_demodulate,
    qam16_modulate,
    shape_channel,
)

__all__ = [
    "__version__",
    # errors
    "DmLdbpError", "ParameterError", "ConfigError", "NumericalError",
    "SyncError", "AdaptationError",
    # fields and fibers
    "DualPolField", "apply_fir", "resample", "rrc_taps",
    "dbm_to_watt", "watt_to_dbm", "d_to_beta2",
    "FiberParams", "SpanConfig", "DispersionMap", "SsfmConfig",
    "PmdRealization", "propagate_fiber", "propagate_link",
    "save_pmd", "load_pmd",
    # transceiver
    "SymbolFrame", "WdmConfig", "build_wdm", "shape_channel",
    "qam16_modulate", "qam16_demodulate", "measure", "Metrics", "q_from_ber",
    # receiver DSP
    "channel_select", "cd_compensate", "synchronize",
    "MimoConfig", "Mimo2x2", "mimo_train", "mimo_apply",
    # backpropagation
    "DbpStep", "DbpPlan", "build_dbp_plan", "dbp_equalize",
    "mirror_backpropagate", "pmd_aware_dbp", "export_plan",
    # learned model
    "LdbpModel", "init_from_dbp", "ldbp_forward", "ldbp_backward",
    "clone_model", "save_checkpoint", "load_checkpoint",
    "SgdOptimizer", "AdamOptimizer",
    # training
    "Dataset", "TrainConfig", "TrainResult", "train",
    "validation_q", "validation_loss", "save_dataset", "load_dataset",
    # experiments
    "LinkConfig", "RunSpec", "Arm", "ArmResult",
    "simulate_run", "pmd_for", "receiver_front_end", "clean_reference",
    "evaluate_cell", "equalized_symbols", "ldbp_equalize_run",
    "generate_dataset",
    # configuration
    "ExperimentConfig", "EqualizerSpec", "RxConfig", "DataConfig",
    "OutputConfig", "parse_config", "load_config", "default_config",
    "rng_for",
]
