"""superinfo runtime package: training, evaluation, checks and orchestration."""
from .trainer import MetricsRecord, NonFiniteLossError, TrainState, pretrain
from .evaluation import ProbeResult, linear_probe, transfer_eval
from .pipeline import SuperInfoRuntimeError, run_ablation

__all__ = ["MetricsRecord", "NonFiniteLossError", "TrainState", "pretrain",
           "ProbeResult", "linear_probe", "transfer_eval",
           "SuperInfoRuntimeError", "run_ablation"]
