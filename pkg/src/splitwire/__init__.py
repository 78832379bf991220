"""Split-inference toolkit: activation compression, resource models, planning and early exit."""

__version__ = "0.1.0"

from .channel import ChannelParams, epsilon_latency, optimal_rate, outage_prob, retransmissions
from .early_exit import (
    AnalyticSizer,
    ComputeProfile,
    ExitDecision,
    LatencyBudget,
    MeasuredSizer,
    early_exit,
    offload_accounting,
    oracle_depth,
    total_latency,
)
from .errors import BudgetUnsatisfiable, CorruptPayload, Infeasible, SplitwireError
from .payload import CompressedPayload, PayloadMeta, compress, decompress, payload_size_bytes
from .planner import AccuracyTable, DeploymentPlan, PlanConstraints, feasibility_report, plan
from .rans import rans_decode, rans_encode
from .resources import ModelProfile, QuantScheme, io_bits, kv_cache_bits, opsc_memory, preset_profile, psi
from .split import CsrMatrix, merge, threshold_split
from .tabq import QuantRow, TabqConfig, aiq, dequantize, tabq_row, tabq_tensor
from .tensor import ActivationTensor, OutlierStats, make_tensor, synth_activations

__all__ = [
    "AccuracyTable", "ActivationTensor", "AnalyticSizer", "BudgetUnsatisfiable", "ChannelParams",
    "CompressedPayload", "ComputeProfile", "CorruptPayload", "CsrMatrix", "DeploymentPlan",
    "ExitDecision", "Infeasible", "LatencyBudget", "MeasuredSizer", "ModelProfile", "OutlierStats",
    "PayloadMeta", "PlanConstraints", "QuantRow", "QuantScheme", "SplitwireError", "TabqConfig",
    "aiq", "compress", "decompress", "dequantize", "early_exit", "epsilon_latency",
    "feasibility_report", "io_bits", "kv_cache_bits", "make_tensor", "merge", "offload_accounting",
    "opsc_memory", "optimal_rate", "oracle_depth", "outage_prob", "payload_size_bytes", "plan",
    "preset_profile", "psi", "rans_decode", "rans_encode", "retransmissions", "synth_activations",
    "tabq_row", "tabq_tensor", "threshold_split", "total_latency",
]
