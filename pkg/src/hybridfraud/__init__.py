"""Hybrid payment fraud decisions: mobile implicit authentication in front of
an HMM spending-profile check."""

from .behavior import (
    AuthScore,
    BehaviorWindow,
    ParameterKind,
    ParameterScore,
    ScoreConfig,
    aggregate_score,
    parameter_score,
    score_day,
    slide,
    window_average,
)
from .cascade import CaseLabel, DecisionTrace, Outcome, Thresholds, Verdict, classify, decide
from .config import EngineConfig, load_config
from .hmm import (
    AmountQuantizer,
    DeviationVerdict,
    HmmParams,
    SpendingSymbol,
    baum_welch,
    deviation_check,
    fit_quantizer,
    fit_spending_model,
    forward_likelihood,
    quantize,
)
from .service import PaymentRequest, PaymentResponse, PaymentService, make_server
from .store import DeviceBuffer, EventBatch, HmmConfig, MobileEvent, ProfileStore, UserProfile, transfer_and_erase

__version__ = "0.1.0"

__all__ = [
    "AuthScore",
    "BehaviorWindow",
    "ParameterKind",
    "ParameterScore",
    "ScoreConfig",
    "aggregate_score",
    "parameter_score",
    "score_day",
    "slide",
    "window_average",
    "CaseLabel",
    "DecisionTrace",
    "Outcome",
    "Thresholds",
    "Verdict",
    "classify",
    "decide",
    "EngineConfig",
    "load_config",
    "AmountQuantizer",
    "DeviationVerdict",
    "HmmParams",
    "SpendingSymbol",
    "baum_welch",
    "deviation_check",
    "fit_quantizer",
    "fit_spending_model",
    "forward_likelihood",
    "quantize",
    "PaymentRequest",
    "PaymentResponse",
    "PaymentService",
    "make_server",
    "DeviceBuffer",
    "EventBatch",
    "HmmConfig",
    "MobileEvent",
    "ProfileStore",
    "UserProfile",
    "transfer_and_erase",
]
