from .schemas import (
    AuditFailure,
    AuditReport,
    ByzantineBehavior,
    EndpointSpec,
    FaultInjection,
    GenerateRequest,
    GenesisCell,
    GenesisSpec,
    GenesisUser,
    InjectionKind,
    OutcomeClass,
    ScenarioConfig,
    TransferOutcome,
    TransferSpec,
    VerifyReport,
)

__all__ = [
    "AuditFailure",
    "AuditReport",
    "ByzantineBehavior",
    "EndpointSpec",
    "FaultInjection",
    "GenerateRequest",
    "GenesisCell",
    "GenesisSpec",
    "GenesisUser",
    "InjectionKind",
    "OutcomeClass",
    "ScenarioConfig",
    "TransferOutcome",
    "TransferSpec",
    "VerifyReport",
]
