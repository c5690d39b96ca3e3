from guardnet.schemas.identity import (
    Identity, IdentityKind, KeyScheme, SigningKey, Certificate, KeyShare,
    PartialSignature, PublicParams, RegistrationGrant,
)
from guardnet.schemas.network import Address, MessageKind, LatencyModel, LinkOverride
from guardnet.schemas.overlay import (
    Side, NeighborEntry, LevelEntry, LookupTable, TableProofEntry, TableProof,
    RoutingAction, RoutingDecision, SearchPath,
)
from guardnet.schemas.routing import (
    QueryMode, RoutingTranscript, RoutingProof, RejectReason, Verdict,
    GuardAssignment, GuardProvision, Refusal, InFlightQuery, AuthSearchResult, ChainExport,
)
from guardnet.schemas.simulation import (
    CSV_COLUMNS, Behavior, AdversarySpec, SimConfig, LogEvent, LogRecord,
    ModeSummary, MetricsSummary, RunReport, CollusionReport,
)

__all__ = [
    "Identity", "IdentityKind", "KeyScheme", "SigningKey", "Certificate", "KeyShare",
    "PartialSignature", "PublicParams", "RegistrationGrant",
    "Address", "MessageKind", "LatencyModel", "LinkOverride",
    "Side", "NeighborEntry", "LevelEntry", "LookupTable", "TableProofEntry", "TableProof",
    "RoutingAction", "RoutingDecision", "SearchPath",
    "QueryMode", "RoutingTranscript", "RoutingProof", "RejectReason", "Verdict",
    "GuardAssignment", "GuardProvision", "Refusal", "InFlightQuery", "AuthSearchResult", "ChainExport",
    "CSV_COLUMNS", "Behavior", "AdversarySpec", "SimConfig", "LogEvent", "LogRecord",
    "ModeSummary", "MetricsSummary", "RunReport", "CollusionReport",
]
