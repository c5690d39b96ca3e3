from pydantic import BaseModel, ConfigDict, Field
from typing import Dict, List, Optional
import enum

from guardnet.schemas.identity import Certificate, KeyShare
from guardnet.schemas.network import Address
from guardnet.schemas.overlay import LookupTable, NeighborEntry, TableProof

class QueryMode(str, enum.Enum):
    AUTH = "AUTH"
    PLAIN = "PLAIN"

class RoutingTranscript(BaseModel):
    """One hop record R||F||T||I||Q||N."""
    model_config = ConfigDict(frozen=True)

    R: int = Field(ge=0, lt=1 << 64)
    F: Optional[int] = Field(default=None, ge=0, lt=1 << 64)
    T: Optional[int] = Field(default=None, ge=0, lt=1 << 64)
    I: int = Field(ge=0, lt=1 << 64)
    Q: int = Field(ge=0, lt=1 << 64)
    N: bytes = Field(min_length=16, max_length=16)

class RoutingProof(BaseModel):
    model_config = ConfigDict(frozen=True)

    transcript: RoutingTranscript
    sig_numerical: bytes
    numerical_cert: Certificate
    sig_name: bytes
    name_cert: Certificate

class RejectReason(str, enum.Enum):
    BAD_NUMERICAL_SIG = "BadNumericalSig"
    BAD_NAME_SIG = "BadNameSig"
    BROKEN_LINK = "BrokenLink"
    FIELD_MISMATCH = "FieldMismatch"
    BAD_HEAD = "BadHead"
    BAD_TAIL = "BadTail"
    REPLAYED_NONCE = "ReplayedNonce"
    WRONG_TERMINATION = "WrongTermination"

class Verdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    accepted: bool
    reason: Optional[RejectReason] = None
    index: Optional[int] = None

    @classmethod
    def accept(cls) -> "Verdict":
        return cls(accepted=True)

    @classmethod
    def reject(cls, reason: RejectReason, index: int) -> "Verdict":
        return cls(accepted=False, reason=reason, index=index)

    def __str__(self) -> str:
        if self.accepted:
            return "Accept"
        return f"Reject({self.reason.value}) at proof {self.index}"

class GuardAssignment(BaseModel):
    """Guard name ids of one subject, each resolved to a live node after lookup."""
    subject: int = Field(ge=0, lt=1 << 64)
    main: str
    side_left: str
    side_right: str
    main_entry: Optional[NeighborEntry] = None
    side_left_entry: Optional[NeighborEntry] = None
    side_right_entry: Optional[NeighborEntry] = None

    def names(self) -> List[str]:
        return [self.main, self.side_left, self.side_right]

    def entries(self) -> List[Optional[NeighborEntry]]:
        """Guard nodes in share-index order (main holds share 0)."""
        return [self.main_entry, self.side_left_entry, self.side_right_entry]

class GuardProvision(BaseModel):
    share: KeyShare
    subject_table: LookupTable
    subject_table_proof: TableProof
    name_certificate: Certificate

    @property
    def subject(self) -> int:
        return self.subject_table.owner.numerical_id

class Refusal(BaseModel):
    model_config = ConfigDict(frozen=True)

    subject: int
    reason: str
    expected: Optional[int] = None
    claimed: Optional[int] = None

class InFlightQuery(BaseModel):
    """A routed search as carried between nodes."""
    mode: QueryMode
    I: int = Field(ge=0, lt=1 << 64)
    Q: int = Field(ge=0, lt=1 << 64)
    N: bytes
    payload: bytes = b""
    seq: int = 0
    origin: Address
    hops: List[int] = Field(default_factory=list)
    chain: List[bytes] = Field(default_factory=list)
    compute_us: int = 0

    @property
    def trace(self) -> str:
        return f"{self.I:016x}:{self.N.hex()}"

class AuthSearchResult(BaseModel):
    result: NeighborEntry
    chain: List[RoutingProof]
    nonce: bytes = b""
    payload_bytes: int = 0
    hops: List[int] = Field(default_factory=list)
    compute_us: int = 0

class ChainExport(BaseModel):
    """Offline-verifiable chain with the (I, Q, N) it answers."""
    I: int
    Q: int
    N: bytes
    proofs: List[RoutingProof]
    extra: Dict[str, str] = Field(default_factory=dict)
