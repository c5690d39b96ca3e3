from pydantic import BaseModel, ConfigDict, Field
from typing import Dict, Optional, Tuple
import enum

from guardnet.config import settings

class Address(BaseModel):
    model_config = ConfigDict(frozen=True)

    host: str = Field(min_length=1)
    port: int = Field(ge=0, le=65535)

    def __str__(self) -> str:
        return f"{self.host}:{self.port}"

    def as_tuple(self) -> Tuple[str, int]:
        return (self.host, self.port)

    @classmethod
    def from_tuple(cls, raw) -> "Address":
        host, port = raw
        return cls(host=host, port=port)

class MessageKind(int, enum.Enum):
    RESPONSE = 0
    ERROR = 1
    # Overlay
    SEARCH_REQUEST = 10
    QUERY = 11
    QUERY_RESULT = 12
    QUERY_REJECT = 13
    GET_ENTRY = 14
    SET_ENTRY = 15
    ATTEST = 16
    # TTP
    REGISTER = 20
    CHALLENGE = 21
    CHALLENGE_RESPONSE = 22
    TABLE_SUBMIT = 23
    GUARD_CONNECT = 24
    PROVISION = 25
    # Guards
    COSIGN = 30
    # Controller
    NODE_REGISTER = 40
    INIT_START = 41
    INIT_DONE = 42
    EXPERIMENT_REQUEST = 43
    WORKLOAD_DONE = 44
    LOG_UPLOAD = 45
    # Tests
    ECHO = 99

class LinkOverride(BaseModel):
    base_us: Optional[int] = Field(default=None, ge=0)
    jitter_us: Optional[int] = Field(default=None, ge=0)
    loss_prob: Optional[float] = Field(default=None, ge=0.0, le=1.0)

class LatencyModel(BaseModel):
    base_us: int = Field(default=settings.DEFAULT_LATENCY_BASE_US, ge=0)
    jitter_us: int = Field(default=settings.DEFAULT_LATENCY_JITTER_US, ge=0)
    loss_prob: float = Field(default=0.0, ge=0.0, le=1.0)
    # keyed by "src->dst" with str(Address) on both sides
    overrides: Dict[str, LinkOverride] = Field(default_factory=dict)

    def link(self, src: Address, dst: Address) -> Tuple[int, int, float]:
        override = self.overrides.get(f"{src}->{dst}")
        if override is None:
            return self.base_us, self.jitter_us, self.loss_prob
        return (
            self.base_us if override.base_us is None else override.base_us,
            self.jitter_us if override.jitter_us is None else override.jitter_us,
            self.loss_prob if override.loss_prob is None else override.loss_prob,
        )

    def default_timeout_us(self) -> int:
        return 5 * (self.base_us + self.jitter_us)
