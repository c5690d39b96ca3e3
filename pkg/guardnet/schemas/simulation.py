from pydantic import BaseModel, Field, field_validator, model_validator
from typing import Dict, List, Optional, Tuple
import enum

from guardnet.config import settings
from guardnet.schemas.network import Address, LatencyModel

CSV_COLUMNS = [
    "ts_us", "node_id", "event", "search_seq", "mode", "nonce_hex", "q_hex",
    "hop_count", "latency_us", "msg_bytes", "compute_us", "detail",
]

class Behavior(str, enum.Enum):
    DROP = "drop"
    MISDIRECT = "misdirect"
    MANIPULATE = "manipulate"
    FALSIFY = "falsify"

class AdversarySpec(BaseModel):
    """Deviant routing of one node; each behavior fires on its fraction of routed queries."""
    node_index: int = Field(ge=0)
    behaviors: List[Tuple[Behavior, float]] = Field(min_length=1)

    @field_validator("behaviors")
    @classmethod
    def _check_fractions(cls, value):
        for behavior, fraction in value:
            if not 0.0 <= fraction <= 1.0:
                raise ValueError(f"{behavior.value} fraction {fraction} outside [0, 1]")
        return value

class SimConfig(BaseModel):
    node_count: int = Field(gt=0)
    seed: int = Field(ge=0, lt=1 << 64)
    message_count: int = Field(default=settings.DEFAULT_MESSAGE_COUNT, gt=0)
    wait_time_max_s: int = Field(default=settings.DEFAULT_WAIT_TIME_MAX_S, gt=0)
    message_length: int = Field(default=settings.DEFAULT_MESSAGE_LENGTH, gt=0)
    controller: Address = Field(default_factory=lambda: Address(
        host=settings.DEFAULT_CONTROLLER_HOST, port=settings.DEFAULT_CONTROLLER_PORT,
    ))
    m: int = Field(default=settings.NAME_ID_BITS, ge=1, le=256)
    latency: LatencyModel = Field(default_factory=LatencyModel)
    adversaries: List[AdversarySpec] = Field(default_factory=list)
    time_scale: int = Field(default=settings.DEFAULT_TIME_SCALE, gt=0)
    output_dir: str = settings.OUTPUT_DIR
    chain_dump_limit: int = Field(default=settings.CHAIN_DUMP_LIMIT, ge=0)

    @model_validator(mode="after")
    def _check_adversaries(self):
        if len(self.adversaries) >= self.node_count:
            raise ValueError(f"{len(self.adversaries)} adversaries need more than {self.node_count} nodes")
        seen = set()
        for spec in self.adversaries:
            if spec.node_index >= self.node_count:
                raise ValueError(f"adversary index {spec.node_index} outside {self.node_count} nodes")
            if spec.node_index in seen:
                raise ValueError(f"adversary index {spec.node_index} listed twice")
            seen.add(spec.node_index)
        return self

    def adversary_map(self) -> Dict[int, AdversarySpec]:
        return {spec.node_index: spec for spec in self.adversaries}

    def wait_bounds_us(self) -> Tuple[int, int]:
        """Pause between search pairs, from seconds in config to virtual microseconds."""
        return 1_000_000 // self.time_scale, self.wait_time_max_s * 1_000_000 // self.time_scale

class LogEvent(str, enum.Enum):
    REGISTER = "REGISTER"
    JOIN_DONE = "JOIN_DONE"
    GUARDS_DONE = "GUARDS_DONE"
    SEARCH_START = "SEARCH_START"
    SEARCH_DONE = "SEARCH_DONE"
    HOP = "HOP"
    COSIGN = "COSIGN"
    VERIFY = "VERIFY"
    REJECT = "REJECT"

class LogRecord(BaseModel):
    ts_us: int = Field(ge=0)
    node_id: str
    event: LogEvent
    search_seq: int = -1
    mode: str = ""
    nonce_hex: str = ""
    q_hex: str = ""
    hop_count: int = 0
    latency_us: int = 0
    msg_bytes: int = 0
    compute_us: int = 0
    detail: str = ""

    def as_row(self) -> List[str]:
        return [
            str(self.ts_us), self.node_id, self.event.value, str(self.search_seq), self.mode,
            self.nonce_hex, self.q_hex, str(self.hop_count), str(self.latency_us),
            str(self.msg_bytes), str(self.compute_us), self.detail,
        ]

    @classmethod
    def from_row(cls, row: List[str]) -> "LogRecord":
        return cls.model_validate(dict(zip(CSV_COLUMNS, row)))

class ModeSummary(BaseModel):
    searches: int = 0
    accepted: int = 0
    rejected: int = 0
    avg_query_latency_us: float = 0.0
    avg_compute_us: float = 0.0
    avg_msg_bytes: float = 0.0
    avg_hops: float = 0.0
    hop_histogram: Dict[int, int] = Field(default_factory=dict)

class MetricsSummary(BaseModel):
    modes: Dict[str, ModeSummary] = Field(default_factory=dict)
    records: int = 0

    def mode(self, name: str) -> ModeSummary:
        return self.modes.get(name, ModeSummary())

class RunReport(BaseModel):
    merged_csv: str
    node_count: int
    metrics: MetricsSummary
    chain_files: List[str] = Field(default_factory=list)
    params_file: Optional[str] = None
    envelopes: int = 0
    wire_bytes: int = 0

class CollusionReport(BaseModel):
    n: int
    f: int
    trials: int
    hits: int
    estimate: float
    sigma: float
    exact: float
    bound: float
    # number of distinct guard nodes -> trials
    distinct_guards: Dict[int, int] = Field(default_factory=dict)

    def within(self, k: float = 4.0) -> bool:
        return abs(self.estimate - self.exact) <= k * self.sigma
