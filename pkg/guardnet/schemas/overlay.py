from pydantic import BaseModel, ConfigDict, Field
from typing import Dict, List, Optional, Tuple
import enum

from guardnet.schemas.identity import Certificate
from guardnet.schemas.network import Address

class Side(str, enum.Enum):
    LEFT = "L"
    RIGHT = "R"

    @property
    def opposite(self) -> "Side":
        return Side.RIGHT if self is Side.LEFT else Side.LEFT

class NeighborEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    numerical_id: int = Field(ge=0, lt=1 << 64)
    name_id: str
    address: Address

class LevelEntry(BaseModel):
    left: Optional[NeighborEntry] = None
    right: Optional[NeighborEntry] = None

    def get(self, side: Side) -> Optional[NeighborEntry]:
        return self.left if side is Side.LEFT else self.right

    def set(self, side: Side, entry: Optional[NeighborEntry]) -> None:
        if side is Side.LEFT:
            self.left = entry
        else:
            self.right = entry

class LookupTable(BaseModel):
    """Per-level left/right neighbors of `owner`; level 0 is the circular ring."""
    owner: NeighborEntry
    levels: List[LevelEntry] = Field(default_factory=list)

    def level(self, i: int) -> LevelEntry:
        if i < len(self.levels):
            return self.levels[i]
        return LevelEntry()

    def neighbor(self, level: int, side: Side) -> Optional[NeighborEntry]:
        return self.level(level).get(side)

    def set_neighbor(self, level: int, side: Side, entry: Optional[NeighborEntry]) -> None:
        while len(self.levels) <= level:
            self.levels.append(LevelEntry())
        self.levels[level].set(side, entry)
        self.trim()

    def trim(self) -> None:
        """Drop empty levels above level 0."""
        while len(self.levels) > 1 and self.levels[-1].left is None and self.levels[-1].right is None:
            self.levels.pop()

    def present_entries(self) -> List[Tuple[int, Side, NeighborEntry]]:
        found = []
        for i, level in enumerate(self.levels):
            for side in (Side.LEFT, Side.RIGHT):
                entry = level.get(side)
                if entry is not None:
                    found.append((i, side, entry))
        return found

class TableProofEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    level: int = Field(ge=0)
    side: Side
    signature: bytes
    certificate: Certificate

class TableProof(BaseModel):
    entries: List[TableProofEntry] = Field(default_factory=list)

    def as_map(self) -> Dict[Tuple[int, Side], TableProofEntry]:
        return {(e.level, e.side): e for e in self.entries}

class RoutingAction(str, enum.Enum):
    FORWARD = "forward"
    TERMINATE = "terminate"

class RoutingDecision(BaseModel):
    model_config = ConfigDict(frozen=True)

    action: RoutingAction
    target: Optional[NeighborEntry] = None

    @classmethod
    def forward(cls, target: NeighborEntry) -> "RoutingDecision":
        return cls(action=RoutingAction.FORWARD, target=target)

    @classmethod
    def terminate(cls) -> "RoutingDecision":
        return cls(action=RoutingAction.TERMINATE)

    @property
    def is_terminal(self) -> bool:
        return self.action == RoutingAction.TERMINATE

class SearchPath(BaseModel):
    hops: List[int]
    result: NeighborEntry
    nonce: bytes = b""
    payload_bytes: int = 0
    compute_us: int = 0
