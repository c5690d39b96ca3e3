"""Pure skip graph rules shared by routers, guards and test oracles."""
import bisect
from typing import Dict, Iterable, List, Optional, Sequence

from guardnet.exceptions import ParamError, TableError
from guardnet.schemas.overlay import LevelEntry, LookupTable, NeighborEntry, RoutingDecision, Side
from guardnet.utils.ids import encode_numerical_id


def common_prefix_len(a: str, b: str) -> int:
    if len(a) != len(b):
        raise ParamError(f"name ids differ in length: {len(a)} vs {len(b)}")
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    return len(a)


def in_cyclic_interval(q: int, start: int, end: int) -> bool:
    """q in [start, end) on the ring; start == end covers the whole ring."""
    if start < end:
        return start <= q < end
    return q >= start or q < end


def local_next_hop(table: LookupTable, self_id: int, q: int) -> RoutingDecision:
    """
    Next hop of a numerical-ID search at `self_id`.

    Terminates at the node whose ring interval [self, successor) holds q,
    i.e. the greatest id <= q, or the overlay maximum when q is below every id.
    """
    if not table.levels:
        raise TableError("lookup table has no levels")
    if table.owner.numerical_id != self_id:
        raise TableError(f"table of {table.owner.numerical_id:x} used at {self_id:x}")
    ring = table.levels[0]
    if ring.left is None or ring.right is None:
        raise TableError("level 0 must have both neighbors")

    if q == self_id or in_cyclic_interval(q, self_id, ring.right.numerical_id):
        return RoutingDecision.terminate()

    top = len(table.levels) - 1
    if q > self_id:
        for i in range(top, -1, -1):
            right = table.levels[i].right
            if right is not None and self_id < right.numerical_id <= q:
                return RoutingDecision.forward(right)
        raise TableError(f"no right neighbor of {self_id:x} lies in ({self_id:x}, {q:x}]")

    for i in range(top, -1, -1):
        left = table.levels[i].left
        if left is not None and q <= left.numerical_id < self_id:
            return RoutingDecision.forward(left)
    return RoutingDecision.forward(ring.left)


def make_attestation_message(owner: int, level: int, side: Side) -> bytes:
    """Canonical `atst||<owner hex16>||<level>||<R|L>` message a neighbor signs."""
    if level < 0:
        raise ParamError(f"negative level {level}")
    return f"atst||{encode_numerical_id(owner)}||{level}||{Side(side).value}".encode("ascii")


# ── global-view helpers (fixtures, oracles, Monte Carlo) ─

def oracle_result(sorted_ids: Sequence[int], q: int) -> int:
    """max{id <= q}, wrapping to the maximum id when q is below every id."""
    if not sorted_ids:
        raise ParamError("empty overlay")
    index = bisect.bisect_right(sorted_ids, q) - 1
    return sorted_ids[index] if index >= 0 else sorted_ids[-1]


def longest_prefix_owner(entries: Iterable[NeighborEntry], target: str) -> NeighborEntry:
    best: Optional[NeighborEntry] = None
    best_len = -1
    for entry in entries:
        length = common_prefix_len(entry.name_id, target)
        if length > best_len or (length == best_len and entry.numerical_id < best.numerical_id):
            best, best_len = entry, length
    if best is None:
        raise ParamError("empty overlay")
    return best


def build_static_tables(entries: Iterable[NeighborEntry], m: int) -> Dict[int, LookupTable]:
    """Lookup tables of a fully built skip graph, computed from a global view."""
    ordered = sorted(entries, key=lambda e: e.numerical_id)
    if not ordered:
        return {}
    tables = {e.numerical_id: LookupTable(owner=e, levels=[]) for e in ordered}
    count = len(ordered)
    for i, entry in enumerate(ordered):
        tables[entry.numerical_id].levels.append(
            LevelEntry(left=ordered[(i - 1) % count], right=ordered[(i + 1) % count])
        )
    for level in range(1, m + 1):
        groups: Dict[str, List[NeighborEntry]] = {}
        for entry in ordered:
            groups.setdefault(entry.name_id[:level], []).append(entry)
        for members in groups.values():
            if len(members) < 2:
                continue
            for i, entry in enumerate(members):
                table = tables[entry.numerical_id]
                table.set_neighbor(level, Side.LEFT, members[i - 1] if i > 0 else None)
                table.set_neighbor(level, Side.RIGHT, members[i + 1] if i + 1 < len(members) else None)
    return tables


def route_path(tables: Dict[int, LookupTable], initiator: int, q: int, max_hops: int = 4096) -> List[int]:
    """Hop sequence obtained by iterating local_next_hop over static tables."""
    hops = [initiator]
    current = initiator
    while True:
        decision = local_next_hop(tables[current], current, q)
        if decision.is_terminal:
            return hops
        current = decision.target.numerical_id
        hops.append(current)
        if len(hops) > max_hops:
            raise TableError(f"route from {initiator:x} to {q:x} exceeded {max_hops} hops")
