import math
import random

import pytest

from guardnet.exceptions import ParamError, TableError
from guardnet.schemas.network import Address
from guardnet.schemas.overlay import LookupTable, NeighborEntry, Side
from guardnet.utils.ids import hash_name_id
from guardnet.utils.skipgraph import (
    build_static_tables, common_prefix_len, in_cyclic_interval, local_next_hop,
    longest_prefix_owner, make_attestation_message, oracle_result, route_path,
)

from tests.conftest import FIG1_IDS, FIG1_NAMES


def entry(num: int, name: str) -> NeighborEntry:
    return NeighborEntry(numerical_id=num, name_id=name, address=Address(host=f"h{num}", port=1))


def random_overlay(n: int, m: int = 16, seed: int = 0):
    rng = random.Random(seed)
    ids = sorted(rng.sample(range(1 << 40), n))
    entries = [entry(num, hash_name_id(num, m)) for num in ids]
    return ids, build_static_tables(entries, m)


@pytest.mark.parametrize("a,b,expected", [("0110", "0100", 2), ("0110", "0110", 4), ("1000", "0000", 0)])
def test_common_prefix_len(a, b, expected):
    assert common_prefix_len(a, b) == expected


def test_common_prefix_len_length_mismatch():
    with pytest.raises(ParamError):
        common_prefix_len("01", "011")


def test_cyclic_interval():
    assert in_cyclic_interval(5, 3, 8)
    assert not in_cyclic_interval(8, 3, 8)
    assert in_cyclic_interval(1, 8, 3)
    assert in_cyclic_interval(9, 8, 3)
    assert in_cyclic_interval(4, 4, 4)


def test_fig1_first_hop_and_path():
    tables = build_static_tables([entry(num, FIG1_NAMES[num]) for num in FIG1_IDS], 3)
    decision = local_next_hop(tables[45], 45, 25)
    assert decision.target.numerical_id == 30
    assert route_path(tables, 45, 25) == [45, 30, 20]
    assert local_next_hop(tables[45], 45, 45).is_terminal


def test_query_below_every_id_wraps_to_maximum():
    tables = build_static_tables([entry(num, FIG1_NAMES[num]) for num in FIG1_IDS], 3)
    assert route_path(tables, 20, 5)[-1] == 60
    assert oracle_result(FIG1_IDS, 5) == 60


def test_routing_agrees_with_oracle_for_every_pair():
    ids, tables = random_overlay(32, seed=1)
    rng = random.Random(2)
    queries = ids + [rng.randrange(1 << 40) for _ in range(32)]
    for initiator in ids:
        for q in queries:
            assert route_path(tables, initiator, q)[-1] == oracle_result(ids, q)


@pytest.mark.parametrize("n", [16, 64, 256])
def test_mean_hops_are_logarithmic(n):
    ids, tables = random_overlay(n, seed=n)
    rng = random.Random(n)
    hops = [len(route_path(tables, rng.choice(ids), rng.randrange(1 << 40))) for _ in range(500)]
    assert sum(hops) / len(hops) <= 2 * math.log2(n) + 4


def test_static_tables_respect_prefix_rule():
    _, tables = random_overlay(32, m=8, seed=3)
    for owner, table in tables.items():
        for level, _, neighbor in table.present_entries():
            assert common_prefix_len(neighbor.name_id, table.owner.name_id) >= level


def test_local_next_hop_rejects_broken_tables():
    table = LookupTable(owner=entry(5, "01"))
    with pytest.raises(TableError):
        local_next_hop(table, 5, 3)
    with pytest.raises(TableError):
        local_next_hop(table, 6, 3)


def test_longest_prefix_owner_breaks_ties_by_smaller_id():
    entries = [entry(9, "0110"), entry(4, "0111"), entry(7, "0100")]
    assert longest_prefix_owner(entries, "0110").numerical_id == 9
    assert longest_prefix_owner(entries, "0101").numerical_id == 7
    assert longest_prefix_owner(entries, "1111").numerical_id == 4


def test_attestation_message_grammar():
    assert make_attestation_message(45, 2, Side.RIGHT) == b"atst||000000000000002d||2||R"
    with pytest.raises(ParamError):
        make_attestation_message(45, -1, Side.LEFT)
