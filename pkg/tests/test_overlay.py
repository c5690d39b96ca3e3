import math
import random

import pytest

from guardnet.exceptions import DroppedQuery, ParamError, ProofError
from guardnet.schemas.overlay import Side
from guardnet.services.ttp_service import verify_table_proof
from guardnet.utils.ids import int_to_name
from guardnet.utils.skipgraph import build_static_tables, common_prefix_len, longest_prefix_owner, oracle_result

from tests.conftest import build_overlay, make_config, make_ttp, node_by_id, run


def test_fig1_search_path(fig1_overlay):
    node = node_by_id(fig1_overlay, 45)
    path = run(fig1_overlay, node.overlay.search_by_numerical_id(25))
    assert path.hops == [45, 30, 20]
    assert path.result.numerical_id == 20
    assert len(path.nonce) == 16


def test_search_for_own_id_terminates_locally(fig1_overlay):
    node = node_by_id(fig1_overlay, 30)
    path = run(fig1_overlay, node.overlay.search_by_numerical_id(30))
    assert path.hops == [30]
    assert path.result.numerical_id == 30


def test_search_below_every_id_wraps(fig1_overlay):
    node = node_by_id(fig1_overlay, 20)
    path = run(fig1_overlay, node.overlay.search_by_numerical_id(5))
    assert path.result.numerical_id == 60


def test_joined_tables_match_global_construction(honest_overlay):
    static = build_static_tables(honest_overlay.ttp.registered_entries(), 8)
    for node in honest_overlay.nodes:
        assert node.table.levels == static[node.numerical_id].levels


def test_ring_is_sorted(honest_overlay):
    ids = sorted(node.numerical_id for node in honest_overlay.nodes)
    for i, num in enumerate(ids):
        table = node_by_id(honest_overlay, num).table
        assert table.neighbor(0, Side.RIGHT).numerical_id == ids[(i + 1) % len(ids)]
        assert table.neighbor(0, Side.LEFT).numerical_id == ids[i - 1]


def test_tables_respect_prefix_rule(honest_overlay):
    for node in honest_overlay.nodes:
        for level, _, neighbor in node.table.present_entries():
            assert common_prefix_len(neighbor.name_id, node.name_id) >= level


def test_numerical_search_agrees_with_oracle(honest_overlay):
    ids = sorted(node.numerical_id for node in honest_overlay.nodes)
    rng = random.Random(8)
    queries = ids + [rng.randrange(1 << 64) for _ in range(8)]
    for node in honest_overlay.nodes[:6]:
        for q in queries:
            path = run(honest_overlay, node.overlay.search_by_numerical_id(q))
            assert path.result.numerical_id == oracle_result(ids, q)
            assert path.hops[0] == node.numerical_id
            assert path.hops[-1] == path.result.numerical_id


def test_name_search_finds_longest_prefix_owner(honest_overlay):
    entries = honest_overlay.ttp.registered_entries()
    rng = random.Random(9)
    targets = [node.name_id for node in honest_overlay.nodes[:4]]
    targets += [int_to_name(rng.randrange(256), 8) for _ in range(12)]
    for node in honest_overlay.nodes[:4]:
        for target in targets:
            found = run(honest_overlay, node.overlay.search_by_name_id(target))
            assert found == longest_prefix_owner(entries, target)


def test_name_search_rejects_wrong_length(honest_overlay):
    node = honest_overlay.nodes[0]
    with pytest.raises(ParamError):
        run(honest_overlay, node.overlay.search_by_name_id("0101"))


def test_table_proofs_verify(honest_overlay):
    params = honest_overlay.ttp.publish_params()
    for node in honest_overlay.nodes:
        assert node.table_proof is not None
        assert verify_table_proof(node.table, node.table_proof, params, honest_overlay.ttp.name_of)


def test_table_proof_misses_an_unreachable_neighbor(tmp_path):
    deployment = build_overlay(make_config(tmp_path, node_count=4, m=4), initialize=False)
    node = deployment.nodes[0]
    neighbor = node.table.neighbor(0, Side.RIGHT)
    deployment.network.unbind(neighbor.address)
    with pytest.raises(ProofError) as info:
        run(deployment, node.overlay.build_table_proof())
    assert (0, "R") in info.value.missing


def test_search_through_dead_node_is_dropped(tmp_path):
    deployment = build_overlay(make_config(tmp_path, node_count=4, m=4), initialize=False)
    node = deployment.nodes[0]
    ids = sorted(n.numerical_id for n in deployment.nodes)
    q = ids[(ids.index(node.numerical_id) + 2) % len(ids)]
    deployment.network.unbind(node.route(q).target.address)
    with pytest.raises(DroppedQuery):
        run(deployment, node.overlay.search_by_numerical_id(q))


def get_entry_requests(deployment):
    return sum(1 for record in deployment.network.metrics if record.kind == "GET_ENTRY")


def test_name_search_stops_at_the_nearest_match(tmp_path):
    # 60 is the only name starting with 1, one step left of 70 but six steps right of it
    ids = [10, 20, 30, 40, 50, 60, 70, 80]
    names = {10: "0000", 20: "0001", 30: "0010", 40: "0011", 50: "0100", 60: "1000", 70: "0101", 80: "0110"}
    config = make_config(tmp_path, node_count=len(ids), m=4)
    deployment = build_overlay(config, make_ttp(4, ids, names), initialize=False)
    node = node_by_id(deployment, 70)
    before = get_entry_requests(deployment)
    found = run(deployment, node.overlay.search_by_name_id("1000"))
    assert found.numerical_id == 60
    assert found == longest_prefix_owner(deployment.ttp.registered_entries(), "1000")
    assert get_entry_requests(deployment) - before <= 2


def test_name_search_cost_grows_with_levels_not_nodes(wide_overlay):
    entries = wide_overlay.ttp.registered_entries()
    rng = random.Random(13)
    searches = 40
    before = get_entry_requests(wide_overlay)
    for _ in range(searches):
        node = rng.choice(wide_overlay.nodes)
        target = int_to_name(rng.randrange(1 << 10), 10)
        assert run(wide_overlay, node.overlay.search_by_name_id(target)) == longest_prefix_owner(entries, target)
    mean = (get_entry_requests(wide_overlay) - before) / searches
    assert mean <= 4 * math.log2(len(wide_overlay.nodes))
