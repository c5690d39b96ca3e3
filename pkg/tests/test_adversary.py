import random

import pytest

from guardnet.exceptions import AuthSearchFailed, DroppedQuery, QueryRejected
from guardnet.schemas.routing import QueryMode
from guardnet.schemas.simulation import Behavior, LogEvent
from guardnet.utils.skipgraph import oracle_result, route_path

from tests.conftest import run

ADVERSARY = 3


def paths(deployment):
    return {node.numerical_id: node.table for node in deployment.nodes}


def initiators_through(deployment, q, count=3):
    """Honest nodes whose search for q passes the adversary after the first hop."""
    bad = deployment.nodes[ADVERSARY].numerical_id
    tables = paths(deployment)
    found = []
    for i, node in enumerate(deployment.nodes):
        if i != ADVERSARY and bad in route_path(tables, node.numerical_id, q)[1:]:
            found.append(node)
    return found[:count]


@pytest.mark.parametrize("behavior", list(Behavior))
def test_deviation_never_yields_an_accepted_auth_search(adversarial_overlay, behavior):
    deployment = adversarial_overlay([(behavior, 1.0)])
    adversary = deployment.nodes[ADVERSARY]
    q = adversary.numerical_id
    victims = initiators_through(deployment, q)
    assert victims
    for node in victims:
        with pytest.raises((QueryRejected, AuthSearchFailed)):
            run(deployment, node.auth.authenticated_search(q))
    assert adversary.adversary.fired[behavior] >= len(victims)


@pytest.mark.parametrize("behavior", [Behavior.MISDIRECT, Behavior.MANIPULATE, Behavior.FALSIFY])
def test_rejection_is_reported_by_a_verifier(adversarial_overlay, behavior):
    deployment = adversarial_overlay([(behavior, 1.0)])
    q = deployment.nodes[ADVERSARY].numerical_id
    node = initiators_through(deployment, q, 1)[0]
    assert run(deployment, node.timed_search(QueryMode.AUTH, q, b"x", 0)) is None
    done = [r for r in node.records if r.event == LogEvent.SEARCH_DONE]
    assert done[-1].detail.startswith("reject:")
    rejects = [r for n in deployment.nodes for r in n.records if r.event == LogEvent.REJECT]
    assert rejects


def test_dropped_plain_search_times_out(adversarial_overlay):
    deployment = adversarial_overlay([(Behavior.DROP, 1.0)])
    q = deployment.nodes[ADVERSARY].numerical_id
    node = initiators_through(deployment, q, 1)[0]
    with pytest.raises(DroppedQuery):
        run(deployment, node.overlay.search_by_numerical_id(q))


def test_falsified_plain_search_returns_a_wrong_answer(adversarial_overlay):
    deployment = adversarial_overlay([(Behavior.FALSIFY, 1.0)])
    ids = sorted(node.numerical_id for node in deployment.nodes)
    q = deployment.nodes[ADVERSARY].numerical_id
    node = initiators_through(deployment, q, 1)[0]
    path = run(deployment, node.overlay.search_by_numerical_id(q))
    assert path.result.numerical_id != oracle_result(ids, q)
    assert path.result.numerical_id not in ids


def test_searches_avoiding_the_adversary_still_succeed(adversarial_overlay):
    deployment = adversarial_overlay([(Behavior.MISDIRECT, 1.0)])
    bad = deployment.nodes[ADVERSARY].numerical_id
    ids = sorted(node.numerical_id for node in deployment.nodes)
    tables = paths(deployment)
    checked = 0
    for node in deployment.nodes:
        for q in ids:
            if bad in route_path(tables, node.numerical_id, q)[1:]:
                continue
            outcome = run(deployment, node.auth.authenticated_search(q))
            assert outcome.result.numerical_id == oracle_result(ids, q)
            checked += 1
            break
    assert checked == len(deployment.nodes)


def test_adversary_routes_its_own_searches_honestly(adversarial_overlay):
    deployment = adversarial_overlay([(Behavior.DROP, 1.0)])
    adversary = deployment.nodes[ADVERSARY]
    ids = sorted(node.numerical_id for node in deployment.nodes)
    q = ids[(ids.index(adversary.numerical_id) + len(ids) // 2) % len(ids)]
    outcome = run(deployment, adversary.auth.authenticated_search(q))
    assert outcome.result.numerical_id == oracle_result(ids, q)


def searches_through(deployment, count, intermediate=False):
    """Distinct (initiator, q) pairs whose static route reaches the adversary after the first hop."""
    bad = deployment.nodes[ADVERSARY].numerical_id
    tables = paths(deployment)
    ids = sorted(tables)
    rng = random.Random(17)
    queries = ids + [rng.randrange(1 << 64) for _ in range(len(ids))]
    pairs = []
    for i, node in enumerate(deployment.nodes):
        if i == ADVERSARY:
            continue
        for q in queries:
            route = route_path(tables, node.numerical_id, q)
            if bad in (route[1:-1] if intermediate else route[1:]):
                pairs.append((node, q))
    rng.shuffle(pairs)
    return pairs[:count]


@pytest.mark.parametrize("behavior", list(Behavior))
def test_fifty_auth_searches_through_the_adversary_are_all_caught(adversarial_overlay, behavior):
    deployment = adversarial_overlay([(behavior, 1.0)], node_count=32, seed=6)
    pairs = searches_through(deployment, 50)
    assert len(pairs) == 50
    for node, q in pairs:
        with pytest.raises((QueryRejected, AuthSearchFailed)):
            run(deployment, node.auth.authenticated_search(q))
    assert deployment.nodes[ADVERSARY].adversary.fired[behavior] >= 50


def test_misdirected_plain_searches_go_silently_wrong(adversarial_overlay):
    deployment = adversarial_overlay([(Behavior.MISDIRECT, 1.0)], node_count=32, seed=6)
    ids = sorted(node.numerical_id for node in deployment.nodes)
    pairs = searches_through(deployment, 50, intermediate=True)
    assert len(pairs) >= 40
    wrong = 0
    for node, q in pairs:
        try:
            path = run(deployment, node.overlay.search_by_numerical_id(q))
        except DroppedQuery:
            continue
        if path.result.numerical_id != oracle_result(ids, q):
            wrong += 1
    assert wrong >= 1
