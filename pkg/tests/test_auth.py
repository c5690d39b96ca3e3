import random

import pytest

from guardnet.exceptions import EncodingError
from guardnet.schemas.routing import ChainExport, RejectReason, RoutingTranscript
from guardnet.services.auth_service import (
    NonceLedger, decode_routing_proof, decode_transcript, encode_routing_proof, encode_transcript,
    export_chain, import_chain, verify_proof_chain,
)
from guardnet.utils.skipgraph import oracle_result, route_path

from tests.conftest import build_sized_overlay, node_by_id, run


@pytest.fixture
def fig1_chain(fig1_overlay):
    node = node_by_id(fig1_overlay, 45)
    outcome = run(fig1_overlay, node.auth.authenticated_search(25, b"payload"))
    return fig1_overlay, node, outcome


def check(chain, params, node, outcome, **kwargs):
    return verify_proof_chain(chain, params, node.numerical_id, 25, outcome.nonce, **kwargs)


def flip(data: bytes) -> bytes:
    return bytes([data[0] ^ 1]) + data[1:]


def test_transcript_grammar():
    t = RoutingTranscript(R=45, F=None, T=30, I=45, Q=25, N=bytes(16))
    text = encode_transcript(t)
    assert text == b"000000000000002d||null||000000000000001e||000000000000002d||0000000000000019||" + b"0" * 32
    assert decode_transcript(text) == t
    with pytest.raises(EncodingError):
        decode_transcript(b"000000000000002d||null")


def test_fig1_chain(fig1_chain):
    deployment, node, outcome = fig1_chain
    assert outcome.result.numerical_id == 20
    assert [p.transcript.R for p in outcome.chain] == [45, 30, 20]
    assert [p.transcript.F for p in outcome.chain] == [None, 45, 30]
    assert [p.transcript.T for p in outcome.chain] == [30, 20, None]
    assert outcome.hops == [45, 30, 20]


def test_search_for_self_gives_single_proof(fig1_overlay):
    node = node_by_id(fig1_overlay, 30)
    outcome = run(fig1_overlay, node.auth.authenticated_search(30))
    assert len(outcome.chain) == 1
    t = outcome.chain[0].transcript
    assert (t.R, t.F, t.T) == (30, None, None)


def test_honest_searches_are_accepted_and_match_plain_paths(honest_overlay):
    ids = sorted(node.numerical_id for node in honest_overlay.nodes)
    rng = random.Random(21)
    for node in honest_overlay.nodes[:4]:
        for q in rng.sample(ids, 4) + [rng.randrange(1 << 64)]:
            auth = run(honest_overlay, node.auth.authenticated_search(q))
            plain = run(honest_overlay, node.overlay.search_by_numerical_id(q))
            assert auth.result.numerical_id == oracle_result(ids, q)
            assert auth.hops == plain.hops
            assert auth.compute_us > plain.compute_us


def test_fresh_ledger_accepts_then_flags_replay(fig1_chain):
    deployment, node, outcome = fig1_chain
    params = node.params
    ledger = NonceLedger()
    assert check(outcome.chain, params, node, outcome, ledger=ledger).accepted
    verdict = check(outcome.chain, params, node, outcome, ledger=ledger)
    assert verdict.reason == RejectReason.REPLAYED_NONCE


def test_initiator_ledger_already_holds_the_nonce(fig1_chain):
    deployment, node, outcome = fig1_chain
    assert node.ledger.contains(node.numerical_id, outcome.nonce)


def test_mutations_are_rejected_at_the_right_proof(fig1_chain):
    deployment, node, outcome = fig1_chain
    params = node.params
    chain = outcome.chain
    first, middle, last = chain

    def verdict(mutated, **kwargs):
        return check(mutated, params, node, outcome, **kwargs)

    v = verdict([first, middle.model_copy(update={"sig_numerical": flip(middle.sig_numerical)}), last])
    assert (v.reason, v.index) == (RejectReason.BAD_NUMERICAL_SIG, 1)

    v = verdict([first, middle, last.model_copy(update={"sig_name": flip(last.sig_name)})])
    assert (v.reason, v.index) == (RejectReason.BAD_NAME_SIG, 2)

    v = verdict([first, middle.model_copy(update={"name_cert": first.name_cert}), last])
    assert (v.reason, v.index) == (RejectReason.BAD_NAME_SIG, 1)

    v = verdict([first, last])
    assert (v.reason, v.index) == (RejectReason.BROKEN_LINK, 1)

    v = verdict([first, last, middle])
    assert (v.reason, v.index) == (RejectReason.BROKEN_LINK, 1)

    v = verdict([middle, last])
    assert (v.reason, v.index) == (RejectReason.BAD_HEAD, 0)

    v = verdict([first, middle])
    assert (v.reason, v.index) == (RejectReason.BAD_TAIL, 1)

    v = verdict([])
    assert v.reason == RejectReason.BAD_HEAD

    v = verify_proof_chain(chain, params, node.numerical_id, 26, outcome.nonce)
    assert (v.reason, v.index) == (RejectReason.FIELD_MISMATCH, 0)

    v = verify_proof_chain(chain, params, node.numerical_id, 25, bytes(16))
    assert (v.reason, v.index) == (RejectReason.FIELD_MISMATCH, 0)

    v = verdict(chain, expected_tail=30)
    assert (v.reason, v.index) == (RejectReason.WRONG_TERMINATION, 2)

    assert verdict(chain).accepted


def test_altered_transcript_breaks_both_signatures(fig1_chain):
    deployment, node, outcome = fig1_chain
    first, middle, last = outcome.chain
    forged = middle.model_copy(update={"transcript": middle.transcript.model_copy(update={"Q": 26})})
    v = check([first, forged, last], node.params, node, outcome)
    assert (v.reason, v.index) == (RejectReason.BAD_NUMERICAL_SIG, 1)


def test_in_flight_check_requires_link_to_receiver(fig1_chain):
    deployment, node, outcome = fig1_chain
    partial = outcome.chain[:1]
    assert check(partial, node.params, node, outcome, require_tail=False, next_hop=30).accepted
    v = check(partial, node.params, node, outcome, require_tail=False, next_hop=20)
    assert v.reason == RejectReason.BROKEN_LINK


def test_routing_proof_wire_form(fig1_chain):
    deployment, node, outcome = fig1_chain
    proof = outcome.chain[1]
    assert decode_routing_proof(encode_routing_proof(proof)) == proof
    with pytest.raises(EncodingError):
        decode_routing_proof(encode_routing_proof(proof)[:-3])


def test_exported_chain_verifies_offline(fig1_chain):
    deployment, node, outcome = fig1_chain
    export = ChainExport(I=node.numerical_id, Q=25, N=outcome.nonce, proofs=outcome.chain)
    restored = import_chain(export_chain(export))
    assert restored == export
    verdict = verify_proof_chain(restored.proofs, node.params, restored.I, restored.Q, restored.N, NonceLedger())
    assert verdict.accepted
    with pytest.raises(EncodingError):
        import_chain({"I": "zz", "proofs": []})


def test_ledger_evicts_oldest():
    ledger = NonceLedger(capacity=2)
    for i in range(3):
        ledger.record(1, bytes([i]) * 16)
    assert len(ledger) == 2
    assert not ledger.contains(1, bytes(16))
    assert ledger.contains(1, bytes([2]) * 16)


# ── chain soundness at scale ─────────────────────────────

TRANSCRIPT_INTS = ("R", "F", "T", "I", "Q")


def flip_bit(data: bytes, bit: int) -> bytes:
    out = bytearray(data)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


def with_transcript(proof, **update):
    return proof.model_copy(update={"transcript": proof.transcript.model_copy(update=update)})


def single_bit_flips(chain):
    """(index, mutated chain) for every bit of every transcript field and signature."""
    for i, proof in enumerate(chain):
        mutants = []
        for name in TRANSCRIPT_INTS:
            value = getattr(proof.transcript, name)
            if value is not None:
                mutants += [with_transcript(proof, **{name: value ^ (1 << bit)}) for bit in range(64)]
        nonce = proof.transcript.N
        mutants += [with_transcript(proof, N=flip_bit(nonce, bit)) for bit in range(len(nonce) * 8)]
        for name in ("sig_numerical", "sig_name"):
            sig = getattr(proof, name)
            mutants += [proof.model_copy(update={name: flip_bit(sig, bit)}) for bit in range(len(sig) * 8)]
        for mutant in mutants:
            yield i, chain[:i] + [mutant] + chain[i + 1:]


def deletions(chain):
    for i in range(len(chain)):
        yield i, chain[:i] + chain[i + 1:]


def duplications(chain):
    for i in range(len(chain)):
        yield i, chain[:i + 1] + chain[i:]


def adjacent_swaps(chain):
    for i in range(len(chain) - 1):
        yield i, chain[:i] + [chain[i + 1], chain[i]] + chain[i + 2:]


@pytest.fixture(scope="module")
def honest_chains(honest_overlay):
    """Fifty accepted chains, as (initiator, q, outcome), from varied initiators and targets."""
    ids = sorted(node.numerical_id for node in honest_overlay.nodes)
    rng = random.Random(31)
    captured = []
    while len(captured) < 50:
        node = rng.choice(honest_overlay.nodes)
        q = rng.choice(ids) if rng.random() < 0.5 else rng.randrange(1 << 64)
        captured.append((node, q, run(honest_overlay, node.auth.authenticated_search(q))))
    return captured


@pytest.mark.parametrize("mutate", [single_bit_flips, deletions, duplications, adjacent_swaps])
def test_every_mutant_of_an_honest_chain_is_rejected(honest_chains, mutate):
    checked = 0
    for node, q, outcome in honest_chains:
        chain = list(outcome.chain)
        assert verify_proof_chain(chain, node.params, node.numerical_id, q, outcome.nonce).accepted
        for i, mutant in mutate(chain):
            verdict = verify_proof_chain(mutant, node.params, node.numerical_id, q, outcome.nonce)
            assert not verdict.accepted, f"{mutate.__name__} at proof {i} was accepted"
            if mutate is single_bit_flips:
                assert verdict.index == i
            checked += 1
    if mutate is not adjacent_swaps:
        assert checked >= 50


def test_honest_chains_span_several_hops(honest_chains):
    lengths = [len(outcome.chain) for _, _, outcome in honest_chains]
    assert max(lengths) >= 3
    assert sum(length >= 2 for length in lengths) >= 25


def test_replayed_chains_are_refused_by_their_initiator(honest_chains):
    for node, q, outcome in honest_chains[:20]:
        verdict = verify_proof_chain(outcome.chain, node.params, node.numerical_id, q, outcome.nonce, node.ledger)
        assert (verdict.reason, verdict.index) == (RejectReason.REPLAYED_NONCE, 0)


# ── oracle agreement on live overlays ────────────────────

@pytest.fixture(scope="module", params=[8, 32, 128])
def sized_overlay(request):
    return build_sized_overlay(request.param, seed=request.param)


def test_plain_and_auth_follow_the_oracle_route(sized_overlay):
    nodes = sized_overlay.nodes
    ids = sorted(node.numerical_id for node in nodes)
    tables = {node.numerical_id: node.table for node in nodes}
    rng = random.Random(len(ids))
    for _ in range(500):
        node = rng.choice(nodes)
        q = rng.choice(ids) if rng.random() < 0.25 else rng.randrange(1 << 64)
        plain = run(sized_overlay, node.overlay.search_by_numerical_id(q))
        auth = run(sized_overlay, node.auth.authenticated_search(q))
        assert plain.result.numerical_id == auth.result.numerical_id == oracle_result(ids, q)
        assert plain.hops == auth.hops == route_path(tables, node.numerical_id, q)
