import pytest

from guardnet.exceptions import CosignRefused, CosignTimeout, WrongSubject
from guardnet.schemas.identity import PartialSignature
from guardnet.schemas.network import LinkOverride, MessageKind
from guardnet.schemas.routing import Refusal, RoutingTranscript
from guardnet.services.auth_service import encode_transcript
from guardnet.services.guard_service import guard_evaluate
from guardnet.simulator import ComputeMeter
from guardnet.transport import pack_body
from guardnet.utils.security import combine_partials, verify

from tests.conftest import build_overlay, make_config, run

NONCE = bytes(range(16))


def transcript_for(node, q, T="prescribed"):
    decision = node.route(q)
    if T == "prescribed":
        T = None if decision.is_terminal else decision.target.numerical_id
    return RoutingTranscript(R=node.numerical_id, F=None, T=T, I=node.numerical_id, Q=q, N=NONCE)


def provisions_of(deployment, subject):
    found = {}
    for node in deployment.nodes:
        for (owner, index), provision in node.provisions.items():
            if owner == subject:
                found[index] = provision
    return found


def far_query(deployment, node):
    ids = sorted(n.numerical_id for n in deployment.nodes)
    return ids[(ids.index(node.numerical_id) + len(ids) // 2) % len(ids)]


def test_every_subject_has_three_shares(honest_overlay):
    for node in honest_overlay.nodes:
        provisions = provisions_of(honest_overlay, node.numerical_id)
        assert set(provisions) == {0, 1, 2}
        assert all(p.subject_table.owner == node.entry for p in provisions.values())


def test_guards_cosign_the_prescribed_hop(honest_overlay):
    node = honest_overlay.nodes[0]
    t = transcript_for(node, far_query(honest_overlay, node))
    provisions = provisions_of(honest_overlay, node.numerical_id)
    parts = [guard_evaluate(provisions[i], t) for i in range(3)]
    assert all(isinstance(p, PartialSignature) for p in parts)
    signature = combine_partials(parts)
    cert = node.name_certificate
    assert verify(cert.identity, cert, node.params, encode_transcript(t), signature)


def test_guards_refuse_a_wrong_next_hop(honest_overlay):
    node = honest_overlay.nodes[0]
    q = far_query(honest_overlay, node)
    prescribed = node.route(q).target.numerical_id
    wrong = next(n.numerical_id for n in honest_overlay.nodes if n.numerical_id not in (prescribed, node.numerical_id))
    provision = provisions_of(honest_overlay, node.numerical_id)[0]
    outcome = guard_evaluate(provision, transcript_for(node, q, T=wrong))
    assert isinstance(outcome, Refusal)
    assert outcome.expected == prescribed
    assert outcome.claimed == wrong


def test_guards_refuse_forwarding_past_the_terminal_hop(honest_overlay):
    node = honest_overlay.nodes[1]
    provision = provisions_of(honest_overlay, node.numerical_id)[1]
    other = honest_overlay.nodes[2].numerical_id
    outcome = guard_evaluate(provision, transcript_for(node, node.numerical_id, T=other))
    assert isinstance(outcome, Refusal)


def test_guard_rejects_transcript_of_another_router(honest_overlay):
    node, other = honest_overlay.nodes[0], honest_overlay.nodes[1]
    provision = provisions_of(honest_overlay, node.numerical_id)[2]
    with pytest.raises(WrongSubject):
        guard_evaluate(provision, transcript_for(other, far_query(honest_overlay, other)))


def test_cosign_round_trip_over_the_network(honest_overlay):
    node = honest_overlay.nodes[3]
    t = transcript_for(node, far_query(honest_overlay, node))
    meter = ComputeMeter(honest_overlay.sim)
    signature = run(honest_overlay, node.guard.request_guard_cosign(t, meter, "test"))
    cert = node.name_certificate
    assert verify(cert.identity, cert, node.params, encode_transcript(t), signature)
    assert meter.total_us > 0


def test_cosign_of_a_deviating_hop_is_refused(honest_overlay):
    node = honest_overlay.nodes[3]
    q = far_query(honest_overlay, node)
    t = transcript_for(node, q, T=None)
    with pytest.raises(CosignRefused):
        run(honest_overlay, node.guard.request_guard_cosign(t, ComputeMeter(honest_overlay.sim), "test"))


def test_guard_only_cosigns_for_its_subject(honest_overlay):
    subject, intruder = honest_overlay.nodes[4], honest_overlay.nodes[5]
    guard = subject.assignment.main_entry
    t = transcript_for(subject, far_query(honest_overlay, subject))
    body = pack_body({"subject": subject.numerical_id, "share_index": 0, "transcript": encode_transcript(t)})
    if guard.address == intruder.address:
        intruder = honest_overlay.nodes[6]
    with pytest.raises(WrongSubject):
        run(honest_overlay, intruder.endpoint.request(guard.address, MessageKind.COSIGN, body))


def offline_guard(deployment):
    for node in deployment.nodes:
        for guard in node.assignment.entries():
            if guard.address != node.address:
                return node, guard
    raise AssertionError("every guard is its own subject")


@pytest.mark.parametrize("outage", ["unbound", "lossy"])
def test_cosign_times_out_when_a_guard_is_offline(tmp_path, outage):
    deployment = build_overlay(make_config(tmp_path, node_count=6, seed=21))
    node, guard = offline_guard(deployment)
    network = deployment.network
    if outage == "unbound":
        network.unbind(guard.address)
    else:
        link = f"{node.address}->{guard.address}"
        network.latency = network.latency.model_copy(update={"overrides": {link: LinkOverride(loss_prob=1.0)}})
    transcript = transcript_for(node, far_query(deployment, node))
    with pytest.raises(CosignTimeout):
        run(deployment, node.guard.request_guard_cosign(transcript, ComputeMeter(deployment.sim), "t"))
