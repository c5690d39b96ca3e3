"""Guards: per-hop cosigning of a subject's transcripts, and guard setup for the subject."""
import logging
from typing import TYPE_CHECKING, List, Union

from pydantic import ValidationError

from guardnet.config import settings
from guardnet.exceptions import (
    AuthError, CombineError, CosignRefused, CosignTimeout, GuardError, ShareError,
    TableError, TransportTimeout, Undeliverable, WrongSubject,
)
from guardnet.schemas.identity import Certificate, PartialSignature
from guardnet.schemas.network import MessageKind
from guardnet.schemas.overlay import NeighborEntry
from guardnet.schemas.routing import GuardAssignment, GuardProvision, Refusal, RoutingTranscript
from guardnet.schemas.simulation import LogEvent
from guardnet.services.auth_service import decode_transcript, encode_transcript
from guardnet.simulator import ComputeMeter
from guardnet.transport import Envelope, pack_body, unpack_body
from guardnet.utils.ids import encode_numerical_id
from guardnet.utils.security import combine_partials, partial_sign, verify
from guardnet.utils.skipgraph import local_next_hop

if TYPE_CHECKING:
    from guardnet.workers.node_worker import NodeWorker

logger = logging.getLogger(__name__)


def guard_evaluate(provision: GuardProvision, t: RoutingTranscript) -> Union[PartialSignature, Refusal]:
    """Partial-sign `t` iff its T is exactly the hop the subject's table prescribes for Q."""
    subject = provision.subject
    if t.R != subject:
        raise WrongSubject(f"transcript router {t.R:016x} is not subject {subject:016x}")
    try:
        expected = local_next_hop(provision.subject_table, subject, t.Q)
    except TableError as exc:
        return Refusal(subject=subject, reason=f"table: {exc}", claimed=t.T)
    if expected.is_terminal:
        if t.T is not None:
            return Refusal(subject=subject, reason="terminal hop expected", claimed=t.T)
    elif t.T != expected.target.numerical_id:
        return Refusal(
            subject=subject,
            reason="next hop does not match the table",
            expected=expected.target.numerical_id,
            claimed=t.T,
        )
    return partial_sign(provision.share, encode_transcript(t))


class GuardService:
    def __init__(self, node: "NodeWorker"):
        self.node = node

    # ── guard side ───────────────────────────────────────
    def handle_provision(self, envelope: Envelope) -> bytes:
        node = self.node
        if envelope.src != node.ttp_address:
            raise AuthError(f"provision from {envelope.src} is not from the TTP")
        provision = GuardProvision.model_validate(unpack_body(envelope.body))
        if provision.share.identity != provision.name_certificate.identity:
            raise AuthError("share and certificate name different identities")
        node.provisions[(provision.subject, provision.share.share_index)] = provision
        logger.debug(
            f"{node.numerical_id:016x} guards {provision.subject:016x} with share {provision.share.share_index}"
        )
        return b""

    async def handle_cosign(self, envelope: Envelope) -> bytes:
        node = self.node
        body = unpack_body(envelope.body)
        subject, share_index = body["subject"], body["share_index"]
        provision = node.provisions.get((subject, share_index))
        if provision is None:
            raise WrongSubject(f"{node.numerical_id:016x} holds no share {share_index} of {subject:016x}")
        if envelope.src != provision.subject_table.owner.address:
            raise WrongSubject(f"cosign for {subject:016x} requested from {envelope.src}")
        transcript = decode_transcript(body["transcript"])
        meter = ComputeMeter(node.sim)
        await meter.charge(settings.COST_ROUTE_US)
        outcome = guard_evaluate(provision, transcript)
        if isinstance(outcome, Refusal):
            node.log(
                LogEvent.COSIGN,
                nonce_hex=transcript.N.hex(),
                q_hex=encode_numerical_id(transcript.Q),
                compute_us=meter.total_us,
                detail=f"refused:{subject:016x}:{outcome.reason}",
            )
            raise CosignRefused(f"guard {node.numerical_id:016x} refused {subject:016x}: {outcome.reason}")
        await meter.charge(settings.COST_PARTIAL_SIGN_US)
        node.log(
            LogEvent.COSIGN,
            nonce_hex=transcript.N.hex(),
            q_hex=encode_numerical_id(transcript.Q),
            compute_us=meter.total_us,
            detail=f"signed:{subject:016x}:{share_index}",
        )
        return pack_body(outcome.model_dump())

    # ── subject side ─────────────────────────────────────
    async def request_guard_cosign(self, t: RoutingTranscript, meter: ComputeMeter, trace: str) -> bytes:
        """Collect all three partials over `t` and combine them into a name-ID signature."""
        node = self.node
        guards = node.assignment.entries() if node.assignment else []
        if len(guards) != 3 or any(entry is None for entry in guards):
            raise CosignRefused(f"{node.numerical_id:016x} has no provisioned guards")
        msg = encode_transcript(t)
        requests = [
            node.endpoint.request(
                entry.address,
                MessageKind.COSIGN,
                pack_body({"subject": node.numerical_id, "share_index": index, "transcript": msg}),
                trace=trace,
            )
            for index, entry in enumerate(guards)
        ]
        try:
            replies = await node.sim.gather(*requests)
        except (TransportTimeout, Undeliverable) as exc:
            raise CosignTimeout(f"guard of {node.numerical_id:016x} did not answer: {exc}") from exc
        except CosignRefused:
            raise
        except GuardError as exc:
            raise CosignRefused(f"guard rejected the request: {exc}") from exc

        await meter.charge(settings.COST_COMBINE_US)
        try:
            parts = [PartialSignature.model_validate(unpack_body(reply)) for reply in replies]
            signature = combine_partials(parts)
        except (ShareError, CombineError, ValidationError) as exc:
            raise CosignRefused(f"partials do not combine: {exc}") from exc
        await meter.charge(settings.COST_VERIFY_US)
        cert = node.name_certificate
        if not verify(cert.identity, cert, node.params, msg, signature):
            raise CosignRefused("combined name signature does not verify")
        return signature

    async def assign_guards(self) -> GuardAssignment:
        """
        Submit the table proof, locate the three guards by name and have the TTP
        provision them. The subject ends up knowing its guards and its name-ID
        certificate, never the name-ID key itself.
        """
        node = self.node
        proof = await node.overlay.build_table_proof()
        reply = unpack_body(await node.endpoint.request(
            node.ttp_address,
            MessageKind.TABLE_SUBMIT,
            pack_body({"subject": node.numerical_id, "table": node.table.model_dump(), "proof": proof.model_dump()}),
            timeout_us=settings.CONTROL_TIMEOUT_US,
        ))
        assignment = GuardAssignment.model_validate(reply)

        resolved: List[NeighborEntry] = []
        for name in assignment.names():
            resolved.append(await node.overlay.search_by_name_id(name))
        reply = unpack_body(await node.endpoint.request(
            node.ttp_address,
            MessageKind.GUARD_CONNECT,
            pack_body({"subject": node.numerical_id, "guards": [entry.model_dump() for entry in resolved]}),
            timeout_us=settings.CONTROL_TIMEOUT_US,
        ))
        node.name_certificate = Certificate.model_validate(reply["name_certificate"])
        node.assignment = assignment.model_copy(update={
            "main_entry": resolved[0], "side_left_entry": resolved[1], "side_right_entry": resolved[2],
        })
        node.log(
            LogEvent.GUARDS_DONE,
            detail=";".join(f"{entry.numerical_id:016x}" for entry in resolved),
        )
        logger.info(f"{node.numerical_id:016x} is guarded by {[f'{e.numerical_id:016x}' for e in resolved]}")
        return node.assignment
