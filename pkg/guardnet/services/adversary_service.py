"""Deviant routing for fault-injection runs."""
import logging
import random
from typing import TYPE_CHECKING, List, Optional

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from guardnet.exceptions import CosignRefused, CosignTimeout
from guardnet.schemas.identity import Identity, KeyScheme, SigningKey
from guardnet.schemas.overlay import NeighborEntry, RoutingDecision
from guardnet.schemas.routing import InFlightQuery, QueryMode, RoutingProof, RoutingTranscript
from guardnet.schemas.simulation import AdversarySpec, Behavior, LogEvent
from guardnet.services.auth_service import (
    decode_routing_proof, encode_routing_proof, make_hop_transcript, self_sign,
)
from guardnet.simulator import ComputeMeter
from guardnet.utils.ids import MAX_NUMERICAL_ID, encode_numerical_id, hash_name_id
from guardnet.utils.security import issue_certificate, public_key_bytes

if TYPE_CHECKING:
    from guardnet.workers.node_worker import NodeWorker

logger = logging.getLogger(__name__)

_MANIPULABLE = ("R", "T", "Q", "N")


class AdversaryService:
    """
    Replaces a node's routing step on a fraction of the queries it relays.

    Behaviors are tried in configured order and the first whose fraction
    fires takes the query. The node still speaks the transport honestly and
    holds no key but its own numerical-ID key.
    """

    def __init__(self, node: "NodeWorker", spec: AdversarySpec, rng: random.Random):
        self.node = node
        self.spec = spec
        self.rng = rng
        self.fired = {behavior: 0 for behavior in Behavior}

    def pick(self) -> Optional[Behavior]:
        for behavior, fraction in self.spec.behaviors:
            if self.rng.random() < fraction:
                return behavior
        return None

    async def intercept(self, query: InFlightQuery, decision: RoutingDecision, meter: ComputeMeter) -> bool:
        """True when the query was taken over and the honest step must not run."""
        behavior = self.pick()
        if behavior is None:
            return False
        handled = await getattr(self, f"_{behavior.value}")(query, decision, meter)
        if handled:
            self.fired[behavior] += 1
            logger.info(f"Adversary {self.node.numerical_id:016x} applied {behavior.value} to {query.trace}")
        return handled

    # ── behaviors ────────────────────────────────────────
    async def _drop(self, query: InFlightQuery, decision: RoutingDecision, meter: ComputeMeter) -> bool:
        self.node.log(
            LogEvent.HOP,
            search_seq=query.seq,
            mode=query.mode.value,
            nonce_hex=query.N.hex(),
            q_hex=encode_numerical_id(query.Q),
            hop_count=len(query.hops),
            compute_us=meter.total_us,
            detail="adversary:drop",
        )
        return True

    def _wrong_decisions(self, decision: RoutingDecision) -> List[RoutingDecision]:
        node = self.node
        prescribed = None if decision.is_terminal else decision.target.numerical_id
        seen = {}
        for _, _, entry in node.table.present_entries():
            if entry.numerical_id not in (node.numerical_id, prescribed):
                seen[entry.numerical_id] = entry
        options = [RoutingDecision.forward(seen[num]) for num in sorted(seen)]
        if not decision.is_terminal:
            options.append(RoutingDecision.terminate())
        return options

    async def _misdirect(self, query: InFlightQuery, decision: RoutingDecision, meter: ComputeMeter) -> bool:
        node = self.node
        options = self._wrong_decisions(decision)
        if not options:
            return False
        wrong = options[self.rng.randrange(len(options))]
        if query.mode == QueryMode.AUTH:
            transcript = make_hop_transcript(
                node.numerical_id, query.hops[-1] if query.hops else None, wrong, query.I, query.Q, query.N,
            )
            try:
                proof = await node.auth.make_proof(transcript, meter, query.trace)
            except (CosignRefused, CosignTimeout) as exc:
                logger.debug(f"Guards of {node.numerical_id:016x} refused the misdirected hop: {exc}")
                proof = self._forge_name_signature(transcript)
            query.chain.append(encode_routing_proof(proof))
        node.overlay.emit(query, wrong, meter)
        return True

    def _forge_name_signature(self, transcript: RoutingTranscript) -> RoutingProof:
        node = self.node
        cert = node.name_certificate
        return RoutingProof(
            transcript=transcript,
            sig_numerical=self_sign(node.grant.signing_key, transcript),
            numerical_cert=node.grant.certificate,
            sig_name=self.rng.randbytes(max(1, len(cert.public_key) // 2)),
            name_cert=cert,
        )

    async def _manipulate(self, query: InFlightQuery, decision: RoutingDecision, meter: ComputeMeter) -> bool:
        node = self.node
        if query.mode == QueryMode.PLAIN:
            query.Q = self.rng.randint(0, MAX_NUMERICAL_ID)
            await node.overlay.advance(query, node.route(query.Q), meter)
            return True
        if not query.chain:
            return False
        index = self.rng.randrange(len(query.chain))
        proof = decode_routing_proof(query.chain[index])
        field = _MANIPULABLE[self.rng.randrange(len(_MANIPULABLE))]
        original = getattr(proof.transcript, field)
        if field == "N":
            altered = bytes([original[0] ^ 0x01]) + original[1:]
        else:
            altered = ((original or 0) ^ (1 << self.rng.randrange(64)))
        transcript = proof.transcript.model_copy(update={field: altered})
        query.chain[index] = encode_routing_proof(proof.model_copy(update={"transcript": transcript}))
        await node.overlay.advance(query, decision, meter)
        return True

    async def _falsify(self, query: InFlightQuery, decision: RoutingDecision, meter: ComputeMeter) -> bool:
        """Speak for a node id nobody registered, with a key the TTP never issued."""
        node = self.node
        fake = self._nonexistent_id()
        if query.mode == QueryMode.PLAIN:
            entry = NeighborEntry(numerical_id=fake, name_id=hash_name_id(fake, node.params.m), address=node.address)
            node.overlay.emit(query, RoutingDecision.terminate(), meter, result=entry)
            return True
        transcript = RoutingTranscript(
            R=fake,
            F=query.hops[-1] if query.hops else None,
            T=None if decision.is_terminal else decision.target.numerical_id,
            I=query.I,
            Q=query.Q,
            N=query.N,
        )
        identity = Identity.numerical(fake)
        key = SigningKey(identity=identity, scheme=KeyScheme.ED25519, secret=self.rng.randbytes(32))
        cert = issue_certificate(
            Ed25519PrivateKey.from_private_bytes(key.secret), identity, KeyScheme.ED25519, public_key_bytes(key),
        )
        proof = RoutingProof(
            transcript=transcript,
            sig_numerical=self_sign(key, transcript),
            numerical_cert=cert,
            sig_name=self.rng.randbytes(max(1, len(node.name_certificate.public_key) // 2)),
            name_cert=node.name_certificate,
        )
        query.chain.append(encode_routing_proof(proof))
        node.overlay.emit(query, decision, meter)
        return True

    def _nonexistent_id(self) -> int:
        known = {entry.numerical_id for _, _, entry in self.node.table.present_entries()}
        known.add(self.node.numerical_id)
        while True:
            candidate = self.rng.randint(0, MAX_NUMERICAL_ID)
            if candidate not in known:
                return candidate
