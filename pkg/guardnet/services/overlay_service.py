"""
Overlay layer of one node: join, searches, table proof and routed-query handling.

Numerical-ID searches are routed hop by hop with `local_next_hop`; the terminal
node answers the initiator directly. Name-ID searches and join are driven by
the node doing them, reading remote table entries one request at a time.
"""
import logging
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Tuple

from guardnet.config import settings
from guardnet.exceptions import (
    CosignRefused, CosignTimeout, DroppedQuery, EncodingError, GuardError, JoinError, ParamError,
    ProofError, TableError, TransportTimeout, Undeliverable,
)
from guardnet.schemas.network import Address, MessageKind
from guardnet.schemas.overlay import (
    LevelEntry, NeighborEntry, RoutingDecision, SearchPath, Side, TableProof, TableProofEntry,
)
from guardnet.schemas.routing import InFlightQuery, QueryMode
from guardnet.schemas.simulation import LogEvent
from guardnet.services.auth_service import decode_chain, encode_routing_proof, make_hop_transcript
from guardnet.simulator import ComputeMeter
from guardnet.transport import Envelope, pack_body, unpack_body
from guardnet.utils.ids import encode_numerical_id, random_nonce, validate_name_id
from guardnet.utils.security import sign
from guardnet.utils.skipgraph import common_prefix_len, local_next_hop, make_attestation_message

if TYPE_CHECKING:
    from guardnet.workers.node_worker import NodeWorker

logger = logging.getLogger(__name__)

_NETWORK_ERRORS = (TransportTimeout, Undeliverable)


class OverlayService:
    def __init__(self, node: "NodeWorker"):
        self.node = node

    # ── remote table access ──────────────────────────────
    async def _get_entry(self, owner: NeighborEntry, level: int, side: Side) -> Optional[NeighborEntry]:
        node = self.node
        if owner.numerical_id == node.numerical_id:
            return node.table.neighbor(level, side)
        reply = unpack_body(await node.endpoint.request(
            owner.address, MessageKind.GET_ENTRY, pack_body({"level": level, "side": side.value}),
        ))
        entry = reply.get("entry")
        return NeighborEntry.model_validate(entry) if entry is not None else None

    async def _set_entry(self, owner: NeighborEntry, level: int, side: Side, entry: NeighborEntry) -> None:
        node = self.node
        if owner.numerical_id == node.numerical_id:
            node.table.set_neighbor(level, side, entry)
            return
        await node.endpoint.request(
            owner.address,
            MessageKind.SET_ENTRY,
            pack_body({"level": level, "side": side.value, "entry": entry.model_dump()}),
        )

    def handle_get_entry(self, envelope: Envelope) -> bytes:
        body = unpack_body(envelope.body)
        entry = self.node.table.neighbor(int(body["level"]), Side(body["side"]))
        return pack_body({"entry": entry.model_dump() if entry is not None else None})

    def handle_set_entry(self, envelope: Envelope) -> bytes:
        body = unpack_body(envelope.body)
        entry = body.get("entry")
        self.node.table.set_neighbor(
            int(body["level"]),
            Side(body["side"]),
            NeighborEntry.model_validate(entry) if entry is not None else None,
        )
        return b""

    # ── join ─────────────────────────────────────────────
    async def join(self, introducer: Optional[Address]) -> None:
        """Insert this node into the level-0 ring, then link every level above it."""
        node = self.node
        me = node.entry
        if introducer is None or introducer == node.address:
            node.table.levels = [LevelEntry(left=me, right=me)]
            node.log(LogEvent.JOIN_DONE, detail="first node")
            return
        try:
            reply = unpack_body(await node.endpoint.request(
                introducer, MessageKind.SEARCH_REQUEST, pack_body({"q": node.numerical_id}),
                timeout_us=settings.SEARCH_TIMEOUT_US,
            ))
            predecessor = NeighborEntry.model_validate(reply["result"])
            successor = await self._get_entry(predecessor, 0, Side.RIGHT)
            if successor is None:
                raise JoinError(f"{predecessor.numerical_id:016x} has no level-0 successor")
            node.table.levels = [LevelEntry(left=predecessor, right=successor)]
            await self._set_entry(predecessor, 0, Side.RIGHT, me)
            await self._set_entry(successor, 0, Side.LEFT, me)

            for level in range(1, len(node.name_id) + 1):
                left = await self._scan(level, Side.LEFT)
                right = await self._scan(level, Side.RIGHT)
                if left is None and right is None:
                    break
                if left is not None:
                    node.table.set_neighbor(level, Side.LEFT, left)
                    await self._set_entry(left, level, Side.RIGHT, me)
                if right is not None:
                    node.table.set_neighbor(level, Side.RIGHT, right)
                    await self._set_entry(right, level, Side.LEFT, me)
        except (TransportTimeout, Undeliverable, DroppedQuery) as exc:
            raise JoinError(f"join of {node.numerical_id:016x} via {introducer} failed: {exc}") from exc
        node.log(LogEvent.JOIN_DONE, detail=f"levels={len(node.table.levels)}")
        logger.debug(f"{node.numerical_id:016x} joined with {len(node.table.levels)} levels")

    async def _scan(self, level: int, side: Side) -> Optional[NeighborEntry]:
        """Nearest node on `side` along level-1 that shares this node's `level`-bit prefix."""
        node = self.node
        prefix = node.name_id[:level]
        candidate = node.table.neighbor(level - 1, side)
        while candidate is not None and candidate.numerical_id != node.numerical_id:
            if side is Side.LEFT and candidate.numerical_id > node.numerical_id:
                return None
            if side is Side.RIGHT and candidate.numerical_id < node.numerical_id:
                return None
            if candidate.name_id[:level] == prefix:
                return candidate
            candidate = await self._get_entry(candidate, level - 1, side)
        return None

    # ── name-ID search ───────────────────────────────────
    async def search_by_name_id(self, target: str) -> NeighborEntry:
        """Longest common prefix with `target`; ties go to the smaller numerical id."""
        node = self.node
        validate_name_id(target)
        if len(target) != len(node.name_id):
            raise ParamError(f"target has {len(target)} bits, name ids have {len(node.name_id)}")
        current = node.entry
        try:
            while True:
                p = common_prefix_len(current.name_id, target)
                found, smallest = await self._walk_level(current, p, target)
                if found is None:
                    return smallest
                current = found
        except _NETWORK_ERRORS as exc:
            raise DroppedQuery(f"name search for {target} stalled: {exc}") from exc

    async def _walk_level(
        self, start: NeighborEntry, p: int, target: str,
    ) -> Tuple[Optional[NeighborEntry], NeighborEntry]:
        """
        Nearest member of start's level-p list that matches target at bit p.

        Both directions are read alternately, one entry per remote request, so
        the walk stops at the closest match. Without a match the whole list has
        been seen and its smallest node is the answer.
        """
        smallest = start
        can_extend = p < len(target)
        cursors = {Side.RIGHT: start, Side.LEFT: start}
        seen = {start.numerical_id}
        while cursors:
            for side in (Side.RIGHT, Side.LEFT):
                if side not in cursors:
                    continue
                step = await self._get_entry(cursors[side], p, side)
                # list end, or the level-0 ring closed on itself
                if step is None or step.numerical_id in seen:
                    del cursors[side]
                    continue
                if can_extend and step.name_id[p] == target[p]:
                    return step, smallest
                seen.add(step.numerical_id)
                if step.numerical_id < smallest.numerical_id:
                    smallest = step
                cursors[side] = step
        return None, smallest

    # ── table proof ──────────────────────────────────────
    async def build_table_proof(self) -> TableProof:
        node = self.node
        entries: List[TableProofEntry] = []
        missing: List[Tuple[int, str]] = []
        for level, side, neighbor in node.table.present_entries():
            if neighbor.numerical_id == node.numerical_id:
                signature = sign(node.grant.signing_key, make_attestation_message(node.numerical_id, level, side))
                entries.append(TableProofEntry(
                    level=level, side=side, signature=signature, certificate=node.grant.certificate,
                ))
                continue
            try:
                reply = unpack_body(await node.endpoint.request(
                    neighbor.address,
                    MessageKind.ATTEST,
                    pack_body({"owner": node.numerical_id, "level": level, "side": side.value}),
                ))
                entries.append(TableProofEntry.model_validate({"level": level, "side": side, **reply}))
            except (TransportTimeout, Undeliverable, GuardError) as exc:
                logger.warning(f"{neighbor.numerical_id:016x} did not attest level {level} {side.value}: {exc}")
                missing.append((level, side.value))
        if missing:
            raise ProofError(f"table proof of {node.numerical_id:016x} is missing {missing}", missing)
        node.table_proof = TableProof(entries=entries)
        return node.table_proof

    def handle_attest(self, envelope: Envelope) -> bytes:
        """Sign `atst||owner||level||side` if the owner really is our neighbor there."""
        node = self.node
        body = unpack_body(envelope.body)
        owner, level, side = int(body["owner"]), int(body["level"]), Side(body["side"])
        back = node.table.neighbor(level, side.opposite)
        if back is None or back.numerical_id != owner or back.address != envelope.src:
            raise TableError(f"{owner:016x} is not our level-{level} {side.opposite.value} neighbor")
        signature = sign(node.grant.signing_key, make_attestation_message(owner, level, side))
        return pack_body({"signature": signature, "certificate": node.grant.certificate.model_dump()})

    # ── numerical-ID search ──────────────────────────────
    async def handle_search_request(self, envelope: Envelope) -> bytes:
        body = unpack_body(envelope.body)
        path = await self.search_by_numerical_id(int(body["q"]))
        return pack_body({"result": path.result.model_dump(), "hops": path.hops})

    async def search_by_numerical_id(self, q: int, payload: bytes = b"", seq: int = 0) -> SearchPath:
        node = self.node
        query = InFlightQuery(
            mode=QueryMode.PLAIN,
            I=node.numerical_id,
            Q=q,
            N=random_nonce(node.nonce_rng),
            payload=payload,
            seq=seq,
            origin=node.address,
        )
        kind, body = await self.dispatch_search(query)
        if kind == MessageKind.QUERY_REJECT:
            raise DroppedQuery(f"search {query.trace} stopped at hop {body.get('hop_index')}: {body.get('reason')}")
        return SearchPath(
            hops=list(body["hops"]),
            result=NeighborEntry.model_validate(body["result"]),
            nonce=query.N,
            payload_bytes=len(payload),
            compute_us=int(body.get("compute_us", 0)),
        )

    async def dispatch_search(self, query: InFlightQuery) -> Tuple[MessageKind, Dict[str, Any]]:
        """Route `query` starting at this node and wait for the answer sent back to it."""
        node = self.node
        future = node.sim.create_future()
        node.pending[query.N] = future
        node.sim.spawn(self.handle_routed_query(query), name=f"route:{query.trace}")
        try:
            return await node.sim.wait_for(future, settings.SEARCH_TIMEOUT_US)
        except TransportTimeout as exc:
            raise DroppedQuery(f"search {query.trace} timed out") from exc
        finally:
            node.pending.pop(query.N, None)

    def resolve_reply(self, kind: MessageKind, body: Dict[str, Any]) -> None:
        future = self.node.pending.get(bytes(body.get("N", b"")))
        if future is None:
            logger.debug(f"{self.node.numerical_id:016x} got a late {kind.name}")
            return
        future.set_result((kind, body))

    def handle_reply(self, envelope: Envelope) -> None:
        self.resolve_reply(envelope.kind, unpack_body(envelope.body))

    async def handle_query(self, envelope: Envelope) -> None:
        await self.handle_routed_query(InFlightQuery.model_validate(unpack_body(envelope.body)))

    # ── routed query ─────────────────────────────────────
    async def handle_routed_query(self, query: InFlightQuery) -> None:
        """
        One routing step. AUTH queries have their incoming chain verified before
        anything else; a failing chain is reported to the initiator and not forwarded.
        """
        node = self.node
        meter = ComputeMeter(node.sim)
        hop_index = len(query.hops)
        await meter.charge(settings.COST_ROUTE_US)

        if query.mode == QueryMode.AUTH and query.chain:
            try:
                chain = decode_chain(query.chain)
            except EncodingError as exc:
                self.reject(query, "verify", f"Malformed: {exc}", hop_index, meter)
                return
            verdict = await node.auth.verify_chain(chain, query, meter, in_flight=True)
            if not verdict.accepted:
                self.reject(query, "verify", verdict.reason.value, hop_index, meter, index=verdict.index)
                return

        if hop_index >= settings.MAX_HOPS:
            self._log_hop(query, "hop limit reached", 0, meter)
            logger.warning(f"{query.trace} dropped at {node.numerical_id:016x} after {hop_index} hops")
            return

        decision = local_next_hop(node.table, node.numerical_id, query.Q)
        if node.adversary is not None and query.I != node.numerical_id:
            if await node.adversary.intercept(query, decision, meter):
                return
        await self.advance(query, decision, meter)

    async def advance(self, query: InFlightQuery, decision: RoutingDecision, meter: ComputeMeter) -> None:
        """Take `decision` honestly: sign the hop (AUTH) and forward or answer."""
        node = self.node
        if query.mode == QueryMode.AUTH:
            transcript = make_hop_transcript(
                node.numerical_id, query.hops[-1] if query.hops else None, decision, query.I, query.Q, query.N,
            )
            try:
                proof = await node.auth.make_proof(transcript, meter, query.trace)
            except (CosignRefused, CosignTimeout) as exc:
                self.reject(query, "cosign", type(exc).__name__, len(query.hops), meter)
                return
            query.chain.append(encode_routing_proof(proof))
        self.emit(query, decision, meter)

    def emit(self, query: InFlightQuery, decision: RoutingDecision, meter: ComputeMeter,
             result: Optional[NeighborEntry] = None) -> None:
        """Forward the query to decision's target, or answer the initiator on Terminate."""
        node = self.node
        query.hops.append(node.numerical_id)
        query.compute_us += meter.total_us
        if decision.is_terminal:
            size = self.reply_to_origin(query, MessageKind.QUERY_RESULT, {
                "N": query.N,
                "result": (result or node.entry).model_dump(),
                "hops": query.hops,
                "chain": query.chain,
                "compute_us": query.compute_us,
            })
            self._log_hop(query, "terminate", size, meter)
            return
        body = pack_body(query.model_dump())
        node.endpoint.send(
            decision.target.address, MessageKind.QUERY, body, trace=query.trace, payload_bytes=len(query.payload),
        )
        self._log_hop(query, f"forward:{decision.target.numerical_id:016x}", len(body) + settings.ENVELOPE_HEADER_BYTES, meter)

    def reject(self, query: InFlightQuery, stage: str, reason: str, hop_index: int,
               meter: ComputeMeter, index: Optional[int] = None) -> None:
        node = self.node
        node.log(
            LogEvent.REJECT,
            search_seq=query.seq,
            mode=query.mode.value,
            nonce_hex=query.N.hex(),
            q_hex=encode_numerical_id(query.Q),
            hop_count=hop_index,
            compute_us=meter.total_us,
            detail=f"{stage}:{reason}" + (f":proof={index}" if index is not None else ""),
        )
        logger.warning(f"{node.numerical_id:016x} stopped {query.trace} at hop {hop_index}: {stage} {reason}")
        self.reply_to_origin(query, MessageKind.QUERY_REJECT, {
            "N": query.N, "stage": stage, "reason": reason, "hop_index": hop_index, "index": index,
        })

    def reply_to_origin(self, query: InFlightQuery, kind: MessageKind, body: Dict[str, Any]) -> int:
        node = self.node
        if query.origin == node.address:
            self.resolve_reply(kind, body)
            return 0
        data = pack_body(body)
        node.endpoint.send(query.origin, kind, data, trace=query.trace)
        return len(data) + settings.ENVELOPE_HEADER_BYTES

    def _log_hop(self, query: InFlightQuery, detail: str, size: int, meter: ComputeMeter) -> None:
        self.node.log(
            LogEvent.HOP,
            search_seq=query.seq,
            mode=query.mode.value,
            nonce_hex=query.N.hex(),
            q_hex=encode_numerical_id(query.Q),
            hop_count=len(query.hops),
            msg_bytes=size,
            compute_us=meter.total_us,
            detail=detail,
        )
