"""
One overlay node: the actor that owns a lookup table, its guard shares, its
nonce ledger and its measurement log, and runs the paired-search workload.
"""
import inspect
import logging
import random
from typing import Any, Callable, Dict, List, Optional, Tuple

from guardnet.config import settings
from guardnet.exceptions import AuthError, AuthSearchFailed, DroppedQuery, GuardError, ParamError, QueryRejected
from guardnet.schemas.identity import Certificate, PhysicalIdentity, PublicParams, RegistrationGrant
from guardnet.schemas.network import Address, MessageKind
from guardnet.schemas.overlay import LookupTable, NeighborEntry, RoutingDecision, TableProof
from guardnet.schemas.routing import ChainExport, GuardAssignment, GuardProvision, QueryMode
from guardnet.schemas.simulation import AdversarySpec, LogEvent, LogRecord, SimConfig
from guardnet.services.adversary_service import AdversaryService
from guardnet.services.auth_service import AuthService, NonceLedger, export_chain
from guardnet.services.guard_service import GuardService
from guardnet.services.overlay_service import OverlayService
from guardnet.services.ttp_service import make_challenge_message
from guardnet.simulator import SimFuture, Simulator
from guardnet.transport import Envelope, Network, pack_body, unpack_body
from guardnet.utils.ids import encode_numerical_id, rng_stream
from guardnet.utils.security import sign
from guardnet.utils.skipgraph import local_next_hop

logger = logging.getLogger(__name__)

_SEARCH_KINDS = ("QUERY", "QUERY_RESULT")


class NodeWorker:
    def __init__(
        self,
        sim: Simulator,
        network: Network,
        address: Address,
        phys: PhysicalIdentity,
        ttp_address: Address,
        controller_address: Address,
        config: SimConfig,
        index: int = 0,
        adversary_spec: Optional[AdversarySpec] = None,
    ):
        self.sim = sim
        self.network = network
        self.address = address
        self.phys = phys
        self.ttp_address = ttp_address
        self.controller_address = controller_address
        self.config = config
        self.index = index
        self.endpoint = network.bind(address)
        self.endpoint.on_message(self.handle)

        self.rng: random.Random = rng_stream(config.seed, f"workload-{index}")
        self.nonce_rng: random.Random = rng_stream(config.seed, f"nonce-{index}")
        self.adversary_spec = adversary_spec
        self.adversary: Optional[AdversaryService] = None

        self.grant: Optional[RegistrationGrant] = None
        self.table: Optional[LookupTable] = None
        self.table_proof: Optional[TableProof] = None
        self.name_certificate: Optional[Certificate] = None
        self.assignment: Optional[GuardAssignment] = None
        self.provisions: Dict[Tuple[int, int], GuardProvision] = {}
        self.ledger = NonceLedger()
        self.pending: Dict[bytes, SimFuture] = {}
        self.records: List[LogRecord] = []
        self.chains: List[Dict[str, Any]] = []

        self.overlay = OverlayService(self)
        self.auth = AuthService(self)
        self.guard = GuardService(self)

        self._handlers: Dict[MessageKind, Callable[[Envelope], Any]] = {
            MessageKind.GET_ENTRY: self.overlay.handle_get_entry,
            MessageKind.SET_ENTRY: self.overlay.handle_set_entry,
            MessageKind.ATTEST: self.overlay.handle_attest,
            MessageKind.SEARCH_REQUEST: self.overlay.handle_search_request,
            MessageKind.QUERY: self.overlay.handle_query,
            MessageKind.QUERY_RESULT: self.overlay.handle_reply,
            MessageKind.QUERY_REJECT: self.overlay.handle_reply,
            MessageKind.PROVISION: self.guard.handle_provision,
            MessageKind.COSIGN: self.guard.handle_cosign,
            MessageKind.CHALLENGE: self.handle_challenge,
            MessageKind.INIT_START: self.handle_init_start,
            MessageKind.EXPERIMENT_REQUEST: self.handle_experiment,
            MessageKind.LOG_UPLOAD: self.handle_log_upload,
        }

    # ── identity ─────────────────────────────────────────
    @property
    def numerical_id(self) -> int:
        return self.grant.numerical_id

    @property
    def name_id(self) -> str:
        return self.grant.name_id

    @property
    def params(self) -> PublicParams:
        return self.grant.params

    @property
    def entry(self) -> NeighborEntry:
        return NeighborEntry(numerical_id=self.numerical_id, name_id=self.name_id, address=self.address)

    @property
    def label(self) -> str:
        return encode_numerical_id(self.numerical_id) if self.grant else str(self.address)

    def route(self, q: int) -> RoutingDecision:
        return local_next_hop(self.table, self.numerical_id, q)

    def log(self, event: LogEvent, **fields) -> LogRecord:
        record = LogRecord(ts_us=self.sim.now_us, node_id=self.label, event=event, **fields)
        self.records.append(record)
        return record

    # ── dispatch ─────────────────────────────────────────
    async def handle(self, envelope: Envelope) -> Optional[bytes]:
        handler = self._handlers.get(envelope.kind)
        if handler is None:
            raise ParamError(f"{self.address} does not handle {envelope.kind.name}")
        reply = handler(envelope)
        if inspect.isawaitable(reply):
            reply = await reply
        return reply

    def handle_challenge(self, envelope: Envelope) -> bytes:
        if envelope.src != self.ttp_address:
            raise AuthError(f"challenge from {envelope.src} is not from the TTP")
        challenges = unpack_body(envelope.body)["challenges"]
        key = self.grant.signing_key
        return pack_body({"signatures": [sign(key, make_challenge_message(c)) for c in challenges]})

    async def handle_init_start(self, envelope: Envelope) -> None:
        ok, error = await self.initialize()
        self.endpoint.send(self.controller_address, MessageKind.INIT_DONE, pack_body({"ok": ok, "error": error}))

    async def handle_experiment(self, envelope: Envelope) -> None:
        live_ids = list(unpack_body(envelope.body)["live_ids"])
        if self.adversary_spec is not None:
            self.inject_adversary(self.adversary_spec)
        await self.run_node_workload(live_ids)
        self.endpoint.send(
            self.controller_address, MessageKind.WORKLOAD_DONE, pack_body({"searches": 2 * self.config.message_count}),
        )

    def handle_log_upload(self, envelope: Envelope) -> bytes:
        if envelope.src != self.controller_address:
            raise AuthError(f"log upload requested by {envelope.src}")
        return pack_body({"records": [r.as_row() for r in self.records], "chains": self.chains})

    # ── phases ───────────────────────────────────────────
    async def start(self, introducer: Optional[Address]) -> None:
        """Register with the TTP, join through `introducer` and report to the controller."""
        reply = await self.endpoint.request(
            self.ttp_address,
            MessageKind.REGISTER,
            pack_body({"phys": self.phys, "address": self.address.model_dump()}),
            timeout_us=settings.CONTROL_TIMEOUT_US,
        )
        self.grant = RegistrationGrant.model_validate(unpack_body(reply))
        self.table = LookupTable(owner=self.entry)
        self.log(LogEvent.REGISTER, detail=self.name_id)
        logger.info(f"{self.address} registered as {self.label}")
        await self.overlay.join(introducer)
        await self.endpoint.request(
            self.controller_address,
            MessageKind.NODE_REGISTER,
            pack_body({"numerical_id": self.numerical_id}),
            timeout_us=settings.CONTROL_TIMEOUT_US,
        )

    async def initialize(self) -> Tuple[bool, str]:
        try:
            await self.guard.assign_guards()
        except GuardError as exc:
            logger.warning(f"{self.label} failed guard initialization: {exc}")
            return False, f"{type(exc).__name__}: {exc}"
        return True, ""

    def inject_adversary(self, spec: AdversarySpec) -> AdversaryService:
        self.adversary = AdversaryService(self, spec, rng_stream(self.config.seed, f"adversary-{self.index}"))
        logger.info(f"{self.label} turns adversarial: {[(b.value, f) for b, f in spec.behaviors]}")
        return self.adversary

    # ── workload ─────────────────────────────────────────
    async def run_node_workload(self, live_ids: List[int]) -> None:
        """`message_count` pairs of searches, PLAIN then AUTH on the same target."""
        config = self.config
        low_us, high_us = config.wait_bounds_us()
        for seq in range(config.message_count):
            q = live_ids[self.rng.randrange(len(live_ids))]
            payload = self.rng.randbytes(config.message_length)
            await self.timed_search(QueryMode.PLAIN, q, payload, seq)
            await self.timed_search(QueryMode.AUTH, q, payload, seq)
            await self.sim.sleep(self.rng.randint(low_us, high_us))
        logger.info(f"{self.label} finished {config.message_count} search pairs")

    async def timed_search(self, mode: QueryMode, q: int, payload: bytes, seq: int) -> Optional[NeighborEntry]:
        """Run one search and log it; failures are logged, never raised."""
        q_hex = encode_numerical_id(q)
        self.log(LogEvent.SEARCH_START, search_seq=seq, mode=mode.value, q_hex=q_hex)
        started = self.sim.now_us
        try:
            if mode == QueryMode.PLAIN:
                outcome = await self.overlay.search_by_numerical_id(q, payload, seq)
            else:
                outcome = await self.auth.authenticated_search(q, payload, seq)
        except (DroppedQuery, AuthSearchFailed, QueryRejected) as exc:
            hop = getattr(exc, "hop_index", None)
            detail = f"{type(exc).__name__}" + (f":hop={hop}" if hop is not None else "")
            self.log(LogEvent.REJECT, search_seq=seq, mode=mode.value, q_hex=q_hex,
                     latency_us=self.sim.now_us - started, detail=f"search:{detail}")
            self.log(LogEvent.SEARCH_DONE, search_seq=seq, mode=mode.value, q_hex=q_hex,
                     latency_us=self.sim.now_us - started, detail=f"reject:{detail}")
            return None

        trace = f"{self.numerical_id:016x}:{outcome.nonce.hex()}"
        self.log(
            LogEvent.SEARCH_DONE,
            search_seq=seq,
            mode=mode.value,
            nonce_hex=outcome.nonce.hex(),
            q_hex=q_hex,
            hop_count=len(outcome.hops),
            latency_us=self.sim.now_us - started,
            msg_bytes=self.network.pop_trace_bytes(trace, _SEARCH_KINDS),
            compute_us=outcome.compute_us,
            detail="accept",
        )
        if mode == QueryMode.AUTH and len(self.chains) < self.config.chain_dump_limit:
            self.chains.append(export_chain(ChainExport(
                I=self.numerical_id,
                Q=q,
                N=outcome.nonce,
                proofs=outcome.chain,
                extra={"node": self.label, "seq": str(seq)},
            )))
        return outcome.result
