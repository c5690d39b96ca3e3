"""The TTP as an actor on the simulated network."""
import logging
from collections import deque
from typing import Deque, Dict, List, Tuple

from guardnet.exceptions import BindingError, ParamError, ProofRejected
from guardnet.schemas.network import Address, MessageKind
from guardnet.schemas.overlay import LookupTable, NeighborEntry, TableProof
from guardnet.services.ttp_service import TrustedThirdParty
from guardnet.simulator import SimFuture, Simulator
from guardnet.transport import Envelope, Network, pack_body, unpack_body

logger = logging.getLogger(__name__)


class TtpWorker:
    """Serial actor: envelopes queue in a mailbox and are handled one after another."""

    def __init__(self, sim: Simulator, network: Network, address: Address, ttp: TrustedThirdParty):
        self.sim = sim
        self.address = address
        self.ttp = ttp
        self.endpoint = network.bind(address)
        self.endpoint.on_message(self.handle)
        self._mailbox: Deque[Tuple[Envelope, SimFuture]] = deque()
        self._draining = False

    async def handle(self, envelope: Envelope) -> bytes:
        reply = self.sim.create_future()
        self._mailbox.append((envelope, reply))
        if not self._draining:
            self._draining = True
            self.sim.spawn(self._drain(), name=f"{self.address}:mailbox")
        return await reply

    async def _drain(self) -> None:
        try:
            while self._mailbox:
                envelope, reply = self._mailbox.popleft()
                try:
                    reply.set_result(await self.dispatch(envelope))
                except Exception as exc:
                    reply.set_exception(exc)
        finally:
            self._draining = False

    async def dispatch(self, envelope: Envelope) -> bytes:
        if envelope.kind == MessageKind.REGISTER:
            return self.handle_register(envelope)
        if envelope.kind == MessageKind.TABLE_SUBMIT:
            return await self.handle_table_submit(envelope)
        if envelope.kind == MessageKind.GUARD_CONNECT:
            return await self.handle_guard_connect(envelope)
        raise ParamError(f"TTP does not handle {envelope.kind.name}")

    def handle_register(self, envelope: Envelope) -> bytes:
        body = unpack_body(envelope.body)
        address = Address.model_validate(body["address"])
        if address != envelope.src:
            raise BindingError(f"{envelope.src} asked to register {address}")
        grant = self.ttp.register(bytes(body["phys"]), address)
        return pack_body(grant.model_dump())

    async def authenticate(self, address: Address) -> None:
        """Challenge-response against the node registered at `address`; AuthError on failure."""
        session_id, challenges = self.ttp.begin_challenge(self.ttp.phys_of(address))
        reply = unpack_body(await self.endpoint.request(
            address, MessageKind.CHALLENGE, pack_body({"challenges": challenges}),
        ))
        self.ttp.complete_challenge(session_id, reply.get("signatures", []))

    async def handle_table_submit(self, envelope: Envelope) -> bytes:
        subject = self.ttp.id_of(envelope.src)
        body = unpack_body(envelope.body)
        if body.get("subject") != subject:
            raise ProofRejected(f"{envelope.src} submitted a table for {body.get('subject')}")
        await self.authenticate(envelope.src)
        assignment = self.ttp.accept_table(
            subject, LookupTable.model_validate(body["table"]), TableProof.model_validate(body["proof"]),
        )
        logger.info(f"Accepted table of {subject:016x}; guard names {assignment.names()}")
        return pack_body(assignment.model_dump())

    async def handle_guard_connect(self, envelope: Envelope) -> bytes:
        subject = self.ttp.id_of(envelope.src)
        guards: List[NeighborEntry] = [
            NeighborEntry.model_validate(raw) for raw in unpack_body(envelope.body)["guards"]
        ]
        assignment = self.ttp.check_guard_resolution(subject, guards)
        distinct: Dict[Address, None] = {entry.address: None for entry in assignment.entries()}
        for address in distinct:
            await self.authenticate(address)
        provisions, name_cert = self.ttp.deal_provisions(subject)
        for provision, guard in zip(provisions, assignment.entries()):
            await self.endpoint.request(guard.address, MessageKind.PROVISION, pack_body(provision.model_dump()))
        logger.info(f"Provisioned guards of {subject:016x}")
        return pack_body({"name_certificate": name_cert.model_dump()})
