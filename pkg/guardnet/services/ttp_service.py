"""
Trusted third party: registration, challenge-response authentication,
table-proof verification and guard provisioning.
"""
import logging
import random
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from guardnet.config import settings
from guardnet.exceptions import AuthError, BindingError, GuardError, ParamError, ProofRejected, UnknownIdentity
from guardnet.schemas.identity import (
    Certificate, Identity, PhysicalIdentity, PublicParams, RegistrationGrant,
)
from guardnet.schemas.network import Address
from guardnet.schemas.overlay import LookupTable, NeighborEntry, TableProof
from guardnet.schemas.routing import GuardAssignment, GuardProvision
from guardnet.utils.ids import digest_bits, hash_name_id, random_nonce, validate_name_id
from guardnet.utils.permutation import KeyedPermutation
from guardnet.utils.security import (
    authority_public_key, derive_identity_keypair, split_3of3, verify,
)
from guardnet.utils.skipgraph import common_prefix_len, longest_prefix_owner, make_attestation_message

logger = logging.getLogger(__name__)

IdFn = Callable[[Address], int]
NameFn = Callable[[int], str]


def make_challenge_message(challenge: bytes) -> bytes:
    return b"chal||" + challenge.hex().encode("ascii")


def verify_table_proof(
    table: LookupTable,
    proof: TableProof,
    params: PublicParams,
    name_of: Optional[NameFn] = None,
) -> bool:
    """
    True iff every present entry carries its neighbor's attestation and the
    table itself is well formed (full ring at level 0, prefix rule above).
    """
    name_of = name_of or (lambda num: hash_name_id(num, params.m))
    try:
        if not table.levels or table.levels[0].left is None or table.levels[0].right is None:
            return False
        owner = table.owner
        if name_of(owner.numerical_id) != owner.name_id:
            return False
        signed = proof.as_map()
        if len(signed) != len(proof.entries):
            return False
        present = table.present_entries()
        if len(present) != len(signed):
            return False
        for level, side, entry in present:
            if name_of(entry.numerical_id) != entry.name_id:
                return False
            if level > 0 and common_prefix_len(entry.name_id, owner.name_id) < level:
                return False
            attestation = signed.get((level, side))
            if attestation is None:
                return False
            msg = make_attestation_message(owner.numerical_id, level, side)
            if not verify(Identity.numerical(entry.numerical_id), attestation.certificate, params,
                          msg, attestation.signature):
                return False
        return True
    except (GuardError, ValueError) as exc:
        logger.debug(f"Table proof of {table.owner.numerical_id:x} is malformed: {exc}")
        return False


def compute_guard_name_ids(
    subject_name: str,
    level0_left: str,
    level0_right: str,
    pk: KeyedPermutation,
) -> Tuple[str, str, str]:
    """(main, side_left, side_right) guard names of one subject."""
    for name in (subject_name, level0_left, level0_right):
        validate_name_id(name)
        if len(name) != pk.m:
            raise ParamError(f"name id {name} has {len(name)} bits, permutation domain is {pk.m}")
    return pk.apply(subject_name), pk.apply(level0_left), pk.apply(level0_right)


@dataclass
class _Registration:
    grant: RegistrationGrant
    address: Address


@dataclass
class _Session:
    phys: PhysicalIdentity
    challenges: List[bytes]


class TrustedThirdParty:
    """
    Holds the master secret and the permutation key. Neither is exposed: callers
    only ever see grants, certificates, guard names and provisions.
    """

    def __init__(
        self,
        master: bytes,
        perm_key: bytes,
        m: int,
        rng: random.Random,
        id_fn: Optional[IdFn] = None,
        name_fn: Optional[NameFn] = None,
        id_bits: int = settings.NUMERICAL_ID_BITS,
        name_key_bits: Optional[int] = None,
    ):
        self._master = bytes(master)
        self._permutation = KeyedPermutation(perm_key, m)
        self._rng = rng
        self._id_fn = id_fn
        self._name_fn = name_fn
        self.id_bits = id_bits
        self.name_key_bits = name_key_bits
        self._params = PublicParams(m=m, id_bits=id_bits, ttp_public_key=authority_public_key(self._master))
        self._by_phys: Dict[PhysicalIdentity, _Registration] = {}
        self._by_id: Dict[int, _Registration] = {}
        self._sessions: Dict[int, _Session] = {}
        self._session_seq = 0
        self._tables: Dict[int, Tuple[LookupTable, TableProof]] = {}

    # ── registration ─────────────────────────────────────
    def publish_params(self) -> PublicParams:
        return self._params

    def name_of(self, num: int) -> str:
        if self._name_fn is not None:
            return self._name_fn(num)
        return hash_name_id(num, self._params.m)

    def _issue_id(self, addr: Address) -> int:
        space = 1 << self.id_bits
        if self._id_fn is not None:
            candidate = self._id_fn(addr) % space
        else:
            candidate = digest_bits(str(addr).encode("utf-8"), self.id_bits)
        for _ in range(space):
            if candidate not in self._by_id:
                return candidate
            candidate = (candidate + 1) % space
        raise ParamError(f"numerical id space of {self.id_bits} bits is exhausted")

    def register(self, phys: PhysicalIdentity, addr: Address) -> RegistrationGrant:
        existing = self._by_phys.get(phys)
        if existing is not None:
            if existing.address != addr:
                raise BindingError(f"physical identity already bound to {existing.address}")
            return existing.grant
        num = self._issue_id(addr)
        key, _, cert = derive_identity_keypair(self._master, Identity.numerical(num))
        grant = RegistrationGrant(
            numerical_id=num,
            name_id=self.name_of(num),
            signing_key=key,
            certificate=cert,
            params=self._params,
        )
        record = _Registration(grant=grant, address=addr)
        self._by_phys[phys] = record
        self._by_id[num] = record
        logger.info(f"Registered {addr} as {num:016x}")
        return grant

    def lookup(self, num: int) -> Address:
        record = self._by_id.get(num)
        if record is None:
            raise UnknownIdentity(f"{num:016x} is not registered")
        return record.address

    def registered_entries(self) -> List[NeighborEntry]:
        return [
            NeighborEntry(numerical_id=num, name_id=record.grant.name_id, address=record.address)
            for num, record in sorted(self._by_id.items())
        ]

    # ── challenge-response ───────────────────────────────
    def begin_challenge(self, phys: PhysicalIdentity) -> Tuple[int, List[bytes]]:
        if phys not in self._by_phys:
            raise UnknownIdentity("physical identity is not registered")
        challenges = [random_nonce(self._rng, settings.CHALLENGE_BYTES) for _ in range(settings.CHALLENGE_COUNT)]
        self._session_seq += 1
        self._sessions[self._session_seq] = _Session(phys=phys, challenges=challenges)
        return self._session_seq, challenges

    def complete_challenge(self, session_id: int, signatures: Sequence[bytes]) -> bool:
        session = self._sessions.pop(session_id, None)
        if session is None:
            raise AuthError(f"no open challenge session {session_id}")
        grant = self._by_phys[session.phys].grant
        if len(signatures) != len(session.challenges):
            raise AuthError(f"expected {len(session.challenges)} signatures, got {len(signatures)}")
        identity = Identity.numerical(grant.numerical_id)
        for challenge, signature in zip(session.challenges, signatures):
            if not verify(identity, grant.certificate, self._params, make_challenge_message(challenge), signature):
                raise AuthError(f"challenge response of {grant.numerical_id:016x} does not verify")
        return True

    def authenticate(self, phys: PhysicalIdentity, respond: Callable[[List[bytes]], Sequence[bytes]]) -> bool:
        """One complete session; `respond` signs the challenges on the node's behalf."""
        session_id, challenges = self.begin_challenge(phys)
        return self.complete_challenge(session_id, respond(challenges))

    # ── guards ───────────────────────────────────────────
    def accept_table(self, subject: int, table: LookupTable, proof: TableProof) -> GuardAssignment:
        if subject not in self._by_id:
            raise UnknownIdentity(f"{subject:016x} is not registered")
        if table.owner.numerical_id != subject:
            raise ProofRejected(f"table of {table.owner.numerical_id:016x} submitted for {subject:016x}")
        for _, _, entry in table.present_entries():
            record = self._by_id.get(entry.numerical_id)
            if record is None or record.address != entry.address:
                raise ProofRejected(f"table entry {entry.numerical_id:016x} is not a registered node")
        if not verify_table_proof(table, proof, self._params, self.name_of):
            raise ProofRejected(f"table proof of {subject:016x} does not verify")
        self._tables[subject] = (table.model_copy(deep=True), proof.model_copy(deep=True))
        return self.assign_guards(subject)

    def assign_guards(self, subject: int) -> GuardAssignment:
        stored = self._tables.get(subject)
        if stored is None:
            raise ProofRejected(f"no verified table for {subject:016x}")
        table, _ = stored
        ring = table.levels[0]
        main, side_left, side_right = compute_guard_name_ids(
            table.owner.name_id, ring.left.name_id, ring.right.name_id, self._permutation,
        )
        return GuardAssignment(subject=subject, main=main, side_left=side_left, side_right=side_right)

    def resolve_guard(self, name: str) -> NeighborEntry:
        return longest_prefix_owner(self.registered_entries(), name)

    def check_guard_resolution(self, subject: int, guards: Sequence[NeighborEntry]) -> GuardAssignment:
        """Reject a subject that names guards other than the longest-prefix owners."""
        assignment = self.assign_guards(subject)
        if len(guards) != 3:
            raise ProofRejected(f"expected 3 guards, got {len(guards)}")
        resolved = [self.resolve_guard(name) for name in assignment.names()]
        for claimed, expected in zip(guards, resolved):
            if claimed != expected:
                raise ProofRejected(
                    f"guard {claimed.numerical_id:016x} named by {subject:016x}, owner is {expected.numerical_id:016x}"
                )
        return assignment.model_copy(update={
            "main_entry": resolved[0], "side_left_entry": resolved[1], "side_right_entry": resolved[2],
        })

    def deal_provisions(self, subject: int) -> Tuple[List[GuardProvision], Certificate]:
        """Derive the subject's name-ID key, split it, and package one provision per guard."""
        table, proof = self._tables[subject]
        name_identity = Identity.name(table.owner.name_id)
        key, _, name_cert = derive_identity_keypair(
            self._master, name_identity, bound_to=subject, rsa_bits=self.name_key_bits,
        )
        shares = split_3of3(key, self._rng)
        provisions = [
            GuardProvision(
                share=share,
                subject_table=table,
                subject_table_proof=proof,
                name_certificate=name_cert,
            )
            for share in shares
        ]
        return provisions, name_cert

    def phys_of(self, address: Address) -> PhysicalIdentity:
        for phys, record in self._by_phys.items():
            if record.address == address:
                return phys
        raise UnknownIdentity(f"{address} is not registered")

    def id_of(self, address: Address) -> int:
        return self._by_phys[self.phys_of(address)].grant.numerical_id
