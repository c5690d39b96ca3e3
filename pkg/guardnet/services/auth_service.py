"""
Routing transcripts, routing proofs and proof-chain verification.

A routing proof is one hop's transcript signed twice: by the router's
numerical-ID key and, through its three guards, by its name-ID key. The
initiator accepts a search only when the whole chain checks out.
"""
import logging
import struct
from collections import OrderedDict
from typing import TYPE_CHECKING, Any, Dict, Iterable, List, Optional, Sequence, Tuple

import msgpack
from pydantic import ValidationError

from guardnet.config import settings
from guardnet.exceptions import AuthSearchFailed, DroppedQuery, EncodingError, GuardError, QueryRejected
from guardnet.schemas.identity import Certificate, Identity, IdentityKind, KeyScheme, PublicParams, SigningKey
from guardnet.schemas.network import MessageKind
from guardnet.schemas.overlay import NeighborEntry, RoutingDecision
from guardnet.schemas.routing import (
    AuthSearchResult, ChainExport, InFlightQuery, QueryMode, RejectReason, RoutingProof,
    RoutingTranscript, Verdict,
)
from guardnet.schemas.simulation import LogEvent
from guardnet.simulator import ComputeMeter
from guardnet.utils.ids import decode_numerical_id, encode_numerical_id, random_nonce
from guardnet.utils.security import sign, verify

if TYPE_CHECKING:
    from guardnet.workers.node_worker import NodeWorker

logger = logging.getLogger(__name__)

_BLOB_LENGTH = struct.Struct(">H")


# ── transcripts ──────────────────────────────────────────

def encode_transcript(t: RoutingTranscript) -> bytes:
    """`<R>||<F|null>||<T|null>||<I>||<Q>||<N:hex32>` in ASCII."""
    fields = [
        encode_numerical_id(t.R),
        encode_numerical_id(t.F) if t.F is not None else "null",
        encode_numerical_id(t.T) if t.T is not None else "null",
        encode_numerical_id(t.I),
        encode_numerical_id(t.Q),
        t.N.hex().rjust(32, "0"),
    ]
    return "||".join(fields).encode("ascii")


def decode_transcript(data: bytes) -> RoutingTranscript:
    try:
        parts = data.decode("ascii").split("||")
    except UnicodeDecodeError as exc:
        raise EncodingError(f"transcript is not ASCII: {exc}") from exc
    if len(parts) != 6 or len(parts[5]) != 32:
        raise EncodingError(f"malformed transcript: {data!r}")

    def optional(text: str) -> Optional[int]:
        return None if text == "null" else decode_numerical_id(text)

    try:
        return RoutingTranscript(
            R=decode_numerical_id(parts[0]),
            F=optional(parts[1]),
            T=optional(parts[2]),
            I=decode_numerical_id(parts[3]),
            Q=decode_numerical_id(parts[4]),
            N=bytes.fromhex(parts[5]),
        )
    except ValueError as exc:
        raise EncodingError(f"malformed transcript: {exc}") from exc


def make_hop_transcript(
    self_id: int,
    from_id: Optional[int],
    decision: RoutingDecision,
    I: int,
    Q: int,
    N: bytes,
) -> RoutingTranscript:
    return RoutingTranscript(
        R=self_id,
        F=from_id,
        T=None if decision.is_terminal else decision.target.numerical_id,
        I=I,
        Q=Q,
        N=N,
    )


def self_sign(key: SigningKey, t: RoutingTranscript) -> bytes:
    return sign(key, encode_transcript(t))


# ── routing proof wire form ──────────────────────────────

def encode_certificate(cert: Certificate) -> bytes:
    return msgpack.packb(cert.model_dump(), use_bin_type=True)


def decode_certificate(data: bytes) -> Certificate:
    try:
        return Certificate.model_validate(msgpack.unpackb(data, raw=False))
    except (ValueError, TypeError) as exc:
        raise EncodingError(f"malformed certificate: {exc}") from exc


def encode_routing_proof(proof: RoutingProof) -> bytes:
    """Transcript grammar bytes followed by length-prefixed signature and certificate blobs."""
    blobs = [
        encode_transcript(proof.transcript),
        proof.sig_numerical,
        encode_certificate(proof.numerical_cert),
        proof.sig_name,
        encode_certificate(proof.name_cert),
    ]
    return b"".join(_BLOB_LENGTH.pack(len(blob)) + blob for blob in blobs)


def decode_routing_proof(data: bytes) -> RoutingProof:
    blobs: List[bytes] = []
    offset = 0
    try:
        while offset < len(data):
            (length,) = _BLOB_LENGTH.unpack_from(data, offset)
            offset += _BLOB_LENGTH.size
            if offset + length > len(data):
                raise EncodingError("routing proof blob runs past the end")
            blobs.append(data[offset:offset + length])
            offset += length
    except struct.error as exc:
        raise EncodingError(f"truncated routing proof: {exc}") from exc
    if len(blobs) != 5:
        raise EncodingError(f"routing proof has {len(blobs)} blobs, expected 5")
    return RoutingProof(
        transcript=decode_transcript(blobs[0]),
        sig_numerical=blobs[1],
        numerical_cert=decode_certificate(blobs[2]),
        sig_name=blobs[3],
        name_cert=decode_certificate(blobs[4]),
    )


def decode_chain(blobs: Iterable[bytes]) -> List[RoutingProof]:
    return [decode_routing_proof(blob) for blob in blobs]


# ── offline export ───────────────────────────────────────

def export_chain(export: ChainExport) -> Dict[str, Any]:
    """JSON-ready form of a chain, readable by `import_chain`."""
    return {
        "I": encode_numerical_id(export.I),
        "Q": encode_numerical_id(export.Q),
        "N": export.N.hex(),
        "proofs": [
            {
                "transcript": encode_transcript(proof.transcript).decode("ascii"),
                "sig_numerical": proof.sig_numerical.hex(),
                "numerical_cert": encode_certificate(proof.numerical_cert).hex(),
                "sig_name": proof.sig_name.hex(),
                "name_cert": encode_certificate(proof.name_cert).hex(),
            }
            for proof in export.proofs
        ],
        **({"extra": export.extra} if export.extra else {}),
    }


def import_chain(raw: Dict[str, Any]) -> ChainExport:
    try:
        proofs = [
            RoutingProof(
                transcript=decode_transcript(item["transcript"].encode("ascii")),
                sig_numerical=bytes.fromhex(item["sig_numerical"]),
                numerical_cert=decode_certificate(bytes.fromhex(item["numerical_cert"])),
                sig_name=bytes.fromhex(item["sig_name"]),
                name_cert=decode_certificate(bytes.fromhex(item["name_cert"])),
            )
            for item in raw["proofs"]
        ]
        return ChainExport(
            I=decode_numerical_id(raw["I"]),
            Q=decode_numerical_id(raw["Q"]),
            N=bytes.fromhex(raw["N"]),
            proofs=proofs,
            extra=raw.get("extra", {}),
        )
    except (KeyError, TypeError, ValueError, AttributeError, UnicodeEncodeError) as exc:
        raise EncodingError(f"malformed chain file: {exc}") from exc


# ── replay defense ───────────────────────────────────────

class NonceLedger:
    """Bounded set of seen (initiator, nonce) pairs; oldest evicted first."""

    def __init__(self, capacity: Optional[int] = None):
        self.capacity = capacity or settings.NONCE_LEDGER_CAPACITY
        self._seen: "OrderedDict[Tuple[int, bytes], None]" = OrderedDict()

    def __contains__(self, pair: Tuple[int, bytes]) -> bool:
        return pair in self._seen

    def __len__(self) -> int:
        return len(self._seen)

    def contains(self, initiator: int, nonce: bytes) -> bool:
        return (initiator, nonce) in self._seen

    def record(self, initiator: int, nonce: bytes) -> None:
        key = (initiator, bytes(nonce))
        if key in self._seen:
            return
        self._seen[key] = None
        while len(self._seen) > self.capacity:
            self._seen.popitem(last=False)


# ── chain verification ───────────────────────────────────

def _numerical_sig_ok(proof: RoutingProof, params: PublicParams, msg: bytes) -> bool:
    cert = proof.numerical_cert
    if cert.scheme != KeyScheme.ED25519:
        return False
    return verify(Identity.numerical(proof.transcript.R), cert, params, msg, proof.sig_numerical)


def _name_sig_ok(proof: RoutingProof, params: PublicParams, msg: bytes) -> bool:
    cert = proof.name_cert
    if cert.identity.kind != IdentityKind.NAME or cert.bound_to != proof.transcript.R:
        return False
    if len(cert.identity.value) != params.m:
        return False
    return verify(cert.identity, cert, params, msg, proof.sig_name)


def verify_proof_chain(
    chain: Sequence[RoutingProof],
    params: PublicParams,
    expected_I: int,
    expected_Q: int,
    expected_N: bytes,
    ledger: Optional[NonceLedger] = None,
    require_tail: bool = True,
    record: bool = True,
    next_hop: Optional[int] = None,
    expected_tail: Optional[int] = None,
) -> Verdict:
    """
    Check a proof chain proof by proof; the verdict names the earliest failing proof.

    In-flight chains are checked with `require_tail=False` and `next_hop` set
    to the receiving router. `expected_tail` is only known to a global-view
    oracle.
    """
    if not chain:
        return Verdict.reject(RejectReason.BAD_HEAD, 0)
    try:
        for i, proof in enumerate(chain):
            t = proof.transcript
            msg = encode_transcript(t)
            if not _numerical_sig_ok(proof, params, msg):
                return Verdict.reject(RejectReason.BAD_NUMERICAL_SIG, i)
            if not _name_sig_ok(proof, params, msg):
                return Verdict.reject(RejectReason.BAD_NAME_SIG, i)
            if i == 0:
                if t.F is not None or t.R != expected_I:
                    return Verdict.reject(RejectReason.BAD_HEAD, 0)
            else:
                prev = chain[i - 1].transcript
                if prev.T != t.R or t.F != prev.R:
                    return Verdict.reject(RejectReason.BROKEN_LINK, i)
            if (t.I, t.Q, t.N) != (expected_I, expected_Q, expected_N):
                return Verdict.reject(RejectReason.FIELD_MISMATCH, i)
    except (GuardError, ValueError, TypeError) as exc:
        logger.debug(f"Chain check failed on malformed input: {exc}")
        return Verdict.reject(RejectReason.BAD_NUMERICAL_SIG, i)

    last = len(chain) - 1
    tail = chain[last].transcript
    if require_tail:
        if tail.T is not None:
            return Verdict.reject(RejectReason.BAD_TAIL, last)
    elif next_hop is not None and tail.T != next_hop:
        return Verdict.reject(RejectReason.BROKEN_LINK, last)
    if expected_tail is not None and tail.R != expected_tail:
        return Verdict.reject(RejectReason.WRONG_TERMINATION, last)
    if ledger is not None:
        if ledger.contains(expected_I, expected_N):
            return Verdict.reject(RejectReason.REPLAYED_NONCE, 0)
        if record:
            ledger.record(expected_I, expected_N)
    return Verdict.accept()


# ── per-node Authentication layer ────────────────────────

class AuthService:
    def __init__(self, node: "NodeWorker"):
        self.node = node

    async def verify_chain(
        self,
        chain: Sequence[RoutingProof],
        query: InFlightQuery,
        meter: ComputeMeter,
        in_flight: bool,
    ) -> Verdict:
        await meter.charge(2 * settings.COST_VERIFY_US * len(chain))
        return verify_proof_chain(
            chain,
            self.node.params,
            query.I,
            query.Q,
            query.N,
            self.node.ledger,
            require_tail=not in_flight,
            next_hop=self.node.numerical_id if in_flight else None,
        )

    async def make_proof(self, transcript: RoutingTranscript, meter: ComputeMeter, trace: str) -> RoutingProof:
        """Self-sign the transcript and collect the guards' name-ID signature."""
        node = self.node
        await meter.charge(settings.COST_SIGN_US)
        sig_numerical = self_sign(node.grant.signing_key, transcript)
        sig_name = await node.guard.request_guard_cosign(transcript, meter, trace)
        return RoutingProof(
            transcript=transcript,
            sig_numerical=sig_numerical,
            numerical_cert=node.grant.certificate,
            sig_name=sig_name,
            name_cert=node.name_certificate,
        )

    async def authenticated_search(self, q: int, payload: bytes = b"", seq: int = 0) -> AuthSearchResult:
        node = self.node
        query = InFlightQuery(
            mode=QueryMode.AUTH,
            I=node.numerical_id,
            Q=q,
            N=random_nonce(node.nonce_rng),
            payload=payload,
            seq=seq,
            origin=node.address,
        )
        try:
            kind, body = await node.overlay.dispatch_search(query)
        except DroppedQuery as exc:
            raise AuthSearchFailed(f"search {query.trace} got no answer: {exc}") from exc

        if kind == MessageKind.QUERY_REJECT:
            hop_index = body.get("hop_index")
            if body.get("stage") == "cosign":
                raise AuthSearchFailed(f"hop {hop_index} could not be cosigned: {body.get('reason')}", hop_index)
            raise QueryRejected(f"hop {hop_index} rejected the chain: {body.get('reason')}", hop_index, body.get("reason"))

        meter = ComputeMeter(node.sim)
        try:
            chain = decode_chain(body["chain"])
            result = NeighborEntry.model_validate(body["result"])
        except (GuardError, ValidationError, KeyError) as exc:
            raise QueryRejected(f"unreadable result: {exc}", None, "Malformed") from exc
        verdict = await self.verify_chain(chain, query, meter, in_flight=False)
        if verdict.accepted and result.numerical_id != chain[-1].transcript.R:
            verdict = Verdict.reject(RejectReason.WRONG_TERMINATION, len(chain) - 1)
        node.log(
            LogEvent.VERIFY,
            search_seq=seq,
            mode=QueryMode.AUTH.value,
            nonce_hex=query.N.hex(),
            q_hex=encode_numerical_id(q),
            hop_count=len(chain),
            compute_us=meter.total_us,
            detail=str(verdict),
        )
        if not verdict.accepted:
            raise QueryRejected(f"chain rejected: {verdict}", verdict.index, verdict.reason.value)
        return AuthSearchResult(
            result=result,
            chain=chain,
            nonce=query.N,
            payload_bytes=len(payload),
            hops=[proof.transcript.R for proof in chain],
            compute_us=int(body.get("compute_us", 0)) + meter.total_us,
        )

