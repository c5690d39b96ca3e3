"""
Identity-keyed signatures rooted at the TTP.

Numerical-ID identities sign with Ed25519. Name-ID identities use RSA keys
whose private exponent is split additively into three shares, so three
partial signatures multiply into an ordinary PKCS#1 v1.5 signature that
anyone can check against the certificate's public key.
"""
import hashlib
import math
import random
import secrets
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import rsa
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from guardnet.config import settings
from guardnet.exceptions import CombineError, EncodingError, ParamError, ShareError
from guardnet.schemas.identity import (
    Certificate, Identity, IdentityKind, KeyScheme, KeyShare,
    PartialSignature, PublicParams, Signature, SigningKey,
)

RSA_EXPONENT = 65537
_SMALL_PRIMES = [p for p in range(3, 2000) if all(p % d for d in range(2, math.isqrt(p) + 1))]
_SMALL_PRIME_PRODUCT = math.prod(_SMALL_PRIMES)


def _expand(master: bytes, info: bytes, length: int = 32) -> bytes:
    if not isinstance(master, (bytes, bytearray)) or len(master) < 32:
        raise ParamError("master secret must be at least 32 bytes")
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=None, info=info).derive(bytes(master))


def _int_bytes(value: int) -> bytes:
    return value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")


def _bytes_int(data: bytes) -> int:
    return int.from_bytes(data, "big")


def _raw_public(key: Ed25519PrivateKey) -> bytes:
    return key.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


# ── TTP authority ────────────────────────────────────────

def derive_authority_key(master: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(_expand(master, b"guardnet/authority"))


def authority_public_key(master: bytes) -> bytes:
    return _raw_public(derive_authority_key(master))


def issue_certificate(
    authority: Ed25519PrivateKey,
    identity: Identity,
    scheme: KeyScheme,
    public_key: bytes,
    bound_to: Optional[int] = None,
) -> Certificate:
    unsigned = Certificate(identity=identity, scheme=scheme, public_key=public_key, bound_to=bound_to)
    return unsigned.model_copy(update={"signature": authority.sign(unsigned.signed_message())})


@lru_cache(maxsize=65536)
def verify_certificate(ttp_public_key: bytes, cert: Certificate) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(ttp_public_key).verify(cert.signature, cert.signed_message())
        return True
    except (InvalidSignature, ValueError):
        return False


# ── key derivation ───────────────────────────────────────

def _deterministic_prime(rng: random.Random, bits: int) -> int:
    while True:
        candidate = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        if math.gcd(candidate, _SMALL_PRIME_PRODUCT) != 1:
            continue
        if candidate % RSA_EXPONENT == 1:
            continue
        if rsa.prime.is_prime(candidate):
            return candidate


def _derive_rsa_key(master: bytes, identity: Identity, bits: int) -> SigningKey:
    if bits < 512 or bits % 2:
        raise ParamError(f"threshold key modulus must be an even bit length >= 512, got {bits}")
    rng = random.Random(_bytes_int(_expand(master, b"guardnet/rsa/" + identity.encode())))
    p = _deterministic_prime(rng, bits // 2)
    q = _deterministic_prime(rng, bits // 2)
    while q == p:
        q = _deterministic_prime(rng, bits // 2)
    d = rsa.common.inverse(RSA_EXPONENT, (p - 1) * (q - 1))
    return SigningKey(
        identity=identity,
        scheme=KeyScheme.RSA_3OF3,
        modulus=_int_bytes(p * q),
        public_exponent=RSA_EXPONENT,
        private_exponent=_int_bytes(d),
        prime_p=_int_bytes(p),
        prime_q=_int_bytes(q),
    )


def public_key_bytes(key: SigningKey) -> bytes:
    if key.scheme == KeyScheme.ED25519:
        return _raw_public(Ed25519PrivateKey.from_private_bytes(key.secret))
    return rsa.PublicKey(_bytes_int(key.modulus), key.public_exponent).save_pkcs1(format="DER")


def derive_identity_keypair(
    master: bytes,
    identity: Identity,
    bound_to: Optional[int] = None,
    rsa_bits: Optional[int] = None,
) -> Tuple[SigningKey, bytes, Certificate]:
    """
    Derive (signing key, public key, certificate) for an identity.

    Deterministic in (master, identity): numerical-ID identities get Ed25519
    keys, name-ID identities get threshold-capable RSA keys.
    """
    if not isinstance(identity, Identity):
        raise EncodingError(f"not an identity: {identity!r}")
    if identity.kind == IdentityKind.NUMERICAL:
        key = SigningKey(
            identity=identity,
            scheme=KeyScheme.ED25519,
            secret=_expand(master, b"guardnet/ed25519/" + identity.encode()),
        )
    else:
        key = _derive_rsa_key(master, identity, rsa_bits or settings.NAME_KEY_BITS)
    public = public_key_bytes(key)
    cert = issue_certificate(derive_authority_key(master), identity, key.scheme, public, bound_to)
    return key, public, cert


# ── sign / verify ────────────────────────────────────────

def _rsa_private(key: SigningKey) -> rsa.PrivateKey:
    n = _bytes_int(key.modulus)
    return rsa.PrivateKey(
        n, key.public_exponent, _bytes_int(key.private_exponent),
        _bytes_int(key.prime_p), _bytes_int(key.prime_q),
    )


def sign(key: SigningKey, msg: bytes) -> Signature:
    if key.scheme == KeyScheme.ED25519:
        return Ed25519PrivateKey.from_private_bytes(key.secret).sign(msg)
    return rsa.sign(msg, _rsa_private(key), "SHA-256")


@lru_cache(maxsize=4096)
def _load_rsa_public(public_key: bytes) -> rsa.PublicKey:
    return rsa.PublicKey.load_pkcs1(public_key, format="DER")


def verify_with_key(scheme: KeyScheme, public_key: bytes, msg: bytes, sig: Signature) -> bool:
    try:
        if scheme == KeyScheme.ED25519:
            Ed25519PublicKey.from_public_bytes(public_key).verify(sig, msg)
        else:
            rsa.verify(msg, sig, _load_rsa_public(public_key))
        return True
    except (InvalidSignature, rsa.VerificationError, ValueError, OverflowError, TypeError):
        return False


def verify(identity: Identity, cert: Certificate, params: PublicParams, msg: bytes, sig: Signature) -> bool:
    """True iff `sig` over `msg` verifies under `identity`'s TTP-issued certificate."""
    if cert.identity != identity:
        return False
    if not verify_certificate(params.ttp_public_key, cert):
        return False
    return verify_with_key(cert.scheme, cert.public_key, msg, sig)


# ── 3-of-3 threshold ─────────────────────────────────────

def _encoded_digest(msg: bytes, modulus: int) -> int:
    """EMSA-PKCS1-v1_5 block `00 01 FF..FF 00 || DigestInfo` as an integer."""
    digest_info = rsa.pkcs1.HASH_ASN1["SHA-256"] + hashlib.sha256(msg).digest()
    filler = rsa.common.byte_size(modulus) - len(digest_info) - 3
    if filler < 8:
        raise ParamError("modulus too small for a SHA-256 signature block")
    block = b"\x00\x01" + b"\xff" * filler + b"\x00" + digest_info
    return rsa.transform.bytes2int(block)


def split_3of3(key: SigningKey, rng: Optional[random.Random] = None) -> List[KeyShare]:
    """Split the private exponent into three additive shares modulo phi(n)."""
    if key.scheme != KeyScheme.RSA_3OF3:
        raise ParamError(f"{key.scheme.value} keys cannot be shared")
    phi = (_bytes_int(key.prime_p) - 1) * (_bytes_int(key.prime_q) - 1)
    draw = rng.randrange if rng is not None else secrets.randbelow
    first, second = draw(phi), draw(phi)
    third = (_bytes_int(key.private_exponent) - first - second) % phi
    return [
        KeyShare(
            identity=key.identity,
            share_index=index,
            modulus=key.modulus,
            public_exponent=key.public_exponent,
            exponent=_int_bytes(exponent),
        )
        for index, exponent in enumerate((first, second, third))
    ]


def partial_sign(share: KeyShare, msg: bytes) -> PartialSignature:
    n = _bytes_int(share.modulus)
    value = pow(_encoded_digest(msg, n), _bytes_int(share.exponent), n)
    return PartialSignature(
        identity=share.identity,
        share_index=share.share_index,
        digest=hashlib.sha256(msg).digest(),
        value=rsa.transform.int2bytes(value, rsa.common.byte_size(n)),
        modulus=share.modulus,
    )


def combine_partials(parts: Sequence[PartialSignature]) -> Signature:
    indices = sorted(part.share_index for part in parts)
    if len(set(indices)) != len(indices):
        raise ShareError(f"duplicate share index in {indices}")
    if indices != [0, 1, 2]:
        raise ShareError(f"need share indices [0, 1, 2], got {indices}")
    first = parts[0]
    for part in parts[1:]:
        if part.identity != first.identity or part.modulus != first.modulus:
            raise CombineError("partials belong to different keys")
        if part.digest != first.digest:
            raise CombineError("partials were computed over different messages")
    n = _bytes_int(first.modulus)
    combined = 1
    for part in parts:
        combined = combined * _bytes_int(part.value) % n
    return rsa.transform.int2bytes(combined, rsa.common.byte_size(n))
