import hashlib
import random
from typing import Dict, List, Optional

from guardnet.config import settings
from guardnet.exceptions import EncodingError, ParamError

NumericalId = int
NameId = str
Nonce = bytes

MAX_NUMERICAL_ID = (1 << 64) - 1
HASH_ALGORITHM = "sha256"


def encode_numerical_id(num: NumericalId) -> str:
    """Canonical NumericalId encoding: 16 lowercase hex chars, zero-padded."""
    if not isinstance(num, int) or isinstance(num, bool) or not 0 <= num <= MAX_NUMERICAL_ID:
        raise EncodingError(f"numerical id out of range: {num!r}")
    return f"{num:016x}"


def decode_numerical_id(text: str) -> NumericalId:
    if len(text) != 16 or text != text.lower():
        raise EncodingError(f"malformed numerical id: {text!r}")
    try:
        return int(text, 16)
    except ValueError as exc:
        raise EncodingError(f"malformed numerical id: {text!r}") from exc


def validate_name_id(name: NameId, m: Optional[int] = None) -> NameId:
    if not name or any(ch not in "01" for ch in name) or len(name) > 256:
        raise EncodingError(f"malformed name id: {name!r}")
    if m is not None and len(name) != m:
        raise ParamError(f"name id has {len(name)} bits, expected {m}")
    return name


def digest_bits(data: bytes, bits: int) -> int:
    """First `bits` bits of the SHA-256 digest of `data`, as an integer."""
    digest = hashlib.sha256(data).digest()
    return int.from_bytes(digest, "big") >> (256 - bits)


def hash_name_id(num: NumericalId, m: int) -> NameId:
    """Name ID (membership vector) of a node: first m bits of H(numerical id)."""
    if not isinstance(m, int) or not 1 <= m <= 256:
        raise ParamError(f"name id length must be in [1, 256], got {m!r}")
    value = digest_bits(encode_numerical_id(num).encode("ascii"), m)
    return format(value, f"0{m}b")


def name_to_int(name: NameId) -> int:
    return int(name, 2)


def int_to_name(value: int, m: int) -> NameId:
    return format(value, f"0{m}b")


def random_nonce(rng: random.Random, size: Optional[int] = None) -> Nonce:
    return rng.randbytes(size or settings.NONCE_BYTES)


def derive_seed(seed: int, label: str) -> int:
    """Stable sub-seed for one logical actor's random stream."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def rng_stream(seed: int, label: str) -> random.Random:
    return random.Random(derive_seed(seed, label))


def full_space_ids(m: int, start: int = 0) -> List[NumericalId]:
    """
    NumericalIds whose truncated hashes enumerate the whole m-bit name space.

    Returns one id per name, ordered by the name they map to. Only practical
    for small m (test fixtures).
    """
    if not 1 <= m <= 16:
        raise ParamError(f"full name space search only supports m <= 16, got {m}")
    owners: Dict[NameId, NumericalId] = {}
    candidate = start
    while len(owners) < (1 << m):
        name = hash_name_id(candidate, m)
        owners.setdefault(name, candidate)
        candidate += 1
    return [owners[int_to_name(v, m)] for v in range(1 << m)]
