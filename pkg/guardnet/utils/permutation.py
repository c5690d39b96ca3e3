"""Keyed permutation over the m-bit name-ID space (balanced Feistel + cycle walking)."""
import hashlib
import hmac
from typing import Optional

from guardnet.config import settings
from guardnet.exceptions import ParamError
from guardnet.utils.ids import NameId, int_to_name, name_to_int, validate_name_id


class KeyedPermutation:
    """
    Bijection on m-bit strings keyed by a secret.

    The Feistel network works on 2*ceil(m/2) bits; outputs outside the m-bit
    domain are re-encrypted until they land inside it (cycle walking), which
    keeps the map a bijection for every m.
    """

    def __init__(self, key: bytes, m: int, rounds: Optional[int] = None):
        if not 1 <= m <= 256:
            raise ParamError(f"permutation domain must be 1..256 bits, got {m}")
        if len(key) < 16:
            raise ParamError("permutation key must be at least 16 bytes")
        self._key = bytes(key)
        self.m = m
        self.rounds = rounds or settings.FEISTEL_ROUNDS
        if self.rounds < 8:
            raise ParamError(f"need at least 8 Feistel rounds, got {self.rounds}")
        self._half = (m + 1) // 2
        self._mask = (1 << self._half) - 1
        self._round_keys = [
            hmac.new(self._key, b"round" + bytes([r]), hashlib.sha256).digest()
            for r in range(self.rounds)
        ]

    def _f(self, r: int, value: int) -> int:
        digest = hmac.new(self._round_keys[r], value.to_bytes(32, "big"), hashlib.sha256).digest()
        return int.from_bytes(digest, "big") & self._mask

    def _encrypt_block(self, value: int) -> int:
        left, right = value >> self._half, value & self._mask
        for r in range(self.rounds):
            left, right = right, left ^ self._f(r, right)
        return (left << self._half) | right

    def _decrypt_block(self, value: int) -> int:
        left, right = value >> self._half, value & self._mask
        for r in reversed(range(self.rounds)):
            left, right = right ^ self._f(r, left), left
        return (left << self._half) | right

    def _check(self, name: NameId) -> int:
        validate_name_id(name)
        if len(name) != self.m:
            raise ParamError(f"name id has {len(name)} bits, permutation domain is {self.m}")
        return name_to_int(name)

    def apply(self, name: NameId) -> NameId:
        value = self._encrypt_block(self._check(name))
        while value >> self.m:
            value = self._encrypt_block(value)
        return int_to_name(value, self.m)

    def invert(self, name: NameId) -> NameId:
        value = self._decrypt_block(self._check(name))
        while value >> self.m:
            value = self._decrypt_block(value)
        return int_to_name(value, self.m)


def keyed_permutation(pk: bytes, name: NameId, m: Optional[int] = None) -> NameId:
    return KeyedPermutation(pk, m if m is not None else len(name)).apply(name)


def inverse_permutation(pk: bytes, name: NameId, m: Optional[int] = None) -> NameId:
    return KeyedPermutation(pk, m if m is not None else len(name)).invert(name)
