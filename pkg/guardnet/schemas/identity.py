from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Literal, Optional
import enum
import json

from guardnet.exceptions import EncodingError
from guardnet.utils.ids import decode_numerical_id, encode_numerical_id, validate_name_id

Signature = bytes
PhysicalIdentity = bytes

class IdentityKind(str, enum.Enum):
    NUMERICAL = "num"
    NAME = "name"

class KeyScheme(str, enum.Enum):
    ED25519 = "ed25519"
    RSA_3OF3 = "rsa-3of3"

class Identity(BaseModel):
    """An identifier used as a public key: kind plus canonical text encoding."""
    model_config = ConfigDict(frozen=True)

    kind: IdentityKind
    value: str

    @model_validator(mode="after")
    def _check_encoding(self):
        if self.kind == IdentityKind.NUMERICAL:
            decode_numerical_id(self.value)
        else:
            validate_name_id(self.value)
        return self

    @classmethod
    def numerical(cls, num: int) -> "Identity":
        return cls(kind=IdentityKind.NUMERICAL, value=encode_numerical_id(num))

    @classmethod
    def name(cls, name_id: str) -> "Identity":
        return cls(kind=IdentityKind.NAME, value=name_id)

    def encode(self) -> bytes:
        return f"{self.kind.value}:{self.value}".encode("ascii")

class SigningKey(BaseModel):
    """
    Private key of one identity.

    Ed25519 keys keep the 32-byte seed in `secret`. Threshold-capable RSA keys
    keep modulus, private exponent and both primes as big-endian bytes.
    """
    model_config = ConfigDict(frozen=True)

    identity: Identity
    scheme: KeyScheme
    secret: bytes = b""
    modulus: bytes = b""
    public_exponent: int = 65537
    private_exponent: bytes = b""
    prime_p: bytes = b""
    prime_q: bytes = b""

class Certificate(BaseModel):
    """TTP signature binding an identity (and optionally its owner's numerical id) to a public key."""
    model_config = ConfigDict(frozen=True)

    identity: Identity
    scheme: KeyScheme
    public_key: bytes
    bound_to: Optional[int] = Field(default=None, ge=0, lt=1 << 64)
    signature: bytes = b""

    def signed_message(self) -> bytes:
        bound = encode_numerical_id(self.bound_to) if self.bound_to is not None else "null"
        return b"||".join([
            b"cert",
            self.identity.encode(),
            self.scheme.value.encode("ascii"),
            bound.encode("ascii"),
            self.public_key.hex().encode("ascii"),
        ])

class KeyShare(BaseModel):
    model_config = ConfigDict(frozen=True)

    identity: Identity
    share_index: int = Field(ge=0, le=2)
    modulus: bytes
    public_exponent: int = 65537
    exponent: bytes

class PartialSignature(BaseModel):
    model_config = ConfigDict(frozen=True)

    identity: Identity
    share_index: int = Field(ge=0, le=2)
    digest: bytes
    value: bytes
    modulus: bytes

class PublicParams(BaseModel):
    """Parameters selected and publicized by the TTP."""
    model_config = ConfigDict(frozen=True)

    hash_algorithm: Literal["sha256"] = "sha256"
    m: int = Field(ge=1, le=256)
    id_bits: int = Field(default=64, ge=1, le=64)
    ttp_public_key: bytes

    def to_json(self) -> str:
        return json.dumps({
            "hash_algorithm": self.hash_algorithm,
            "m": self.m,
            "id_bits": self.id_bits,
            "ttp_public_key": self.ttp_public_key.hex(),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PublicParams":
        try:
            raw = json.loads(text)
            raw["ttp_public_key"] = bytes.fromhex(raw["ttp_public_key"])
        except (ValueError, KeyError, TypeError) as exc:
            raise EncodingError(f"malformed public params: {exc}") from exc
        return cls.model_validate(raw)

class RegistrationGrant(BaseModel):
    model_config = ConfigDict(frozen=True)

    numerical_id: int = Field(ge=0, lt=1 << 64)
    name_id: str
    signing_key: SigningKey
    certificate: Certificate
    params: PublicParams
