from guardnet.utils.ids import (
    encode_numerical_id,
    decode_numerical_id,
    validate_name_id,
    hash_name_id,
    random_nonce,
    rng_stream,
)

__all__ = [
    "encode_numerical_id",
    "decode_numerical_id",
    "validate_name_id",
    "hash_name_id",
    "random_nonce",
    "rng_stream",
]
