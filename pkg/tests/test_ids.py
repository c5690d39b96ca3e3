import pytest

from guardnet.exceptions import EncodingError, ParamError
from guardnet.utils.ids import (
    decode_numerical_id, encode_numerical_id, full_space_ids, hash_name_id, random_nonce,
    rng_stream, validate_name_id,
)


def test_numerical_id_encoding_is_canonical():
    assert encode_numerical_id(45) == "000000000000002d"
    assert decode_numerical_id("000000000000002d") == 45
    assert encode_numerical_id((1 << 64) - 1) == "f" * 16


@pytest.mark.parametrize("bad", [-1, 1 << 64, True, "45"])
def test_numerical_id_out_of_range(bad):
    with pytest.raises(EncodingError):
        encode_numerical_id(bad)


@pytest.mark.parametrize("text", ["2d", "000000000000002D", "00000000000000zz"])
def test_malformed_numerical_id(text):
    with pytest.raises(EncodingError):
        decode_numerical_id(text)


def test_name_id_validation():
    assert validate_name_id("0101") == "0101"
    with pytest.raises(EncodingError):
        validate_name_id("01a1")
    with pytest.raises(ParamError):
        validate_name_id("0101", m=8)


def test_hash_name_id_deterministic_and_sized():
    assert hash_name_id(45, 32) == hash_name_id(45, 32)
    assert len(hash_name_id(45, 32)) == 32
    assert hash_name_id(45, 8) == hash_name_id(45, 32)[:8]
    with pytest.raises(ParamError):
        hash_name_id(45, 0)


def test_hash_name_ids_distinct_at_64_bits():
    names = {hash_name_id(num, 64) for num in range(10_000)}
    assert len(names) == 10_000


def test_full_space_ids_cover_every_name():
    ids = full_space_ids(4)
    assert len(ids) == 16
    assert [hash_name_id(num, 4) for num in ids] == [format(v, "04b") for v in range(16)]


def test_nonces_reproducible_and_distinct():
    assert random_nonce(rng_stream(3, "nonce")) == random_nonce(rng_stream(3, "nonce"))
    stream = rng_stream(3, "nonce")
    nonces = {random_nonce(stream) for _ in range(100_000)}
    assert len(nonces) == 100_000
    assert all(len(n) == 16 for n in list(nonces)[:10])


def test_different_seeds_give_different_nonces():
    differ = sum(
        random_nonce(rng_stream(seed, "nonce")) != random_nonce(rng_stream(seed + 1000, "nonce"))
        for seed in range(100)
    )
    assert differ == 100
