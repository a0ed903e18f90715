import hashlib

import pytest
from hypothesis import given, strategies as st

from coinai.hashing import HASH_SIZE, check_hash, hash_to_int, sha3_512, stream_seed

# Published SHA3-512 digests (FIPS 202 example values and the usual short messages).
VECTORS = [
    (b"", "a69f73cca23a9ac5c8b567dc185a756e97c982164fe25859e0d1dcc1475c80a6"
          "15b2123af1f5f94c11e3e9402c3ac558f500199d95b6d3e301758586281dcd26"),
    (b"abc", "b751850b1a57168a5693cd924b6b096e08f621827444f70d884f5d0240d2712e"
             "10e116e9192af3c91a7ec57647e3934057340b4cf408d5a56592f8274eec53f0"),
    (b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq",
     "04a371e84ecfb5b8b77cb48610fca8182dd457ce6f326a0fd3d7ec2f1e91636d"
     "ee691fbe0c985302ba1b0d8dc78c086346b533b49c030d99a27daf1139d6e75e"),
    (b"abcdefghbcdefghicdefghijdefghijkefghijklfghijklmghijklmnhijklmnoijklmnopjklmnopqklmnopqrlmnopqrsmnopqrstnopqrstu",
     "afebb2ef542e6579c50cad06d2e578f9f8dd6881d7dc824d26360feebf18a4fa"
     "73e3261122948efcfd492e74e82e2189ed0fb440d187f382270cb455f21dd185"),
]


@pytest.mark.parametrize("message,expected", VECTORS)
def test_reference_vectors(message, expected):
    assert sha3_512(message).hex() == expected


def test_million_a():
    expected = ("3c3a876da14034ab60627c077bb98f7e120a2a5370212dffb3385a18d4f38859"
                "ed311d0a9d5141ce9cc5c66ee689b266a8aa18ace8282a0e0db596c90b0a7b87")
    assert sha3_512(b"a" * 1_000_000).hex() == expected


def test_hash_to_int_is_big_endian():
    assert hash_to_int(b"\x00" * 63 + b"\x01") == 1
    assert hash_to_int(b"\x01" + b"\x00" * 63) == 1 << 504


def test_check_hash_rejects_wrong_length():
    with pytest.raises(ValueError):
        check_hash(b"\x00" * 32)
    assert check_hash(b"\x00" * HASH_SIZE) == b"\x00" * HASH_SIZE


@given(st.binary(max_size=300))
def test_matches_hashlib(data):
    assert sha3_512(data) == hashlib.sha3_512(data).digest()


def test_stream_seeds_differ_per_node():
    seeds = {stream_seed(42, f"miner:{i}") for i in range(100)}
    assert len(seeds) == 100
    assert stream_seed(42, "a") == stream_seed(42, "a")
    assert stream_seed(42, "a") != stream_seed(43, "a")
