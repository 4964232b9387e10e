import hashlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import FIXTURES, TINY, random_snapshot
from weakforge.checkpoint import decode_snapshot, encode_snapshot, load_snapshot, save_snapshot
from weakforge.errors import CorruptCheckpointError
from weakforge.rng import Xoshiro256, derive_seed, rng, splitmix64


def test_splitmix64_reference_vector():
    s, a = splitmix64(0)
    _, b = splitmix64(s)
    assert (a, b) == (0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4)
    assert [a, b] == oracles.splitmix64_stream(0, 2)


def test_xoshiro_reference_vector():
    g = Xoshiro256(state=[1, 2, 3, 4])
    assert [g.next_u64() for _ in range(4)] == [11520, 0, 1509978240, 1215971899390074240]


@given(st.integers(0, 2**64 - 1))
def test_xoshiro_matches_oracle(seed):
    g = Xoshiro256(seed)
    state = oracles.splitmix64_stream(seed, 4)
    assert [g.next_u64() for _ in range(8)] == oracles.xoshiro256ss(state, 8)


def test_golden_split_stream(golden):
    g = rng(42, "split")
    assert [g.next_u64() for _ in range(4)] == golden["prng_seed42_split"]


def test_streams_deterministic_and_separated():
    a = [rng(5, "x", 1).next_u64() for _ in range(3)]
    assert a == [rng(5, "x", 1).next_u64() for _ in range(3)]
    firsts = {rng(5, *labels).next_u64() for labels in [("x", 1), ("x", 2), ("y", 1), ("x",), ()]}
    assert len(firsts) == 5
    assert derive_seed(5) != 5


@given(st.integers(1, 500), st.integers(0, 2**32))
def test_below_in_range_and_permutation(n, seed):
    g = Xoshiro256(seed)
    assert 0 <= g.below(n) < n
    assert sorted(g.permutation(n)) == list(range(n))


def test_uniform_and_normal_moments():
    g = Xoshiro256(9)
    u = np.array([g.random() for _ in range(20000)])
    assert u.min() >= 0 and u.max() < 1 and abs(u.mean() - 0.5) < 0.01
    z = g.normals(20000)
    assert abs(z.mean()) < 0.03 and abs(z.std() - 1) < 0.03


# -- checkpoints -------------------------------------------------------------


def test_round_trip_bit_exact(tmp_path, vocab):
    snap = random_snapshot(TINY, vocab, 3)
    path = save_snapshot(snap, tmp_path / "a.wkfg")
    back = load_snapshot(path)
    assert back.params.tobytes() == snap.params.tobytes()
    assert (back.version_id, back.parent_id, back.arch, back.vocab_hash) == \
        (snap.version_id, snap.parent_id, snap.arch, snap.vocab_hash)


def test_layout_prefix(vocab):
    blob = encode_snapshot(random_snapshot(TINY, vocab, 3))
    assert blob[:4] == b"WKFG"
    assert int.from_bytes(blob[4:6], "little") == 1
    assert blob[6:14] == vocab.hash


def test_fixture_checksum(golden):
    snap = load_snapshot(FIXTURES / "policy.wkfg")
    assert hashlib.sha256(snap.params.tobytes()).hexdigest() == golden["policy_params_sha256"]


@pytest.mark.parametrize("cut", [0, 3, 10, 40, -9, -1])
def test_truncated(cut, vocab):
    blob = encode_snapshot(random_snapshot(TINY, vocab, 3))
    with pytest.raises(CorruptCheckpointError):
        decode_snapshot(blob[:cut])


@pytest.mark.parametrize("pos", [0, 4, 8, 30, -20])
def test_flipped_byte(pos, vocab):
    blob = bytearray(encode_snapshot(random_snapshot(TINY, vocab, 3)))
    blob[pos] ^= 0x40
    with pytest.raises(CorruptCheckpointError):
        decode_snapshot(bytes(blob))
