import math

import pytest
from hypothesis import given, strategies as st

from hashnav import hashing as H
from hashnav.hashing import HashingConfig, HashingError


CFG = HashingConfig(delta=0.1, angle_bins=16, area_quantum=0.25, time_window=10.0)


@pytest.mark.parametrize("v,q,expected", [
    (12.34, 0.1, 123),
    (0.0, 0.025, 0),
    (-0.05, 0.1, -1),
    (0.05, 0.1, 1),
    (-12.34, 0.1, -123),
])
def test_quantize_scalar(v, q, expected):
    assert H.quantize_scalar(v, q) == expected


@pytest.mark.parametrize("v", [math.nan, math.inf, -math.inf])
def test_quantize_scalar_rejects_non_finite(v):
    with pytest.raises(HashingError):
        H.quantize_scalar(v, 0.1)


@pytest.mark.parametrize("theta,expected", [
    (0.0, 0), (math.pi, 8), (-math.pi / 2, 12),
    (2 * math.pi, 0), (2 * math.pi - 1e-12, 0),
])
def test_quantize_angle(theta, expected):
    assert H.quantize_angle(theta, 16) == expected


def test_quantize_angle_rejects_nan():
    with pytest.raises(HashingError):
        H.quantize_angle(math.nan, 16)


@given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
       st.sampled_from([4, 6, 8, 16, 18, 32]))
def test_quantize_angle_total(theta, k):
    assert 0 <= H.quantize_angle(theta, k) < k


@pytest.mark.parametrize("k", [4, 16, 36])
def test_quantize_angle_image_is_full_range(k):
    seen = {H.quantize_angle(i * 2 * math.pi / (4 * k), k) for i in range(4 * k)}
    assert seen == set(range(k))


def test_line_angle_folds_opposite_directions():
    for deg in (0.0, 30.0, 90.0, 135.0):
        a = math.radians(deg)
        assert H.quantize_line_angle(a, 16) == H.quantize_line_angle(a + math.pi, 16)
    assert H.quantize_line_angle(math.radians(179.9), 16) == 0


def test_landmark_preimage_examples():
    assert H.landmark_preimage("doorway", (12.34, 4.56, 0), 4, CFG) == b"doorway|123|46|0|4"
    assert H.landmark_preimage("corner", (0, 0, 0), 0, CFG) == b"corner|0|0|0|0"
    area_idx = H.quantize_scalar(6.0, 0.25)
    assert area_idx == 24
    assert H.landmark_preimage("room", (2.6667, 1.0, 0), area_idx, CFG) == b"room|27|10|0|24"
    assert H.landmark_preimage("qr", (1.0, -2.0), None, CFG) == b"qr|10|-20|0"


@pytest.mark.parametrize("tag", ["", "door|way"])
def test_landmark_preimage_rejects_bad_tag(tag):
    with pytest.raises(HashingError):
        H.landmark_preimage(tag, (0, 0, 0), None, CFG)


def test_edge_preimage_examples():
    assert H.edge_preimage("doorway", (123, 46, 0), 5, CFG) == b"doorway|123|46|0|e|5"
    assert H.edge_preimage("corner", (0, 0, 0), 0, CFG) == b"corner|0|0|0|e|0"
    a = H.edge_preimage("corner", (0, 0, 0), 3, CFG)
    b = H.edge_preimage("corner", (0, 0, 0), 4, CFG)
    assert a != b and H.hash256(a) != H.hash256(b)


@pytest.mark.parametrize("b", [-1, 16])
def test_edge_preimage_rejects_out_of_range(b):
    with pytest.raises(HashingError):
        H.edge_preimage("corner", (0, 0, 0), b, CFG)


def test_hash256_vectors():
    assert H.hash256(b"").hex() == \
        "a7ffc6f8bf1ed76651c14756a061d662f580ff4de43b49fa82d80a4b80f8434a"
    assert H.hash256(b"abc").hex() == \
        "3a985da74fe225b2045c172d6bd390bd855f086e3e9d525b46bfe24511431532"
    # frozen from two independent SHA3-256 implementations
    assert H.hash256(b"doorway|123|46|0|4").hex() == \
        "6b970d7f0e700a28e5fc32a721eeeda51ba0ccf774624fdf5c8d645bd7e78e51"


def test_hex_round_trip_and_checks():
    d = H.hash256(b"abc")
    assert H.from_hex(H.to_hex(d)) == d
    with pytest.raises(HashingError):
        H.from_hex("ab" * 31 + "a")
    with pytest.raises(HashingError):
        H.from_hex("AB" * 32)
    with pytest.raises(HashingError):
        H.from_hex("zz" * 32)


def test_timed_token_windows():
    base = H.hash256(b"base")
    assert H.timed_token(base, 0, CFG) == H.hash256(f"{base.hex()}|t|0".encode())
    assert H.timed_token(base, 9.99, CFG) != H.timed_token(base, 10.0, CFG)
    assert H.timed_token(base, 15, CFG) == H.timed_token(base, 19, CFG)
    with pytest.raises(HashingError):
        H.timed_token(base, -1, CFG)


@pytest.mark.parametrize("kw", [
    dict(delta=0), dict(angle_bins=2), dict(angle_bins=15),
    dict(area_quantum=-1), dict(time_window=0), dict(digest_alg="md5"),
])
def test_config_validation(kw):
    with pytest.raises(HashingError):
        HashingConfig(**kw)


field_tuples = st.tuples(
    st.sampled_from(["doorway", "corner", "room", "qr"]),
    st.lists(st.integers(-10**6, 10**6), min_size=3, max_size=4),
)


@given(field_tuples, field_tuples)
def test_preimage_injective(a, b):
    pa = H.join_fields(a[0], *a[1])
    pb = H.join_fields(b[0], *b[1])
    assert (pa == pb) == (a[0] == b[0] and a[1] == b[1])


@given(st.floats(-100, 100), st.floats(-100, 100),
       st.floats(-0.049, 0.049), st.floats(-0.049, 0.049))
def test_grid_stability(x, y, ex, ey):
    cx = H.quantize_scalar(x, 0.1) * 0.1
    cy = H.quantize_scalar(y, 0.1) * 0.1
    a = H.landmark_preimage("corner", (cx, cy, 0), 3, CFG)
    b = H.landmark_preimage("corner", (cx + ex, cy + ey, 0), 3, CFG)
    assert H.hash256(a) == H.hash256(b)
