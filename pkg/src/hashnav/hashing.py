"""Canonical preimages and SHA3-256 digests for encoded landmarks.

A preimage is UTF-8 text fields joined by ``|``: a type tag first, then
canonical signed decimal integers. Digests are raw 32-byte ``bytes``;
their text form is 64 lowercase hex characters.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

SEP = "|"
DIGEST_SIZE = 32
DIGEST_ALG = "sha3-256"
ZERO_DIGEST = bytes(DIGEST_SIZE)
EDGE_TAG = "e"
TIME_TAG = "t"

TWO_PI = 2.0 * math.pi


class HashingError(ValueError):
    pass


@dataclass(frozen=True)
class HashingConfig:
    """Everything a robot needs to reproduce the compiler's preimages.

    ``angle_bins`` must be even: undirected doorway orientations fold
    onto the first half of the bins.
    """

    delta: float = 0.1
    angle_bins: int = 16
    area_quantum: float = 0.25
    time_window: float = 10.0
    digest_alg: str = DIGEST_ALG

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise HashingError(f"delta must be > 0, got {self.delta}")
        if self.angle_bins < 4 or self.angle_bins % 2:
            raise HashingError(
                f"angle_bins must be an even integer >= 4, got {self.angle_bins}")
        if not self.area_quantum > 0:
            raise HashingError(f"area_quantum must be > 0, got {self.area_quantum}")
        if not self.time_window > 0:
            raise HashingError(f"time_window must be > 0, got {self.time_window}")
        if self.digest_alg != DIGEST_ALG:
            raise HashingError(f"unsupported digest algorithm {self.digest_alg!r}")

    @property
    def bin_width(self):
        return TWO_PI / self.angle_bins


def quantize_scalar(v, q):
    """Grid index of ``v`` at resolution ``q``, ties rounded away from zero."""
    if not q > 0:
        raise HashingError(f"quantum must be > 0, got {q}")
    if not math.isfinite(v):
        raise HashingError(f"cannot quantize non-finite value {v}")
    r = v / q
    return int(math.copysign(math.floor(abs(r) + 0.5), r))


def normalize_angle(theta):
    """Map ``theta`` into [0, 2*pi)."""
    a = math.fmod(theta, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    if a >= TWO_PI:
        a = 0.0
    return a


def wrap_pi(theta):
    """Map ``theta`` into [-pi, pi)."""
    return normalize_angle(theta + math.pi) - math.pi


def quantize_angle(theta, k):
    """Index of the angle bin nearest to ``theta``.

    Bin ``i`` is centred on ``i * 2*pi/k``, so axis-aligned directions
    sit mid-bin rather than on a bin edge. The result is in ``[0, k)``.
    """
    if k < 4:
        raise HashingError(f"angle bins must be >= 4, got {k}")
    if not math.isfinite(theta):
        raise HashingError(f"cannot quantize non-finite angle {theta}")
    idx = int(math.floor(normalize_angle(theta) * k / TWO_PI + 0.5))
    return idx % k


def bin_center(idx, k):
    return idx * TWO_PI / k


def quantize_line_angle(theta, k):
    """Angle bin for an undirected line: bins ``i`` and ``i + k/2`` coincide."""
    return quantize_angle(theta, k) % (k // 2)


def _check_tag(tag):
    if not tag or SEP in tag:
        raise HashingError(f"invalid type tag {tag!r}")


def join_fields(tag, *ints):
    _check_tag(tag)
    return SEP.join([tag, *(str(int(i)) for i in ints)]).encode("utf-8")


def grid_indices(position, cfg):
    x, y, *rest = position
    z = rest[0] if rest else 0.0
    d = cfg.delta
    return quantize_scalar(x, d), quantize_scalar(y, d), quantize_scalar(z, d)


def landmark_preimage(type_tag, position, extra, cfg):
    """``tag|qx|qy|qz`` plus ``|extra`` when an extra index is given."""
    q = grid_indices(position, cfg)
    if extra is None:
        return join_fields(type_tag, *q)
    return join_fields(type_tag, *q, extra)


def node_fields_preimage(type_tag, indices):
    return join_fields(type_tag, *indices)


def edge_preimage(type_tag, indices, bearing_bin, cfg):
    """Node preimage without its extra field, extended by ``|e|bin``."""
    if not 0 <= bearing_bin < cfg.angle_bins:
        raise HashingError(
            f"bearing bin {bearing_bin} outside [0, {cfg.angle_bins})")
    return node_fields_preimage(type_tag, indices) + \
        f"{SEP}{EDGE_TAG}{SEP}{int(bearing_bin)}".encode("utf-8")


def hash256(preimage: bytes) -> bytes:
    digest = hashlib.sha3_256(preimage).digest()
    if digest == ZERO_DIGEST:  # pragma: no cover - 2**-256
        raise HashingError("hash function produced the reserved zero digest")
    return digest


def to_hex(digest: bytes) -> str:
    return digest.hex()


def from_hex(text: str) -> bytes:
    if len(text) != 2 * DIGEST_SIZE:
        raise HashingError(
            f"digest must be {2 * DIGEST_SIZE} hex characters, got {len(text)}")
    if text != text.lower():
        raise HashingError("digest hex must be lowercase")
    try:
        return bytes.fromhex(text)
    except ValueError as exc:
        raise HashingError(f"invalid hex digest: {exc}") from None


def window_index(t, cfg):
    return int(math.floor(t / cfg.time_window))


def timed_token_for_window(base: bytes, window: int) -> bytes:
    return hash256(f"{base.hex()}{SEP}{TIME_TAG}{SEP}{int(window)}".encode("utf-8"))


def timed_token(base: bytes, t, cfg) -> bytes:
    """Digest of ``base`` salted with the index of the time window holding ``t``."""
    if t < 0:
        raise HashingError(f"time must be >= 0, got {t}")
    return timed_token_for_window(base, window_index(t, cfg))
