"""Simulated secure aggregation via pairwise additive masking.

Payloads are encoded to fixed-point integers (default 24 fraction bits) and
masked with pairwise-cancelling pseudorandom uint64 vectors, so a complete
round recovers the exact fixed-point sum and any single masked payload is
indistinguishable from uniform noise. Pairwise seeds are derived from
(round seed, min id, max id) as a stand-in for key agreement.

Wire layout of multi-matrix payloads: matrices are flattened row-major and
concatenated in layer order; the per-layer shape list travels alongside the
masked vector and is checked for consistency at aggregation time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, ProtocolError
from .linalg import seed_from

__all__ = [
    "FixedPointCodec",
    "MaskedPayload",
    "mask",
    "aggregate",
    "pack_matrices",
    "unpack_matrices",
]

_MOD_BITS = 64


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed fixed-point codec over 2^64 modular arithmetic."""

    frac_bits: int = 24

    @property
    def scale(self) -> float:
        return float(1 << self.frac_bits)

    def encode(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise InvalidInput("cannot encode non-finite values")
        ints = np.rint(values * self.scale).astype(np.int64)
        return ints.view(np.uint64)

    def decode(self, words) -> np.ndarray:
        words = np.asarray(words, dtype=np.uint64)
        return words.view(np.int64).astype(np.float64) / self.scale


@dataclass
class MaskedPayload:
    client_id: int
    values: np.ndarray  # uint64, masked fixed-point words
    round_id: int
    participants: frozenset
    layout: tuple  # per-matrix shapes, identical across clients


def _pair_mask(round_seed, id_a: int, id_b: int, length: int) -> np.ndarray:
    lo, hi = (id_a, id_b) if id_a < id_b else (id_b, id_a)
    rng = np.random.default_rng(seed_from(round_seed, "pairmask", lo, hi))
    return rng.integers(0, 1 << _MOD_BITS, size=length, dtype=np.uint64)


def mask(
    payload,
    self_id: int,
    peer_ids,
    round_seed: int,
    codec: FixedPointCodec = FixedPointCodec(),
    layout: tuple = (),
) -> MaskedPayload:
    """Encode and mask one client's payload for a round.

    The lower-id member of each pair adds the shared mask, the higher-id
    member subtracts it, so the masks cancel in the modular sum.
    """
    peers = [p for p in peer_ids if p != self_id]
    enc = codec.encode(np.ravel(payload)).copy()
    with np.errstate(over="ignore"):
        for peer in peers:
            m = _pair_mask(round_seed, self_id, peer, enc.shape[0])
            if self_id < peer:
                enc += m
            else:
                enc -= m
    return MaskedPayload(
        client_id=self_id,
        values=enc,
        round_id=round_seed,
        participants=frozenset(peers) | {self_id},
        layout=tuple(layout),
    )


def aggregate(payloads, codec: FixedPointCodec = FixedPointCodec()) -> np.ndarray:
    """Modular sum of masked payloads, decoded to the real-valued sum.

    Raises ProtocolError when the round is inconsistent: differing peer
    lists, differing rounds or layouts, or a missing client (whose absent
    masks would fail to cancel).
    """
    payloads = list(payloads)
    if not payloads:
        raise ProtocolError("no payloads to aggregate")
    ref = payloads[0]
    present = {p.client_id for p in payloads}
    for p in payloads:
        if p.round_id != ref.round_id:
            raise ProtocolError("payloads from different rounds")
        if p.participants != ref.participants:
            raise ProtocolError("inconsistent peer lists across clients")
        if p.layout != ref.layout:
            raise ProtocolError("inconsistent payload layouts")
        if p.values.shape != ref.values.shape:
            raise ProtocolError("inconsistent payload lengths")
    if present != ref.participants:
        missing = sorted(ref.participants - present)
        raise ProtocolError(f"missing clients in round: {missing}")
    total = np.zeros_like(ref.values)
    with np.errstate(over="ignore"):
        for p in payloads:
            total += p.values
    return codec.decode(total)


def pack_matrices(matrices) -> tuple:
    """Flatten matrices row-major into one vector; returns (vector, layout)."""
    parts = [np.ravel(np.asarray(m, dtype=np.float64)) for m in matrices]
    layout = tuple(np.asarray(m).shape for m in matrices)
    vec = np.concatenate(parts) if parts else np.zeros(0)
    return vec, layout


def unpack_matrices(vector, layout) -> list:
    """Inverse of pack_matrices."""
    out = []
    pos = 0
    for shape in layout:
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        out.append(np.reshape(vector[pos : pos + size], shape))
        pos += size
    if pos != len(vector):
        raise InvalidInput("layout does not match vector length")
    return out
