"""Simulated peer-to-peer exchange of policy-parameter segments.

Agents within communication range answer segment requests from frozen
parameter snapshots. A replica is one attempt to rebuild a full parameter
vector from segments fetched from distinct neighbors; any lost segment
abandons the replica (no retries). The ledger tracks what was physically
delivered (bits, capped-payload message counts) and what was successfully
reconstructed, which is what the cost formulas are defined over.

Only policy parameters travel; critics and temperatures stay local.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NeighborGraph", "neighbors", "SegmentRequest", "SegmentResponse",
    "segment", "segment_lengths", "build_referential", "CommLedger",
    "run_comm_round", "run_averaging_round", "comm_cost",
    "DEFAULT_PAYLOAD_BYTES", "BITS_PER_PARAM",
]

DEFAULT_PAYLOAD_BYTES = 4480
BITS_PER_PARAM = 32


class NeighborGraph:
    """Symmetric, irreflexive one-hop adjacency as per-agent id sets."""

    def __init__(self, sets: dict[int, set[int]]):
        self.sets = sets

    def __getitem__(self, i: int) -> tuple[int, ...]:
        return tuple(sorted(self.sets[i]))

    @property
    def n_agents(self) -> int:
        return len(self.sets)


def neighbors(positions: np.ndarray, comm_range: float,
              circumference: float | None = None) -> NeighborGraph:
    """Range graph under the closed-ball rule (distance <= range).

    Positions are (n,) scalars on a ring when ``circumference`` is given
    (arc-length metric), otherwise (n, k) Euclidean coordinates.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if not np.all(np.isfinite(positions)):
        raise ValueError("positions must be finite")
    n = positions.shape[0]
    sets: dict[int, set[int]] = {i: set() for i in range(n)}
    for i in range(n):
        for j in range(i + 1, n):
            if circumference is not None:
                raw = abs(positions[i] - positions[j]) % circumference
                dist = min(raw, circumference - raw)
            else:
                dist = float(np.linalg.norm(positions[i] - positions[j]))
            if dist <= comm_range:
                sets[i].add(j)
                sets[j].add(i)
    return NeighborGraph(sets)


@dataclass(frozen=True)
class SegmentRequest:
    requester: int
    total_segments: int   # P_i of the requester
    target: int           # j_p
    index: int            # p, 1-based

    def __post_init__(self):
        if not 1 <= self.index <= self.total_segments:
            raise ValueError("segment index out of range")


@dataclass(frozen=True)
class SegmentResponse:
    sender: int
    index: int
    values: np.ndarray


def segment_lengths(d: int, n_segments: int) -> list[int]:
    """Uniform partition lengths: ceil(d/P) for the first d mod P pieces."""
    if not 1 <= n_segments <= d:
        raise ValueError("need 1 <= segments <= parameter count")
    base, extra = divmod(d, n_segments)
    return [base + 1] * extra + [base] * (n_segments - extra)


def segment(theta: np.ndarray, n_segments: int) -> list[np.ndarray]:
    """Contiguous non-overlapping slices covering the whole vector."""
    theta = np.asarray(theta)
    lengths = segment_lengths(theta.size, n_segments)
    out, pos = [], 0
    for length in lengths:
        out.append(theta[pos:pos + length])
        pos += length
    return out


def build_referential(responses: list[SegmentResponse], d: int,
                      n_segments: int) -> np.ndarray:
    """Concatenate exactly one response per index into a full vector."""
    by_index = {r.index: r for r in responses}
    if sorted(by_index) != list(range(1, n_segments + 1)) \
            or len(responses) != n_segments:
        raise ValueError("need exactly one response per segment index")
    lengths = segment_lengths(d, n_segments)
    parts = []
    for p in range(1, n_segments + 1):
        values = np.asarray(by_index[p].values)
        if values.size != lengths[p - 1]:
            raise ValueError(f"segment {p} has length {values.size}, "
                             f"expected {lengths[p - 1]}")
        parts.append(values)
    return np.concatenate(parts)


@dataclass
class CommLedger:
    """Counters for reconstruction bookkeeping and transmission cost."""

    rho_total: int = 0            # successfully reconstructed referentials
    rho_ef: int = 0               # referentials accepted by the mixing rule
    attempted: int = 0            # replicas started
    failed: int = 0               # replicas lost to packet drops
    bits_sent: int = 0            # delivered response payload bits
    messages_sent: int = 0        # delivered capped-payload messages
    by_partition: dict = field(default_factory=dict)  # P_i -> reconstructions

    @property
    def mixing_rate(self) -> float:
        return self.rho_ef / self.rho_total if self.rho_total else 0.0

    def record_accepts(self, n: int) -> None:
        self.rho_ef += n
        if self.rho_ef > self.rho_total:
            raise ValueError("accepted more referentials than reconstructed")


def _messages_for(segment_bits: int, payload_bytes: int) -> int:
    return math.ceil(segment_bits / (8 * payload_bytes))


def run_comm_round(thetas: list[np.ndarray], graph: NeighborGraph,
                   n_segments: int, n_replicas: int, prr: float,
                   rng: np.random.Generator, ledger: CommLedger,
                   payload_bytes: int = DEFAULT_PAYLOAD_BYTES
                   ) -> dict[int, list[np.ndarray]]:
    """One lockstep gossip round over frozen parameter snapshots.

    Every agent with at least one neighbor builds up to
    min(n_replicas, |neighbors|) replicas; each replica requests
    min(n_segments, |neighbors|) segments from distinct neighbors drawn
    without replacement, and every response is delivered independently
    with probability ``prr``.
    """
    if not 0.0 <= prr <= 1.0:
        raise ValueError("packet reception rate must lie in [0, 1]")
    referentials: dict[int, list[np.ndarray]] = {}
    for i in range(len(thetas)):
        omega = graph[i]
        referentials[i] = []
        if not omega:
            continue
        d = thetas[i].size
        p_i = min(n_segments, len(omega))
        kappa_i = min(n_replicas, len(omega))
        lengths = segment_lengths(d, p_i)
        for _ in range(kappa_i):
            ledger.attempted += 1
            targets = rng.choice(omega, size=p_i, replace=False)
            delivered = rng.random(p_i) < prr
            responses = []
            for p in range(1, p_i + 1):
                if not delivered[p - 1]:
                    continue
                seg_bits = BITS_PER_PARAM * lengths[p - 1]
                ledger.bits_sent += seg_bits
                ledger.messages_sent += _messages_for(seg_bits, payload_bytes)
                sender = int(targets[p - 1])
                responses.append(SegmentResponse(
                    sender=sender, index=p,
                    values=segment(thetas[sender], p_i)[p - 1]))
            if len(responses) == p_i:
                referentials[i].append(build_referential(responses, d, p_i))
                ledger.rho_total += 1
                ledger.by_partition[p_i] = ledger.by_partition.get(p_i, 0) + 1
            else:
                ledger.failed += 1
    return referentials


def run_averaging_round(thetas: list[np.ndarray], graph: NeighborGraph,
                        prr: float, rng: np.random.Generator,
                        ledger: CommLedger,
                        payload_bytes: int = DEFAULT_PAYLOAD_BYTES
                        ) -> dict[int, tuple[np.ndarray, int]]:
    """Unselective baseline: fetch every neighbor's full parameter vector.

    Returns, per agent, the mean of the delivered neighbor vectors and the
    count that arrived. Every delivered full vector counts as one
    reconstruction (it is used unconditionally, so the caller should mark
    them all accepted).
    """
    out: dict[int, tuple[np.ndarray, int]] = {}
    for i in range(len(thetas)):
        omega = graph[i]
        if not omega:
            continue
        received = []
        for j in omega:
            ledger.attempted += 1
            if rng.random() < prr:
                d = thetas[j].size
                bits = BITS_PER_PARAM * d
                ledger.bits_sent += bits
                ledger.messages_sent += _messages_for(bits, payload_bytes)
                ledger.rho_total += 1
                ledger.by_partition[1] = ledger.by_partition.get(1, 0) + 1
                received.append(thetas[j])
            else:
                ledger.failed += 1
        if received:
            out[i] = (np.mean(received, axis=0), len(received))
    return out


def comm_cost(ledger: CommLedger, d: int,
              payload_bytes: int = DEFAULT_PAYLOAD_BYTES) -> tuple[float, int]:
    """(total gigabytes, message count) for the ledger's reconstructions.

    Gigabytes follow rho_total * 32 d / (8 * 1024^3); messages are counted
    per segment of each reconstruction at the given payload size.
    """
    psi_gb = ledger.rho_total * BITS_PER_PARAM * d / (8 * 1024**3)
    messages = 0
    for p_i, count in ledger.by_partition.items():
        per_reconstruction = sum(
            _messages_for(BITS_PER_PARAM * length, payload_bytes)
            for length in segment_lengths(d, p_i))
        messages += count * per_reconstruction
    return psi_gb, messages
