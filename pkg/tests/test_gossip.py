"""Gossip layer tests: graphs, segmentation, rounds, cost accounting."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gossipsac import gossip
from gossipsac.gossip import (CommLedger, SegmentResponse, build_referential,
                              comm_cost, neighbors, run_averaging_round,
                              run_comm_round, segment, segment_lengths)

TABLE_ROWS = [  # (rho_total, psi_gb) pairs for d = 68,098
    (1626, 0.412), (29270, 7.425), (1546, 0.392), (10223, 2.593),
    (41333, 10.486), (38120, 9.670), (30486, 7.734), (30066, 7.627),
    (29634, 7.518), (30126, 7.643), (2351, 0.596), (1227, 0.311),
]
FULL_NET_D = 6 * 256 + 256 + 256 * 256 + 256 + 256 * 2 + 2  # 68,098


class TestNeighbors:
    def test_zero_range_isolates_everyone(self):
        g = neighbors(np.array([0.0, 1.0, 2.0]), 0.0, circumference=10.0)
        assert all(g[i] == () for i in range(3))

    def test_boundary_distance_is_inside_closed_ball(self):
        g = neighbors(np.array([[0.0, 0.0], [5.0, 0.0]]), 5.0)
        assert g[0] == (1,) and g[1] == (0,)

    def test_ring_spacing_geometry(self):
        # four agents evenly spaced on circumference 40 with range 10: the
        # two adjacent agents sit exactly at arc distance 10, the opposite
        # one at 20
        g = neighbors(np.array([0.0, 10.0, 20.0, 30.0]), 10.0, circumference=40.0)
        assert g[0] == (1, 3)
        assert g[1] == (0, 2)
        assert g[2] == (1, 3)
        assert g[3] == (0, 2)

    @given(st.integers(2, 8), st.floats(0.5, 30.0), st.integers(0, 2**31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_and_irreflexive(self, n, rng_range, seed):
        rng = np.random.default_rng(seed)
        pos = rng.uniform(0, 100, size=(n, 2))
        g = neighbors(pos, rng_range)
        for i in range(n):
            assert i not in g[i]
            for j in g[i]:
                assert i in g[j]

    def test_nonfinite_positions_rejected(self):
        with pytest.raises(ValueError):
            neighbors(np.array([0.0, np.nan]), 1.0)


class TestSegmentation:
    def test_uneven_partition_lengths(self):
        assert segment_lengths(10, 4) == [3, 3, 2, 2]

    def test_single_segment_is_whole_vector(self):
        theta = np.arange(7.0)
        (only,) = segment(theta, 1)
        assert np.array_equal(only, theta)

    def test_oversegmentation_rejected(self):
        with pytest.raises(ValueError):
            segment(np.arange(3.0), 4)

    @given(st.integers(1, 4000), st.integers(1, 64), st.integers(0, 2**31 - 1))
    @settings(max_examples=100, deadline=None)
    def test_concat_identity(self, d, p, seed):
        p = min(p, d)
        theta = np.random.default_rng(seed).normal(size=d)
        parts = segment(theta, p)
        assert len(parts) == p
        assert np.array_equal(np.concatenate(parts), theta)

    def test_request_index_validated(self):
        with pytest.raises(ValueError):
            gossip.SegmentRequest(requester=0, total_segments=4, target=1, index=5)


class TestBuildReferential:
    def test_single_source_identity(self):
        theta = np.arange(11.0)
        responses = [SegmentResponse(sender=3, index=p + 1, values=part)
                     for p, part in enumerate(segment(theta, 4))]
        assert np.array_equal(build_referential(responses, 11, 4), theta)

    def test_two_source_concatenation(self):
        th1, th2 = np.ones(4), np.full(4, 2.0)
        responses = [SegmentResponse(1, 1, segment(th1, 2)[0]),
                     SegmentResponse(2, 2, segment(th2, 2)[1])]
        assert np.array_equal(build_referential(responses, 4, 2),
                              [1.0, 1.0, 2.0, 2.0])

    def test_every_coordinate_traceable_to_source(self):
        rng = np.random.default_rng(0)
        thetas = [rng.normal(size=13) for _ in range(5)]
        assignment = rng.integers(0, 5, size=3)
        responses = [SegmentResponse(int(j), p + 1,
                                     segment(thetas[j], 3)[p])
                     for p, j in enumerate(assignment)]
        built = build_referential(responses, 13, 3)
        pos = 0
        for p, j in enumerate(assignment):
            length = segment_lengths(13, 3)[p]
            assert np.array_equal(built[pos:pos + length],
                                  segment(thetas[j], 3)[p])
            pos += length

    def test_missing_segment_rejected(self):
        theta = np.arange(6.0)
        responses = [SegmentResponse(0, 1, segment(theta, 3)[0]),
                     SegmentResponse(0, 3, segment(theta, 3)[2])]
        with pytest.raises(ValueError):
            build_referential(responses, 6, 3)

    def test_wrong_length_rejected(self):
        responses = [SegmentResponse(0, 1, np.zeros(5)),
                     SegmentResponse(0, 2, np.zeros(1))]
        with pytest.raises(ValueError):
            build_referential(responses, 6, 2)


def complete_graph(n):
    return neighbors(np.zeros((n, 2)), 1.0)


class TestCommRound:
    def test_lossless_full_round(self):
        n, kappa = 5, 3
        thetas = [np.full(12, float(i)) for i in range(n)]
        ledger = CommLedger()
        refs = run_comm_round(thetas, complete_graph(n), 4, kappa, 1.0,
                              np.random.default_rng(0), ledger)
        assert all(len(refs[i]) == kappa for i in range(n))
        assert ledger.rho_total == n * kappa
        assert ledger.failed == 0
        assert ledger.attempted == n * kappa

    def test_total_loss(self):
        thetas = [np.ones(8) for _ in range(4)]
        ledger = CommLedger()
        refs = run_comm_round(thetas, complete_graph(4), 2, 2, 0.0,
                              np.random.default_rng(0), ledger)
        assert all(not refs[i] for i in range(4))
        assert ledger.rho_total == 0 and ledger.bits_sent == 0
        assert ledger.messages_sent == 0

    def test_isolated_agent_skips_silently(self):
        thetas = [np.ones(6), np.ones(6)]
        graph = neighbors(np.array([0.0, 100.0]), 1.0, circumference=1000.0)
        ledger = CommLedger()
        refs = run_comm_round(thetas, graph, 4, 3, 1.0,
                              np.random.default_rng(0), ledger)
        assert refs == {0: [], 1: []}
        assert ledger.attempted == 0

    def test_segments_come_from_distinct_neighbors(self):
        # neighbor vectors are constant-valued, so sources are identifiable
        n = 6
        thetas = [np.full(8, float(i)) for i in range(n)]
        ledger = CommLedger()
        refs = run_comm_round(thetas, complete_graph(n), 4, 1, 1.0,
                              np.random.default_rng(3), ledger)
        for i in range(n):
            (ref,) = refs[i]
            sources = {int(v) for v in ref}
            assert len(sources) == 4
            assert i not in sources

    def test_replica_success_rate_matches_binomial(self):
        # P_i = 4 segments at prr = 0.8: success probability 0.8^4 = 0.4096
        n, kappa, rounds = 5, 4, 125
        thetas = [np.ones(16) for _ in range(n)]
        graph = complete_graph(n)
        ledger = CommLedger()
        rng = np.random.default_rng(99)
        for _ in range(rounds):
            run_comm_round(thetas, graph, 4, kappa, 0.8, rng, ledger)
        assert ledger.attempted == n * kappa * rounds  # 10,000 replicas
        rate = ledger.rho_total / ledger.attempted
        assert abs(rate - 0.8**4) <= 0.015

    def test_deterministic_replay(self):
        thetas = [np.arange(10.0) * i for i in range(4)]
        out = []
        for _ in range(2):
            ledger = CommLedger()
            refs = run_comm_round(thetas, complete_graph(4), 3, 2, 0.6,
                                  np.random.default_rng(42), ledger)
            out.append((refs, ledger))
        for i in range(4):
            assert len(out[0][0][i]) == len(out[1][0][i])
            for a, b in zip(out[0][0][i], out[1][0][i]):
                assert np.array_equal(a, b)
        assert out[0][1] == out[1][1]

    def test_ledger_conservation(self):
        thetas = [np.ones(20) for _ in range(6)]
        ledger = CommLedger()
        rng = np.random.default_rng(7)
        for _ in range(50):
            run_comm_round(thetas, complete_graph(6), 4, 2, 0.7, rng, ledger)
        assert ledger.rho_total + ledger.failed == ledger.attempted
        assert ledger.rho_ef <= ledger.rho_total
        with pytest.raises(ValueError):
            ledger.record_accepts(ledger.rho_total + 1)


class TestAveragingRound:
    def test_mean_of_neighbors_and_full_counting(self):
        thetas = [np.full(4, float(i)) for i in range(3)]
        ledger = CommLedger()
        out = run_averaging_round(thetas, complete_graph(3), 1.0,
                                  np.random.default_rng(0), ledger)
        assert np.allclose(out[0][0], (thetas[1] + thetas[2]) / 2)
        assert out[0][1] == 2
        assert ledger.rho_total == 6  # every full vector received counts
        ledger.record_accepts(6)
        assert ledger.mixing_rate == 1.0


class TestCommCost:
    @pytest.mark.parametrize("rho,psi", TABLE_ROWS)
    def test_reported_cost_pairs(self, rho, psi):
        ledger = CommLedger(rho_total=rho, by_partition={4: rho})
        got, _ = comm_cost(ledger, FULL_NET_D)
        assert abs(got - psi) <= 0.001

    def test_zero_reconstructions(self):
        assert comm_cost(CommLedger(), FULL_NET_D) == (0.0, 0)

    def test_payload_exactly_one_message_per_segment(self):
        # d = 1120 P gives 32 * 1120 = 8 * 4480 bits per segment: exactly
        # one full-payload message each
        for p in (1, 2, 4, 8):
            d = 1120 * p
            ledger = CommLedger(rho_total=3, by_partition={p: 3})
            _, messages = comm_cost(ledger, d)
            assert messages == 3 * p

    def test_message_count_rounds_up(self):
        ledger = CommLedger(rho_total=1, by_partition={2: 1})
        _, messages = comm_cost(ledger, 1121 * 2)  # one param over the payload
        assert messages == 4
