import math
import random

import pytest

from airdrop_forensics.flows import (
    FeatureVector,
    OperationKind,
    UNIFORM_WEIGHTS,
    WeightMismatchError,
    build_flow,
    build_flows,
    classify_event,
    extract_features,
    weighted_cosine_distance,
    write_feature_matrix,
)
from airdrop_forensics.ingest import ContractCategory, EventKind, Tier

from conftest import WINDOW_START, addr, claim, contract, ev, make_store

T = WINDOW_START + 86400


def vec(*ops, weights=UNIFORM_WEIGHTS):
    return FeatureVector.from_ops(ops, weights)


class TestClassify:
    def test_staking_pool_transfer_is_stake(self, staking_contract):
        subject = addr(1)
        op, note = classify_event(
            ev(subject, staking_contract.address, 10),
            subject,
            {staking_contract.address: staking_contract},
        )
        assert op == OperationKind.STAKE and note is None

    def test_plain_counterparty_is_send(self):
        subject = addr(1)
        op, _ = classify_event(ev(subject, addr(2), 10), subject, {})
        assert op == OperationKind.SEND
        op, _ = classify_event(ev(addr(2), subject, 10), subject, {})
        assert op == OperationKind.RECEIVE

    def test_trading_or_lp_outgoing_defaults_to_sell_and_is_flagged(self):
        pool = contract(addr(9), "amm pool v3", ContractCategory.TRADING_OR_LP)
        subject = addr(1)
        op, note = classify_event(
            ev(subject, pool.address, 10), subject, {pool.address: pool}
        )
        assert op == OperationKind.SELL
        assert note and note.startswith("ambiguous_trading_or_lp")
        op, _ = classify_event(
            ev(subject, pool.address, 10), subject, {pool.address: pool},
            trading_or_lp="lp",
        )
        assert op == OperationKind.LP_ADD

    def test_unknown_contract_falls_back_to_transfer(self):
        subject = addr(1)
        op, note = classify_event(
            ev(addr(7), subject, 10, kind=EventKind.INTERNAL_TX), subject, {}
        )
        assert op == OperationKind.RECEIVE
        assert note and note.startswith("unknown_contract")

    def test_cex_counts_as_trading(self):
        cex = contract(addr(8), "cex hot wallet", ContractCategory.CEX)
        subject = addr(1)
        op, _ = classify_event(ev(subject, cex.address, 10), subject, {cex.address: cex})
        assert op == OperationKind.SELL


class TestBuildFlow:
    def test_claim_then_sell(self, airdrop_contract, router_contract):
        member = addr(1)
        amount = Tier.T5200.amount
        events = [
            ev(airdrop_contract.address, member, amount, ts=T),
            ev(member, router_contract.address, amount, ts=T + 3600),
        ]
        store = make_store(
            events,
            contracts=[airdrop_contract, router_contract],
            claims=[claim(member, ts=T)],
        )
        flow = build_flow(member, store)
        assert [e.op for e in flow.events] == [OperationKind.RECEIVE, OperationKind.SELL]
        assert [e.balance_after for e in flow.events] == [amount, 0]
        assert flow.events[0].is_claim
        assert flow.balance == 0

    def test_stake_tracks_position(self, airdrop_contract, staking_contract):
        member = addr(1)
        amount = Tier.T7800.amount
        events = [
            ev(airdrop_contract.address, member, amount, ts=T),
            ev(member, staking_contract.address, amount, ts=T + 3600),
        ]
        store = make_store(
            events,
            contracts=[airdrop_contract, staking_contract],
            claims=[claim(member, Tier.T7800, ts=T)],
        )
        flow = build_flow(member, store)
        assert flow.balance == 0
        assert flow.staked == amount

    def test_sell_before_receive_excluded_and_logged(self, router_contract):
        member = addr(1)
        events = [ev(member, router_contract.address, 99, ts=T)]
        store = make_store(events, contracts=[router_contract])
        flow = build_flow(member, store)
        assert flow.events == []
        assert len(flow.excluded) == 1
        assert flow.excluded[0][0] == T and "negative balance" in flow.excluded[0][1]

    def test_unstake_beyond_position_excluded(self, airdrop_contract, staking_contract):
        member = addr(1)
        events = [
            ev(airdrop_contract.address, member, Tier.T5200.amount, ts=T),
            ev(staking_contract.address, member, 5, ts=T + 10),  # nothing staked yet
        ]
        store = make_store(
            events, contracts=[airdrop_contract, staking_contract],
            claims=[claim(member, ts=T)],
        )
        flow = build_flow(member, store)
        assert [e.op for e in flow.events] == [OperationKind.RECEIVE]
        assert flow.excluded


class TestFeatures:
    def test_claim_only_is_all_zero(self, airdrop_contract):
        member = addr(1)
        store = make_store(
            [ev(airdrop_contract.address, member, Tier.T5200.amount, ts=T)],
            contracts=[airdrop_contract],
            claims=[claim(member, ts=T)],
        )
        features = extract_features(build_flow(member, store))
        assert features.bits == (0,) * 8

    def test_post_claim_receive_sets_bit(self, airdrop_contract):
        member = addr(1)
        store = make_store(
            [
                ev(airdrop_contract.address, member, Tier.T5200.amount, ts=T),
                ev(addr(2), member, 5, ts=T + 10),
            ],
            contracts=[airdrop_contract],
            claims=[claim(member, ts=T)],
        )
        features = extract_features(build_flow(member, store))
        assert features.op_set() == {OperationKind.RECEIVE}

    def test_claim_stake_sell_bits(self, airdrop_contract, staking_contract, router_contract):
        member = addr(1)
        amount = Tier.T10400.amount
        store = make_store(
            [
                ev(airdrop_contract.address, member, amount, ts=T),
                ev(member, staking_contract.address, amount // 2, ts=T + 10),
                ev(member, router_contract.address, amount // 2, ts=T + 20),
            ],
            contracts=[airdrop_contract, staking_contract, router_contract],
            claims=[claim(member, Tier.T10400, ts=T)],
        )
        features = extract_features(build_flow(member, store))
        assert features.op_set() == {OperationKind.STAKE, OperationKind.SELL}

    def test_build_flows_covers_every_address(self, airdrop_contract):
        members = [addr(i) for i in range(1, 4)]
        events = [
            ev(airdrop_contract.address, m, Tier.T5200.amount, ts=T + i)
            for i, m in enumerate(members)
        ]
        store = make_store(events, contracts=[airdrop_contract],
                           claims=[claim(m, ts=T) for m in members])
        flows = build_flows(store, members)
        assert sorted(flows) == sorted(members)


class TestWeightedCosine:
    def test_identical_vectors_distance_zero(self):
        v = vec(OperationKind.SELL, OperationKind.STAKE)
        assert weighted_cosine_distance(v, v) == 0.0

    def test_disjoint_vectors_distance_one(self):
        a = vec(OperationKind.SELL)
        b = vec(OperationKind.STAKE)
        assert weighted_cosine_distance(a, b) == 1.0

    def test_sell_vs_sell_stake_uniform(self):
        a = vec(OperationKind.SELL)
        b = vec(OperationKind.SELL, OperationKind.STAKE)
        expected = 1.0 - 1.0 / math.sqrt(2.0)
        assert abs(weighted_cosine_distance(a, b) - expected) < 1e-12

    def test_zero_vector_conventions(self):
        zero = vec()
        assert weighted_cosine_distance(zero, zero) == 0.0
        assert weighted_cosine_distance(zero, vec(OperationKind.SELL)) == 1.0

    def test_weight_mismatch_raises(self):
        a = vec(OperationKind.SELL)
        b = vec(OperationKind.SELL, weights=(2.0,) * 8)
        with pytest.raises(WeightMismatchError):
            weighted_cosine_distance(a, b)

    def test_symmetric_and_bounded(self):
        rng = random.Random(31)
        for _ in range(200):
            bits_a = tuple(rng.randint(0, 1) for _ in range(8))
            bits_b = tuple(rng.randint(0, 1) for _ in range(8))
            w = tuple(rng.uniform(0.1, 5.0) for _ in range(8))
            a, b = FeatureVector(bits_a, w), FeatureVector(bits_b, w)
            d_ab = weighted_cosine_distance(a, b)
            assert d_ab == weighted_cosine_distance(b, a)
            assert 0.0 <= d_ab <= 1.0

    def test_global_weight_scaling_invariance(self):
        rng = random.Random(37)
        for _ in range(100):
            w = tuple(rng.uniform(0.1, 4.0) for _ in range(8))
            scale = rng.uniform(0.01, 100.0)
            scaled = tuple(scale * x for x in w)
            bits_a = tuple(rng.randint(0, 1) for _ in range(8))
            bits_b = tuple(rng.randint(0, 1) for _ in range(8))
            base = weighted_cosine_distance(FeatureVector(bits_a, w), FeatureVector(bits_b, w))
            moved = weighted_cosine_distance(
                FeatureVector(bits_a, scaled), FeatureVector(bits_b, scaled)
            )
            assert abs(base - moved) < 1e-12


def test_feature_matrix_export(tmp_path):
    entries = [(addr(1), vec(OperationKind.SELL)), (addr(2), vec())]
    path = tmp_path / "features.csv"
    write_feature_matrix(entries, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "address,buy,sell,lp_add,lp_remove,stake,unstake,send,receive"
    assert lines[1].startswith(addr(1)) and ",1," in lines[1]
