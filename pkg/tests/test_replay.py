import copy

import pytest

from dposforensics.model import compute_vote_index, compute_vote_weight
from dposforensics.replay import ReplayError, replay, replay_with_snapshots

from conftest import T0, DAY, TraceBuilder, random_trace
from oracles import recompute_candidate_weights

EOS = 10_000  # base units per token


def weights_close(a, b, rel=1e-9):
    keys = set(a) | set(b)
    for k in keys:
        va, vb = a.get(k, 0.0), b.get(k, 0.0)
        if va == vb == 0:
            continue
        assert abs(va - vb) <= rel * max(abs(va), abs(vb)), (k, va, vb)


def base_trace():
    return (TraceBuilder()
            .newaccount("genesis", "alice").newaccount("genesis", "bob")
            .newaccount("genesis", "carol").newaccount("genesis", "dave")
            .newaccount("genesis", "proxyone")
            .regproducer("bp.a").regproducer("bp.b").regproducer("bp.c")
            .delegate("alice", 100 * EOS).delegate("bob", 50 * EOS)
            .delegate("carol", 10 * EOS).delegate("dave", 20 * EOS)
            .regproxy("proxyone"))


class TestApply:
    def test_equal_weight_to_each_candidate(self):
        b = base_trace()
        b.vote("alice", ["bp.a", "bp.b"], ts=T0 + 100)
        state, rejected = replay(b.build())
        assert not rejected
        w = compute_vote_weight(100 * EOS, compute_vote_index(T0 + 100))
        assert state.candidates["bp.a"] == pytest.approx(w)
        assert state.candidates["bp.b"] == pytest.approx(w)
        assert state.candidates["bp.c"] == 0.0

    def test_revote_conserves(self):
        b = base_trace()
        b.vote("alice", ["bp.a"], ts=T0 + 100)
        state1, _ = replay(b.build())
        before_a = state1.candidates["bp.a"]
        b.vote("alice", ["bp.b"], ts=T0 + 200)
        state2, _ = replay(b.build())
        assert state2.candidates["bp.a"] == 0.0
        # same weekly index bucket, so the moved weight is identical
        assert state2.candidates["bp.b"] == pytest.approx(before_a)

    def test_proxy_pool_includes_late_vote(self):
        b = base_trace()
        b.vote("proxyone", ["bp.a"], ts=T0 + 100)
        b.vote_proxy("carol", "proxyone", ts=T0 + 200)
        b.vote("proxyone", ["bp.a", "bp.b"], ts=T0 + 300)
        state, rejected = replay(b.build())
        assert not rejected
        oracle = recompute_candidate_weights(state)
        weights_close(state.candidates, oracle)
        # bp.a and bp.b both carry the pooled weight including carol
        assert state.candidates["bp.a"] == pytest.approx(state.candidates["bp.b"])
        index = compute_vote_index(T0 + 300)
        assert state.candidates["bp.b"] == pytest.approx(
            compute_vote_weight(10 * EOS, index) + compute_vote_weight(0, index))

    def test_undelegate_below_zero_rejected(self):
        b = base_trace()
        b.undelegate("carol", 999 * EOS)
        state, rejected = replay(b.build())
        assert len(rejected) == 1
        assert "exceeds" in rejected[0].reason
        assert state.accounts["carol"].stake == 10 * EOS

    def test_vote_for_unregistered_candidate_rejected(self):
        b = base_trace()
        b.vote("alice", ["nobody"])
        state, rejected = replay(b.build())
        assert len(rejected) == 1
        assert "unregistered" in rejected[0].reason
        assert state.accounts["alice"].votes == ()

    def test_delegate_to_non_proxy_rejected(self):
        b = base_trace()
        b.vote_proxy("alice", "bob")
        _, rejected = replay(b.build())
        assert len(rejected) == 1
        assert "not a registered proxy" in rejected[0].reason

    def test_stake_change_updates_proxy_pool(self):
        b = base_trace()
        b.vote("proxyone", ["bp.a"], ts=T0 + 100)
        b.vote_proxy("carol", "proxyone", ts=T0 + 200)
        b.delegate("carol", 90 * EOS, ts=T0 + 300)
        state, _ = replay(b.build())
        weights_close(state.candidates, recompute_candidate_weights(state))
        index = compute_vote_index(T0 + 100)
        assert state.candidates["bp.a"] == pytest.approx(
            compute_vote_weight(100 * EOS, index))

    def test_proxy_deregistration_suspends_pool(self):
        b = base_trace()
        b.vote("proxyone", ["bp.a"], ts=T0 + 100)
        b.vote_proxy("carol", "proxyone", ts=T0 + 200)
        b.regproxy("proxyone", False, ts=T0 + 300)
        state, _ = replay(b.build())
        assert state.candidates["bp.a"] == 0.0
        assert state.log  # deregistration with delegators is logged
        weights_close(state.candidates, recompute_candidate_weights(state))


class TestReplay:
    def test_empty_trace(self):
        state, rejected = replay([])
        assert state.accounts == {} and not rejected

    def test_unsorted_trace_fatal(self):
        b = base_trace()
        actions = b.build()
        actions.reverse()
        with pytest.raises(ReplayError, match="not sorted"):
            replay(actions)

    def test_rejections_are_noops(self):
        b = base_trace()
        b.vote("alice", ["bp.a"])
        clean = replay(b.build())[0].canonical_json()
        b2 = base_trace()
        b2.vote("alice", ["bp.a"])
        b2.undelegate("bob", 10_000 * EOS)  # rejected
        with_reject = replay(b2.build())[0].canonical_json()
        assert clean == with_reject

    def test_determinism_on_random_trace(self):
        trace = random_trace(99, n_actions=1000)
        s1, r1 = replay(trace)
        s2, r2 = replay(trace)
        assert s1.canonical_json() == s2.canonical_json()
        assert len(r1) == len(r2)

    @pytest.mark.parametrize("seed", range(12))
    def test_conservation_random_traces(self, seed):
        state, _ = replay(random_trace(seed, n_actions=400))
        weights_close(state.candidates, recompute_candidate_weights(state))

    def test_idempotent_revote(self):
        b = base_trace()
        b.vote("alice", ["bp.a", "bp.b"], ts=T0 + 100)
        once = replay(b.build())[0].candidates
        b.vote("alice", ["bp.a", "bp.b"], ts=T0 + 100)
        twice = replay(b.build())[0].candidates
        assert once == twice

    def test_proxy_withdrawal_symmetry(self):
        b = base_trace()
        b.vote("alice", ["bp.a"], ts=T0 + 100)
        b.vote("proxyone", ["bp.b"], ts=T0 + 150)
        before = copy.deepcopy(replay(b.build())[0].candidates)
        b.vote_proxy("carol", "proxyone", ts=T0 + 200)
        b.vote("carol", [], ts=T0 + 300)  # withdraw: back to direct empty vote
        after = replay(b.build())[0].candidates
        weights_close(before, after)


class TestSnapshotsAndTop:
    def test_snapshot_direct_voter(self):
        b = base_trace()
        b.vote("alice", ["bp.a", "bp.c"], ts=T0 + 100)
        state, _ = replay(b.build())
        snap = state.snapshot(T0 + 500)
        assert snap.per_voter["alice"].effective == {"bp.a", "bp.c"}

    def test_snapshot_resolves_proxy(self):
        b = base_trace()
        b.vote("proxyone", ["bp.a", "bp.b", "bp.c"], ts=T0 + 100)
        b.vote_proxy("carol", "proxyone", ts=T0 + 200)
        state, _ = replay(b.build())
        snap = state.snapshot(T0 + 500)
        assert snap.per_voter["carol"].effective == {"bp.a", "bp.b", "bp.c"}
        assert snap.per_voter["carol"].via_proxy

    def test_proxied_stake_sums(self):
        b = base_trace()
        b.vote("proxyone", ["bp.a"], ts=T0 + 100)
        b.vote_proxy("carol", "proxyone", ts=T0 + 200)
        b.vote_proxy("dave", "proxyone", ts=T0 + 300)
        state, _ = replay(b.build())
        snap = state.snapshot(T0 + 400)
        assert snap.per_voter["proxyone"].proxied_stake == 30 * EOS

    def test_top_producers_order_and_ties(self):
        b = base_trace()
        b.vote("alice", ["bp.b"], ts=T0 + 100)   # 100 EOS
        b.vote("bob", ["bp.a"], ts=T0 + 100)     # 50 EOS
        state, _ = replay(b.build())
        assert state.top_producers(21) == ["bp.b", "bp.a", "bp.c"]
        # tie between zero-weight candidates resolves by name
        assert state.top_producers(3)[-1] == "bp.c"

    def test_top_n_truncates_to_largest(self):
        b = TraceBuilder()
        for i in range(25):
            name = f"bp{chr(97 + i)}"
            b.regproducer(name)
            b.newaccount("genesis", f"v{chr(97 + i)}")
            b.delegate(f"v{chr(97 + i)}", (i + 1) * EOS)
            b.vote(f"v{chr(97 + i)}", [name])
        state, rejected = replay(b.build())
        assert not rejected
        top = state.top_producers(21)
        full = sorted(state.candidates.items(), key=lambda kv: (-kv[1], kv[0]))
        assert top == [name for name, _ in full[:21]]

    def test_snapshot_series_monotone(self):
        trace = random_trace(5, n_actions=300)
        times = [trace[0].timestamp + i * 5 * DAY for i in range(6)]
        _, _, snaps = replay_with_snapshots(trace, times)
        assert len(snaps) == 6
        seen: set = set()
        created_by_time = {}
        for snap in snaps:
            for name in snap.per_voter:
                created_by_time.setdefault(name, snap.taken_at)
        # accounts never disappear from later snapshots once voting
        for a, b in zip(snaps, snaps[1:]):
            assert a.taken_at < b.taken_at
