import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finesched.oracle import (
    Assignment,
    IlpInstance,
    IlpQuery,
    InstanceTooLarge,
    Schedule,
    check_lemma1,
    check_schedule,
    load_instance,
    observation_b_instance,
    observation_c_instance,
    policy_schedule,
    policy_vs_oracle,
    random_instance,
    random_mixed_catalog,
    save_instance,
    solve_exact,
    utility,
)
from finesched.policy import PolicyKind
from finesched.profile import SubnetRecord

POLICIES = [PolicyKind("slackfit"), PolicyKind("maxbatch"), PolicyKind("maxacc"), PolicyKind("minacc")]


def brute_force(inst):
    """Enumerate every grouping of a subset of queries, every start, worker and subnet."""
    n = len(inst.queries)
    sizes = inst.batch_sizes
    best = 0.0

    def lat(s, k):
        return s.latency_profile[min(b for b in sizes if b >= k)]

    def groupings(items):
        if not items:
            yield []
            return
        first, rest = items[0], items[1:]
        for g in groupings(rest):
            yield g  # first unserved
            yield [[first]] + g
            for i in range(len(g)):
                yield g[:i] + [[first] + g[i]] + g[i + 1 :]

    for groups in groupings(list(range(n))):
        if any(len(g) > max(sizes) for g in groups):
            continue
        options = []
        for g in groups:
            opts = []
            a = max(inst.queries[q].arrival for q in g)
            d = min(inst.queries[q].deadline for q in g)
            for s in inst.subnets:
                l = lat(s, len(g))
                for t in range(a, inst.horizon):
                    if t + l <= d and t + l <= inst.horizon:
                        for w in range(inst.workers):
                            opts.append((w, t, t + l, s.accuracy * len(g)))
            if not opts:
                break
            options.append(opts)
        else:
            for combo in itertools.product(*options):
                ok = True
                for (w1, s1, e1, _), (w2, s2, e2, _) in itertools.combinations(combo, 2):
                    if w1 == w2 and s1 < e2 and s2 < e1:
                        ok = False
                        break
                if ok:
                    value = sum(c[3] for c in combo)
                    best = max(best, value)
    return best


def tiny_instance(seed):
    rng = np.random.default_rng(seed)
    n_sub = int(rng.integers(1, 3))
    accs = np.sort(rng.choice(np.arange(60, 90), n_sub, replace=False)) / 100
    subs, prev = [], (0, 0)
    for i, acc in enumerate(accs):
        l1 = prev[0] + 1 + int(rng.integers(0, 2))
        l2 = max(l1 + 1, prev[1] + 1) + int(rng.integers(0, 2))
        subs.append(SubnetRecord(f"s{i}", float(acc), {1: l1, 2: l2}))
        prev = (l1, l2)
    horizon = 6
    nq = int(rng.integers(1, 4))
    arr = np.sort(rng.integers(0, horizon - 1, nq)).tolist()
    qs = [IlpQuery(a, min(horizon, a + int(rng.integers(1, 5)))) for a in arr]
    return IlpInstance(tuple(qs), tuple(subs), workers=int(rng.integers(1, 3)), horizon=horizon)


# -- examples -----------------------------------------------------------------


def test_two_queries_served_together_by_the_better_subnet():
    a = SubnetRecord("A", 0.7, {1: 1, 2: 2})
    b = SubnetRecord("B", 0.8, {1: 2, 2: 3})
    inst = IlpInstance((IlpQuery(0, 3), IlpQuery(0, 3)), (a, b), workers=1, horizon=12)
    sol = solve_exact(inst)
    assert sol.objective == pytest.approx(1.6)
    assert [(x.members, x.subnet_id) for x in sol.assignments] == [((0, 1), "B")]
    assert brute_force(inst) == pytest.approx(1.6)


def test_no_queries():
    inst = IlpInstance((), (SubnetRecord("A", 0.7, {1: 1}),))
    assert solve_exact(inst) == Schedule((), 0.0)


def test_infeasible_query():
    inst = IlpInstance((IlpQuery(0, 1),), (SubnetRecord("A", 0.7, {1: 2}),))
    sol = solve_exact(inst)
    assert sol.assignments == () and sol.objective == 0.0


def test_high_load_prefers_low_accuracy_big_batch():
    inst = observation_b_instance()
    sol = solve_exact(inst)
    assert [(len(a.members), a.subnet_id) for a in sol.assignments] == [(4, "low")]
    assert sol.objective == pytest.approx(2.8)
    assert brute_force(inst) == pytest.approx(2.8)
    pol = policy_schedule(inst, PolicyKind("slackfit"))
    assert [(len(a.members), a.subnet_id) for a in pol.assignments] == [(4, "low")]


def test_low_load_splits_batches():
    inst = observation_c_instance()
    sol = solve_exact(inst)
    got = sorted((len(a.members), a.subnet_id) for a in sol.assignments)
    assert got == [(1, "low"), (2, "high")]
    assert sol.objective == pytest.approx(2.3)
    # a single mid-accuracy batch of three is worse
    assert sol.objective > 3 * 0.75
    assert brute_force(inst) == pytest.approx(2.3)


def test_utility_examples():
    s = SubnetRecord("x", 0.8, {4: 10})
    assert utility(s, 4, 12) == pytest.approx(3.2)
    assert utility(s, 4, 10) == 0.0
    assert utility(s, 4, 13, start_time=3) == 0.0
    assert utility(s, 4, 14, start_time=3) == pytest.approx(3.2)


@given(acc=st.floats(0.01, 1.0), b=st.sampled_from([1, 2, 4, 8]), l=st.integers(1, 10**6),
       extra=st.integers(1, 10**6))
def test_utility_feasible_is_acc_times_size(acc, b, l, extra):
    s = SubnetRecord("x", acc, {b: l})
    assert utility(s, b, l + extra) == acc * b


def test_lemma_examples():
    p = SubnetRecord("p", 0.80, {2: 10})
    q = SubnetRecord("q", 0.75, {2: 10})
    assert utility(p, 2, 12) == pytest.approx(1.6) and utility(q, 2, 12) == pytest.approx(1.5)
    assert utility(p, 2, 5) == utility(q, 2, 5) == 0.0


def test_lemma_random_catalogs():
    rng = np.random.default_rng(7)
    res = check_lemma1(random_mixed_catalog(rng), 1000, 500)
    assert res["trials"] == 1000
    assert res["violations"] == 0 and res["passed"]
    assert res["strict"] > 0


def test_lemma_checker_catches_a_bad_utility(monkeypatch):
    import finesched.oracle as oracle

    monkeypatch.setattr(oracle, "utility", lambda s, b, d, t=0: -s.accuracy * b if s.latency(b) < d else 0.0)
    res = check_lemma1(random_mixed_catalog(np.random.default_rng(7)), 200, 500)
    assert res["violations"] > 0 and res["counterexample"] is not None


# -- solver against brute force and the checker ------------------------------------


@pytest.mark.parametrize("seed", range(40))
def test_solver_matches_brute_force(seed):
    inst = tiny_instance(seed)
    sol = solve_exact(inst)
    assert check_schedule(inst, sol) == []
    assert sol.objective == pytest.approx(brute_force(inst))


def test_checker_flags_bad_schedules():
    inst = observation_b_instance()
    bad = [
        Schedule((Assignment((0, 1, 2, 3), 0, 0, "high"),), 3.2),  # ends at 12 > deadline 10
        Schedule((Assignment((0,), 0, 0, "low"), Assignment((0,), 5, 0, "low")), 1.4),  # twice
        Schedule((Assignment((0,), 0, 0, "low"), Assignment((1,), 2, 0, "low")), 1.4),  # overlap
        Schedule((Assignment((0,), 0, 3, "low"),), 0.7),  # no such worker
        Schedule((Assignment((0,), 0, 0, "low"),), 0.9),  # wrong objective
    ]
    for s in bad:
        assert check_schedule(inst, s), s
    late = IlpInstance((IlpQuery(3, 10),), observation_b_instance().subnets)
    assert check_schedule(late, Schedule((Assignment((0,), 1, 0, "low"),), 0.7))


@pytest.mark.parametrize("seed", range(100))
def test_random_instances_policies_never_beat_oracle(seed):
    inst = random_instance(seed)
    opt = solve_exact(inst)
    assert check_schedule(inst, opt) == []
    for kind in POLICIES:
        res = policy_vs_oracle(inst, kind)
        assert res["policy_objective"] <= res["oracle_objective"] + 1e-9


def test_single_query_slackfit_matches_oracle():
    subs = (SubnetRecord("lo", 0.7, {1: 1, 2: 2}), SubnetRecord("hi", 0.9, {1: 2, 2: 3}))
    inst = IlpInstance((IlpQuery(0, 8),), subs)
    res = policy_vs_oracle(inst, PolicyKind("slackfit"))
    assert res["policy_objective"] == res["oracle_objective"] == pytest.approx(0.9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_dropping_a_dominated_subnet_keeps_the_optimum(seed):
    inst = random_instance(seed)
    if len(inst.subnets) == 3:
        inst = IlpInstance(inst.queries, inst.subnets[:2], inst.workers, inst.horizon)
    top = inst.subnets[-1]
    worse = SubnetRecord("dom", top.accuracy - 0.01,
                         {b: l + 1 for b, l in top.latency_profile.items()})
    wider = IlpInstance(inst.queries, inst.subnets + (worse,), inst.workers, inst.horizon)
    assert solve_exact(wider).objective == pytest.approx(solve_exact(inst).objective)


# -- instance plumbing ------------------------------------------------------------


def test_instance_roundtrip(tmp_path):
    inst = random_instance(3)
    p = tmp_path / "inst.json"
    save_instance(inst, p)
    assert load_instance(p) == inst


def test_microsecond_latencies_round_up(tmp_path):
    doc = {
        "slot_us": 1000,
        "queries": [{"arrival": 0, "deadline": 3}],
        "subnets": [{"id": "a", "accuracy": 0.7, "latency_us": {"1": 1001}}],
    }
    p = tmp_path / "i.json"
    p.write_text(json.dumps(doc))
    assert load_instance(p).subnets[0].latency(1) == 2


def test_size_caps():
    sub = (SubnetRecord("a", 0.7, {1: 1}),)
    with pytest.raises(InstanceTooLarge):
        IlpInstance(tuple(IlpQuery(0, 2) for _ in range(9)), sub)
    with pytest.raises(InstanceTooLarge):
        IlpInstance((IlpQuery(0, 2),), sub, workers=3)
    with pytest.raises(InstanceTooLarge):
        IlpInstance((IlpQuery(0, 2),), (SubnetRecord("a", 0.7, {8: 1}),))
    with pytest.raises(InstanceTooLarge):
        IlpInstance((IlpQuery(0, 2),), sub, horizon=13)
    with pytest.raises(ValueError):
        IlpInstance((IlpQuery(2, 2),), sub)
