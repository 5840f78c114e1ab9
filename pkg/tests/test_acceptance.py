"""End-to-end acceptance checks.  Each test records one PASS/FAIL line."""
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from finesched.oracle import (
    check_lemma1,
    check_schedule,
    observation_b_instance,
    observation_c_instance,
    policy_schedule,
    policy_vs_oracle,
    random_instance,
    random_mixed_catalog,
    solve_exact,
)
from finesched.policy import PolicyKind, parse_policy
from finesched.profile import default_catalog
from finesched.serve import serve
from finesched.simcore import SimConfig, run, sustainable_qps
from finesched.tracegen import TraceSpec, expected_count, generate, variant_arrivals

CAT = default_catalog()
SLACKFIT = PolicyKind("slackfit")


def cli(*args):
    return subprocess.run([sys.executable, "-m", "finesched.cli", *args], check=True,
                          capture_output=True)


def dominated(p, q):
    """True when point q is at least as good as p on both axes and better on one."""
    return q[0] >= p[0] and q[1] >= p[1] and (q[0] > p[0] or q[1] > p[1])


def test_c01_determinism(tmp_path, criterion):
    t0 = time.perf_counter()
    traces, reports = [], []
    for k in range(3):
        tr, rep = tmp_path / f"t{k}.jsonl", tmp_path / f"r{k}.json"
        cli("gen-trace", "--kind", "bursty", "--lambda-b", "1500", "--lambda-v", "2950", "--cv2", "4",
            "--duration", "10", "--seed", "11", "--out", str(tr))
        cli("simulate", "--trace", str(tr), "--policy", "slackfit", "--workers", "8",
            "--fault", "5s:w0", "--out", str(rep))
        traces.append(tr.read_bytes())
        reports.append(rep.read_bytes())
    elapsed = time.perf_counter() - t0
    ok = len(set(traces)) == 1 and len(set(reports)) == 1 and elapsed < 10
    criterion(1, "determinism", ok, f"3 identical traces and reports in {elapsed:.1f}s")
    assert ok


def test_c02_trace_statistics(criterion):
    details, ok = [], True
    for cv2 in (2, 4, 8):
        spec = TraceSpec("bursty", duration=100_000 / 4900 + 2, seed=21, cv2=cv2, lambda_b=1500,
                         lambda_v=4900)
        gaps = np.diff(variant_arrivals(spec))[:100_000].astype(np.float64)
        emp = float(np.var(gaps) / np.mean(gaps) ** 2)
        count = len(generate(spec))
        target = expected_count(spec)
        good = len(gaps) == 100_000 and abs(emp / cv2 - 1) <= 0.10 and abs(count / target - 1) <= 0.05
        ok &= good
        details.append(f"cv2 {cv2}: {emp:.2f}, count {count}/{target:.0f}")
    criterion(2, "trace statistics", ok, "; ".join(details))
    assert ok


def test_c03_oracle(criterion):
    t0 = time.perf_counter()
    bad_sched = violations = 0
    ratios = []
    kinds = [SLACKFIT, PolicyKind("maxbatch"), PolicyKind("maxacc"), PolicyKind("minacc")]
    for seed in range(100):
        inst = random_instance(seed)
        opt = solve_exact(inst)
        bad_sched += bool(check_schedule(inst, opt))
        for kind in kinds:
            try:
                res = policy_vs_oracle(inst, kind)
            except AssertionError:
                violations += 1
                continue
            if kind == SLACKFIT and res["oracle_objective"] > 0:
                ratios.append(res["policy_objective"] / res["oracle_objective"])
    elapsed = time.perf_counter() - t0
    ok = bad_sched == 0 and violations == 0 and elapsed < 60
    criterion(3, "oracle feasibility/optimality", ok,
              f"{bad_sched} bad schedules, {violations} violations, "
              f"mean SlackFit/oracle {np.mean(ratios):.3f}, {elapsed:.1f}s")
    assert ok


def test_c04_lemma(criterion):
    res = check_lemma1(random_mixed_catalog(np.random.default_rng(2024)), 1000, 500)
    ok = res["trials"] == 1000 and res["violations"] == 0
    criterion(4, "pareto utility lemma", ok,
              f"{res['trials']} trials, {res['violations']} violations, {res['strict']} strict")
    assert ok


def test_c05_observations(criterion):
    b = solve_exact(observation_b_instance())
    c = solve_exact(observation_c_instance())
    sf = policy_schedule(observation_b_instance(), SLACKFIT)
    shape_b = [(len(a.members), a.subnet_id) for a in b.assignments]
    shape_c = sorted((len(a.members), a.subnet_id) for a in c.assignments)
    shape_sf = [(len(a.members), a.subnet_id) for a in sf.assignments]
    ok = shape_b == [(4, "low")] and shape_c == [(1, "low"), (2, "high")] and shape_sf == [(4, "low")]
    criterion(5, "high/low load optima", ok, f"high {shape_b}, low {shape_c}, SlackFit high {shape_sf}")
    assert ok


def test_c06_actuation_delay(criterion):
    two = CAT.subset(["s0", "s5"])
    pairs = []
    for seed in range(1, 6):
        tr = generate(TraceSpec("bursty", duration=20, seed=seed, cv2=4, lambda_b=500, lambda_v=1500))
        fine = run(tr, SimConfig(two, SLACKFIT, 4, 0)).slo_attainment
        coarse = run(tr, SimConfig(two, SLACKFIT, 4, 100_000)).slo_attainment
        pairs.append((fine, coarse))
    ok = all(f == 1.0 and c < 1.0 for f, c in pairs)
    criterion(6, "actuation delay", ok, ", ".join(f"{f:.3f}/{c:.3f}" for f, c in pairs))
    assert ok


def test_c07_policy_continuum(criterion):
    t0 = time.perf_counter()
    lam = 0.85 * sustainable_qps(CAT, "s0", 8)
    ok, details = True, []
    for cv2 in (2, 4, 8):
        tr = generate(TraceSpec("bursty", duration=30, seed=3, cv2=cv2, lambda_b=1500, lambda_v=lam - 1500))
        pts = {}
        for name in ("slackfit", "maxacc", "maxbatch"):
            r = run(tr, SimConfig(CAT, parse_policy(name), 8))
            pts[name] = (r.slo_attainment, r.mean_serving_accuracy or 0.0)
        beaten = [n for n in ("maxacc", "maxbatch") if dominated(pts["slackfit"], pts[n])]
        ok &= not beaten
        if cv2 == 8:
            ok &= pts["maxacc"][0] < pts["slackfit"][0]
        details.append(f"cv2 {cv2} " + " ".join(f"{n}=({a:.4f},{m:.3f})" for n, (a, m) in pts.items())
                       + (f" dominated by {beaten}" if beaten else ""))
    ok &= time.perf_counter() - t0 < 120
    criterion(7, "policy continuum", ok, "; ".join(details))
    assert ok


def test_c08_fixed_inadequacy(criterion):
    fixed = [f"fixed:{s.id}" for s in CAT]
    cells_ok, witness = True, None
    lows = []
    for lam_v in (2950, 4900, 5550):
        for cv2 in (2, 4, 8):
            tr = generate(TraceSpec("bursty", duration=30, seed=5, cv2=cv2, lambda_b=1500, lambda_v=lam_v))
            sf = run(tr, SimConfig(CAT, SLACKFIT, 8))
            if sf.slo_attainment < 0.999:
                cells_ok = False
                lows.append((lam_v, cv2, sf.slo_attainment))
                continue
            beaten = True
            for f in fixed:
                r = run(tr, SimConfig(CAT, parse_policy(f), 8))
                acc = r.mean_serving_accuracy or 0.0
                if not (r.divergence or acc < sf.mean_serving_accuracy):
                    beaten = False
                    break
            if beaten and witness is None:
                witness = (1500 + lam_v, cv2)
    spikes = generate(TraceSpec("spikes", duration=120, seed=1, cv2=1, lambda_b=4000, spike_height=8750))
    sf = run(spikes, SimConfig(CAT, SLACKFIT, 8))
    mn = run(spikes, SimConfig(CAT, PolicyKind("minacc"), 8))
    gap = sf.mean_serving_accuracy - mn.mean_serving_accuracy
    spikes_ok = sf.slo_attainment >= 0.999 and mn.slo_attainment >= 0.999 and gap >= 2.0
    ok = cells_ok and witness is not None and spikes_ok
    criterion(8, "fixed-model inadequacy", ok,
              f"witness cell {witness}, low cells {lows}, spikes SlackFit {sf.mean_serving_accuracy:.2f}"
              f" vs MinAcc {mn.mean_serving_accuracy:.2f} (gap {gap:.2f})")
    assert ok


def test_c09_fault_tolerance(criterion):
    lam = 0.45 * sustainable_qps(CAT, "s0", 8)
    tr = generate(TraceSpec("bursty", duration=60, seed=1, cv2=2, lambda_v=lam))
    faults = tuple((12_000_000 * (k + 1), k) for k in range(4))
    sf = run(tr, SimConfig(CAT, SLACKFIT, 8, fault_schedule=faults))
    first = sf.window(0, 15_000_000)["mean_serving_accuracy"]
    last = sf.window(45_000_000, 60_000_000)["mean_serving_accuracy"]
    hi = run(tr, SimConfig(CAT, PolicyKind("fixed", "s5"), 8, fault_schedule=faults))
    ok = sf.slo_attainment >= 0.99 and last is not None and last < first and hi.divergence
    criterion(9, "fault tolerance", ok,
              f"SlackFit attainment {sf.slo_attainment:.4f}, accuracy first/last quarter "
              f"{first:.3f}/{last:.3f}, fixed highest diverges {hi.divergence}")
    assert ok


def test_c10_throughput_range(criterion):
    ranked = CAT.by_accuracy()
    ratio = sustainable_qps(CAT, ranked[0].id, 8) / sustainable_qps(CAT, ranked[-1].id, 8)
    spread = ranked[-1].accuracy - ranked[0].accuracy
    ok = ratio >= 3 and spread <= 6.4
    criterion(10, "throughput range", ok, f"ratio {ratio:.2f}, spread {spread:.2f}")
    assert ok


def test_c11_simulator_speed(criterion):
    spec = TraceSpec("bursty", duration=1_000_000 / 7050 + 1, seed=1, cv2=8, lambda_b=1500, lambda_v=5550)
    tr = generate(spec)
    t0 = time.perf_counter()
    run(tr, SimConfig(CAT, SLACKFIT, 8))
    elapsed = time.perf_counter() - t0
    ok = len(tr) >= 1_000_000 and elapsed < 60
    criterion(11, "simulator speed", ok, f"{len(tr)} queries in {elapsed:.2f}s")
    assert ok


def _live_vs_sim(seed):
    tr = generate(TraceSpec("bursty", duration=60, seed=seed, cv2=1, lambda_v=200))
    cfg = SimConfig(CAT, SLACKFIT, 2)
    live, sim = serve(tr, cfg), run(tr, cfg)
    return (seed, live.valid, live.slo_attainment, sim.slo_attainment,
            live.mean_serving_accuracy, sim.mean_serving_accuracy, live.config["max_pacing_lag_us"])


def test_c12_live_matches_simulator(criterion):
    with ProcessPoolExecutor(max_workers=3) as pool:
        rows = list(pool.map(_live_vs_sim, (1, 2, 3)))
    ok = all(v and abs(la - sa) <= 0.02 and abs(lm - sm) <= 0.5 for _, v, la, sa, lm, sm, _ in rows)
    criterion(12, "live/sim agreement", ok,
              "; ".join(f"seed {s}: attain {la:.4f}/{sa:.4f} acc {lm:.3f}/{sm:.3f} "
                        f"valid {v} (max lag {lag / 1000:.1f} ms)"
                        for s, v, la, sa, lm, sm, lag in rows))
    assert ok
