"""End-to-end acceptance checks, one test per criterion.

Each test records a short detail string; the terminal summary prints one
pass/fail line per criterion.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from splitwire.channel import ChannelParams, epsilon_latency, optimal_rate, outage_prob, rate_grid, retransmissions
from splitwire.early_exit import LatencyBudget, early_exit, oracle_depth
from splitwire.errors import BudgetUnsatisfiable, Infeasible
from splitwire.payload import CompressedPayload, compress, decompress, row_scales
from splitwire.planner import plan
from splitwire.rans import rans_decode, rans_encode, stream_from_bytes
from splitwire.resources import ModelProfile, QuantScheme, io_bits, kv_cache_bits, opsc_memory, preset_profile, psi
from splitwire.split import merge, threshold_split
from splitwire.sweep import run_sweep
from splitwire.tabq import TabqConfig, literal_divergences, tabq_tensor
from splitwire.tensor import STATS_PRESETS, ActivationTensor, OutlierStats, synth_activations

from oracles import delta_at, outage_ref, plan_ref, random_exit_scenario, random_planner_instance, tabq_bits_ref
from test_planner import build


def bits_of(a):
    return np.asarray(a, dtype=np.float32).view(np.uint32)


def random_tensor(rng, rows, cols):
    kind = rng.integers(0, 4)
    if kind == 0:
        stats = OutlierStats(float(rng.uniform(2, 50)), float(10 ** rng.uniform(-5, -1)), float(rng.uniform(0.1, 3)))
        return synth_activations(rows, cols, stats, int(rng.integers(0, 2**31)))
    if kind == 1:
        data = rng.standard_normal((rows, cols)) * 10 ** rng.uniform(-3, 2)
    elif kind == 2:
        data = rng.standard_t(2, (rows, cols)) * 3
    else:
        data = rng.integers(-12, 13, (rows, cols)).astype(np.float64)
    data = data.astype(np.float32)
    # sprinkle exact zeros of both signs
    mask = rng.random(data.shape) < 0.02
    data[mask] = np.where(rng.random(int(mask.sum())) < 0.5, np.float32(0.0), np.float32(-0.0))
    return ActivationTensor(data)


def test_criterion_1(record_property):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    n_full = 20
    for i in range(1000):
        if i < n_full:
            rows, cols = 256, 4096
        else:
            rows = int(np.exp(rng.uniform(0, math.log(256))))
            cols = int(np.exp(rng.uniform(0, math.log(4096))))
        t = random_tensor(rng, rows, cols)
        tau = float(rng.choice([0.0, 1.0, 5.0, 10.0]))
        assert np.array_equal(bits_of(merge(threshold_split(t, tau)).data), bits_of(t.data))
        p = compress(t, tau, TabqConfig())
        back = decompress(CompressedPayload.from_bytes(p.to_bytes())).data
        above = (np.abs(t.data) >= tau) & (t.data != 0)
        assert np.array_equal(bits_of(back[above]), bits_of(t.data[above]))
        err = np.abs(back.astype(np.float64) - t.data.astype(np.float64))
        scales = row_scales(p)
        assert (np.where(above, 0.0, err) <= scales[:, None]).all()
    elapsed = time.perf_counter() - t0
    record_property("detail", f"1000 tensors, {n_full} at 256x4096, {elapsed:.1f}s")
    assert elapsed < 60


def test_criterion_2(record_property):
    rng = np.random.default_rng(202)
    rows_done = floor_hits = divergences = 0
    for batch in range(100):
        n = int(rng.integers(1, 200))
        kind = batch % 4
        if kind == 0:
            arr = rng.standard_normal((100, n))
        elif kind == 1:
            arr = rng.uniform(-1, 1, (100, n)) * 10 ** rng.uniform(-3, 3)
        elif kind == 2:
            arr = rng.standard_t(3, (100, n))
        else:
            arr = rng.integers(-3, 4, (100, n)).astype(np.float64)
        arr = arr.astype(np.float32)
        qmax = int(rng.integers(3, 9))
        qmin = 2 if rng.random() < 0.75 else int(rng.integers(2, qmax + 1))
        for delta in (0.0, 0.05, 0.2, 1.0):
            got = tabq_tensor(ActivationTensor(arr), TabqConfig(qmax, qmin, delta))
            lit = tabq_tensor(ActivationTensor(arr), TabqConfig(qmax, qmin, delta, literal_alg1=True))
            logged = literal_divergences(arr, TabqConfig(qmax, qmin, delta))
            assert logged.size == sum(g.bits != l.bits for g, l in zip(got, lit))
            for row, g, l in zip(arr, got, lit):
                if g.bits == qmin:
                    floor_hits += 1
                else:
                    assert delta_at(row, g.bits, qmax, qmin) <= delta
                assert l.bits == tabq_bits_ref(row, qmax, qmin, delta, literal=True)
                divergences += g.bits != l.bits
        rows_done += 100
    record_property("detail", f"{rows_done} rows x 4 tolerances, {floor_hits} floor hits, "
                              f"{divergences} literal-mode divergences")
    assert rows_done == 10_000


def test_criterion_3(record_property):
    rng = np.random.default_rng(303)
    n = 10**6
    ratios = []
    for sb in range(1, 9):
        hi = 1 << sb
        skew = np.where(rng.random(n) < 0.9, 0, rng.integers(1, hi, n) if hi > 2 else 1)
        for name, sym in (("constant", np.full(n, hi - 1)), ("uniform", rng.integers(0, hi, n)), ("skewed", skew)):
            sym = sym.astype(np.int64)
            s = rans_encode(sym, sb)
            assert np.array_equal(rans_decode(stream_from_bytes(s.to_bytes())), sym)
            if name == "skewed":
                r = s.nbytes / (n * sb / 8)
                ratios.append(r)
                assert r < 0.7, (sb, r)
    record_property("detail", f"24 streams of 1e6 symbols, skewed ratio max {max(ratios):.3f}")


def test_criterion_4(record_property):
    def prof(L, H, hd, P=1000):
        return ModelProfile(num_layers=L, heads=H, head_dim=hd, params_per_layer=[P] * L)

    # 2*(3*8)*8 + 2*(2*8)*8 + 8*8
    assert kv_cache_bits(3, 1, prof(2, 2, 4), QuantScheme(1, 8, 8, 8, 8)) == 704
    # 2*(2*2)*4 + 2*(1*2)*(4+8) + 2*4
    assert kv_cache_bits(2, 1, prof(3, 1, 2), QuantScheme(2, 16, 16, 4, 8)) == 88
    # 2*(1*4)*(8+8) + 4*8
    assert kv_cache_bits(1, 2, prof(2, 2, 2), QuantScheme(1, 8, 8, 8, 8)) == 160
    # 20*1000*4/8 + 12*1000*16/8
    assert opsc_memory(prof(32, 1, 1, 1000), QuantScheme(20, 4, 16, 4, 4)) == 34000
    # 5*32*16
    assert io_bits(5, 3, 0, prof(4, 4, 8), QuantScheme(2, 4, 4, 4, 16)) == 2560
    # 2*12*(2+2+16) + 2*9*16 + 3*16
    assert kv_cache_bits(4, 3, prof(4, 1, 3), QuantScheme(2, 4, 4, 2, 16)) == 816
    # 20*4 + 12*8
    assert psi(prof(32, 1, 1), QuantScheme(20, 4, 4, 4, 8)) == 176
    checked = 0
    for name in ("llama2-7b", "llama2-13b"):
        p = preset_profile(name)
        for s in (QuantScheme(1, 4, 16, 4, 16), QuantScheme(p.num_layers // 2, 4, 16, 16, 4)):
            for w in range(1, 257):
                for ell in range(1, p.num_layers + 1):
                    assert io_bits(w, ell, 1, p, s) >= io_bits(w, ell, 0, p, s)
                    checked += 1
    record_property("detail", f"7 hand fixtures, {checked} io_bits pairs")


def test_criterion_5(record_property):
    ch = ChannelParams(bandwidth_hz=1e6, snr=10.0, r_min=1e5, r_max=1e7)
    assert abs(outage_prob(1e6, ch) - (1 - math.exp(-0.1))) <= 1e-12
    assert retransmissions(1e-3, 1e-1) == 3
    rng = np.random.default_rng(505)
    for _ in range(100):
        bw = float(10 ** rng.uniform(5, 8))
        ch = ChannelParams(
            epsilon=float(10 ** rng.uniform(-6, -1)),
            bandwidth_hz=bw,
            snr=float(10 ** rng.uniform(-0.5, 2.5)),
            sigma_h2=float(rng.uniform(0.5, 2)),
            r_min=float(bw * rng.uniform(0.01, 0.5)),
            r_max=float(bw * rng.uniform(1, 12)),
        )
        r_star = optimal_rate(ch, "direct", points=10**4)
        best = epsilon_latency(1.0, r_star, ch)
        for r in rate_grid(ch, 10**4):
            if not 0 < outage_prob(float(r), ch) < 1:
                continue  # no finite latency at this rate
            assert best <= epsilon_latency(1.0, float(r), ch)
    record_property("detail", "100 draws on a 1e4-point grid")


def test_criterion_6(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(606)
    infeasible = 0
    for _ in range(200):
        inst = random_planner_instance(rng)
        prof, table, cons = build(inst)
        ref = plan_ref(inst["L"], inst["heads"] * inst["head_dim"], inst["params"], inst["wmenu"],
                       inst["amenu"], inst["entries"], table.floor, inst["cap"], inst["max_tokens"])
        if ref is None:
            with pytest.raises(Infeasible):
                plan(prof, table, cons)
            infeasible += 1
            continue
        got = plan(prof, table, cons)
        s = got.scheme
        assert ((s.split_layer, s.qw1, s.qw2, s.qa1, s.qa2), got.psi, got.memory_used) == ref
    elapsed = time.perf_counter() - t0
    record_property("detail", f"200 instances, {infeasible} infeasible, {elapsed:.1f}s")
    assert elapsed < 30


def test_criterion_7(record_property):
    rng = np.random.default_rng(707)
    gaps = []
    unsat = 0
    for _ in range(500):
        sc = random_exit_scenario(rng)
        budget = LatencyBudget(sc["deadline"])
        try:
            d = early_exit(sc["plan"], sc["max_tokens"], budget, sc["compute"], sc["channel"], sc["sizer"])
        except BudgetUnsatisfiable:
            unsat += 1
            continue
        ch = sc["channel"]
        po = outage_ref(d.rate, ch.bandwidth_hz, ch.snr, ch.sigma_h2)
        n = math.ceil(math.log(ch.epsilon) / math.log(po))
        lat = sc["compute"](d.tokens_sent) + d.payload_bits / d.rate * n
        assert lat <= sc["deadline"]
        od = oracle_depth(sc["max_tokens"], budget, sc["compute"], ch, sc["sizer"])[0]
        assert d.depth <= od
        gaps.append(od - d.depth)
    g = np.array(gaps)
    record_property(
        "detail",
        f"{len(g)} decisions, {unsat} unsatisfiable; oracle gap mean {g.mean():.2f}, "
        f"max {g.max()}, exact on {int((g == 0).sum())}",
    )


def test_criterion_8(record_property):
    t0 = time.perf_counter()
    rows = run_sweep()
    elapsed = time.perf_counter() - t0
    by = {(r.tau, r.qmax, r.w): r for r in rows}
    taus = sorted({r.tau for r in rows})
    qs = sorted({r.qmax for r in rows})
    ws = sorted({r.w for r in rows})
    assert len(taus) * len(qs) == 9
    for tau in taus:
        for q in qs:
            sizes = [by[tau, q, w].payload_bytes for w in ws]
            assert all(a < b for a, b in zip(sizes, sizes[1:]))
            for w in ws:
                if w >= 16:
                    assert by[tau, q, w].payload_bytes < by[tau, q, w].baseline_bytes
        for w in ws:
            sizes = [by[tau, q, w].payload_bytes for q in qs]
            assert all(a <= b for a, b in zip(sizes, sizes[1:]))
    for q in qs:
        for w in ws:
            assert by[1.0, q, w].above_share > by[5.0, q, w].above_share
            assert by[1.0, q, w].above_share > by[10.0, q, w].above_share
    record_property("detail", f"{len(rows)} rows in {elapsed:.1f}s")
    assert elapsed < 120


CLI_RUNS = [
    ["synth", "--rows", "8", "--cols", "256", "--seed", "9", "-o", "t.swt"],
    ["compress", "t.swt", "-o", "t.swp"],
    ["decompress", "t.swp", "-o", "b.swt", "--reference", "t.swt"],
    ["plan", "--mem-cap", "12GiB", "--max-tokens", "350", "--report", "r.csv", "-o", "p.json"],
    ["simulate", "sc.json", "-o", "s.json", "--csv", "s.csv"],
    ["sweep", "--w", "2", "16", "--tau", "1", "5", "--qmax", "2", "8", "--cols", "256", "-o", "w.csv"],
    ["report", "--payload", "t.swp", "--profile", "llama2-13b", "--ell", "3"],
]

SCENARIO = """{
  "plan": "p.json",
  "max_tokens": 64,
  "deadline_s": [0.05, 0.2, 1.0],
  "devices": 3,
  "compute_profile": {"a": 0.01, "b": 0.001},
  "size_source": "measured"
}
"""


def _cli_run(d):
    (d / "sc.json").write_text(SCENARIO)
    outputs = []
    for argv in CLI_RUNS:
        res = subprocess.run([sys.executable, "-m", "splitwire.cli", *argv], cwd=d, capture_output=True)
        assert res.returncode == 0, (argv, res.stderr.decode())
        outputs.append(res.stdout)
    files = {p.name: p.read_bytes() for p in sorted(d.iterdir())}
    return outputs, files


def test_criterion_9(tmp_path, record_property):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    out_a, files_a = _cli_run(a)
    out_b, files_b = _cli_run(b)
    assert out_a == out_b
    assert files_a == files_b
    record_property("detail", f"{len(CLI_RUNS)} commands, {len(files_a)} files byte-identical")
