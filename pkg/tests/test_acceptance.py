"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
The spirals experiments take several minutes on one core; set
``ROCKET_SKIP_SLOW=1`` to skip them.
"""

from __future__ import annotations

import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from rocket import autodiff as ad
from rocket import cli, gradcheck, harness
from rocket.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from rocket.config import TrainConfig, load_config
from rocket.data import encode_cifar10, read_cifar10_binary
from rocket.errors import FormatError
from rocket.harness import run_ablation_grid, train
from rocket.metrics import auc, gauc
from rocket.model import NO_SHARING_SEED_OFFSET, ArchSpec, count_multiplications, forward_rocket, init_rocket
from rocket.objective import HintLossSpec, grad_vanishing_probe, rocket_objective

ROOT = Path(__file__).resolve().parents[1]
SPIRALS = ROOT / "configs" / "spirals.ini"
SEEDS = 5
SLACK = 0.005
slow = pytest.mark.skipif(os.environ.get("ROCKET_SKIP_SLOW") == "1", reason="ROCKET_SKIP_SLOW=1")


def report(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    sys.__stdout__.write(line + "\n")
    sys.__stdout__.flush()
    assert ok, line


def spirals() -> TrainConfig:
    return load_config(SPIRALS).validate()


# ---------------------------------------------------------------------------


def test_gradient_correctness():
    t0 = time.perf_counter()
    checks = gradcheck.check_model(seed=0, nets=50)
    secs = time.perf_counter() - t0
    worst = max(c.max_err for c in checks)
    ok = all(c.ok for c in checks) and secs < 60
    report("gradient correctness", ok,
           f"50 nets, worst max_rel_err {worst:.2e} (tol 1e-4), {secs:.1f}s (limit 60s)")


def test_analytic_oracle_equivalence():
    mse = gradcheck.oracle_error("softmax_mse", cases=1000)
    mimic = gradcheck.oracle_error("logit_mimic", cases=1000)
    errs = [gradcheck.distill_limit_error(T) for T in (10.0, 100.0, 1000.0)]
    ok = mse < 1e-6 and mimic < 1e-6 and errs[1] < 0.05 and errs[0] > errs[1] > errs[2]
    report("analytic oracle equivalence", ok,
           f"softmax_mse {mse:.1e}, logit_mimic {mimic:.1e} (tol 1e-6); distill T=10/100/1000 "
           f"{errs[0]:.2e}/{errs[1]:.2e}/{errs[2]:.2e} (T=100 tol 5e-2, must shrink)")


def _booster_grads(net, batch, spec, only_hint=False):
    out = forward_rocket(net, batch.x)
    b = rocket_objective(out, ad.constant(batch.y), spec, gradient_block=True)
    ad.backward(b.hint if only_hint else b.total)
    return {n: ad.grad_or_zeros(out.params[n]) for n in net.partition()["B"]}


def _constant_light_head(monkeypatch):
    """Swap the light logits for fixed constants so only W_B and W_S can learn."""
    real = harness.forward_rocket

    def patched(net, x, nodes=None):
        out = real(net, x, nodes)
        rows = np.arange(out.l.shape[0] * out.l.shape[1], dtype=float).reshape(out.l.shape)
        l = ad.constant(np.sin(rows))
        return out._replace(l=l, p=ad.softmax(l))

    monkeypatch.setattr(harness, "forward_rocket", patched)


def _booster_updates(cfg):
    seq = []
    harness.train(cfg, on_step=lambda info: seq.append(
        [info.net.params[n].copy() for n in info.net.partition()["B"]]))
    return seq


def test_gradient_block_nullity(monkeypatch):
    t0 = time.perf_counter()
    cfg = spirals().replace(mode="rocket", epochs=5, hint=HintLossSpec(lam=1.0))
    state = {"net": init_rocket(cfg.arch, cfg.seed), "steps": 0, "bad": 0}

    def probe(info):
        before = state["net"]
        hint_only = _booster_grads(before, info.batch, cfg.hint, only_hint=True)
        no_hint = _booster_grads(before, info.batch, HintLossSpec(lam=0.0))
        for name in hint_only:
            if hint_only[name].any() or not np.array_equal(info.grads[name], no_hint[name]):
                state["bad"] += 1
        state["net"] = info.net.copy()
        state["steps"] += 1

    train(cfg, on_step=probe)

    _constant_light_head(monkeypatch)
    with_hint = _booster_updates(cfg)
    without = _booster_updates(cfg.replace(hint=HintLossSpec(lam=0.0)))
    same = len(with_hint) == len(without) and all(
        np.array_equal(a, b) for x, y in zip(with_hint, without) for a, b in zip(x, y))
    # negative control: without the block the hint does reach W_B
    leaky = _booster_updates(cfg.replace(mode="rocket_no_gb", epochs=1))
    leaky_ref = _booster_updates(cfg.replace(mode="rocket_no_gb", epochs=1, hint=HintLossSpec(lam=0.0)))
    control = not all(np.array_equal(a, b) for a, b in zip(leaky[-1], leaky_ref[-1]))
    secs = time.perf_counter() - t0
    ok = state["bad"] == 0 and same and control and secs < 60
    report("gradient-block nullity", ok,
           f"{state['steps']} batches, {state['bad']} with nonzero hint grad on W_B; W_B update sequence "
           f"vs lambda=0 {'identical' if same else 'DIFFERS'}; no-GB control "
           f"{'differs' if control else 'identical'}; {secs:.1f}s")


def _trajectory(cfg, names_of):
    snaps = []
    train(cfg, on_step=lambda info: snaps.append([info.net.params[n].copy() for n in names_of(info.net)]))
    return snaps


@slow
def test_mode_decoupling():
    base = spirals().replace(epochs=10)
    s = base.seed
    joint = _trajectory(base.replace(mode="rocket_no_sharing", hint=HintLossSpec(lam=0.0)),
                        lambda n: n.path_params("light") + n.path_params("booster"))
    light = _trajectory(base.replace(mode="base", seed=s + NO_SHARING_SEED_OFFSET, shuffle_seed=s),
                        lambda n: n.path_params("light"))
    boost = _trajectory(base.replace(mode="booster_only"), lambda n: n.path_params("booster"))
    k = len(light[0])
    steps = len(joint)
    ok = steps == len(light) == len(boost) and all(
        all(np.array_equal(a, b) for a, b in zip(j[:k], x)) and all(np.array_equal(a, b) for a, b in zip(j[k:], y))
        for j, x, y in zip(joint, light, boost))
    report("mode decoupling", ok, f"{steps} steps over 10 epochs, light and booster trajectories "
           f"{'bitwise identical' if ok else 'DIVERGE'}")


# --- spirals experiments (shared runs) ------------------------------------------


@pytest.fixture(scope="module")
def grid():
    cfg = spirals()
    modes = ["base", "rocket", "rocket_no_joint", "rocket_no_sharing", "rocket_no_gb"]
    t0 = time.perf_counter()
    result = run_ablation_grid(cfg, modes, k=SEEDS)
    mse = run_ablation_grid(cfg.replace(hint=HintLossSpec(kind="softmax_mse", lam=1.0)), ["rocket"], k=SEEDS)
    return result, mse, time.perf_counter() - t0


def _pct(v):
    return f"{100 * v:.2f}%"


@slow
def test_co_training_benefit(grid):
    result, _, secs = grid
    base, rocket = result.row("base"), result.row("rocket")
    gaps = [b - r for b, r in zip(base.errs_light, rocket.errs_light)]
    wins = sum(g >= 0 for g in gaps)
    ok = rocket.median_err_light <= base.median_err_light and wins >= 4
    report("directional co-training benefit", ok,
           f"median light err base {_pct(base.median_err_light)} vs rocket {_pct(rocket.median_err_light)}; "
           f"nonnegative gap on {wins}/{SEEDS} seeds; per-seed gaps "
           f"{[round(100 * g, 2) for g in gaps]} pp")


@slow
def test_ablation_ordering(grid):
    result, _, _ = grid
    med = {r.mode: r.median_err_light for r in result.rows}
    variants = ["rocket_no_joint", "rocket_no_sharing", "rocket_no_gb"]
    fails = []
    for v in variants:
        if med["rocket"] > med[v] + SLACK:
            fails.append(f"rocket > {v}")
        if med[v] > med["base"] + SLACK:
            fails.append(f"{v} > base")
    order = sorted(med, key=med.get)
    strict = order[0] == "rocket" and order[-1] == "base"
    detail = ", ".join(f"{m} {_pct(med[m])}" for m in order)
    report("ablation ordering", not fails,
           f"{detail}; slack 0.5pp; strict rocket-best/base-worst {'yes' if strict else 'no'}"
           + (f"; violations: {', '.join(fails)}" if fails else ""))


@slow
def test_hint_loss_comparison(grid):
    result, mse, _ = grid
    mimic = result.row("rocket").median_err_light
    soft = mse.row("rocket").median_err_light
    probe = grad_vanishing_probe([[-30.0, 2.0, 0.5]], [[4.0, 0.0, 0.0]])
    ok = mimic <= soft and 0 in probe.flagged
    report("hint-loss comparison", ok,
           f"median light err logit_mimic {_pct(mimic)} vs softmax_mse {_pct(soft)}; "
           f"probe flags {probe.flagged} at l_0 = -30")


# --- exact properties -------------------------------------------------------------


def _brute_auc(s, y):
    pos = s[y == 1]
    neg = s[y == 0]
    if not len(pos) or not len(neg):
        return None
    return float(sum((a > b) + 0.5 * (a == b) for a in pos for b in neg)) / (len(pos) * len(neg))


def test_metric_oracles():
    rng = np.random.default_rng(0)
    worst_auc = worst_gauc = 0.0
    for case in range(200):
        m = int(rng.integers(2, 80))
        s = rng.integers(0, 5, m).astype(float) if case % 2 else rng.normal(size=m)
        y = rng.integers(0, 2, m)
        want = _brute_auc(s, y)
        got = auc(s, y)
        if want is not None:
            worst_auc = max(worst_auc, abs(got - want))
        g = rng.integers(0, 5, m)
        parts = [(int((g == k).sum()), _brute_auc(s[g == k], y[g == k])) for k in np.unique(g)]
        parts = [(n, a) for n, a in parts if a is not None]
        if parts:
            want_g = sum(n * a for n, a in parts) / sum(n for n, _ in parts)
            worst_gauc = max(worst_gauc, abs(gauc(s, y, g) - want_g))
    light = count_multiplications(ArchSpec(576, 2, light=(200, 80)), "light")
    booster = count_multiplications(ArchSpec(576, 2, booster=(720, 360, 240, 180, 90)), "booster")
    ok = worst_auc <= 1e-12 and worst_gauc <= 1e-12 and light == 131360 and booster == 837900
    report("metric oracles", ok,
           f"auc max dev {worst_auc:.1e}, gauc max dev {worst_gauc:.1e} (tol 1e-12); "
           f"multiplications light {light} (want 131360), booster {booster} (want 837900)")


def test_format_round_trips(tmp_path):
    net = init_rocket(spirals().arch, 0)
    save_checkpoint(net, tmp_path / "a.bin")
    back = load_checkpoint(tmp_path / "a.bin")
    lossless = all(back.params[k].tobytes() == net.params[k].tobytes() for k in net.params)
    lossless = lossless and encode_checkpoint(back) == (tmp_path / "a.bin").read_bytes()
    corrupt = bytearray(encode_checkpoint(net))
    corrupt[0] ^= 0xFF
    try:
        decode_checkpoint(bytes(corrupt))
        header_rejected = False
    except FormatError:
        header_rejected = True

    record = encode_cifar10(np.array([7]), np.zeros((1, 3072), dtype=np.uint8))
    (tmp_path / "one.bin").write_bytes(record)
    ds = read_cifar10_binary(tmp_path / "one.bin")
    parsed = len(record) == 3073 and len(ds) == 1 and ds.labels[0] == 7

    errors = []
    for name, blob, expect in (("short", record[:3072], "offset 0"),
                               ("label", record + bytes([10]) + record[1:], "record 1")):
        (tmp_path / name).write_bytes(blob)
        try:
            read_cifar10_binary(tmp_path / name)
            errors.append(f"{name}: accepted")
        except FormatError as exc:
            if expect not in str(exc):
                errors.append(f"{name}: message {exc}")
    ok = lossless and header_rejected and parsed and not errors
    report("format round trips", ok,
           f"checkpoint bitwise {'ok' if lossless else 'LOSSY'}, corrupt header "
           f"{'rejected' if header_rejected else 'ACCEPTED'}, 3073-byte fixture "
           f"{'parsed' if parsed else 'FAILED'}, bad fixtures {errors or 'rejected with offset/record'}")


def test_determinism(tmp_path, capsys):
    log = tmp_path / "run.jsonl"
    argv = ["train", str(SPIRALS), "--set", "epochs=3", "--set", f"paths.log={log}"]
    outs = []
    for _ in range(2):
        code = cli.main(argv)
        outs.append((code, log.read_bytes()))
    capsys.readouterr()
    ok = outs[0][0] == outs[1][0] == 0 and outs[0][1] == outs[1][1]
    report("determinism", ok, f"two cmd_train runs, logs {'byte-identical' if ok else 'DIFFER'} "
           f"({len(outs[0][1])} bytes)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
