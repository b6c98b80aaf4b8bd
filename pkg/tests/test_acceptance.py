"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (shown in the pytest terminal summary)
before asserting. The training criteria share runs through module fixtures:
three seeds of the full toy model, then the four ablation variants.
"""

import json
import time

import numpy as np
import pytest

from hifiseg.cli import main
from hifiseg.core.tensor import Tensor, no_grad
from hifiseg.encoder import EncoderConfig, PyramidEncoder
from hifiseg.glim import GLIM
from hifiseg.gradsuite import MODEL_RTOL, MODEL_SAMPLES, OP_RTOL, STEP, run_model_check, run_op_checks
from hifiseg.metrics import SMOOTH, dice, evaluate_masks, iou, mae
from hifiseg.sam import SAM, sam_forward

from conftest import record_acceptance
from oracles import counts_by_enumeration, glim_params_from, glim_scalar, randomize, sam_full_scalar, sam_params_from

SEEDS = (0, 1, 2)
ABLATIONS = ("w/o GLIM", "w/o SAM", "w/o Conv", "w/o GAP")
TOY_SAMPLES = 64
TARGET_MDICE = 0.90
FLOOR_MDICE = 0.85
TRAIN_BUDGET_S = 15 * 60


def _toy_run(out, seed, variant="full"):
    t0 = time.perf_counter()
    code = main(["train", "--preset", "toy", "--synth", str(TOY_SAMPLES), "--seed", str(seed),
                 "--variant", variant, "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "train_metrics.json").read_text())
    return {"mdice": summary["mdice"], "seconds": time.perf_counter() - t0, "dir": out}


@pytest.fixture(scope="module")
def full_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_full")
    return {s: _toy_run(root / f"seed{s}", s) for s in SEEDS}


@pytest.fixture(scope="module")
def ablation_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy_ablate")
    return {(v, s): _toy_run(root / f"{v.replace('/', '').replace(' ', '_')}_seed{s}", s, v)
            for v in ABLATIONS for s in SEEDS}


def test_criterion_1_gradient_suite():
    assert STEP == 1e-4 and OP_RTOL <= 1e-3 and MODEL_RTOL <= 1e-2 and MODEL_SAMPLES == 20
    t0 = time.perf_counter()
    results = run_op_checks(seed=0, rtol=OP_RTOL) + [run_model_check(seed=0)]
    elapsed = time.perf_counter() - t0
    failed = [r.name for r in results if not r.passed]
    ok = not failed and elapsed < 120
    record_acceptance(1, "gradient suite", ok,
                      f"{len(results) - len(failed)}/{len(results)} checks pass "
                      f"(ops rtol {OP_RTOL:g}, model rtol {MODEL_RTOL:g} on {MODEL_SAMPLES} params) "
                      f"in {elapsed:.1f}s; failed={failed}")
    assert ok


def test_criterion_2_metric_oracle():
    bits = ((np.arange(512)[:, None] >> np.arange(9)) & 1).astype(np.uint8).reshape(512, 3, 3)
    counts = {}
    mismatches = 0
    dice_oracle, iou_oracle, mae_oracle = [], [], []
    pred_list, gt_list = [], []
    for pi in range(512):
        for gi in range(512):
            p, g = bits[pi], bits[gi]
            inter, pc, gc, union = counts_by_enumeration(p, g)
            d_ref = (2 * inter + SMOOTH) / (pc + gc + SMOOTH)
            i_ref = (inter + SMOOTH) / (union + SMOOTH)
            m_ref = (union - inter) / 9
            if dice(p, g) != d_ref or iou(p, g) != i_ref or mae(p.astype(np.float64), g) != m_ref:
                mismatches += 1
            dice_oracle.append(d_ref)
            iou_oracle.append(i_ref)
            mae_oracle.append(m_ref)
            pred_list.append(p.astype(np.float64))
            gt_list.append(g)
            counts[pi, gi] = inter
    report = evaluate_masks(pred_list, gt_list, mae_mode="hard")
    means_ok = (report.mdice == np.mean(dice_oracle) and report.miou == np.mean(iou_oracle)
                and report.mmae == np.mean(mae_oracle))

    rng = np.random.default_rng(2024)
    violations = 0
    for _ in range(10_000):
        density = rng.uniform(0.05, 0.95, size=2)
        a = (rng.random((16, 16)) < density[0]).astype(np.uint8)
        b = (rng.random((16, 16)) < density[1]).astype(np.uint8)
        violations += dice(a, b) < iou(a, b)
    ok = mismatches == 0 and means_ok and violations == 0
    record_acceptance(2, "metric oracle", ok,
                      f"{len(counts)} 3x3 pairs, {mismatches} mismatches, set means exact={means_ok}; "
                      f"Dice<IoU on {violations}/10000 random 16x16 pairs")
    assert ok


def test_criterion_3_block_oracles():
    rng = np.random.default_rng(7)
    glim_err = sam_err = 0.0
    for _ in range(100):
        c = int(rng.choice([4, 8]))
        h, w = rng.integers(2, 6, size=2)
        block = randomize(GLIM(c, rng), rng)
        x = rng.normal(size=(1, c, h, w))
        got = block(Tensor(x)).data[0]
        glim_err = max(glim_err, float(np.abs(got - glim_scalar(x[0], glim_params_from(block))).max()))
    for _ in range(100):
        c1, c4, width = rng.integers(1, 5, size=3)
        h, w = rng.integers(2, 7, size=2)
        dh, dw = rng.integers(1, 3, size=2)
        sam = randomize(SAM(int(c1), int(c4), int(width), rng), rng)
        x1, x4 = rng.normal(size=(1, c1, h, w)), rng.normal(size=(1, c4, dh, dw))
        got = sam(Tensor(x1), Tensor(x4)).data[0]
        sam_err = max(sam_err, float(np.abs(got - sam_full_scalar(x1[0], x4[0], sam_params_from(sam))).max()))
    ok = glim_err <= 1e-6 and sam_err <= 1e-6
    record_acceptance(3, "block oracles", ok,
                      f"max |GLIM - scalar| = {glim_err:.2e}, max |SAM - scalar| = {sam_err:.2e} "
                      f"over 100 instances each (tol 1e-6)")
    assert ok


def test_criterion_4_sam_betweenness():
    rng = np.random.default_rng(11)
    checked = violations = 0
    for trial in range(100):
        dtype = np.float32 if trial % 2 else np.float64
        sam = SAM(4, 4, 4, rng)
        for p in sam.parameters():
            p.data = rng.normal(scale=float(rng.choice([0.1, 1.0, 10.0])), size=p.shape).astype(dtype)
        scale = 10.0 ** rng.uniform(-3, 4)
        # 100 inputs per parameter draw: 100 x 1 x 4 x 4 x 4 values, each an (s1, s4) pair
        s1 = (rng.normal(size=(100, 4, 4, 4)) * scale).astype(dtype)
        s4 = (rng.normal(size=(100, 4, 4, 4)) * scale).astype(dtype)
        with no_grad():
            out = sam_forward(Tensor(s1), Tensor(s4), sam).data
        violations += int(((out < np.minimum(s1, s4)) | (out > np.maximum(s1, s4))).sum())
        checked += s1.shape[0]
    ok = violations == 0 and checked >= 10_000
    record_acceptance(4, "SAM betweenness", ok,
                      f"{checked} random inputs ({checked * 64} values, f32 and f64), {violations} outside [min, max]")
    assert ok


def test_criterion_5_shape_law():
    rng = np.random.default_rng(5)
    bad = []
    for plan in (EncoderConfig.toy(), EncoderConfig.base()):
        enc = PyramidEncoder(plan, rng)
        for hw in (64, 128, 352):
            with no_grad():
                shapes = enc(Tensor(rng.random((1, 3, hw, hw)).astype(np.float32))).shapes()
            expect = [(1, c, hw // 2 ** (i + 2), hw // 2 ** (i + 2)) for i, c in enumerate(plan.channels)]
            if shapes != expect:
                bad.append((plan.channels, hw, shapes))
    ok = not bad
    record_acceptance(5, "shape law", ok, f"2 channel plans x {{64, 128, 352}}; mismatches={bad}")
    assert ok


def test_criterion_6_toy_convergence(full_runs):
    scores = {s: r["mdice"] for s, r in full_runs.items()}
    total_time = sum(r["seconds"] for r in full_runs.values())
    ok = (scores[0] >= TARGET_MDICE and min(scores.values()) >= FLOOR_MDICE
          and total_time <= TRAIN_BUDGET_S)
    record_acceptance(6, "toy convergence", ok,
                      "train mDice " + ", ".join(f"seed {s}: {v:.4f}" for s, v in scores.items())
                      + f" (target {TARGET_MDICE} on seed 0, all >= {FLOOR_MDICE}); 3 runs took {total_time:.0f}s")
    assert ok


def test_criterion_7_ablation_direction(full_runs, ablation_runs):
    wins = {v: sum(full_runs[s]["mdice"] >= ablation_runs[v, s]["mdice"] for s in SEEDS) for v in ABLATIONS}
    ok = all(w >= 2 for w in wins.values())
    detail = "; ".join(
        f"{v}: full wins {wins[v]}/3 ("
        + ", ".join(f"{full_runs[s]['mdice']:.4f} vs {ablation_runs[v, s]['mdice']:.4f}" for s in SEEDS) + ")"
        for v in ABLATIONS)
    record_acceptance(7, "ablation direction", ok, detail)
    assert ok


def test_criterion_8_determinism(full_runs, tmp_path):
    first = (full_runs[0]["dir"] / "loss.csv").read_bytes()
    _toy_run(tmp_path / "repeat", 0)
    second = (tmp_path / "repeat" / "loss.csv").read_bytes()
    ok = first == second and len(first.splitlines()) == 301
    record_acceptance(8, "determinism", ok,
                      f"two seed-0 toy runs, loss.csv {len(first)} vs {len(second)} bytes, identical={first == second}")
    assert ok
