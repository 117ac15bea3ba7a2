"""End-to-end acceptance checks, one marker per criterion.

The desk-scale experiment (reference config, three run seeds) is computed once
per session and shared by criteria 2, 3, 4 and 6. The conftest prints one
PASS/FAIL line per criterion in the terminal summary.
"""

import dataclasses
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from fixres_lab.cli import main
from fixres_lab.config import load_config
from fixres_lab.eval_harness import (
    ModelEntry,
    ProtocolViolation,
    TableRecord,
    emit_table,
    evaluate,
    parse_table_csv,
    run_protocol,
    topk_hits,
)
from fixres_lab.experiment import run_seed
from fixres_lab.fixres import FinetuneConfig, finetune_fixres, recalibrate_batchnorm, train
from fixres_lab.image_pipeline import (
    DatasetSpec,
    TestPreproc,
    read_dataset,
    resize_bilinear,
    synth_dataset,
    write_dataset,
)
from fixres_lab.model import ModelConfig, build_model, split_scope
from fixres_lab.tensor_core import (
    BatchNormState,
    Tensor,
    batch_norm,
    conv2d,
    global_avg_pool,
    linear,
    read_checkpoint,
    reshape,
    silu,
    smoothed_cross_entropy,
    tensor_sum,
    write_checkpoint,
)
from gradcheck import H, REL_TOL, check_tensor_grads
from oracles import conv_oracle, plain_cross_entropy, resize_oracle, topk_sort_oracle

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SEEDS = (0, 1, 2)


# ---- 1: gradient integrity ----

def _weights(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _bn_state(rng, channels, mode):
    st = BatchNormState.create("bn", channels, np.float64)
    st.gamma.data[:] = rng.uniform(0.5, 1.5, channels)
    st.beta.data[:] = rng.standard_normal(channels) * 0.5
    st.running_mean = rng.standard_normal(channels)
    st.running_var = rng.uniform(0.5, 2.0, channels)
    st.mode = mode
    return st


def case_conv(rng):
    k = int(rng.choice([1, 3]))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, k // 2 + 1))
    n, c, o = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    h, w = rng.integers(k, 7), rng.integers(k, 7)
    x, wt = _weights(rng, (n, c, h, w)), _weights(rng, (o, c, k, k))
    b = _weights(rng, (o,)) if rng.random() < 0.5 else None
    out_shape = conv2d(x, wt, b, stride, pad).shape
    r = Tensor(rng.standard_normal(out_shape))
    return (lambda: tensor_sum(conv2d(x, wt, b, stride, pad) * r)), [x, wt] + ([b] if b is not None else [])


def _case_bn(mode):
    def case(rng):
        c = int(rng.integers(1, 4))
        st = _bn_state(rng, c, mode)
        x = _weights(rng, (int(rng.integers(2, 4)), c, int(rng.integers(1, 4)), int(rng.integers(1, 4))))
        r = Tensor(rng.standard_normal(x.shape))

        def loss():
            st.mode = mode
            if mode == "recalibrate":
                st.begin_recalibration()
            return tensor_sum(batch_norm(x, st) * r)

        return loss, [x, st.gamma, st.beta]

    return case


def case_linear(rng):
    n, i, o = (int(v) for v in rng.integers(1, 6, 3))
    x, w, b = _weights(rng, (n, i)), _weights(rng, (o, i)), _weights(rng, (o,))
    r = Tensor(rng.standard_normal((n, o)))
    return (lambda: tensor_sum(linear(x, w, b) * r)), [x, w, b]


def case_silu(rng):
    x = Tensor(rng.standard_normal((int(rng.integers(1, 4)), 5)) * rng.uniform(0.5, 6.0), requires_grad=True)
    r = Tensor(rng.standard_normal(x.shape))
    return (lambda: tensor_sum(silu(x) * r)), [x]


def case_gap_reshape(rng):
    x = _weights(rng, (int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 5))))
    n, c = x.shape[:2]
    r = Tensor(rng.standard_normal((c, n)))
    return (lambda: tensor_sum(reshape(global_avg_pool(x), (c, n)) * r)), [x]


def case_ce(rng):
    n, k = int(rng.integers(1, 6)), int(rng.integers(2, 7))
    z = Tensor(rng.standard_normal((n, k)) * rng.uniform(0.5, 4.0), requires_grad=True)
    labels = rng.integers(0, k, n)
    eps = float(rng.choice([0.0, rng.uniform(0.0, 0.5)]))
    return (lambda: smoothed_cross_entropy(z, labels, eps)), [z]


def case_composite(rng):
    c, o, k = int(rng.integers(1, 3)), int(rng.integers(2, 4)), int(rng.integers(2, 5))
    x = _weights(rng, (3, c, 5, 5))
    w, fc = _weights(rng, (o, c, 3, 3)), _weights(rng, (k, o))
    st = _bn_state(rng, o, "train")
    labels = rng.integers(0, k, 3)
    stride = int(rng.integers(1, 3))

    def loss():
        st.mode = "train"
        h = silu(batch_norm(conv2d(x, w, None, stride, 1), st))
        return smoothed_cross_entropy(linear(global_avg_pool(h), fc), labels, 0.1)

    return loss, [x, w, fc, st.gamma, st.beta]


def case_micronet(rng):
    stages = int(rng.integers(2, 4))
    cfg = ModelConfig(base_channels=int(rng.integers(2, 4)), num_stages=stages, num_classes=int(rng.integers(2, 5)),
                      train_res=2 ** (stages + 1), depth_mult=float(rng.choice([1.0, 1.5])),
                      width_mult=float(rng.choice([0.75, 1.0])))
    model = build_model(cfg, seed=int(rng.integers(1 << 31)), dtype=np.float64)
    for _, bn in model.bn_layers():
        bn.gamma.data[:] = rng.uniform(0.5, 1.5, bn.channels)
        bn.beta.data[:] = rng.standard_normal(bn.channels) * 0.3
    x = Tensor(rng.standard_normal((3, 1, cfg.train_res, cfg.train_res)))
    labels = rng.integers(0, cfg.num_classes, 3)
    return (lambda: smoothed_cross_entropy(model.forward(x, "train"), labels, 0.1)), model.parameters()


CASES = [case_conv, _case_bn("train"), _case_bn("eval"), _case_bn("recalibrate"), case_linear, case_silu,
         case_gap_reshape, case_ce, case_composite, case_micronet]


@pytest.mark.acceptance(1, "gradient integrity (100 randomized f64 configurations)")
def test_gradient_integrity(acceptance_note):
    assert H == 1e-5 and REL_TOL == 1e-4
    t0 = time.perf_counter()
    worst, failures = 0.0, []
    for i in range(100):
        rng = np.random.default_rng(10_000 + i)
        case = CASES[i % len(CASES)]
        loss, tensors = case(rng)
        err = check_tensor_grads(loss, tensors, rng, max_coords=16)
        worst = max(worst, err)
        if not err < REL_TOL:
            failures.append((i, case.__name__, err))
    elapsed = time.perf_counter() - t0
    acceptance_note(f"max rel err {worst:.2e}, {elapsed:.1f}s")
    assert not failures, failures
    assert elapsed < 120


# ---- shared desk-scale experiment ----

@pytest.fixture(scope="module")
def reference():
    cfg = load_config(CONFIGS / "reference.toml")
    t0 = time.perf_counter()
    runs = [run_seed(cfg, s) for s in SEEDS]
    return cfg, runs, time.perf_counter() - t0


# ---- 2: discrepancy ----

@pytest.mark.acceptance(2, "val sweep argmax above train_res 32 (3-seed median)")
def test_discrepancy(reference, acceptance_note):
    cfg, runs, elapsed = reference
    assert cfg.model.width_mult == 1.0 and cfg.model.depth_mult == 1.0 and cfg.model.train_res == 32
    assert cfg.dataset.num_classes == 8
    assert cfg.protocol.sizes == {"train": 8000, "val": 1000, "test_A": 1000, "test_B": 1000}
    assert cfg.protocol.grid_for(32) == [24, 32, 40, 48, 56, 64]
    argmaxes = [r.models[0].val_curve.argmax() for r in runs]
    acceptance_note(f"argmax per seed {argmaxes}, {elapsed / 60:.1f} min for all seeds")
    assert statistics.median(argmaxes) > 32
    assert elapsed < 15 * 60


# ---- 3: fixres improvement ----

@pytest.mark.acceptance(3, "fine-tuned test_B top-1 beats baseline@train_res and baseline@selected")
def test_fixres_improvement(reference, acceptance_note):
    cfg, runs, _ = reference
    ft = cfg.finetune
    assert ft.scope == "classifier" and ft.recalibrate_bn and ft.epochs == 10
    models = [r.models[0] for r in runs]
    vs_train = [m.fixed.top1_b - m.at_train_res.top1_b for m in models]
    vs_selected = [m.fixed.top1_b - m.selected.top1_b for m in models]
    incremental = sum(m.finetune_seconds for m in models)
    acceptance_note("margins vs train_res " + ", ".join(f"{v:+.3f}" for v in vs_train)
                    + " | vs selected " + ", ".join(f"{v:+.3f}" for v in vs_selected)
                    + f" | fine-tune {incremental:.0f}s")
    assert statistics.median(vs_train) > 0
    assert statistics.median(vs_selected) > 0
    assert incremental < 10 * 60


# ---- 4: overfitting gap ----

@pytest.mark.acceptance(4, "selecting on test_A widens the test_A-test_B gap; test_B read twice is rejected")
def test_overfitting_gap(reference, acceptance_note):
    cfg, runs, _ = reference
    grid = cfg.protocol.grid_for(cfg.model.train_res)
    preproc = TestPreproc(cfg.protocol.crop_ratio, cfg.model.train_res)
    t0 = time.perf_counter()
    val_gaps, test_gaps = [], []
    for run in runs:
        m = run.models[0]
        (on_a,) = run_protocol([ModelEntry(m.name + "/baseline@testA", m.baseline)], run.protocol, grid, preproc,
                               "test_A", allow_test_selection=True).rows
        val_gaps.append(m.selected.gap)
        test_gaps.append(on_a.gap)
    incremental = time.perf_counter() - t0
    acceptance_note("gap selected on val " + ", ".join(f"{g:+.3f}" for g in val_gaps)
                    + " | on test_A " + ", ".join(f"{g:+.3f}" for g in test_gaps) + f" | {incremental:.0f}s")
    assert statistics.median(test_gaps) > statistics.median(val_gaps)
    assert incremental < 10 * 60


@pytest.mark.acceptance(4, "selecting on test_A widens the test_A-test_B gap; test_B read twice is rejected")
def test_second_test_b_read_is_rejected(reference):
    cfg, runs, _ = reference
    run = runs[0]
    grid = cfg.protocol.grid_for(cfg.model.train_res)
    with pytest.raises(ProtocolViolation, match="test_B"):
        run_protocol([ModelEntry("leaky", run.models[0].baseline)], run.protocol, grid,
                     TestPreproc(cfg.protocol.crop_ratio), "test_B")
    with pytest.raises(ProtocolViolation):
        run_protocol([ModelEntry("peek", run.models[0].baseline)], run.protocol, grid,
                     TestPreproc(cfg.protocol.crop_ratio), "test_A")


# ---- 5: oracle equivalences ----

@pytest.mark.acceptance(5, "oracle equivalences")
def test_conv_oracle_f32():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        k, stride = int(rng.choice([1, 3])), int(rng.integers(1, 3))
        x = rng.standard_normal((2, 3, 7, 6)).astype(np.float32)
        w = rng.standard_normal((4, 3, k, k)).astype(np.float32)
        b = rng.standard_normal(4).astype(np.float32)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride, k // 2).data
        assert out.dtype == np.float32
        np.testing.assert_allclose(out, conv_oracle(x, w, b, stride, k // 2), rtol=1e-5, atol=1e-5)


@pytest.mark.acceptance(5, "oracle equivalences")
def test_resize_oracle_bit_exact():
    rng = np.random.default_rng(0)
    for _ in range(40):
        img = rng.integers(0, 256, (int(rng.integers(1, 20)), int(rng.integers(1, 20)), int(rng.choice([1, 3]))),
                           dtype=np.uint8)
        oh, ow = int(rng.integers(1, 30)), int(rng.integers(1, 30))
        np.testing.assert_array_equal(resize_bilinear(img, oh, ow), resize_oracle(img, oh, ow))


@pytest.mark.acceptance(5, "oracle equivalences")
def test_topk_oracle_fuzz():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        n, c = int(rng.integers(1, 5)), int(rng.integers(1, 9))
        logits = rng.integers(-2, 3, (n, c)).astype(np.float64)  # small integer range forces ties
        labels = rng.integers(0, c, n)
        k = int(rng.integers(1, 7))
        np.testing.assert_array_equal(topk_hits(logits, labels, k), topk_sort_oracle(logits, labels, k))


@pytest.mark.acceptance(5, "oracle equivalences")
def test_recalibration_two_pass_oracle():
    rng = np.random.default_rng(1)
    batches = [rng.normal(3.0, 2.0, (n, 4, 5, 5)).astype(np.float32) for n in (9, 2, 17)]
    st = BatchNormState.create("bn", 4, np.float32)
    st.begin_recalibration()
    for b in batches:
        batch_norm(Tensor(b), st)
    st.finish_recalibration()
    full = np.concatenate(batches).astype(np.float64)
    mean = full.mean(axis=(0, 2, 3))
    var = ((full - mean[None, :, None, None]) ** 2).mean(axis=(0, 2, 3))
    np.testing.assert_allclose(st.running_mean, mean, rtol=1e-5)
    np.testing.assert_allclose(st.running_var, var, rtol=1e-5)


@pytest.mark.acceptance(5, "oracle equivalences")
def test_ce_epsilon_zero_is_plain_ce():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((5, 7)) * 3
        labels = rng.integers(0, 7, 5)
        got = float(smoothed_cross_entropy(Tensor(z), labels, 0.0).data)
        assert abs(got - plain_cross_entropy(z.tolist(), labels.tolist())) <= 1e-12


# ---- 6: freeze and cheapness ----

@pytest.mark.acceptance(6, "classifier fine-tune freezes the backbone and costs < 0.5x a training epoch")
def test_freeze_contract(reference):
    _, runs, _ = reference
    for run in runs:
        m = run.models[0]
        frozen, trainable = split_scope(m.fixres, "classifier")
        assert {p.name for p in trainable} == {"classifier.weight", "classifier.bias"}
        before = {p.name: p.data.tobytes() for p in m.baseline.parameters()}
        for p in frozen:
            assert p.data.tobytes() == before[p.name], p.name
        assert any(p.data.tobytes() != before[p.name] for p in trainable)


@pytest.mark.acceptance(6, "classifier fine-tune freezes the backbone and costs < 0.5x a training epoch")
def test_finetune_epoch_is_cheap(reference, acceptance_note):
    cfg, runs, _ = reference
    data = runs[0].train_data
    res = cfg.model.train_res
    model, train_log = train(build_model(cfg.model, seed=0), data, dataclasses.replace(cfg.train, epochs=2))
    _, ft_log = finetune_fixres(model, data, FinetuneConfig(target_res=res, epochs=2, recalibrate_bn=False))
    t_train = min(r.seconds for r in train_log.records)
    t_ft = min(r.seconds for r in ft_log.records)
    acceptance_note(f"epoch at {res}px: train {t_train:.1f}s, fine-tune {t_ft:.1f}s, ratio {t_ft / t_train:.2f}")
    assert t_ft < 0.5 * t_train


# ---- 7: determinism and formats ----

@pytest.mark.acceptance(7, "deterministic protocol CSVs, lossless FXDS/FXCK, table row layout")
def test_protocol_csvs_are_byte_identical(tmp_path):
    smoke = str(CONFIGS / "smoke.toml")
    for name in ("a", "b"):
        assert main(["-q", "protocol", "--config", smoke, "--out-dir", str(tmp_path / name)]) == 0
    for name in ("gap.csv", "table.csv", "frontier.csv", "sweep.csv", "table.md"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


@pytest.mark.acceptance(7, "deterministic protocol CSVs, lossless FXDS/FXCK, table row layout")
def test_fxds_round_trip(tmp_path):
    data = synth_dataset(DatasetSpec(num_classes=3, samples_per_class=5, base_resolution=24, channels=3, seed=4))
    write_dataset(data, tmp_path / "d.fxds")
    back = read_dataset(tmp_path / "d.fxds")
    assert back.num_classes == data.num_classes
    assert back.images.tobytes() == data.images.tobytes() and back.images.shape == data.images.shape
    assert np.array_equal(back.labels, data.labels)


@pytest.mark.acceptance(7, "deterministic protocol CSVs, lossless FXDS/FXCK, table row layout")
def test_fxck_round_trip(tmp_path):
    model = build_model(ModelConfig(), seed=3)
    model.blocks[0].bn.running_var = np.random.default_rng(0).uniform(0.1, 2, model.blocks[0].bn.channels).astype(np.float32)
    state = model.state_dict()
    state["extra.edges"] = np.array([np.pi, -0.0, 1e-45, np.finfo(np.float32).max, -np.inf], dtype=np.float32)
    write_checkpoint(tmp_path / "m.fxck", state)
    back = read_checkpoint(tmp_path / "m.fxck")
    assert list(back) == list(state)
    for k, v in state.items():
        assert back[k].dtype == v.dtype and back[k].shape == v.shape and back[k].tobytes() == v.tobytes()


@pytest.mark.acceptance(7, "deterministic protocol CSVs, lossless FXDS/FXCK, table row layout")
def test_table_fixture_row():
    markdown, text = emit_table([TableRecord("B0", "fixres", 5_300_000, 224, 320, 0.802, 0.954)])
    assert "| B0 | fixres | 5.3M | 224 | 320 | 80.2 | 95.4 |" in markdown.splitlines()
    (row,) = parse_table_csv(text)
    assert (row.model, row.train_res, row.test_res) == ("B0", 224, 320)


# ---- companion property of the fine-tune stage ----

def test_finetune_does_not_lose_accuracy_at_target(reference):
    # median over seeds: val top-1 at the target resolution after fine-tuning >= before
    cfg, runs, _ = reference
    preproc = TestPreproc(cfg.protocol.crop_ratio, cfg.model.train_res)
    deltas = []
    for run in runs:
        m = run.models[0]
        res = m.selected.test_res
        after = evaluate(m.fixres, run.protocol["val"], res, preproc).top1
        deltas.append(after - m.val_curve.top1()[res])
    assert statistics.median(deltas) >= 0


def test_recalibration_alone_is_well_defined(reference):
    _, runs, _ = reference
    m = runs[0].models[0]
    out = recalibrate_batchnorm(m.baseline, runs[0].train_data, m.selected.test_res)
    assert all(np.isfinite(bn.running_var).all() and (bn.running_var > 0).all() for _, bn in out.bn_layers())
