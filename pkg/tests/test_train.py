import math

import numpy as np
import pytest

from wavernn_engine.cell import WEIGHT_NAMES, CellConfig, CellParams, sequence_nll
from wavernn_engine.errors import InputError, NumericError
from wavernn_engine.sparse import BlockShape
from wavernn_engine.train import (PRUNABLE, AdamState, GradientSet, PruneSchedule, TrainConfig,
                                  apply_masks, block_magnitudes, budget_for,
                                  dense_hidden_for_budget, forward_backward, prune_fraction,
                                  prunable_views, sgd_update, sparsity_report, train,
                                  update_mask)


def fd_errors(p, U, cond=None, eps=1e-6):
    """Max relative error per tensor against central differences on every coordinate."""
    _, g = forward_backward(p, U, cond)
    errs = {}
    for name in WEIGHT_NAMES:
        W = getattr(p, name)
        num = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            old = W[idx]
            W[idx] = old + eps
            lp = sequence_nll(p, U, cond)
            W[idx] = old - eps
            lm = sequence_nll(p, U, cond)
            W[idx] = old
            num[idx] = (lp - lm) / (2 * eps)
        scale = max(np.abs(num).max(), np.abs(g[name]).max(), 1e-12)
        errs[name] = float(np.abs(num - g[name]).max() / scale)
    return errs


# ----------------------------------------------------------------------------
# schedule


def test_prune_fraction_endpoints_and_midpoint():
    s = PruneSchedule(0.95, start=1000, duration=200_000)
    assert prune_fraction(0, s) == 0.0
    assert prune_fraction(1000, s) == 0.0
    assert prune_fraction(201_000, s) == 0.95
    assert prune_fraction(10 ** 7, s) == 0.95
    assert abs(prune_fraction(101_000, s) - 0.95 * 0.875) < 1e-12
    assert abs(prune_fraction(101_000, s) - 0.83125) < 1e-12


def test_prune_fraction_monotone_and_bounded():
    s = PruneSchedule(0.9, start=10, duration=100)
    zs = [prune_fraction(t, s) for t in range(0, 200)]
    assert all(0 <= z <= 0.9 for z in zs)
    assert all(b >= a for a, b in zip(zs, zs[1:]))
    assert prune_fraction(10 + 1e-9, s) < 1e-9
    assert abs(prune_fraction(110 - 1e-9, s) - 0.9) < 1e-9


def test_schedule_validation():
    with pytest.raises(InputError):
        PruneSchedule(1.0)
    with pytest.raises(InputError):
        PruneSchedule(0.5, cadence=0)


# ----------------------------------------------------------------------------
# masks


def test_update_mask_unstructured_example():
    m = update_mask(np.array([[0.5, -0.1, 0.3, -0.7]]), 0.5)
    assert list(m.elements()[0]) == [True, False, False, True]


def test_update_mask_zero_keeps_everything(rng):
    assert update_mask(rng.standard_normal((8, 8)), 0.0).elements().all()


def test_update_mask_blocks_against_brute_force(rng):
    W = rng.standard_normal((8, 8))
    m = update_mask(W, 0.5, BlockShape(4, 4))
    means = {(i, j): np.abs(W[4 * i:4 * i + 4, 4 * j:4 * j + 4]).mean()
             for i in range(2) for j in range(2)}
    dropped = sorted(means, key=means.get)[:2]
    keep = m.blocks()
    for b in means:
        assert keep[b] == (b not in dropped)


def test_block_magnitudes_16x1(rng):
    W = rng.standard_normal((32, 3))
    mags = block_magnitudes(W, BlockShape(16, 1))
    assert mags.shape == (2, 3)
    assert mags[1, 2] == pytest.approx(np.abs(W[16:, 2]).mean())


def test_pruned_weights_never_return(rng):
    W = rng.standard_normal((16, 16))
    prev = None
    for z in (0.1, 0.3, 0.3, 0.6, 0.9):
        m = update_mask(W, z)
        W = np.where(m.elements(), W + 0.01 * rng.standard_normal(W.shape), 0.0)
        if prev is not None:
            assert not (m.elements() & ~prev).any()
        prev = m.elements()


# ----------------------------------------------------------------------------
# gradients


def test_gradients_match_finite_differences():
    p = CellParams.random(CellConfig(8, 2), seed=3, bias_scale=0.2, dtype=np.float64)
    rng = np.random.default_rng(0)
    U = rng.integers(0, 65536, (2, 7))
    cond = rng.standard_normal((2, 7, 2))
    errs = fd_errors(p, U, cond)
    assert max(errs.values()) < 1e-4, errs


def test_masked_input_gradients_are_exactly_zero():
    p = CellParams.random(CellConfig(8), seed=1, dtype=np.float64)
    _, g = forward_backward(p, np.random.default_rng(2).integers(0, 65536, (3, 9)))
    for gate in range(3):
        assert np.all(g["I"][gate * 8:gate * 8 + 4, 2] == 0.0)


def test_zero_model_output_bias_gradient_closed_form(rng):
    p = CellParams.zeros(CellConfig(8), dtype=np.float64)
    U = rng.integers(0, 65536, (3, 6))
    loss, g = forward_backward(p, U)
    assert loss == pytest.approx(math.log(65536), abs=1e-9)
    c = (U[:, 1:] >> 8).reshape(-1)
    f = (U[:, 1:] & 255).reshape(-1)
    want_c = np.full(256, 1 / 256) - np.bincount(c, minlength=256) / len(c)
    want_f = np.full(256, 1 / 256) - np.bincount(f, minlength=256) / len(f)
    np.testing.assert_allclose(g["b2"], want_c, atol=1e-12)
    np.testing.assert_allclose(g["b4"], want_f, atol=1e-12)


def test_loss_invariant_to_batch_order(rng):
    p = CellParams.random(CellConfig(8), seed=4, dtype=np.float64)
    U = rng.integers(0, 65536, (4, 6))
    l1, g1 = forward_backward(p, U)
    l2, g2 = forward_backward(p, U[::-1])
    assert l1 == pytest.approx(l2, rel=1e-12)
    np.testing.assert_allclose(g1["R"], g2["R"], rtol=1e-10, atol=1e-14)


def test_gradient_shapes_match_params():
    p = CellParams.random(CellConfig(8, 1))
    _, g = forward_backward(p, np.zeros((1, 4), dtype=int), np.zeros((4, 1)))
    for n in WEIGHT_NAMES:
        assert g[n].shape == np.shape(getattr(p, n))
        assert np.all(np.isfinite(g[n]))


def test_non_finite_loss_reports_batch_index():
    p = CellParams.random(CellConfig(8), seed=0, dtype=np.float64)
    p.b2[7] = np.nan
    with pytest.raises(NumericError) as exc:
        forward_backward(p, np.full((2, 4), 40000))
    assert exc.value.position == 0


# ----------------------------------------------------------------------------
# optimizer


def test_zero_gradient_leaves_params_unchanged():
    p = CellParams.random(CellConfig(8))
    zero = GradientSet({n: np.zeros_like(getattr(p, n)) for n in WEIGHT_NAMES})
    st = AdamState()
    q = sgd_update(p, zero, st)
    assert st.step == 1
    for n in WEIGHT_NAMES:
        assert np.array_equal(getattr(p, n), getattr(q, n))


def test_one_step_descends_on_frozen_batch(rng):
    p = CellParams.random(CellConfig(16), seed=2)
    U = rng.integers(0, 65536, (4, 20))
    loss, g = forward_backward(p, U)
    q = sgd_update(p, g, AdamState(lr=1e-4))
    assert sequence_nll(q, U) < loss


def test_masked_coordinates_stay_zero(rng):
    p = CellParams.random(CellConfig(16), seed=5)
    masks = {n: update_mask(W, 0.5) for n, W in prunable_views(p).items()}
    p = apply_masks(p, masks)
    st = AdamState(lr=1e-2)
    for _ in range(100):
        g = GradientSet({n: np.ones_like(getattr(p, n)) for n in WEIGHT_NAMES})
        p = sgd_update(p, g, st, masks)
    for n, W in prunable_views(p).items():
        assert np.all(W[~masks[n].elements()] == 0.0)


# ----------------------------------------------------------------------------
# training loop and reports


def _sine_corpus(n=2, length=400):
    t = np.arange(length)
    return [(32768 + 8000 * np.sin(2 * np.pi * (k + 2) * t / 97)).astype(np.int64)
            for k in range(n)]


def test_train_history_and_schedule():
    cfg = TrainConfig(hidden=32, sequence_length=16, batch_size=2, steps=60, seed=0)
    sched = PruneSchedule(0.75, start=5, duration=40, cadence=5, block_shape=BlockShape(16, 1))
    r = train(cfg, _sine_corpus(), sched)
    assert len(r.losses) == len(r.sparsity) == 60
    assert r.sparsity[0] == 0.0
    rep = sparsity_report(r.params, BlockShape(16, 1))
    for name in PRUNABLE:
        m = rep.by_name(name)
        n_blocks = m.shape[0] * m.shape[1] // 16
        assert abs(m.sparsity / 100 - 0.75) <= 1 / n_blocks + 1e-12


def test_train_reduces_loss():
    cfg = TrainConfig(hidden=16, sequence_length=24, batch_size=4, steps=120,
                      learning_rate=3e-3, seed=1)
    r = train(cfg, _sine_corpus())
    assert np.mean(r.losses[-20:]) < np.mean(r.losses[:5]) - 0.5


def test_checkpoint_written_on_abort(tmp_path):
    from wavernn_engine.model_io import load_model

    calls = []

    def boom(losses):
        calls.append(1)
        if len(calls) == 3:
            raise RuntimeError("interrupted")
        return False

    cfg = TrainConfig(hidden=8, sequence_length=8, batch_size=1, steps=10)
    with pytest.raises(RuntimeError):
        train(cfg, _sine_corpus(), checkpoint=tmp_path / "ck.wrnn", stop=boom)
    assert load_model(tmp_path / "ck.wrnn").params.config.hidden == 8


def test_config_text_round_trip():
    cfg = TrainConfig(hidden=64, steps=20, prune_target=0.9, block_shape="16x1")
    assert TrainConfig.from_text(cfg.to_text()) == cfg
    parsed = TrainConfig.from_text("# desk\nhidden = 32\nlearning_rate = 3e-3  # fast\n")
    assert parsed.hidden == 32 and parsed.learning_rate == 3e-3
    assert parsed.schedule() is None
    with pytest.raises(InputError):
        TrainConfig.from_text("hiden = 3")
    with pytest.raises(InputError):
        TrainConfig.from_text("hidden: 3")
    with pytest.raises(InputError):
        TrainConfig(sequence_length=1)


def test_history_csv(tmp_path):
    r = train(TrainConfig(hidden=8, sequence_length=8, batch_size=1, steps=3), _sine_corpus())
    r.write_history(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "step,nll_nats,sparsity" and len(lines) == 4


def test_dense_report_has_no_sparsity():
    rep = sparsity_report(CellParams.random(CellConfig(32)))
    assert all(m.sparsity == 0.0 for m in rep.matrices)
    assert rep.total_nonzero == rep.total_params == CellConfig(32).param_count()


def test_budget_counting():
    cfg = CellConfig(768)
    b = budget_for(cfg, 0.95, BlockShape(16, 1))
    # brute force: prune a random model and count
    p = CellParams.random(cfg, seed=0)
    masks = {n: update_mask(W, 0.95, BlockShape(16, 1)) for n, W in prunable_views(p).items()}
    assert sparsity_report(apply_masks(p, masks)).total_nonzero == b
    h = dense_hidden_for_budget(b)
    assert abs(CellConfig(h).param_count() - b) / b < 0.02
    for other in (h - 2, h + 2):
        assert abs(CellConfig(other).param_count() - b) >= abs(CellConfig(h).param_count() - b)
