import math

import numpy as np
import pytest

from wavernn_engine.cell import (C_CUR, SILENCE, CellConfig, CellParams, ProductCounter,
                                 RngStream, SamplePair, categorical, coarse_step, decode_sample,
                                 encode_sample, fine_step, gate_preactivations, generate,
                                 input_mask, op_inventory, sample_step, sequence_nll, softmax,
                                 teacher_forced)
from wavernn_engine.errors import InputError, NumericError
from wavernn_engine.sparse import BlockShape, SparsityMask, compress

LN_65536 = math.log(65536)


def test_encode_decode():
    assert encode_sample(0)[0] == SamplePair(0, 0)
    assert encode_sample(65535)[0] == SamplePair(255, 255)
    pair, (c, f) = encode_sample(0x8001)
    assert pair == (128, 1) and decode_sample(pair) == 0x8001
    assert c == pytest.approx(2 * 128 / 255 - 1) and f == pytest.approx(2 / 255 - 1)
    with pytest.raises(InputError):
        encode_sample(65536)


def test_zero_model_is_uniform(rng):
    p = CellParams.zeros(CellConfig(16))
    for U in (rng.integers(0, 65536, 50), np.full(10, 32768), np.arange(2)):
        assert sequence_nll(p, U) == pytest.approx(LN_65536, abs=1e-6)


def test_input_mask_blocks_current_coarse_on_coarse_rows():
    cfg = CellConfig(8, 2)
    m = input_mask(cfg)
    for g in range(3):
        assert not m[g * 8:g * 8 + 4, C_CUR].any()
        assert m[g * 8 + 4:g * 8 + 8, C_CUR].all()
    assert m[:, [0, 1, 3, 4]].all()


def test_coarse_distribution_ignores_current_coarse(rng):
    p = CellParams.random(CellConfig(16), seed=3)
    p.I[:, C_CUR] = rng.standard_normal(48)       # even if the raw matrix has weight there
    h = rng.standard_normal(16)
    _, cache, P = coarse_step(p, h, 10, 20)
    a, Pa, _ = fine_step(p, cache, 0)
    b, Pb, _ = fine_step(p, cache, 255)
    assert not np.array_equal(Pa, Pb)
    # a full teacher-forced pass agrees: only the fine distributions move
    U1 = np.array([3000, 0x1234, 0x7777])
    U2 = U1.copy()
    U2[1] = 0xF034
    f1, f2 = teacher_forced(p, U1), teacher_forced(p, U2)
    assert np.array_equal(f1.Pc[0], f2.Pc[0])


def test_gate_preactivations_split(rng):
    cfg = CellConfig(8, 1)
    p = CellParams.random(cfg, seed=0, bias_scale=0.5)
    h = rng.standard_normal(8).astype(np.float32)
    x = rng.standard_normal(4).astype(np.float32)
    au, ar, ae = gate_preactivations(p, h, x)
    full = p.R.astype(np.float64) @ h + (p.I * input_mask(cfg)) @ x + p.b
    np.testing.assert_allclose(np.concatenate([au, ar, ae]), full, rtol=1e-5, atol=1e-5)


def test_five_large_products_per_step():
    cfg = CellConfig(32)
    p = CellParams.random(cfg)
    counter = ProductCounter()
    sample_step(p, np.zeros(32), SILENCE, rng=RngStream(0), counter=counter)
    assert counter.count == 5
    assert counter.shapes[0] == (96, 32)
    assert len(op_inventory(cfg, stacked=False)) == 7


def test_inventory_at_1024():
    inv = op_inventory(CellConfig(1024), stacked=False)
    assert inv == [(1024, 1024)] * 3 + [(512, 512)] * 2 + [(256, 512)] * 2


def test_param_count_896_is_about_three_million():
    n = CellConfig(896).param_count()
    assert abs(n - 3e6) / 3e6 < 0.1


def test_softmax_against_scalar_formula(rng):
    z = rng.standard_normal(256) * 5
    want = [math.exp(v) / sum(math.exp(w) for w in z) for v in z]
    np.testing.assert_allclose(softmax(z), want, rtol=1e-12)


def test_categorical_inverse_cdf():
    P = np.array([0.25, 0.25, 0.5])
    assert categorical(P, 0.0) == 0
    assert categorical(P, 0.2499) == 0
    assert categorical(P, 0.25) == 1
    assert categorical(P, 0.9999) == 2
    assert categorical(np.array([0.0, 1.0, 0.0]), 0.0) == 1


def test_sampling_frequencies_follow_distribution():
    P = np.array([0.1, 0.6, 0.3])
    g = RngStream(5)
    draws = [int(categorical(P, g.uniform())) for _ in range(20000)]
    freq = np.bincount(draws, minlength=3) / len(draws)
    np.testing.assert_allclose(freq, P, atol=0.015)


def test_generation_deterministic_and_in_range():
    p = CellParams.random(CellConfig(16), seed=1)
    a = generate(p, 200, rng=7).waveform
    b = generate(p, 200, rng=7).waveform
    c = generate(p, 200, rng=8).waveform
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert a.dtype == np.uint16


def test_sparse_weights_generate_like_dense_rounded(rng):
    cfg = CellConfig(32)
    p = CellParams.random(cfg, seed=2)
    keep = rng.random((96 // 16, 32)) < 0.5
    S = compress(p.R, SparsityMask.from_blocks(keep, BlockShape(16, 1)))
    ps = CellParams(cfg, **{**p.tensors(), "R": S})
    pd = ps.dense()
    assert np.array_equal(generate(ps, 64, rng=3).waveform, generate(pd, 64, rng=3).waveform)


def test_conditioning_shape_checked():
    p = CellParams.random(CellConfig(8, 3))
    with pytest.raises(InputError):
        generate(p, 10)
    with pytest.raises(InputError):
        generate(p, 10, cond=np.zeros((10, 2)))
    assert len(generate(p, 10, cond=np.zeros((10, 3))).waveform) == 10


def test_bad_shapes_rejected():
    cfg = CellConfig(8)
    with pytest.raises(InputError):
        CellConfig(7)
    with pytest.raises(InputError):
        CellParams(cfg, **{**CellParams.zeros(cfg).tensors(), "R": np.zeros((8, 8))})


def test_non_finite_weights_raise_numeric_error():
    p = CellParams.random(CellConfig(8))
    p.b2[0] = np.inf
    with pytest.raises(NumericError):
        sequence_nll(p, np.arange(5) * 1000)
