"""The WaveRNN cell: a GRU variant over a split state with a dual softmax.

A 16-bit sample ``u`` is predicted as two 8-bit halves, the coarse byte
``c = u // 256`` and the fine byte ``f = u % 256``. The state is split in two:
the first half drives the coarse softmax, the second half the fine softmax.
The network input at step ``t`` is ``[c_{t-1}, f_{t-1}, c_t, cond...]`` where
the ``c_t`` column of the input matrix is masked out of every coarse row, so
the coarse prediction cannot see the value it is predicting while the fine
prediction is conditioned on it.

Gate rows are stacked ``[u; r; e]`` so the recurrent contribution for all
three gates is one product with the ``3h x h`` matrix ``R``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import InputError, NumericError
from .sparse import BlockSparseMatrix, matvec_lanes, shape_of, to_dense

N_CLASSES = 256
C_PREV, F_PREV, C_CUR = 0, 1, 2
N_SAMPLE_INPUTS = 3

WEIGHT_NAMES = ("R", "I", "b", "O1", "b1", "O2", "b2", "O3", "b3", "O4", "b4")
MATRIX_NAMES = ("R", "O1", "O2", "O3", "O4")


@dataclass(frozen=True)
class CellConfig:
    hidden: int
    cond_dim: int = 0
    proj: int | None = None

    def __post_init__(self):
        if self.hidden < 2 or self.hidden % 2:
            raise InputError(f"state size must be even and >= 2, got {self.hidden}")
        if self.cond_dim < 0:
            raise InputError("conditioning width must be >= 0")
        if self.proj is None:
            object.__setattr__(self, "proj", self.hidden // 2)
        if self.proj < 1:
            raise InputError("projection width must be >= 1")

    @property
    def half(self) -> int:
        return self.hidden // 2

    @property
    def input_dim(self) -> int:
        return N_SAMPLE_INPUTS + self.cond_dim

    def shapes(self) -> dict[str, tuple[int, ...]]:
        h, h2, p = self.hidden, self.half, self.proj
        return {
            "R": (3 * h, h), "I": (3 * h, self.input_dim), "b": (3 * h,),
            "O1": (p, h2), "b1": (p,), "O2": (N_CLASSES, p), "b2": (N_CLASSES,),
            "O3": (p, h2), "b3": (p,), "O4": (N_CLASSES, p), "b4": (N_CLASSES,),
        }

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())


def input_mask(config: CellConfig) -> np.ndarray:
    """Structural mask of the stacked input matrix: ``c_t`` reaches fine rows only."""
    h, h2 = config.hidden, config.half
    mask = np.ones((3 * h, config.input_dim), dtype=bool)
    for g in range(3):
        mask[g * h:g * h + h2, C_CUR] = False
    return mask


@dataclass
class CellParams:
    """All cell weights. ``R`` and ``O1..O4`` may be dense arrays or block-sparse."""

    config: CellConfig
    R: object
    I: np.ndarray
    b: np.ndarray
    O1: object
    b1: np.ndarray
    O2: object
    b2: np.ndarray
    O3: object
    b3: np.ndarray
    O4: object
    b4: np.ndarray

    def __post_init__(self):
        for name, shape in self.config.shapes().items():
            got = shape_of(getattr(self, name))
            if tuple(got) != shape:
                raise InputError(f"{name} has shape {tuple(got)}, expected {shape}")

    @classmethod
    def zeros(cls, config: CellConfig, dtype=np.float32) -> "CellParams":
        return cls(config, **{n: np.zeros(s, dtype=dtype) for n, s in config.shapes().items()})

    @classmethod
    def random(cls, config: CellConfig, seed=0, scale=1.0, bias_scale=0.0,
               dtype=np.float32) -> "CellParams":
        """Random weights with ``N(0, scale^2/fan_in)`` entries; input mask applied."""
        rng = np.random.default_rng(seed)
        t = {}
        for name, shape in config.shapes().items():
            if len(shape) == 2:
                t[name] = rng.standard_normal(shape) * (scale / np.sqrt(shape[1]))
            else:
                t[name] = rng.standard_normal(shape) * bias_scale
        t["I"] = t["I"] * input_mask(config)
        return cls(config, **{k: v.astype(dtype) for k, v in t.items()})

    def tensors(self) -> dict[str, object]:
        return {n: getattr(self, n) for n in WEIGHT_NAMES}

    def dense(self, dtype=None) -> "CellParams":
        """Copy with every tensor as a dense array (block-sparse ones decompressed)."""
        out = {}
        for n, v in self.tensors().items():
            a = to_dense(v)
            out[n] = np.array(a, dtype=dtype or (np.float32 if isinstance(v, BlockSparseMatrix)
                                                  else a.dtype))
        return replace(self, **out)

    @property
    def dtype(self):
        return np.asarray(self.I).dtype

    def gates(self) -> dict[str, np.ndarray]:
        """Unstacked recurrent matrices ``R_u``, ``R_r``, ``R_e`` (dense views)."""
        h = self.config.hidden
        R = to_dense(self.R)
        return {"R_u": R[:h], "R_r": R[h:2 * h], "R_e": R[2 * h:]}


class SamplePair(NamedTuple):
    c: int
    f: int

    @property
    def value(self) -> int:
        return decode_sample(self)


SILENCE = SamplePair(128, 0)


def scale_byte(v):
    """Map byte values in [0, 255] onto [-1, 1]."""
    return np.asarray(v, dtype=np.float64) * (2.0 / 255.0) - 1.0


def encode_sample(u: int) -> tuple[SamplePair, tuple[float, float]]:
    u = int(u)
    if not 0 <= u <= 65535:
        raise InputError(f"sample {u} outside [0, 65535]")
    c, f = divmod(u, 256)
    return SamplePair(c, f), (2.0 * c / 255.0 - 1.0, 2.0 * f / 255.0 - 1.0)


def decode_sample(p) -> int:
    return 256 * int(p[0]) + int(p[1])


class RngStream:
    """Seedable stream of float32 uniforms in [0, 1)."""

    def __init__(self, seed=0):
        if isinstance(seed, np.random.SeedSequence):
            self.seed_seq = seed
        else:
            self.seed_seq = np.random.SeedSequence(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed_seq))

    def uniform(self) -> float:
        return float(self._gen.random(dtype=np.float32))

    def lanes(self, n: int) -> list["RngStream"]:
        """Independent per-lane substreams derived from this stream's seed by lane index."""
        return [RngStream(s) for s in self.seed_seq.spawn(n)]


def lane_streams(seed, n: int) -> list[RngStream]:
    return [RngStream(s) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class ProductCounter:
    """Records the shape of every large matrix-vector product a step performs."""

    shapes: list = field(default_factory=list)

    def record(self, shape):
        self.shapes.append(tuple(shape))

    @property
    def count(self) -> int:
        return len(self.shapes)

    def reset(self):
        self.shapes.clear()


def op_inventory(config: CellConfig, stacked: bool = True) -> list[tuple[int, int]]:
    """Shapes (rows, cols) of the large products needed per sample."""
    h, h2, p = config.hidden, config.half, config.proj
    gates = [(3 * h, h)] if stacked else [(h, h)] * 3
    return gates + [(p, h2), (p, h2), (N_CLASSES, p), (N_CLASSES, p)]


# ----------------------------------------------------------------------------
# single-step sampling, lane-batched internally


class _Weights:
    """float32 view of the parameters used by the sampling loop."""

    def __init__(self, p: CellParams):
        cfg = p.config
        self.config = cfg
        self.h, self.h2 = cfg.hidden, cfg.half

        def f32(a):
            return a if isinstance(a, BlockSparseMatrix) else np.ascontiguousarray(a, np.float32)

        self.R = f32(p.R)
        self.I = np.ascontiguousarray(np.asarray(p.I, np.float32) * input_mask(cfg))
        self.b = np.asarray(p.b, np.float32)
        self.O1, self.O2, self.O3, self.O4 = (f32(p.O1), f32(p.O2), f32(p.O3), f32(p.O4))
        self.b1, self.b2, self.b3, self.b4 = (np.asarray(x, np.float32)
                                              for x in (p.b1, p.b2, p.b3, p.b4))


def _big(W, X, counter):
    if counter is not None:
        counter.record(shape_of(W))
    return matvec_lanes(W, X)


def _sigmoid(x):
    # exp overflow for very negative x is harmless: the result saturates to 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def categorical(P, u) -> np.ndarray:
    """Inverse-CDF draw per row of ``P`` from uniforms ``u``; ties go to the lower index."""
    cdf = np.cumsum(P, axis=-1)
    target = np.asarray(u, dtype=np.float64) * cdf[..., -1]
    idx = (cdf <= target[..., None]).sum(axis=-1)
    return np.minimum(idx, P.shape[-1] - 1)


def _head(first, second, b_first, b_second, y, counter):
    z = _big(first, y, counter) + b_first
    return _big(second, np.maximum(z, 0.0), counter) + b_second


def _check_finite(arr, what, position):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite {what} at step {position}", position)


@dataclass
class CoarseCache:
    """State carried from the coarse phase to the fine phase of one step."""

    h_prev: np.ndarray   # (k, h)
    x: np.ndarray        # (k, input_dim) with the c_t slot still at the placeholder
    rh: np.ndarray       # (k, 3h) recurrent contribution, computed once
    h_coarse: np.ndarray  # (k, h/2) updated coarse half
    position: int = 0


def _inputs(w: _Weights, c_prev, f_prev, cond, k):
    X = np.zeros((k, w.config.input_dim), dtype=np.float32)
    X[:, C_PREV] = scale_byte(c_prev)
    X[:, F_PREV] = scale_byte(f_prev)
    if w.config.cond_dim:
        if cond is None:
            raise InputError("this cell expects a conditioning vector")
        X[:, N_SAMPLE_INPUTS:] = np.asarray(cond, dtype=np.float32).reshape(k, -1)
    return X


def _coarse_lanes(w: _Weights, H, c_prev, f_prev, cond, uniforms, counter=None, position=0):
    k, h, h2 = H.shape[0], w.h, w.h2
    X = _inputs(w, c_prev, f_prev, cond, k)
    RH = _big(w.R, H, counter)
    pre = matvec_lanes(w.I, X) + w.b
    u = _sigmoid(RH[:, :h2] + pre[:, :h2])
    r = _sigmoid(RH[:, h:h + h2] + pre[:, h:h + h2])
    e = np.tanh(r * RH[:, 2 * h:2 * h + h2] + pre[:, 2 * h:2 * h + h2])
    hc = u * H[:, :h2] + (1.0 - u) * e
    logits = _head(w.O1, w.O2, w.b1, w.b2, hc, counter)
    _check_finite(logits, "coarse logits", position)
    P = softmax(logits)
    c = categorical(P, uniforms) if uniforms is not None else None
    return c, CoarseCache(H, X, RH, hc, position), P


def _fine_lanes(w: _Weights, cache: CoarseCache, c, uniforms, counter=None):
    h, h2 = w.h, w.h2
    X = cache.x.copy()
    X[:, C_CUR] = scale_byte(c)
    pre = matvec_lanes(w.I, X) + w.b
    RH, H = cache.rh, cache.h_prev
    u = _sigmoid(RH[:, h2:h] + pre[:, h2:h])
    r = _sigmoid(RH[:, h + h2:2 * h] + pre[:, h + h2:2 * h])
    e = np.tanh(r * RH[:, 2 * h + h2:] + pre[:, 2 * h + h2:])
    hf = u * H[:, h2:] + (1.0 - u) * e
    logits = _head(w.O3, w.O4, w.b3, w.b4, hf, counter)
    _check_finite(logits, "fine logits", cache.position)
    P = softmax(logits)
    f = categorical(P, uniforms) if uniforms is not None else None
    H_new = np.concatenate([cache.h_coarse, hf], axis=1)
    return f, P, H_new


def step_lanes(w: _Weights, H, c_prev, f_prev, cond, rngs, counter=None, position=0):
    """One full sampling step for ``k`` independent lanes.

    Each lane draws its coarse uniform then its fine uniform from its own
    stream, so a lane's output does not depend on the other lanes.
    """
    uc = np.array([g.uniform() for g in rngs], dtype=np.float32)
    c, cache, _ = _coarse_lanes(w, H, c_prev, f_prev, cond, uc, counter, position)
    uf = np.array([g.uniform() for g in rngs], dtype=np.float32)
    f, _, H_new = _fine_lanes(w, cache, c, uf, counter)
    return H_new, c, f


def _state(h_prev, config):
    H = np.asarray(h_prev, dtype=np.float32)
    if H.shape != (config.hidden,):
        raise InputError(f"state must have length {config.hidden}, got shape {H.shape}")
    return H[None, :]


def gate_preactivations(p: CellParams, h_prev, x):
    """Return ``(a_u, a_r, a_e)`` with ``a_g = R_g h + I*_g x + b_g``.

    ``R h`` is one product with the stacked matrix.
    """
    w = _Weights(p)
    H = _state(h_prev, p.config)
    x = np.asarray(x, dtype=np.float32)
    if x.shape != (p.config.input_dim,):
        raise InputError(f"input must have length {p.config.input_dim}, got shape {x.shape}")
    a = (matvec_lanes(w.R, H) + (matvec_lanes(w.I, x[None, :]) + w.b))[0]
    h = p.config.hidden
    return a[:h], a[h:2 * h], a[2 * h:]


def coarse_step(p: CellParams, h_prev, c_prev, f_prev, cond=None, rng=None, *,
                counter=None, _w=None):
    """Coarse phase: update the coarse half of the state and sample ``c_t``.

    Returns ``(c_t, cache, P(c_t))``. With ``rng=None`` no sample is drawn and
    ``c_t`` is ``None``.
    """
    w = _w or _Weights(p)
    H = _state(h_prev, p.config)
    uc = None if rng is None else np.array([rng.uniform()], dtype=np.float32)
    c, cache, P = _coarse_lanes(w, H, [c_prev], [f_prev], None if cond is None else [cond],
                                uc, counter)
    return (None if c is None else int(c[0])), cache, P[0]


def fine_step(p: CellParams, cache: CoarseCache, c_t: int, rng=None, *, counter=None, _w=None):
    """Fine phase: feed the true ``c_t``, update the fine half, sample ``f_t``.

    Returns ``(f_t, P(f_t), new_state)``.
    """
    w = _w or _Weights(p)
    uf = None if rng is None else np.array([rng.uniform()], dtype=np.float32)
    f, P, H_new = _fine_lanes(w, cache, [c_t], uf, counter)
    return (None if f is None else int(f[0])), P[0], H_new[0]


def sample_step(p: CellParams, h_prev, prev: SamplePair, cond=None, rng=None, *,
                counter=None, _w=None):
    """One autoregressive step: returns ``(new_state, SamplePair)``."""
    if rng is None:
        raise InputError("sample_step needs an RngStream")
    w = _w or _Weights(p)
    c, cache, _ = coarse_step(p, h_prev, prev[0], prev[1], cond, rng, counter=counter, _w=w)
    f, _, H_new = fine_step(p, cache, c, rng, counter=counter, _w=w)
    return H_new, SamplePair(c, f)


@dataclass
class Generation:
    waveform: np.ndarray      # uint16 samples in [0, 65535]
    seconds: float

    @property
    def samples_per_sec(self) -> float:
        return len(self.waveform) / self.seconds if self.seconds > 0 else float("inf")


def _cond_rows(cond, n, cond_dim):
    if cond_dim == 0:
        return None
    if cond is None:
        raise InputError("this cell expects a conditioning sequence")
    cond = np.asarray(cond, dtype=np.float32)
    if cond.shape != (n, cond_dim):
        raise InputError(f"conditioning must have shape {(n, cond_dim)}, got {cond.shape}")
    return cond


def generate(p: CellParams, n_samples: int, cond=None, rng=None,
             initial: SamplePair = SILENCE) -> Generation:
    """Autoregressive rollout of ``n_samples`` from a zero state.

    ``cond[t]`` conditions emitted sample ``t``.
    """
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    rng = rng if isinstance(rng, RngStream) else RngStream(0 if rng is None else rng)
    cond = _cond_rows(cond, n_samples, p.config.cond_dim)
    w = _Weights(p)
    H = np.zeros((1, p.config.hidden), dtype=np.float32)
    c, f = np.array([initial[0]]), np.array([initial[1]])
    out = np.empty(n_samples, dtype=np.uint16)
    t0 = time.perf_counter()
    for t in range(n_samples):
        H, c, f = step_lanes(w, H, c, f, None if cond is None else cond[t:t + 1], [rng],
                             position=t)
        out[t] = 256 * int(c[0]) + int(f[0])
    return Generation(out, time.perf_counter() - t0)


# ----------------------------------------------------------------------------
# teacher-forced evaluation (shared with the trainer's backward pass)


def waveform_batch(waveform) -> np.ndarray:
    U = np.asarray(waveform)
    if U.ndim == 1:
        U = U[None, :]
    if U.ndim != 2:
        raise InputError("waveform batch must be 1-D or 2-D")
    if U.shape[1] < 2:
        raise InputError("waveform must have at least 2 samples")
    if U.min() < 0 or U.max() > 65535:
        raise InputError("samples must lie in [0, 65535]")
    return U.astype(np.int64)


@dataclass
class Forward:
    """Everything the backward pass needs from a teacher-forced forward pass."""

    X: np.ndarray          # (T, N, D) inputs
    H: np.ndarray          # (T + 1, N, h) states, H[0] = 0
    RH: np.ndarray         # (T, N, 3h)
    u: np.ndarray
    r: np.ndarray
    e: np.ndarray          # (T, N, h) each
    z1: np.ndarray
    z3: np.ndarray         # (T, N, p) projection pre-activations
    Pc: np.ndarray
    Pf: np.ndarray         # (T, N, 256)
    c: np.ndarray
    f: np.ndarray          # (T, N) targets
    nll: np.ndarray        # (T, N) per-step nats


def teacher_forced(p: CellParams, waveform, cond=None) -> Forward:
    """Run the cell over ground truth; ``waveform`` is ``(N, T+1)`` or ``(T+1,)``.

    Step ``t`` reads ``u[t]`` as the previous sample and predicts ``u[t+1]``.
    ``cond`` has shape ``(N, T+1, cond_dim)`` (or ``(T+1, cond_dim)``);
    ``cond[:, t+1]`` conditions the prediction of ``u[t+1]``.
    """
    dp = p.dense() if any(isinstance(v, BlockSparseMatrix) for v in p.tensors().values()) else p
    dt = dp.dtype
    cfg = p.config
    U = waveform_batch(waveform)
    N, T1 = U.shape
    T = T1 - 1
    h, h2 = cfg.hidden, cfg.half
    cb, fb = U >> 8, U & 255

    X = np.zeros((T, N, cfg.input_dim), dtype=dt)
    X[..., C_PREV] = scale_byte(cb[:, :-1]).T
    X[..., F_PREV] = scale_byte(fb[:, :-1]).T
    X[..., C_CUR] = scale_byte(cb[:, 1:]).T
    if cfg.cond_dim:
        if cond is None:
            raise InputError("this cell expects a conditioning sequence")
        C = np.asarray(cond, dtype=dt)
        if C.ndim == 2:
            C = np.broadcast_to(C, (N,) + C.shape)
        if C.shape != (N, T1, cfg.cond_dim):
            raise InputError(f"conditioning must have shape {(N, T1, cfg.cond_dim)}")
        X[..., N_SAMPLE_INPUTS:] = C[:, 1:].transpose(1, 0, 2)

    I_eff = dp.I * input_mask(cfg)
    pre = X @ I_eff.T + dp.b                      # (T, N, 3h)
    RT = np.ascontiguousarray(dp.R.T)
    H = np.zeros((T + 1, N, h), dtype=dt)
    RH = np.empty((T, N, 3 * h), dtype=dt)
    u = np.empty((T, N, h), dtype=dt)
    r = np.empty_like(u)
    e = np.empty_like(u)
    for t in range(T):
        rh = H[t] @ RT
        RH[t] = rh
        ut = _sigmoid(rh[:, :h] + pre[t, :, :h])
        rt = _sigmoid(rh[:, h:2 * h] + pre[t, :, h:2 * h])
        et = np.tanh(rt * rh[:, 2 * h:] + pre[t, :, 2 * h:])
        u[t], r[t], e[t] = ut, rt, et
        H[t + 1] = ut * H[t] + (1.0 - ut) * et

    Y = H[1:]
    z1 = Y[..., :h2] @ dp.O1.T + dp.b1
    lc = np.maximum(z1, 0) @ dp.O2.T + dp.b2
    z3 = Y[..., h2:] @ dp.O3.T + dp.b3
    lf = np.maximum(z3, 0) @ dp.O4.T + dp.b4
    if not (np.all(np.isfinite(lc)) and np.all(np.isfinite(lf))):
        bad = np.argwhere(~np.isfinite(lc).all(-1) | ~np.isfinite(lf).all(-1))[0]
        raise NumericError(f"non-finite logits at step {bad[0]} of sequence {bad[1]}",
                           int(bad[0]))
    Pc = softmax(lc).astype(dt)
    Pf = softmax(lf).astype(dt)
    c = cb[:, 1:].T
    f = fb[:, 1:].T
    lpc = _log_softmax_at(lc, c)
    lpf = _log_softmax_at(lf, f)
    return Forward(X, H, RH, u, r, e, z1, z3, Pc, Pf, c, f, -(lpc + lpf))


def _log_softmax_at(logits, idx):
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    lse = (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[..., 0]
    return np.take_along_axis(z, idx[..., None], axis=-1)[..., 0] - lse


def sequence_nll(p: CellParams, waveform, cond=None) -> float:
    """Mean teacher-forced NLL in nats per predicted 16-bit sample, from a zero state."""
    fw = teacher_forced(p, waveform, cond)
    return float(fw.nll.mean())
