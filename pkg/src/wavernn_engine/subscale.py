"""Subscale generation: interleaved sub-tensors, a future-looking conditioning
network, batched sampling with a per-lane start lag, and the fused two-lane cell.

A waveform ``u`` of length ``n`` is folded into ``B`` sub-tensors of length
``n / B``; sub-tensor ``s`` holds ``u[s], u[s+B], ...``. Sub-tensors are generated
in order. Sample ``i`` of sub-tensor ``s`` sees its own sub-tensor's past through
the recurrent state and the previous sub-tensors through a conditioning network
that reads positions ``i .. i + receptive_field - 1`` only. Since that window
never reaches position ``i + F``, lane ``s`` can start ``F`` steps after lane
``s - 1`` and every lane then advances one position per step.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .cell import (SILENCE, CellParams, RngStream, _coarse_lanes, _fine_lanes, _Weights,
                   categorical, lane_streams, softmax, step_lanes)
from .errors import InputError
from .sparse import matvec_lanes

PAD = 32768


# ----------------------------------------------------------------------------
# folding


@dataclass(frozen=True)
class SubscaleConfig:
    B: int
    F: int
    L: int = 64    # positions of conditioning computed per lane in one call

    def __post_init__(self):
        if self.B < 1 or self.F < 1 or self.L < 1:
            raise InputError(f"B, F and L must be >= 1, got {self.B}, {self.F}, {self.L}")

    def full_batch_step(self) -> int:
        """First step at which all ``B`` lanes are active."""
        return (self.B - 1) * self.F

    def active_lanes(self, t: int) -> int:
        return min(self.B, t // self.F + 1)


def fold(u, B: int) -> np.ndarray:
    """``(B, n/B)`` array whose row ``s`` is ``u[s::B]``."""
    u = np.asarray(u)
    if u.ndim != 1:
        raise InputError("fold expects a 1-D waveform")
    if B < 1:
        raise InputError("B must be >= 1")
    if len(u) % B:
        raise InputError(f"length {len(u)} is not divisible by B={B}; pad first")
    return np.ascontiguousarray(u.reshape(-1, B).T)


def unfold(sub) -> np.ndarray:
    try:
        S = np.asarray(sub)
    except ValueError:
        raise InputError("sub-tensors have different lengths") from None
    if S.ndim != 2:
        raise InputError("sub-tensors have different lengths")
    return np.ascontiguousarray(S.T).reshape(-1)


def pad(u, B: int) -> tuple[np.ndarray, int]:
    """Right-pad with the midpoint sample to a multiple of ``B``; returns (padded, original length)."""
    u = np.asarray(u)
    extra = (-len(u)) % B
    return np.concatenate([u, np.full(extra, PAD, dtype=u.dtype)]), len(u)


def dependency_set(i: int, s: int, cfg: SubscaleConfig) -> set[int]:
    """Absolute indices that sample ``(i, s)`` may depend on, horizon ``i + F`` inclusive."""
    if not 0 <= s < cfg.B:
        raise InputError(f"s must be in [0, {cfg.B})")
    B = cfg.B
    own = {B * j + s for j in range(i)}
    prev = {B * k + z for z in range(s) for k in range(i + cfg.F + 1)}
    return own | prev


# ----------------------------------------------------------------------------
# conditioning network


@dataclass
class CondLayer:
    dilation: int
    Wc: np.ndarray    # (conv, 2 * res): taps at offsets 0 and +dilation
    bc: np.ndarray
    Wr: np.ndarray    # (res, conv)


@dataclass
class CondNetParams:
    """Stack of kernel-3 dilated convolutions whose past tap is masked out.

    Layer ``l`` maps ``a`` to ``a[j] + Wr relu(Wc [a[j]; a[j+d]] + bc)``; the
    ``j - d`` tap is structurally absent, so only taps ``0`` and ``+d`` exist.
    """

    B: int
    W_in: np.ndarray          # (res, 3B)
    b_in: np.ndarray
    layers: list[CondLayer]
    W_out: np.ndarray         # (out_dim, res)
    b_out: np.ndarray
    kernel: int = 3

    @property
    def in_channels(self) -> int:
        return 3 * self.B

    @property
    def out_dim(self) -> int:
        return self.W_out.shape[0]

    @property
    def dilations(self) -> tuple[int, ...]:
        return tuple(l.dilation for l in self.layers)

    @classmethod
    def create(cls, B, out_dim=16, dilations=(1, 2, 4, 8), channels=64, conv_channels=None,
               seed=0, scale=1.0, zero=False) -> "CondNetParams":
        if any(d < 1 for d in dilations):
            raise InputError("dilations must be >= 1")
        conv = conv_channels or channels
        rng = np.random.default_rng(seed)

        def mat(r, c):
            if zero:
                return np.zeros((r, c), np.float32)
            return (rng.standard_normal((r, c)) * (scale / np.sqrt(c))).astype(np.float32)

        def vec(n):
            return np.zeros(n, np.float32) if zero else (0.1 * rng.standard_normal(n)).astype(np.float32)

        layers = [CondLayer(int(d), mat(conv, 2 * channels), vec(conv), mat(channels, conv))
                  for d in dilations]
        return cls(B, mat(channels, 3 * B), vec(channels), layers, mat(out_dim, channels),
                   vec(out_dim))

    @classmethod
    def desk(cls, B, out_dim=16, seed=0):
        return cls.create(B, out_dim, (1, 2, 4, 8), 64, seed=seed)

    @classmethod
    def large_preset(cls, B=16, out_dim=128, seed=0):
        """Ten layers, 384 conv / 768 residual channels, five dilation stages used twice."""
        return cls.create(B, out_dim, (2, 4, 8, 16, 32) * 2, 768, 384, seed=seed)

    def tensors(self) -> dict[str, np.ndarray]:
        t = {"W_in": self.W_in, "b_in": self.b_in, "W_out": self.W_out, "b_out": self.b_out}
        for k, l in enumerate(self.layers):
            t[f"layer{k}.Wc"], t[f"layer{k}.bc"], t[f"layer{k}.Wr"] = l.Wc, l.bc, l.Wr
        return t

    @classmethod
    def from_tensors(cls, B, dilations, t) -> "CondNetParams":
        layers = [CondLayer(int(d), t[f"layer{k}.Wc"], t[f"layer{k}.bc"], t[f"layer{k}.Wr"])
                  for k, d in enumerate(dilations)]
        return cls(B, t["W_in"], t["b_in"], layers, t["W_out"], t["b_out"])


def receptive_field(cnet: CondNetParams) -> int:
    """Number of positions ``i .. i + sum(d)`` the output at ``i`` reads."""
    return 1 + sum(cnet.dilations)


def _lane_inputs(cnet: CondNetParams, previous, s: int, positions, length: int) -> np.ndarray:
    """Input windows ``(len(positions), R, 3B)`` with zeros past ``length``."""
    B, R = cnet.B, receptive_field(cnet)
    positions = np.asarray(positions, dtype=np.int64)
    X = np.zeros((len(positions), R, 3 * B), dtype=np.float32)
    X[:, :, 2 * B + s] = 1.0
    if len(positions) == 0:
        return X
    need = min(int(positions.max()) + R, length)
    for z in range(s):
        have = len(previous[z])
        if have < need:
            raise InputError(f"conditioning for sub-tensor {s} needs positions {have}..{need - 1} "
                             f"of sub-tensor {z}, which are not available")
        seq = np.asarray(previous[z][:length], dtype=np.int64)
        idx = positions[:, None] + np.arange(R)[None, :]
        inside = idx < length
        vals = seq[np.minimum(idx, length - 1)]
        X[:, :, 2 * z] = np.where(inside, (vals >> 8) * (2.0 / 255.0) - 1.0, 0.0)
        X[:, :, 2 * z + 1] = np.where(inside, (vals & 255) * (2.0 / 255.0) - 1.0, 0.0)
    return X


def cond_forward(cnet: CondNetParams, previous, s: int, positions, length: int) -> np.ndarray:
    """Conditioning vectors ``(len(positions), out_dim)`` for sub-tensor ``s``.

    ``previous[z]`` holds the generated prefix of sub-tensor ``z < s``; positions
    at or beyond ``length`` read as zero. Each output row is computed on its own,
    so the result for a position does not depend on which other positions are
    requested alongside it.
    """
    if not 0 <= s < cnet.B:
        raise InputError(f"s must be in [0, {cnet.B})")
    if len(previous) < s:
        raise InputError(f"sub-tensor {s} needs {s} previous sub-tensors, got {len(previous)}")
    X = _lane_inputs(cnet, previous, s, positions, length)
    P, R, _ = X.shape
    C = cnet.W_in.shape[0]
    a = (matvec_lanes(cnet.W_in, X.reshape(-1, X.shape[-1])) + cnet.b_in).reshape(P, R, C)
    width = R
    for layer in cnet.layers:
        d = layer.dilation
        width -= d
        taps = np.concatenate([a[:, :width], a[:, d:d + width]], axis=-1).reshape(-1, 2 * C)
        z = np.maximum(matvec_lanes(layer.Wc, taps) + layer.bc, 0.0)
        a = a[:, :width] + matvec_lanes(layer.Wr, z).reshape(P, width, C)
    return matvec_lanes(cnet.W_out, np.ascontiguousarray(a[:, 0])) + cnet.b_out


def _check(cell: CellParams, cnet: CondNetParams, cfg: SubscaleConfig, n: int):
    if cnet.B != cfg.B:
        raise InputError(f"conditioning net built for B={cnet.B}, config has B={cfg.B}")
    if cell.config.cond_dim != cnet.out_dim:
        raise InputError(f"cell expects {cell.config.cond_dim} conditioning features, "
                         f"net produces {cnet.out_dim}")
    if receptive_field(cnet) > cfg.F:
        raise InputError(f"receptive field {receptive_field(cnet)} exceeds horizon F={cfg.F}")
    if n < cfg.B or n % cfg.B:
        raise InputError(f"n={n} must be a positive multiple of B={cfg.B}")


# ----------------------------------------------------------------------------
# generation


def sequential_generate(cell: CellParams, cnet: CondNetParams, cfg: SubscaleConfig, n: int,
                        rng=0) -> np.ndarray:
    """Reference generator: sub-tensor 0 in full, then 1, and so on."""
    _check(cell, cnet, cfg, n)
    m = n // cfg.B
    lanes = lane_streams(rng, cfg.B)
    w = _Weights(cell)
    sub = np.empty((cfg.B, m), dtype=np.uint16)
    for s in range(cfg.B):
        cond = np.concatenate([cond_forward(cnet, sub[:s], s, range(a, min(a + cfg.L, m)), m)
                               for a in range(0, m, cfg.L)])
        H = np.zeros((1, cell.config.hidden), dtype=np.float32)
        c, f = np.array([SILENCE.c]), np.array([SILENCE.f])
        for i in range(m):
            H, c, f = step_lanes(w, H, c, f, cond[i:i + 1], [lanes[s]], position=i)
            sub[s, i] = 256 * int(c[0]) + int(f[0])
    return unfold(sub)


class TraceRow(NamedTuple):
    step: int
    active_lanes: int
    emitted_samples: int


@dataclass
class BatchedResult:
    waveform: np.ndarray
    trace: list[TraceRow]
    seconds: float
    activation: dict[int, int] = field(default_factory=dict)   # lane -> first step

    @property
    def steps(self) -> int:
        return len(self.trace)

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TraceRow._fields)
            w.writerows(self.trace)


def batched_generate(cell: CellParams, cnet: CondNetParams, cfg: SubscaleConfig, n: int,
                     rng=0) -> BatchedResult:
    """All active lanes advance together; lane ``s`` starts at step ``s * F``.

    Conditioning for a lane is computed ahead in blocks of up to ``L`` positions,
    limited to what the previous lanes have already produced.
    """
    _check(cell, cnet, cfg, n)
    B, F, m = cfg.B, cfg.F, n // cfg.B
    R = receptive_field(cnet)
    lanes = lane_streams(rng, B)
    w = _Weights(cell)
    sub = np.empty((B, m), dtype=np.uint16)
    done = [0] * B                     # generated prefix length per lane
    cond = [np.empty((m, cnet.out_dim), np.float32) for _ in range(B)]
    ready = [0] * B                    # conditioning rows computed per lane
    H = np.zeros((B, cell.config.hidden), dtype=np.float32)
    c = np.full(B, SILENCE.c)
    f = np.full(B, SILENCE.f)
    trace, activation = [], {}
    t0 = time.perf_counter()
    t = 0
    while done[B - 1] < m:
        active = [s for s in range(B) if s * F <= t and done[s] < m]
        for s in active:
            activation.setdefault(s, t)
            i = done[s]
            if ready[s] <= i:
                # every position p with min(p + R, m) <= done[z] for all z < s is computable
                limit = min([done[z] - R + 1 if done[z] < m else m for z in range(s)], default=m)
                hi = min(i + cfg.L, m, max(limit, i + 1))
                cond[s][i:hi] = cond_forward(cnet, [sub[z, :done[z]] for z in range(s)], s,
                                             range(i, hi), m)
                ready[s] = hi
        idx = np.array(active)
        rows = np.stack([cond[s][done[s]] for s in active])
        Hn, cn, fn = step_lanes(w, H[idx], c[idx], f[idx], rows, [lanes[s] for s in active],
                                position=t)
        H[idx], c[idx], f[idx] = Hn, cn, fn
        for k, s in enumerate(active):
            sub[s, done[s]] = 256 * int(cn[k]) + int(fn[k])
            done[s] += 1
        trace.append(TraceRow(t, len(active), len(active)))
        t += 1
    return BatchedResult(unfold(sub), trace, time.perf_counter() - t0, activation)


# ----------------------------------------------------------------------------
# dependency ablation


def _replay(cell: CellParams, cnet: CondNetParams, cfg: SubscaleConfig, subs, s: int, i: int,
            seed) -> np.ndarray:
    """Re-emit sample ``(i, s)`` once per context in ``subs`` (shape ``(k, B, m)``).

    Lane ``s`` is teacher-forced on each context's own values for positions
    below ``i`` and draws position ``i`` with the same uniforms the generator
    used, so the emitted values differ only through the conditional itself.
    """
    k, _, m = subs.shape
    stream = lane_streams(seed, cfg.B)[s]
    uniforms = [stream.uniform() for _ in range(2 * (i + 1))]
    w = _Weights(cell)
    base = cond_forward(cnet, subs[0, :s], s, range(i + 1), m)
    cond = np.stack([base if np.array_equal(subs[j, :s], subs[0, :s])
                     else cond_forward(cnet, subs[j, :s], s, range(i + 1), m) for j in range(k)])
    H = np.zeros((k, cell.config.hidden), dtype=np.float32)
    c = np.full(k, SILENCE.c)
    f = np.full(k, SILENCE.f)
    for pos in range(i + 1):
        uc = np.full(k, uniforms[2 * pos], np.float32)
        cc, cache, _ = _coarse_lanes(w, H, c, f, cond[:, pos], uc, position=pos)
        if pos < i:
            cc = subs[:, s, pos].astype(np.int64) >> 8
        uf = np.full(k, uniforms[2 * pos + 1], np.float32)
        ff, _, H = _fine_lanes(w, cache, cc, uf)
        if pos < i:
            ff = subs[:, s, pos].astype(np.int64) & 255
        c, f = cc, ff
    return 256 * c + f


class Violation(NamedTuple):
    target: int
    ablated: int


def ablation_check(cell: CellParams, cnet: CondNetParams, cfg: SubscaleConfig, n: int,
                   seed=0, targets=None) -> tuple[list[Violation], int]:
    """Perturb every other sample in each target's context and re-emit the target.

    Returns the out-of-set perturbations that changed the target (violations)
    and the number of in-set perturbations that changed it, which shows the
    probe is able to see dependence at all.
    """
    wave = sequential_generate(cell, cnet, cfg, n, seed)
    base = fold(wave, cfg.B)
    m = n // cfg.B
    violations, detected = [], 0
    for target in (range(n) if targets is None else targets):
        i, s = divmod(target, cfg.B)
        others = [j for j in range(n) if j != target]
        subs = np.repeat(base[None], len(others) + 1, axis=0)
        for row, j in enumerate(others, 1):
            jp, js = divmod(j, cfg.B)
            subs[row, js, jp] = (int(base[js, jp]) + PAD) % 65536
        out = _replay(cell, cnet, cfg, subs, s, i, seed)
        if out[0] != base[s, i]:
            raise AssertionError(f"replay of sample {target} does not reproduce the generator")
        deps = dependency_set(i, s, cfg)
        for row, j in enumerate(others, 1):
            if out[row] != out[0]:
                if j in deps:
                    detected += 1
                else:
                    violations.append(Violation(target, j))
    return violations, detected


# ----------------------------------------------------------------------------
# fused two-lane cell

N_GROUPS = 8
NIBBLE_CLASSES = 16


@dataclass(frozen=True)
class FusedConfig:
    """Two interleaved lanes in one cell; eight 16-way softmaxes per step.

    Nibble ``k`` of a step is predicted by state group ``k``; groups are ordered
    lane 0 (coarse-hi, coarse-lo, fine-hi, fine-lo), then lane 1 the same way.
    """

    hidden: int
    proj: int | None = None
    n_subtensors: int = 2
    F: int = 2

    def __post_init__(self):
        if self.hidden < N_GROUPS or self.hidden % N_GROUPS:
            raise InputError(f"fused state size must be a positive multiple of 8, got {self.hidden}")
        if self.proj is None:
            object.__setattr__(self, "proj", self.hidden // N_GROUPS)

    @property
    def group(self) -> int:
        return self.hidden // N_GROUPS

    @property
    def input_dim(self) -> int:
        return 2 * N_GROUPS

    @property
    def bits_per_step(self) -> int:
        return N_GROUPS * 4

    def shapes(self):
        h, g, p = self.hidden, self.group, self.proj
        return {"R": (3 * h, h), "I": (3 * h, self.input_dim), "b": (3 * h,),
                "O1": (N_GROUPS, p, g), "b1": (N_GROUPS, p),
                "O2": (N_GROUPS, NIBBLE_CLASSES, p), "b2": (N_GROUPS, NIBBLE_CLASSES)}

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())


def fused_input_mask(cfg: FusedConfig) -> np.ndarray:
    """Columns 0..7 are the previous step's nibbles; column ``8 + k`` feeds groups ``> k``."""
    h, g = cfg.hidden, cfg.group
    mask = np.ones((3 * h, cfg.input_dim), dtype=bool)
    for k in range(N_GROUPS):
        for gate in range(3):
            mask[gate * h:gate * h + (k + 1) * g, N_GROUPS + k] = False
    return mask


@dataclass
class FusedParams:
    config: FusedConfig
    R: np.ndarray
    I: np.ndarray
    b: np.ndarray
    O1: np.ndarray
    b1: np.ndarray
    O2: np.ndarray
    b2: np.ndarray

    NAMES = ("R", "I", "b", "O1", "b1", "O2", "b2")

    def __post_init__(self):
        for name, shape in self.config.shapes().items():
            if np.shape(getattr(self, name)) != shape:
                raise InputError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")

    @classmethod
    def zeros(cls, cfg: FusedConfig) -> "FusedParams":
        return cls(cfg, **{n: np.zeros(s, np.float32) for n, s in cfg.shapes().items()})

    @classmethod
    def random(cls, cfg: FusedConfig, seed=0, scale=1.0) -> "FusedParams":
        rng = np.random.default_rng(seed)
        t = {}
        for n, s in cfg.shapes().items():
            t[n] = (rng.standard_normal(s) * (scale / np.sqrt(s[-1]))).astype(np.float32) \
                if n in ("R", "I", "O1", "O2") else np.zeros(s, np.float32)
        t["I"] *= fused_input_mask(cfg)
        return cls(cfg, **t)

    def tensors(self):
        return {n: getattr(self, n) for n in self.NAMES}


def nibbles(u: int) -> list[int]:
    return [(u >> 12) & 15, (u >> 8) & 15, (u >> 4) & 15, u & 15]


def _scale_nibble(v):
    return np.asarray(v, np.float32) * np.float32(2.0 / 15.0) - np.float32(1.0)


class _FusedRunner:
    """One fused step: a single recurrent product, then eight chained group updates."""

    def __init__(self, p: FusedParams):
        cfg = p.config
        self.cfg, self.h, self.g = cfg, cfg.hidden, cfg.group
        self.R = np.ascontiguousarray(p.R, np.float32)
        self.I = np.ascontiguousarray(p.I * fused_input_mask(cfg), np.float32)
        self.b, self.O1, self.b1, self.O2, self.b2 = p.b, p.O1, p.b1, p.O2, p.b2

    def step(self, H, prev0, prev1, choose):
        """``choose(k, P)`` returns nibble ``k`` given its distribution."""
        h, g = self.h, self.g
        RH = matvec_lanes(self.R, H[None])[0]
        x = np.zeros(self.cfg.input_dim, np.float32)
        x[:4] = _scale_nibble(nibbles(prev0))
        x[4:8] = _scale_nibble(nibbles(prev1))
        Hn = np.empty_like(H)
        out = []
        for k in range(N_GROUPS):
            rows = [slice(gate * h + k * g, gate * h + (k + 1) * g) for gate in range(3)]
            pre = [self.I[r] @ x + self.b[r] for r in rows]
            uk = 1.0 / (1.0 + np.exp(-(RH[rows[0]] + pre[0])))
            rk = 1.0 / (1.0 + np.exp(-(RH[rows[1]] + pre[1])))
            ek = np.tanh(rk * RH[rows[2]] + pre[2])
            hk = uk * H[k * g:(k + 1) * g] + (1.0 - uk) * ek
            Hn[k * g:(k + 1) * g] = hk
            logits = self.O2[k] @ np.maximum(self.O1[k] @ hk + self.b1[k], 0.0) + self.b2[k]
            v = choose(k, softmax(logits))
            x[N_GROUPS + k] = _scale_nibble(v)
            out.append(v)
        return Hn, out


def _join(nib):
    return (nib[0] << 12) | (nib[1] << 8) | (nib[2] << 4) | nib[3]


def fused_generate(p: FusedParams, n: int, rng=0) -> np.ndarray:
    """Two samples per step; lane 1 trails lane 0 by one position.

    Step ``t`` emits lane 0 position ``t`` and lane 1 position ``t - 1``, so
    lane 1 at position ``j`` has seen lane 0 through position ``j + 1``. The
    run takes ``n/2 + 1`` steps; the two edge draws are discarded.
    """
    if n < 2 or n % 2:
        raise InputError("fused generation needs an even length >= 2")
    rng = rng if isinstance(rng, RngStream) else RngStream(rng)
    runner = _FusedRunner(p)
    m = n // 2
    lane0 = np.empty(m, np.uint16)
    lane1 = np.empty(m, np.uint16)
    H = np.zeros(p.config.hidden, np.float32)
    prev0 = prev1 = SILENCE.c * 256 + SILENCE.f

    def draw(k, P):
        return int(categorical(P, rng.uniform()))

    for t in range(m + 1):
        H, nib = runner.step(H, prev0, prev1, draw)
        a, b = _join(nib[:4]), _join(nib[4:])
        if t < m:
            lane0[t] = a
        if t >= 1:
            lane1[t - 1] = b
        prev0 = a
        prev1 = b if t >= 1 else prev1
    return unfold(np.stack([lane0, lane1]))


def fused_sequence_nll(p: FusedParams, waveform) -> float:
    """Teacher-forced NLL in nats per 16-bit sample under the fused factorization."""
    u = np.asarray(waveform, dtype=np.int64)
    if u.ndim != 1 or len(u) < 2 or len(u) % 2:
        raise InputError("fused evaluation needs a 1-D waveform of even length")
    if u.min() < 0 or u.max() > 65535:
        raise InputError("samples must lie in [0, 65535]")
    lane0, lane1 = fold(u, 2)
    m = len(lane0)
    runner = _FusedRunner(p)
    H = np.zeros(p.config.hidden, np.float32)
    prev0 = prev1 = SILENCE.c * 256 + SILENCE.f
    total = 0.0
    for t in range(m + 1):
        a = int(lane0[t]) if t < m else SILENCE.c * 256 + SILENCE.f
        b = int(lane1[t - 1]) if t >= 1 else SILENCE.c * 256 + SILENCE.f
        truth = nibbles(a) + nibbles(b)
        logp = []

        def force(k, P):
            logp.append(np.log(P[truth[k]]))
            return truth[k]

        H, _ = runner.step(H, prev0, prev1, force)
        if t < m:
            total -= sum(logp[:4])
        if t >= 1:
            total -= sum(logp[4:])
        prev0 = a
        prev1 = b if t >= 1 else prev1
    return float(total / len(u))
