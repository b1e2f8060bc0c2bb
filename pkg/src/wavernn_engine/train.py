"""Maximum-likelihood training with full BPTT and gradual magnitude pruning."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .cell import (MATRIX_NAMES, WEIGHT_NAMES, CellConfig, CellParams, input_mask,
                   teacher_forced)
from .errors import InputError, NumericError
from .sparse import UNSTRUCTURED, BlockShape, SparsityMask, to_dense

log = logging.getLogger(__name__)

# Matrices the pruner treats separately; the three gate blocks of R are split.
PRUNABLE = ("R_u", "R_r", "R_e", "O1", "O2", "O3", "O4")


@dataclass(frozen=True)
class PruneSchedule:
    target: float                 # final sparsity Z
    start: int = 1000             # step t0 at which pruning begins
    duration: int = 200_000       # S, steps over which z ramps to Z
    cadence: int = 500            # steps between mask updates
    block_shape: BlockShape = UNSTRUCTURED

    def __post_init__(self):
        if not 0.0 <= self.target < 1.0:
            raise InputError(f"target sparsity must be in [0, 1), got {self.target}")
        if self.duration < 1 or self.cadence < 1 or self.start < 0:
            raise InputError("duration and cadence must be >= 1, start >= 0")

    def fraction(self, t) -> float:
        return prune_fraction(t, self)

    def due(self, t: int) -> bool:
        return t >= self.start and (t - self.start) % self.cadence == 0


def prune_fraction(t, sched: PruneSchedule) -> float:
    """Cubic ramp ``Z (1 - (1 - (t - t0)/S)^3)``, 0 before ``t0`` and ``Z`` after ``t0 + S``."""
    if t <= sched.start:
        return 0.0
    if t >= sched.start + sched.duration:
        return sched.target
    progress = (t - sched.start) / sched.duration
    return sched.target * (1.0 - (1.0 - progress) ** 3)


def block_magnitudes(weights, block_shape: BlockShape) -> np.ndarray:
    W = np.abs(np.asarray(weights, dtype=np.float64))
    nbr, nbc = block_shape.grid(*W.shape)
    return W.reshape(nbr, block_shape.rows, nbc, block_shape.cols).mean(axis=(1, 3))


def update_mask(weights, z: float, block_shape: BlockShape = UNSTRUCTURED) -> SparsityMask:
    """Clear the ``floor(z * n_blocks)`` blocks with the smallest mean magnitude."""
    if not 0.0 <= z < 1.0:
        raise InputError(f"z must be in [0, 1), got {z}")
    mags = block_magnitudes(weights, block_shape)
    k = int(math.floor(z * mags.size))
    keep = np.ones(mags.size, dtype=bool)
    if k:
        keep[np.argsort(mags.reshape(-1), kind="stable")[:k]] = False
    return SparsityMask.from_blocks(keep.reshape(mags.shape), block_shape)


def prunable_views(p: CellParams) -> dict[str, np.ndarray]:
    h = p.config.hidden
    R = to_dense(p.R)
    return {"R_u": R[:h], "R_r": R[h:2 * h], "R_e": R[2 * h:],
            "O1": to_dense(p.O1), "O2": to_dense(p.O2),
            "O3": to_dense(p.O3), "O4": to_dense(p.O4)}


def masks_to_tensors(masks: dict[str, SparsityMask]) -> dict[str, np.ndarray]:
    """Element masks keyed by tensor name (``R`` stacks the three gate masks)."""
    out = {n: masks[n].elements() for n in ("O1", "O2", "O3", "O4") if n in masks}
    if all(g in masks for g in ("R_u", "R_r", "R_e")):
        out["R"] = np.concatenate([masks[g].elements() for g in ("R_u", "R_r", "R_e")])
    return out


def apply_masks(p: CellParams, masks) -> CellParams:
    if not masks:
        return p
    em = masks_to_tensors(masks)
    return replace(p, **{n: np.where(m, getattr(p, n), 0).astype(getattr(p, n).dtype)
                         for n, m in em.items()})


# ----------------------------------------------------------------------------
# gradients


@dataclass
class GradientSet:
    grads: dict[str, np.ndarray]

    def __getitem__(self, name):
        return self.grads[name]

    def items(self):
        return self.grads.items()


def forward_backward(p: CellParams, batch, cond=None) -> tuple[float, GradientSet]:
    """Mean teacher-forced NLL over a batch of equal-length segments and its exact gradient."""
    fw = teacher_forced(p, batch, cond)
    loss = float(fw.nll.mean())
    if not np.isfinite(loss):
        bad = int(np.argwhere(~np.isfinite(fw.nll))[0][1])
        raise NumericError(f"non-finite loss in batch sequence {bad}", bad)
    cfg = p.config
    h, h2 = cfg.hidden, cfg.half
    T, N = fw.c.shape
    dt = fw.H.dtype
    scale = 1.0 / (T * N)

    def head_grads(P, target, z, first, second, y):
        dl = P.copy()
        np.put_along_axis(dl, target[..., None], np.take_along_axis(dl, target[..., None], -1) - 1, -1)
        dl *= scale
        a = np.maximum(z, 0)
        g_second = dl.reshape(-1, dl.shape[-1]).T @ a.reshape(-1, a.shape[-1])
        g_bsecond = dl.sum(axis=(0, 1))
        dz = (dl @ second) * (z > 0)
        g_first = dz.reshape(-1, dz.shape[-1]).T @ y.reshape(-1, y.shape[-1])
        g_bfirst = dz.sum(axis=(0, 1))
        return g_first, g_bfirst, g_second, g_bsecond, dz @ first

    Y = fw.H[1:]
    gO1, gb1, gO2, gb2, dYc = head_grads(fw.Pc, fw.c, fw.z1, p.O1, p.O2, Y[..., :h2])
    gO3, gb3, gO4, gb4, dYf = head_grads(fw.Pf, fw.f, fw.z3, p.O3, p.O4, Y[..., h2:])
    dY = np.concatenate([dYc, dYf], axis=-1)

    R = np.asarray(p.R, dtype=dt)
    dRH = np.empty((T, N, 3 * h), dtype=dt)
    dpre = np.empty((T, N, 3 * h), dtype=dt)
    dh = np.zeros((N, h), dtype=dt)
    for t in range(T - 1, -1, -1):
        dh = dh + dY[t]
        ut, rt, et, hp = fw.u[t], fw.r[t], fw.e[t], fw.H[t]
        du = dh * (hp - et)
        dq = dh * (1.0 - ut) * (1.0 - et * et)
        dpu = du * ut * (1.0 - ut)
        dpr = dq * fw.RH[t, :, 2 * h:] * rt * (1.0 - rt)
        dRH[t, :, :h] = dpu
        dRH[t, :, h:2 * h] = dpr
        dRH[t, :, 2 * h:] = dq * rt
        dpre[t, :, :h] = dpu
        dpre[t, :, h:2 * h] = dpr
        dpre[t, :, 2 * h:] = dq
        dh = dh * ut + dRH[t] @ R

    gR = dRH.reshape(-1, 3 * h).T @ fw.H[:-1].reshape(-1, h)
    gI = (dpre.reshape(-1, 3 * h).T @ fw.X.reshape(-1, cfg.input_dim)) * input_mask(cfg)
    gb = dpre.sum(axis=(0, 1))
    grads = {"R": gR, "I": gI, "b": gb, "O1": gO1, "b1": gb1, "O2": gO2, "b2": gb2,
             "O3": gO3, "b3": gb3, "O4": gO4, "b4": gb4}
    return loss, GradientSet({k: v.astype(dt, copy=False) for k, v in grads.items()})


# ----------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def sgd_update(p: CellParams, grads: GradientSet, state: AdamState, masks=None) -> CellParams:
    """One Adam step; pruned coordinates are re-zeroed afterwards."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    new = {}
    for name in WEIGHT_NAMES:
        w = np.asarray(getattr(p, name))
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        step = state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        new[name] = (w - step).astype(w.dtype)
    return apply_masks(replace(p, **new), masks)


# ----------------------------------------------------------------------------
# reports


@dataclass
class MatrixReport:
    name: str
    shape: tuple[int, int]
    nnz: int
    sparsity: float               # percent of zero entries
    block_histogram: dict[int, int]   # nonzeros per block -> number of blocks


@dataclass
class SparsityReport:
    matrices: list[MatrixReport]
    total_params: int
    total_nonzero: int            # pruned matrices counted by nnz, the rest by size

    def by_name(self, name) -> MatrixReport:
        return next(m for m in self.matrices if m.name == name)

    def rows(self):
        for m in self.matrices:
            yield {"matrix": m.name, "shape": f"{m.shape[0]}x{m.shape[1]}", "nnz": m.nnz,
                   "sparsity_pct": round(m.sparsity, 3)}


def sparsity_report(p: CellParams, block_shape: BlockShape = UNSTRUCTURED) -> SparsityReport:
    mats = []
    for name, W in prunable_views(p).items():
        nz = W != 0
        if W.shape[0] % block_shape.rows or W.shape[1] % block_shape.cols:
            hist = {}
        else:
            nbr, nbc = block_shape.grid(*W.shape)
            per_block = nz.reshape(nbr, block_shape.rows, nbc, block_shape.cols).sum(axis=(1, 3))
            vals, counts = np.unique(per_block, return_counts=True)
            hist = {int(v): int(c) for v, c in zip(vals, counts)}
        mats.append(MatrixReport(name, W.shape, int(nz.sum()), 100.0 * (1 - nz.mean()), hist))
    pruned_size = sum(int(np.prod(m.shape)) for m in mats)
    total = p.config.param_count()
    nonzero = sum(m.nnz for m in mats) + (total - pruned_size)
    return SparsityReport(mats, total, nonzero)


def budget_for(config: CellConfig, sparsity: float, block_shape: BlockShape = UNSTRUCTURED) -> int:
    """Nonzero parameter count of ``config`` with every prunable matrix at ``sparsity``."""
    p = CellParams.zeros(config)
    total = config.param_count()
    for W in prunable_views(p).values():
        nbr, nbc = block_shape.grid(*W.shape)
        kept = nbr * nbc - int(math.floor(sparsity * nbr * nbc))
        total -= W.size - kept * block_shape.m
    return total


def dense_hidden_for_budget(budget: int, cond_dim: int = 0, multiple: int = 2) -> int:
    """Dense state size whose parameter count is closest to ``budget``."""
    best, best_gap = multiple, None
    h = multiple
    while True:
        n = CellConfig(h, cond_dim).param_count()
        gap = abs(n - budget)
        if best_gap is None or gap < best_gap:
            best, best_gap = h, gap
        if n > budget:
            return best
        h += multiple


# ----------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    hidden: int = 192
    cond_dim: int = 0
    sequence_length: int = 960
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 1000
    seed: int = 0
    init_scale: float = 1.0
    dtype: str = "float32"
    prune_target: float | None = None
    prune_start: int = 1000
    prune_duration: int = 200_000
    prune_cadence: int = 500
    block_shape: str = "1x1"
    log_every: int = 0

    def __post_init__(self):
        if self.sequence_length < 2:
            raise InputError("sequence_length must be >= 2")
        if self.batch_size < 1 or self.steps < 0:
            raise InputError("batch_size must be >= 1 and steps >= 0")

    def cell_config(self) -> CellConfig:
        return CellConfig(self.hidden, self.cond_dim)

    def schedule(self) -> PruneSchedule | None:
        if self.prune_target is None:
            return None
        return PruneSchedule(self.prune_target, self.prune_start, self.prune_duration,
                             self.prune_cadence, BlockShape.parse(self.block_shape))

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise InputError(f"config line {lineno}: unknown key {key!r}")
            kw[key] = _coerce(types[key], value, key)
        return cls(**kw)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items() if v is not None)


def _coerce(type_name, value, key):
    t = str(type_name)
    try:
        if t.startswith("float"):
            return None if value.lower() == "none" else float(value)
        if t == "int":
            return int(float(value)) if "e" in value.lower() else int(value)
        return value
    except ValueError:
        raise InputError(f"config key {key!r}: cannot parse {value!r}") from None


@dataclass
class TrainResult:
    params: CellParams
    masks: dict[str, SparsityMask]
    losses: list[float]
    sparsity: list[float]

    def write_history(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "nll_nats", "sparsity"])
            for i, (l, s) in enumerate(zip(self.losses, self.sparsity)):
                w.writerow([i, f"{l:.6f}", f"{s:.6f}"])


def realized_sparsity(p: CellParams) -> float:
    views = prunable_views(p)
    zeros = sum(int((W == 0).sum()) for W in views.values())
    return zeros / sum(W.size for W in views.values())


def sample_batch(corpus, length: int, batch: int, rng) -> np.ndarray:
    """``batch`` random windows of ``length`` samples drawn from the corpus."""
    out = np.empty((batch, length), dtype=np.int64)
    usable = [u for u in corpus if len(u) >= length]
    if not usable:
        raise InputError(f"no utterance has {length} samples")
    for i in range(batch):
        u = usable[rng.integers(len(usable))]
        start = rng.integers(len(u) - length + 1)
        out[i] = u[start:start + length]
    return out


def train(config: TrainConfig, corpus, schedule: PruneSchedule | None = None,
          params: CellParams | None = None, checkpoint=None, stop=None) -> TrainResult:
    """Adam on random windows of ``sequence_length + 1`` samples, pruning on cadence.

    ``checkpoint`` is a path; if training aborts the last good parameters are
    saved there before the exception propagates. ``stop(losses)`` is called
    after every step and ends the run early when it returns true.
    """
    corpus = [np.asarray(u) for u in corpus]
    if not corpus:
        raise InputError("corpus is empty")
    schedule = schedule if schedule is not None else config.schedule()
    dtype = np.dtype(config.dtype)
    p = params if params is not None else CellParams.random(
        config.cell_config(), seed=config.seed, scale=config.init_scale, dtype=dtype)
    rng = np.random.default_rng(config.seed + 1)
    opt = AdamState(config.learning_rate, config.beta1, config.beta2, config.eps)
    masks: dict[str, SparsityMask] = {}
    losses, sparsity = [], []
    try:
        for step in range(config.steps):
            if schedule is not None and schedule.due(step):
                z = schedule.fraction(step)
                masks = {n: update_mask(W, z, schedule.block_shape)
                         for n, W in prunable_views(p).items()}
                p = apply_masks(p, masks)
            batch = sample_batch(corpus, config.sequence_length + 1, config.batch_size, rng)
            loss, grads = forward_backward(p, batch)
            p = sgd_update(p, grads, opt, masks)
            losses.append(loss)
            sparsity.append(realized_sparsity(p))
            if config.log_every and step % config.log_every == 0:
                log.info("step %d nll %.4f sparsity %.4f", step, loss, sparsity[-1])
            if stop is not None and stop(losses):
                break
    except Exception:
        if checkpoint is not None:
            from .model_io import Model, save_model
            save_model(checkpoint, Model(p, masks=masks))
            log.error("training aborted; checkpoint written to %s", checkpoint)
        raise
    return TrainResult(p, masks, losses, sparsity)


@dataclass
class BudgetRun:
    label: str
    hidden: int
    sparsity: float               # target
    nonzero: int                  # from sparsity_report
    final_nll: float              # mean of the last logged losses


def budget_table(runs: list[BudgetRun]) -> str:
    """Runs side by side with their nonzero counts relative to the first row."""
    ref = runs[0].nonzero if runs else 1
    head = f"{'model':<14}{'state':>7}{'sparsity %':>12}{'nonzero':>10}{'vs ref %':>10}{'NLL':>9}"
    lines = [head, "-" * len(head)]
    for r in runs:
        lines.append(f"{r.label:<14}{r.hidden:>7}{100 * r.sparsity:>12.1f}{r.nonzero:>10}"
                     f"{100 * (r.nonzero - ref) / ref:>10.2f}{r.final_nll:>9.4f}")
    return "\n".join(lines)
