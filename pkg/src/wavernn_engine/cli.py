"""Command-line entry point: ``wavernn <command> ...``.

Exit status is 0 on success, 1 for bad input (flags, files, configs) and 2 for
anything unexpected.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import kernels
from .errors import InputError, WaveRNNError

log = logging.getLogger("wavernn_engine")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# ----------------------------------------------------------------------------


def cmd_corpus(args):
    from .corpus import CorpusSpec, make_corpus
    spec = CorpusSpec(args.n, args.length, args.rate, args.min_partials, args.max_partials,
                      args.freq_low, args.freq_high, args.amplitude, args.noise, args.seed)
    paths = make_corpus(spec, args.out)
    print(f"wrote {len(paths)} files to {args.out}")


def cmd_init(args):
    from .cell import CellConfig, CellParams
    from .model_io import Model, save_model
    from .subscale import CondNetParams, FusedConfig, FusedParams, SubscaleConfig
    if args.fused:
        model = Model(FusedParams.random(FusedConfig(args.hidden), args.seed))
    elif args.subscale:
        B, F = args.subscale
        dil = args.dilations or [1, 2, 4, 8]
        cnet = CondNetParams.create(B, args.cond_dim, dil, args.channels, seed=args.seed + 1)
        model = Model(CellParams.random(CellConfig(args.hidden, args.cond_dim), args.seed),
                      subscale=SubscaleConfig(B, F), cond_net=cnet)
    else:
        model = Model(CellParams.random(CellConfig(args.hidden), args.seed))
    save_model(args.out, model)
    print(f"wrote {model.kind} model to {args.out}")


def cmd_train(args):
    from .corpus import load_corpus
    from .model_io import Model, save_model
    from .train import TrainConfig, train
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {args.config}: {exc.strerror}") from None
    cfg = TrainConfig.from_text(text)
    if args.steps is not None:
        cfg = TrainConfig(**{**cfg.__dict__, "steps": args.steps})
    corpus = load_corpus(args.corpus)
    logging.basicConfig(level=logging.INFO if cfg.log_every else logging.WARNING,
                        format="%(message)s")
    result = train(cfg, corpus, checkpoint=args.checkpoint)
    save_model(args.out, Model(result.params, result.masks))
    if args.history:
        result.write_history(args.history)
    tail = result.losses[-min(50, len(result.losses)):] if result.losses else [float("nan")]
    print(f"steps {len(result.losses)}  final nll {np.mean(tail):.4f} nats/sample  "
          f"sparsity {result.sparsity[-1] if result.sparsity else 0.0:.4f}")


def cmd_sample(args):
    import time
    from .cell import generate
    from .model_io import load_model
    from .subscale import batched_generate, fused_generate, sequential_generate
    from .wav import WavFile, wav_write
    model = load_model(args.model)
    mode = args.mode or ("fused" if model.kind == "fused" else
                         "subscale" if model.subscale else "plain")
    n = args.length
    t0 = time.perf_counter()
    if mode == "fused":
        if model.kind != "fused":
            raise InputError("fused mode needs a fused model")
        wave = fused_generate(model.params, n, args.seed)
    elif mode == "subscale":
        if model.subscale is None:
            raise InputError("this model has no subscale configuration")
        p = model.inference_params()
        if args.sequential:
            wave = sequential_generate(p, model.cond_net, model.subscale, n, args.seed)
        else:
            res = batched_generate(p, model.cond_net, model.subscale, n, args.seed)
            wave = res.waveform
            if args.trace:
                res.write_trace(args.trace)
    else:
        if model.kind == "fused" or model.params.config.cond_dim:
            raise InputError("plain mode needs an unconditioned, unfused cell")
        wave = generate(model.inference_params(), n, rng=args.seed).waveform
    seconds = time.perf_counter() - t0
    wav = WavFile.from_u(wave, args.rate)
    wav_write(wav, args.out)
    digest = hashlib.sha256(Path(args.out).read_bytes()).hexdigest()[:16]
    print(f"{mode}: {n} samples in {seconds:.3f} s  {n / seconds:.1f} samples/sec  sha256 {digest}")


def cmd_benchmark(args):
    from .bench import benchmark_inventory, benchmark_matvec, format_table
    from .sparse import BlockShape
    if args.backend:
        kernels.set_backend(args.backend)
    blocks = [BlockShape.parse(b) for b in args.blocks]
    krows, irows = [], []
    for n in args.sizes:
        configs = [(0.0, None)] + [(s, b) for s in args.sparsity for b in blocks]
        for sp, bs in configs:
            r = benchmark_matvec(n, n, sp, bs, args.reps, args.threads)
            krows.append(r)
            ir = benchmark_inventory(n, sp, bs, args.reps, args.threads)
            irows.append(ir)
    print(f"backend {kernels.backend.NAME}, threads {args.threads}")
    print(format_table(
        ["size", "sparsity %", "type", "median us", "min us", "GB/s", "Gflop/s", "checksum"],
        [(f"{r.rows}x{r.cols}", f"{100 * r.sparsity:g}", r.block, f"{r.median_ns / 1e3:.2f}",
          f"{r.min_ns / 1e3:.2f}", f"{r.gb_per_sec:.2f}", f"{r.gflops:.2f}", f"{r.checksum:.4g}")
         for r in krows]))
    print()
    print(format_table(["size", "sparsity %", "type", "samples/sec"],
                       [(r.hidden, f"{100 * r.sparsity:g}", r.block, f"{r.samples_per_sec:.0f}")
                        for r in irows]))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["size", "sparsity", "type", "samples_per_sec", "matvec_median_ns"])
            for k, i in zip(krows, irows):
                w.writerow([i.hidden, i.sparsity, i.block, f"{i.samples_per_sec:.3f}",
                            f"{k.median_ns:.1f}"])


def cmd_inspect(args):
    from .bench import format_table
    from .model_io import load_model
    from .sparse import UNSTRUCTURED, BlockShape
    from .train import sparsity_report
    model = load_model(args.model)
    if model.kind == "fused":
        cfg = model.params.config
        print(f"fused model: state {cfg.hidden}, {cfg.param_count()} parameters, "
              f"{cfg.bits_per_step} bits per step")
        return
    bs = BlockShape.parse(args.block) if args.block else (
        model.masks["R_u"].block_shape if "R_u" in model.masks else UNSTRUCTURED)
    rep = sparsity_report(model.params.dense(), bs)
    print(f"state {model.params.config.hidden}, {rep.total_params} parameters, "
          f"{rep.total_nonzero} nonzero")
    print(format_table(["matrix", "shape", "nnz", "sparsity %", f"{bs} block fill histogram"],
                       [(m.name, f"{m.shape[0]}x{m.shape[1]}", m.nnz, f"{m.sparsity:.2f}",
                         " ".join(f"{k}:{v}" for k, v in m.block_histogram.items()))
                        for m in rep.matrices]))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["matrix", "shape", "nnz", "sparsity_pct"])
            w.writeheader()
            w.writerows(rep.rows())


def cmd_estimate(args):
    from .estimate import LatencyModel, estimate_bandwidth, estimate_latency
    us = Fraction(1, 10 ** 6)
    lm = LatencyModel.uniform(args.ops, Fraction(args.compute_us) * us,
                              Fraction(args.overhead_us) * us, args.length)
    est = estimate_latency(lm)
    print(f"ops N = {lm.n_ops}, |u| = {lm.length}")
    print(f"T(u) = {float(est.seconds):.6g} s")
    print(f"samples/sec = {float(est.samples_per_sec):,.1f}" if est.samples_per_sec
          else "samples/sec = unbounded")
    if est.overhead_bound is not None:
        print(f"overhead-only bound = {float(est.overhead_bound):,.1f} samples/sec ({est.binding}-bound)")
    if args.params:
        bw = estimate_bandwidth(args.params, args.rate, args.bytes)
        print(f"bandwidth = {float(bw.gb_per_sec):,.3f} GB/s")


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wavernn", description="Sparse recurrent audio synthesis engine.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("corpus", help="write a synthetic sine-mixture corpus")
    c.add_argument("--out", required=True)
    c.add_argument("--n", type=int, default=8)
    c.add_argument("--length", type=int, default=24000)
    c.add_argument("--rate", type=int, default=24000)
    c.add_argument("--min-partials", type=int, default=1)
    c.add_argument("--max-partials", type=int, default=3)
    c.add_argument("--freq-low", type=float, default=60.0)
    c.add_argument("--freq-high", type=float, default=400.0)
    c.add_argument("--amplitude", type=float, default=0.5)
    c.add_argument("--noise", type=float, default=0.002)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_corpus)

    i = sub.add_parser("init", help="write a randomly initialized model")
    i.add_argument("--out", required=True)
    i.add_argument("--hidden", type=int, default=64)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--fused", action="store_true")
    i.add_argument("--subscale", type=int, nargs=2, metavar=("B", "F"))
    i.add_argument("--dilations", type=_int_list)
    i.add_argument("--cond-dim", type=int, default=16)
    i.add_argument("--channels", type=int, default=64)
    i.set_defaults(func=cmd_init)

    t = sub.add_parser("train", help="train a cell on a corpus directory")
    t.add_argument("--config", required=True, help="key = value file")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--history", help="CSV of step, nll_nats, sparsity")
    t.add_argument("--checkpoint", help="written if training aborts")
    t.add_argument("--steps", type=int)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate audio from a model")
    s.add_argument("--model", required=True)
    s.add_argument("--length", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rate", type=int, default=24000)
    s.add_argument("--mode", choices=["plain", "subscale", "fused"])
    s.add_argument("--sequential", action="store_true", help="subscale reference order")
    s.add_argument("--trace", help="CSV of the batched schedule")
    s.set_defaults(func=cmd_sample)

    b = sub.add_parser("benchmark", help="kernel and per-sample timing tables")
    b.add_argument("--sizes", type=_int_list, default=[1024])
    b.add_argument("--sparsity", type=_float_list, default=[0.9, 0.95])
    b.add_argument("--blocks", nargs="+", default=["4x4", "16x1"])
    b.add_argument("--reps", type=int, default=100)
    b.add_argument("--threads", type=int, choices=[1, 2], default=1)
    b.add_argument("--backend", choices=["compiled", "python"])
    b.add_argument("--csv")
    b.set_defaults(func=cmd_benchmark)

    n = sub.add_parser("inspect", help="sparsity report for a model")
    n.add_argument("--model", required=True)
    n.add_argument("--block", help="block shape for the histogram")
    n.add_argument("--csv")
    n.set_defaults(func=cmd_inspect)

    e = sub.add_parser("estimate", help="per-sample latency and bandwidth model")
    e.add_argument("--ops", type=int, required=True, help="op count N")
    e.add_argument("--overhead-us", type=str, default="5")
    e.add_argument("--compute-us", type=str, default="0")
    e.add_argument("--length", type=int, default=24000)
    e.add_argument("--params", type=float)
    e.add_argument("--rate", type=float, default=24000)
    e.add_argument("--bytes", type=float, default=4)
    e.set_defaults(func=cmd_estimate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (InputError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except WaveRNNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
