"""Command-line surface.

Subcommands:
    simulate   run the cycle engine over a dataset, report accuracy + cycles
    timing     closed-form vs simulated cycle counts, AF savings
    sweep      quantize a float model at several bit-widths, report accuracy
    train      train a float model with the minimal deterministic trainer
    quantize   convert a float parameter file to a quantized one
    trace      dump the per-cycle FSM trace of one inference

Set HYDRA_TRACE=1 to stream the first inference's per-cycle trace to stderr
during `simulate`.  All CSV output is deterministic for fixed inputs: rows are
ordered by input index and floats are printed with a fixed format.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .datapath import AfKind
from .dataio import FOLD_MODES, IdxFormatError, load_dataset, to_input_vector
from .engine import Engine, classify, run_inference
from .errors import ConfigError, ControlFault, ParamsFileError
from .fxp import QFormat, QValue
from .model import (
    Mode,
    NetworkConfig,
    Params,
    LayerParams,
    ensure_valid,
    forward_quantized_batch,
    load_params,
    quantize_array,
    quantize_params,
    save_params,
    train_minimal,
)
from .timing import (
    TimingInputs,
    af_savings,
    per_layer_af_savings,
    t_parallel,
    t_reuse,
    throughput_report,
)

SIMULATE_SCHEMA = "hydrasim.simulate.v1"
SWEEP_SCHEMA = "hydrasim.sweep.v1"

_MODES = {"store": Mode.STORE_AND_FORWARD, "stream": Mode.STREAMED}
_AFS = {k.value: k for k in AfKind}


def _parse_layers(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(tok) for tok in text.replace(",", ":").split(":") if tok)
    except ValueError as exc:
        raise ConfigError(f"bad layer list {text!r}: {exc}") from exc
    if len(sizes) < 2:
        raise ConfigError(f"layer list {text!r} needs at least input:output")
    return sizes


def _config_from_file(path) -> dict:
    try:
        with open(path, encoding="ascii") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return doc


def _build_config(args, params: Params | None) -> NetworkConfig:
    """Resolve the network config from --config, --layers, flags, and params dims."""
    doc = _config_from_file(args.config) if getattr(args, "config", None) else {}
    if getattr(args, "layers", None):
        layer_sizes = _parse_layers(args.layers)
    elif "layer_sizes" in doc:
        layer_sizes = tuple(int(s) for s in doc["layer_sizes"])
    elif params is not None:
        layer_sizes = params.layer_sizes
    else:
        raise ConfigError("no layer sizes: pass --layers, --config, or --params")

    if args.bits is not None or args.int_bits is not None:
        total = args.bits if args.bits is not None else 8
        int_bits = args.int_bits if args.int_bits is not None else 3
        qformat = QFormat(total, int_bits)
    elif "qformat" in doc:
        qformat = QFormat(int(doc["qformat"]["total_bits"]), int(doc["qformat"]["int_bits"]))
    elif params is not None and params.is_quantized:
        qformat = params.qformat
    else:
        qformat = QFormat(8, 3)

    if getattr(args, "af", None):
        kind = _AFS[args.af]
        n_layers = len(layer_sizes) - 1
        afs = (kind,) * max(0, n_layers - 1) + (AfKind.IDENTITY,)
    elif "af_per_layer" in doc:
        afs = tuple(_AFS[name] for name in doc["af_per_layer"])
    else:
        afs = None

    mode_name = args.mode or doc.get("mode", "store")
    cfg = NetworkConfig(
        layer_sizes=layer_sizes,
        max_fma=args.max_fma if args.max_fma is not None else int(doc.get("max_fma", 64)),
        qformat=qformat,
        af_per_layer=afs,
        mode=_MODES[mode_name],
        softmax_cycles=(
            args.softmax_cycles
            if args.softmax_cycles is not None
            else int(doc.get("softmax_cycles", 0))
        ),
        tiling=bool(args.tiling or doc.get("tiling", False)),
    )
    ensure_valid(cfg)
    return cfg


def _quantized_for(cfg: NetworkConfig, params: Params) -> Params:
    if params.is_quantized:
        if params.qformat != cfg.qformat:
            raise ConfigError(
                f"parameter file is quantized at {params.qformat}, "
                f"requested format is {cfg.qformat}"
            )
        return params
    return quantize_params(params, cfg.qformat)


def _zero_params(cfg: NetworkConfig) -> Params:
    layers = [
        LayerParams(
            np.zeros((n, k), dtype=np.int64),
            np.zeros(n, dtype=np.int64),
        )
        for k, n in zip(cfg.layer_sizes[:-1], cfg.layer_sizes[1:])
    ]
    return Params(layers, cfg.qformat)


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="ascii", newline="\n"), True


# =============================================================================
# Commands
# =============================================================================

def _require_dataset(args, command: str) -> None:
    if not args.images or not args.labels:
        raise ConfigError(f"{command} requires --images and --labels")


def cmd_simulate(args) -> int:
    _require_dataset(args, "simulate")
    params = load_params(args.params)
    cfg = _build_config(args, params)
    qparams = _quantized_for(cfg, params)
    ds = load_dataset(args.images, args.labels, fold=args.fold, limit=args.limit)

    trace_to_stderr = os.environ.get("HYDRA_TRACE") == "1"
    engine = Engine(cfg, qparams)
    rows = []
    correct = 0
    report = None
    for idx in range(len(ds)):
        engine.reset()
        if idx == 0 and trace_to_stderr:
            engine.trace_hook = lambda r: print(r.line(), file=sys.stderr)
        else:
            engine.trace_hook = None
        x = to_input_vector(ds.images[idx], cfg.qformat)
        outputs, report = engine.run(x)
        pred = classify(outputs)
        label = int(ds.labels[idx])
        correct += pred == label
        rows.append((idx, label, pred, report.total_cycles))

    out, close = _open_out(args.out)
    try:
        out.write(f"# schema={SIMULATE_SCHEMA}\n")
        out.write("index,label,prediction,cycles\n")
        for idx, label, pred, cycles in rows:
            out.write(f"{idx},{label},{pred},{cycles}\n")
    finally:
        if close:
            out.close()

    n = len(rows)
    if n == 0:
        print("no images evaluated (limit 0)")
        return 0
    if report is None:
        report = run_inference(cfg, qparams, to_input_vector(ds.images[0], cfg.qformat))[1]
    tp = throughput_report(report, args.clock_hz)
    print(f"images evaluated      {n}")
    print(f"accuracy              {correct / n:.4f} ({correct}/{n})")
    print(f"mode                  {report.mode.value}")
    print(f"cycles per inference  {report.total_cycles}")
    for lt in report.per_layer:
        print(
            f"  layer {lt.layer}: mac={lt.mac_cycles} serialize={lt.serialize_cycles} "
            f"first_output@{lt.first_output_cycle} total={lt.total_cycles}"
        )
    print(f"fma utilization       {report.fma_utilization:.4f}")
    print(f"mac ops               {report.mac_ops}")
    print(f"gops @ {args.clock_hz / 1e6:.0f} MHz       {tp.gops:.3f}")
    print(f"inferences per sec    {tp.inferences_per_sec:.1f}")
    return 0


def cmd_timing(args) -> int:
    if args.n_list:
        n = tuple(int(tok) for tok in args.n_list.split(",") if tok)
        t = TimingInputs(n, len(n))
        print(f"n = {list(n)} (literal)")
        print(f"t_parallel = {t_parallel(t)}")
        print(f"t_reuse    = {t_reuse(t)}")
        return 0

    params = load_params(args.params) if args.params else None
    cfg = _build_config(args, params)
    full = TimingInputs(cfg.layer_sizes, len(cfg.layer_sizes))
    compute = TimingInputs(cfg.layer_sizes[1:], cfg.n_layers)
    print(f"layer configuration   {':'.join(str(s) for s in cfg.layer_sizes)}")
    print("closed forms (n including the input stage):")
    print(f"  t_parallel = {t_parallel(full)}")
    print(f"  t_reuse    = {t_reuse(full)}")
    print("closed forms (n = compute layers only):")
    print(f"  t_parallel = {t_parallel(compute)}")
    print(f"  t_reuse    = {t_reuse(compute)}")
    if cfg.n_layers == 1:
        print("  note: single-layer network; t_reuse closed form is degenerate")

    zeros = _zero_params(cfg)
    x = [QValue(0, cfg.qformat)] * cfg.layer_sizes[0]
    sf_cfg = dataclasses.replace(cfg, mode=Mode.STORE_AND_FORWARD)
    st_cfg = dataclasses.replace(cfg, mode=Mode.STREAMED)
    _, sf = run_inference(sf_cfg, zeros, x)
    print(f"simulated store-and-forward total = {sf.total_cycles}")
    if cfg.tiling and any(w > cfg.max_fma for w in cfg.layer_sizes[1:]):
        print("simulated streamed total = n/a (tiled layers require store-and-forward)")
    else:
        _, st = run_inference(st_cfg, zeros, x)
        print(f"simulated streamed total = {st.total_cycles}")
    print(f"af units saved        {af_savings(cfg)} (per layer: {per_layer_af_savings(cfg)})")
    return 0


def cmd_sweep(args) -> int:
    _require_dataset(args, "sweep")
    params = load_params(args.params)
    if params.is_quantized:
        raise ConfigError("sweep needs a float parameter file")
    widths = [int(tok) for tok in args.bits_list.split(",") if tok]
    int_bits = args.int_bits if args.int_bits is not None else 3
    ds = load_dataset(args.images, args.labels, fold=args.fold, limit=args.limit)

    base = _build_config(args, params)
    rows = []
    for width in widths:
        fmt = QFormat(width, int_bits)
        cfg = dataclasses.replace(base, qformat=fmt)
        ensure_valid(cfg)
        qparams = quantize_params(params, fmt)
        x_raw = quantize_array(ds.flat, fmt)
        out_raw = forward_quantized_batch(cfg, qparams, x_raw)
        preds = np.argmax(out_raw, axis=1)
        accuracy = float(np.mean(preds == ds.labels)) if len(ds) else 0.0
        _, report = run_inference(cfg, qparams, [QValue(0, fmt)] * cfg.layer_sizes[0])
        rows.append((width, accuracy, report.total_cycles))

    out, close = _open_out(args.out)
    try:
        out.write(f"# schema={SWEEP_SCHEMA}\n")
        out.write("bits,accuracy,cycles\n")
        for width, accuracy, cycles in rows:
            out.write(f"{width},{accuracy:.6f},{cycles}\n")
    finally:
        if close:
            out.close()
    for width, accuracy, cycles in rows:
        print(f"bits={width:>2}  accuracy={accuracy:.4f}  cycles={cycles}")
    return 0


def cmd_train(args) -> int:
    _require_dataset(args, "train")
    if args.layers is None and args.config is None:
        args.layers = "196:64:32:32:10"
    cfg = _build_config(args, None)
    ds = load_dataset(args.images, args.labels, fold=args.fold, limit=args.limit)
    params = train_minimal(
        ds.flat,
        ds.labels,
        cfg,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        batch_size=args.batch_size,
    )
    save_params(args.out, params)
    print(f"wrote float parameters for {':'.join(str(s) for s in cfg.layer_sizes)} to {args.out}")
    return 0


def cmd_quantize(args) -> int:
    params = load_params(args.params)
    fmt = QFormat(args.bits if args.bits is not None else 8,
                  args.int_bits if args.int_bits is not None else 3)
    qparams = quantize_params(params, fmt)   # raises if already quantized
    save_params(args.out, qparams)
    print(f"wrote {fmt} parameters to {args.out}")
    return 0


def cmd_trace(args) -> int:
    if bool(args.images) != bool(args.labels):
        raise ConfigError("trace needs both --images and --labels, or neither")
    params = load_params(args.params)
    cfg = _build_config(args, params)
    qparams = _quantized_for(cfg, params)
    if args.images and args.labels:
        ds = load_dataset(args.images, args.labels, fold=args.fold, limit=args.index + 1)
        if args.index >= len(ds):
            raise ConfigError(f"--index {args.index} out of range for dataset of {len(ds)}")
        x = to_input_vector(ds.images[args.index], cfg.qformat)
    else:
        x = [QValue(0, cfg.qformat)] * cfg.layer_sizes[0]

    out, close = _open_out(args.out)
    try:
        outputs, report = run_inference(
            cfg, qparams, x, trace_hook=lambda r: out.write(r.line() + "\n")
        )
    finally:
        if close:
            out.close()
    print(f"traced {report.total_cycles} cycles; prediction {classify(outputs)}", file=sys.stderr)
    return 0


# =============================================================================
# Argument parsing
# =============================================================================

def _add_common(p: argparse.ArgumentParser, *, dataset: bool) -> None:
    p.add_argument("--config", help="JSON network config file")
    p.add_argument("--layers", help="layer sizes as input:n1:...:nk (e.g. 196:64:32:32:10)")
    p.add_argument("--max-fma", type=int, default=None, help="physical FMA units (default 64)")
    p.add_argument("--bits", type=int, default=None, help="total bits of the fixed-point format")
    p.add_argument("--int-bits", type=int, default=None,
                   help="integer bits incl. sign (default 3)")
    p.add_argument("--mode", choices=sorted(_MODES), default=None,
                   help="engine mode (default store)")
    p.add_argument("--af", choices=sorted(_AFS), default=None,
                   help="hidden-layer activation (output layer stays identity)")
    p.add_argument("--softmax-cycles", type=int, default=None,
                   help="constant added to total cycles for the output stage")
    p.add_argument("--tiling", action="store_true",
                   help="allow layers wider than max_fma via multiple passes")
    if dataset:
        p.add_argument("--images", help="MNIST IDX image file (.gz ok)")
        p.add_argument("--labels", help="MNIST IDX label file (.gz ok)")
        p.add_argument("--fold", choices=FOLD_MODES, default="mean",
                       help="28x28 -> 14x14 reduction (default mean)")
        p.add_argument("--limit", type=int, default=None, help="use at most N images")
        p.add_argument("--seed", type=int, default=0,
                       help="PRNG seed (used by train; accepted everywhere)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hydrasim",
        description="Cycle-accurate simulator for a layer-multiplexed DNN accelerator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the cycle engine over a dataset")
    _add_common(p, dataset=True)
    p.add_argument("--params", required=True, help="parameter file (float or quantized)")
    p.add_argument("--out", default="-", help="per-image CSV output path (default stdout)")
    p.add_argument("--clock-hz", type=float, default=100e6, help="clock for GOPS (default 100 MHz)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("timing", help="closed-form and simulated cycle counts")
    _add_common(p, dataset=False)
    p.add_argument("--params", default=None, help="parameter file to derive layer sizes from")
    p.add_argument("--n-list", default=None,
                   help="comma-separated n(l) list for literal closed-form evaluation")
    p.set_defaults(func=cmd_timing)

    p = sub.add_parser("sweep", help="bit-width sweep of a float model")
    _add_common(p, dataset=True)
    p.add_argument("--params", required=True, help="float parameter file")
    p.add_argument("--bits-list", default="5,8,16,32", help="comma-separated widths")
    p.add_argument("--out", default="-", help="CSV output path (default stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train a float model (deterministic)")
    _add_common(p, dataset=True)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out", required=True, help="output parameter file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("quantize", help="quantize a float parameter file")
    p.add_argument("--params", required=True, help="float parameter file")
    p.add_argument("--bits", type=int, default=8)
    p.add_argument("--int-bits", type=int, default=3)
    p.add_argument("--out", required=True, help="output parameter file")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("trace", help="dump the per-cycle FSM trace of one inference")
    _add_common(p, dataset=True)
    p.add_argument("--params", required=True, help="parameter file (float or quantized)")
    p.add_argument("--index", type=int, default=0, help="dataset image index (default 0)")
    p.add_argument("--out", default="-", help="trace output path (default stdout)")
    p.set_defaults(func=cmd_trace)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 1
    except (ConfigError, ParamsFileError, IdxFormatError, ControlFault, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
