"""Command-line entry point: ``eeg-completion <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .cascade import CascadeModel, TrainingDivergence
from .checkpoint import CheckpointError
from .edf import EdfError, read_channel
from .harness import (
    STORE_NAME,
    Cell,
    DataError,
    ExperimentSpec,
    SegmentStore,
    SpecError,
    complete,
    evaluate_checkpoint,
    ingest,
    metrics_table,
    parse_mask,
    run_cell,
    run_grid,
    write_completion,
)
from .metrics import MetricError
from .signal import MaskMethod, Position, SignalError

log = logging.getLogger("eeg_completion")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="experiment TOML file")
    p.add_argument("--out-dir", default="runs", help="output directory (default: runs)")
    p.add_argument("--seed", type=int, help="override the experiment seed")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cascade", action=argparse.BooleanOptionalAction, default=None,
                   help="two-stage cascade (default) or the basic single model")
    p.add_argument("--alpha", type=float, help="loss weight on missing samples (>= 1)")
    p.add_argument("--sequential", action="store_true",
                   help="train stage 1 first, then stage 2 with stage 1 frozen")


def _cell_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--missing-count", type=int)
    p.add_argument("--position", choices=[x.value for x in Position if x is not Position.EXPLICIT])
    p.add_argument("--mask-method", choices=[x.value for x in MaskMethod])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eeg-completion", description="Cascade Transformer EEG completion")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="read recordings into a segment store")
    _common(p)
    p.add_argument("--skip-bad", action="store_true",
                   help="report unreadable files and carry on with the rest")

    p = sub.add_parser("grid", help="train and evaluate every grid cell")
    _common(p)
    _model_flags(p)
    p.add_argument("--skip-bad", action="store_true")

    p = sub.add_parser("train", help="train one model")
    _common(p)
    _model_flags(p)
    _cell_flags(p)
    p.add_argument("--skip-bad", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _common(p)
    _cell_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--alpha", type=float, help=argparse.SUPPRESS)
    p.add_argument("--skip-bad", action="store_true")

    p = sub.add_parser("complete", help="fill the missing samples of one segment")
    _common(p, config_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True,
                   help="text (one value per line, 'nan' allowed), .npy or .edf file")
    p.add_argument("--channel", help="signal label when --input is EDF")
    p.add_argument("--start", type=int,
                   help="first sample to use; required when the input is longer than N")
    p.add_argument("--mask", required=True,
                   help="middle:10, beginning:5, ending:20, explicit:3,4,7 or none")
    p.add_argument("--mask-method", choices=[x.value for x in MaskMethod], default="zero")
    p.add_argument("--real", help="optional file with the true samples, for plot.csv")
    return parser


def _load_spec(args) -> ExperimentSpec:
    spec = ExperimentSpec.from_toml(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "cascade", None) is not None:
        changes["cascade"] = (args.cascade,)
    if getattr(args, "alpha", None) is not None:
        changes["alphas"] = (args.alpha,)
    if getattr(args, "sequential", False):
        changes["train"] = dataclasses.replace(spec.train, sequential=True)
    return spec.replace(**changes) if changes else spec


def _store(spec: ExperimentSpec, out: Path, skip_bad: bool) -> SegmentStore:
    path = out / STORE_NAME
    if path.exists():
        return SegmentStore.load(path)
    log.info("no store at %s; ingesting", path)
    return _ingest(spec, out, skip_bad)


def _ingest(spec: ExperimentSpec, out: Path, skip_bad: bool) -> SegmentStore:
    store, errors = ingest(spec, skip_bad=skip_bad)
    out.mkdir(parents=True, exist_ok=True)
    store.save(out / STORE_NAME)
    for msg in errors:
        print(f"skipped {msg}", file=sys.stderr)
    print(f"{store.segments.shape[0]} segments from {len(store.sources)} recordings "
          f"-> {out / STORE_NAME}")
    return store


def _cell(spec: ExperimentSpec, args) -> Cell:
    return Cell(
        args.missing_count if args.missing_count is not None else spec.missing_counts[0],
        Position(args.position or spec.positions[0]),
        MaskMethod(args.mask_method or spec.mask_methods[0]),
        args.alpha if args.alpha is not None else spec.alphas[0],
        spec.cascade[0] if getattr(args, "cascade", None) is None else args.cascade,
    )


def _summary(res) -> str:
    agg_m = np.mean([r.nrmse for r in res.reports])
    agg_a = np.mean([r.nrmse_all for r in res.reports])
    return f"{res.cell.cell_id}: NRMSE missing {agg_m:.4f}, entire segment {agg_a:.4f}"


def cmd_ingest(args) -> int:
    _ingest(_load_spec(args), Path(args.out_dir), args.skip_bad)
    return EXIT_OK


def cmd_grid(args) -> int:
    spec = _load_spec(args)
    out = Path(args.out_dir)
    store = _store(spec, out, args.skip_bad)
    outcome = run_grid(store, spec, out)
    for res in outcome.results:
        print(_summary(res))
    for cell, msg in outcome.skipped:
        print(f"skipped {cell.cell_id}: {msg}", file=sys.stderr)
    print(f"tables written to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    spec = _load_spec(args)
    out = Path(args.out_dir)
    store = _store(spec, out, args.skip_bad)
    cell = _cell(spec, args)
    res = run_cell(store, spec, cell, out / "cells")
    print(_summary(res))
    print(f"checkpoint: {out / 'cells' / cell.cell_id / 'model.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    spec = _load_spec(args)
    out = Path(args.out_dir)
    store = _store(spec, out, args.skip_bad)
    cell = None
    if args.missing_count is not None or args.position or args.mask_method:
        _, meta = _peek(args.checkpoint)
        base = Cell.from_dict(meta["cell"]) if "cell" in meta else None
        cell = Cell(
            args.missing_count if args.missing_count is not None
            else (base.missing_count if base else spec.missing_counts[0]),
            Position(args.position or (base.position if base else spec.positions[0])),
            MaskMethod(args.mask_method or (base.mask_method if base else spec.mask_methods[0])),
            base.alpha if base else spec.alphas[0],
            meta.get("kind") == "cascade",
        )
    res = evaluate_checkpoint(store, spec, args.checkpoint, cell)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_metrics.csv").write_text(metrics_table([res]))
    print(_summary(res))
    return EXIT_OK


def _peek(path):
    try:
        return CascadeModel.load(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from None
    except CheckpointError as exc:
        raise DataError(f"{path}: {exc}") from None


def _read_samples(path: str, channel: str | None) -> np.ndarray:
    p = Path(path)
    try:
        if p.suffix.lower() == ".edf":
            if not channel:
                raise SpecError("--channel is required for EDF input")
            return read_channel(p, channel)[0]
        if p.suffix.lower() == ".npy":
            return np.asarray(np.load(p, allow_pickle=False), dtype=np.float64).reshape(-1)
        return np.loadtxt(p, dtype=np.float64, ndmin=1)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, (SpecError, EdfError)):
            raise
        raise DataError(f"{path}: {exc}") from None


def cmd_complete(args) -> int:
    model, _ = _peek(args.checkpoint)
    n = model.config.seq_len
    x = _read_samples(args.input, args.channel)
    if args.start is None and x.size != n:
        raise DataError(f"model expects N={n} samples, input has {x.size} (use --start)")
    start = args.start or 0
    if start < 0 or start + n > x.size:
        raise DataError(f"input has {x.size} samples; need {n} from index {start}")
    x = x[start:start + n]
    mask = parse_mask(args.mask, n, MaskMethod(args.mask_method))
    real = None
    if args.real:
        real = _read_samples(args.real, args.channel)[start:start + n]
        if real.size != n:
            raise DataError(f"--real has {real.size} samples, expected {n}")
    result = complete(model, x, mask, rng_seed=args.seed or 0)
    write_completion(result, args.out_dir, real)
    print(f"completed {mask.count} of {n} samples -> {Path(args.out_dir) / 'completed.txt'}")
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "grid": cmd_grid, "train": cmd_train, "eval": cmd_eval,
            "complete": cmd_complete}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, EdfError, SignalError, MetricError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
