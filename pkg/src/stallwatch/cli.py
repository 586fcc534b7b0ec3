"""Command-line entry point: data fixtures, training, evaluation, services, bench."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import platform
import signal
import sys
import threading
import time
from dataclasses import dataclass

import numpy as np

from . import dataset, detector, metrics, plots
from .config import apply_config, load_config
from .errors import ConfigError, StallwatchError
from .ingest import Ingestor, make_model_detector, run_scheduler
from .registry import Registry

log = logging.getLogger(__name__)

# Reported in the bench output for context only; machine-dependent, never asserted.
REFERENCE_INFERENCE_TIMES_S = {
    "desktop_gpu": 3.56e-4,
    "desktop_cpu": 0.0126,
    "embedded_cpu": 0.22,
}


@dataclass
class BenchReport:
    machine: str
    n: int
    mean_s: float
    p50_s: float
    p95_s: float
    stall_count: int
    projected_lot_refresh_s: float
    samples: list[float]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["machine", "n", "mean_s", "p50_s", "p95_s", "stalls", "projected_refresh_s"])
        writer.writerow(
            [self.machine, self.n, "%.6g" % self.mean_s, "%.6g" % self.p50_s,
             "%.6g" % self.p95_s, self.stall_count, "%.6g" % self.projected_lot_refresh_s]
        )
        for name, sec in REFERENCE_INFERENCE_TIMES_S.items():
            buf.write(f"# reference {name}: {sec:g} s/crop (context only, not asserted)\n")
        return buf.getvalue()


def run_bench(model, n_crops: int = 200, stall_count: int = 300, machine: str | None = None,
              seed: int = 0) -> BenchReport:
    """n warmup + n timed single-crop predictions on synthetic crops."""
    rng = np.random.default_rng(seed)
    size = model.spec.input_size[0]
    labels = [dataset.OCCUPIED if i % 2 else dataset.VACANT for i in range(n_crops)]
    crops = [dataset.synth_crop(rng, label, size) for label in labels]
    det = make_model_detector(model)
    for c in crops:  # warmup
        det(c)
    samples = []
    for c in crops:
        t0 = time.perf_counter()
        det(c)
        samples.append(time.perf_counter() - t0)
    mean_s = float(np.mean(samples))
    p50, p95 = (float(v) for v in np.percentile(samples, [50, 95]))
    return BenchReport(
        machine=machine or platform.processor() or platform.machine(),
        n=n_crops,
        mean_s=mean_s,
        p50_s=p50,
        p95_s=p95,
        stall_count=stall_count,
        projected_lot_refresh_s=mean_s * stall_count,
        samples=samples,
    )


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage faults exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _lots_arg(value: str) -> list[str]:
    lots = [v.strip() for v in value.split(",") if v.strip()]
    if not lots:
        raise argparse.ArgumentTypeError("expected a comma-separated lot list")
    return lots


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stallwatch", description=__doc__)
    parser.add_argument("--seed", type=int, default=0, help="seed for anything randomized")
    parser.add_argument("--log-level", default="info", help="debug|info|warning|error")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic labeled lot")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=100, help="images per label")
    p.add_argument("--size", type=int, default=64, help="crop edge length in px")

    p = sub.add_parser("train", help="fine-tune a detector on a scanned dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--lots", type=_lots_arg, default=None, help="restrict to these lots")
    p.add_argument("--input-size", type=int, default=64)
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=0.0005)
    p.add_argument("--no-freeze", action="store_true", help="also train the conv stages")
    p.add_argument("--loss-curve", default=None, help="write a loss-curve figure here")

    p = sub.add_parser("eval", help="evaluate an existing model on test splits")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--test-lots", type=_lots_arg, required=True)
    p.add_argument("--train-lots", type=_lots_arg, default=None, help="label for the report rows")
    p.add_argument("--out", default="eval-out", help="report directory")
    p.add_argument("--split-ratio", type=float, default=0.5)

    p = sub.add_parser("cross-eval", help="train on one lot set, test per lot")
    p.add_argument("--data", required=True)
    p.add_argument("--train-lots", type=_lots_arg, required=True)
    p.add_argument("--test-lots", type=_lots_arg, required=True)
    p.add_argument("--out", default="eval-out")
    p.add_argument("--input-size", type=int, default=64)
    p.add_argument("--full-spec", action="store_true", help="use the 224x224 configuration")
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--split-ratio", type=float, default=0.5)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--config", required=True)
    p.add_argument("--listen", default=None, help="host:port (overrides config)")

    p = sub.add_parser("ingest", help="run the camera polling service")
    p.add_argument("--config", required=True)
    p.add_argument("--once", action="store_true", help="one cycle per lot, then exit")

    p = sub.add_parser("bench", help="measure per-crop inference latency")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--stalls", type=int, default=300)
    return parser


def _cmd_synth_data(args) -> int:
    out = dataset.synth_generate(args.out, args.n, seed=args.seed, size=args.size)
    index = dataset.scan_tree(out)
    print(f"wrote {len(index)} images under {out}")
    return 0


def _spec_and_hp(args):
    spec = detector.desk_spec((args.input_size, args.input_size), seed=args.seed)
    hp = detector.Hyperparams(
        lr=getattr(args, "lr", 0.01),
        weight_decay=getattr(args, "weight_decay", 0.0005),
        batch_size=args.batch_size,
        iterations=args.iterations,
        freeze_conv=not getattr(args, "no_freeze", False),
        seed=args.seed,
    )
    return spec, hp


def _cmd_train(args) -> int:
    index = dataset.scan_tree(args.data)
    if args.lots:
        index = index.filter_lots(args.lots)
    spec, hp = _spec_and_hp(args)
    model = detector.build(spec)
    report = detector.fine_tune(model, index, hp)
    detector.save(model, args.out)
    print(
        f"trained on {len(index)} samples in {report.wall_time_s:.1f}s, "
        f"train accuracy {report.final_train_accuracy:.4f}, wrote {args.out}"
    )
    if args.loss_curve:
        plots.render_loss_curve(report.loss_curve, args.loss_curve)
        print(f"wrote {args.loss_curve}")
    return 0


def _emit_reports(reports, out_dir) -> int:
    written = metrics.emit(reports, out_dir)
    written.append(plots.render_roc_figure(reports, out_dir))
    for r in reports:
        print(
            f"{'+'.join(r.train_lots)} -> {'+'.join(r.test_lots)}: "
            f"auc {r.auc:.6f}, fpr {r.fpr_at_half:.6f}, fnr {r.fnr_at_half:.6f}"
        )
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_eval(args) -> int:
    model = detector.load(args.model)
    reports = metrics.evaluate_lots(
        model,
        args.data,
        args.test_lots,
        train_lots=args.train_lots or ["model"],
        split_ratio=args.split_ratio,
        split_seed=args.seed,
    )
    return _emit_reports(reports, args.out)


def _cmd_cross_eval(args) -> int:
    spec, hp = _spec_and_hp(args)
    if args.full_spec:
        spec = detector.full_spec(seed=args.seed)
    plan = metrics.ExperimentPlan(
        train_lots=args.train_lots,
        test_lots=args.test_lots,
        hyperparams=hp,
        spec=spec,
        split_ratio=args.split_ratio,
        split_seed=args.seed,
    )
    reports = metrics.run_experiment(plan, args.data)
    return _emit_reports(reports, args.out)


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = load_config(args.config)
    if not cfg.server.admin_token:
        raise ConfigError("config [server] must set admin_token to serve the API")
    registry = Registry(cfg.registry_path())
    apply_config(registry, cfg)
    app = create_app(registry, cfg.server.admin_token, cfg.server.ui_dir)
    listen = args.listen or cfg.server.listen
    host, _, port = listen.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="info")
    return 0


def _cmd_ingest(args) -> int:
    cfg = load_config(args.config)
    if not cfg.server.model:
        raise ConfigError("config [server] must set model for ingestion")
    model = detector.load(cfg.server.model)
    registry = Registry(cfg.registry_path())
    apply_config(registry, cfg)
    ingestor = Ingestor(registry, make_model_detector(model))
    if args.once:
        for lot in cfg.lots:
            stats = ingestor.ingest_cycle(lot.lot_id)
            print(
                f"{lot.lot_id}: {stats.stalls_updated} stalls updated, "
                f"{stats.failures} failures, {stats.marked_unknown} marked unknown"
            )
        return 0
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    scheduler = run_scheduler(registry, ingestor.detector, cfg.cameras, stop)
    log.info("polling %d cameras; Ctrl-C to stop", len(cfg.cameras))
    scheduler.run_until_stopped()
    return 0


def _cmd_bench(args) -> int:
    model = detector.load(args.model)
    report = run_bench(model, n_crops=args.n, stall_count=args.stalls, seed=args.seed)
    sys.stdout.write(report.to_csv())
    return 0


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "cross-eval": _cmd_cross_eval,
    "serve": _cmd_serve,
    "ingest": _cmd_ingest,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except StallwatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
