"""Command-line pipeline: synth, train, calibrate, eval, verify.

Exit status is 0 on success, 1 on an operational error and 2 on a usage error.
Set ``IDLV_LOG`` to error, warn, info or debug to control log output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .autodiff import Architecture, default_architecture
from .checkpoint import CheckpointMeta, load_checkpoint, save_checkpoint
from .data import ImageRecord, build_pairs, load_dataset, read_image, synth_dataset
from .errors import ConfigError, IdlvError, ProtocolError
from .evaluation import MetricsReport, confusion_counts, emit_report, threshold_sweep
from .labels import Liveness
from .protocol import Gallery, calibrate_threshold, enroll, load_gallery, save_gallery, verify
from .siamese import SiameseModel, TrainConfig, derive_seed, fit

logger = logging.getLogger("idlv")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
DEFAULT_ARCHITECTURE = "conv:8:3:1:1 relu pool:2:2 conv:16:3:1:1 relu pool:2:2 flatten dense:32"


@dataclass
class RunConfig:
    data: str = ""
    out: str = ""
    architecture: str = DEFAULT_ARCHITECTURE
    image_size: int = 64
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    history: str = ""

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.margin, self.learning_rate, self.epochs, self.batch_size, self.seed)

    def build_architecture(self) -> Architecture:
        return Architecture.parse(self.architecture, (1, self.image_size, self.image_size))


def parse_config(text: str) -> RunConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        cast = {"int": int, "float": float}.get(types[key], str)
        try:
            values[key] = cast(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: {key} expects {types[key]}, got {value!r}") from None
    config = RunConfig(**values)
    try:
        config.train_config()
        config.build_architecture()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return config


def cmd_synth(args):
    synth_dataset(args.out, args.clients, args.reals, args.fakes, args.size, derive_seed(args.seed, "synth"))
    print(f"wrote synthetic dataset to {args.out}")


def cmd_train(args):
    config = parse_config(Path(args.config).read_text()) if args.config else RunConfig()
    data = args.data or config.data
    out = args.out or config.out
    if not data or not out:
        raise ConfigError("train needs a dataset (--data) and an output checkpoint (--out)")
    arch = config.build_architecture()
    train = load_dataset(data, ("train",))["train"]
    pairs = build_pairs(train, derive_seed(config.seed, "pairs"), size=config.image_size)
    model = SiameseModel.initialize(arch, config.seed)
    train_config = config.train_config()
    model, history = fit(model, pairs, train_config)
    save_checkpoint(model, CheckpointMeta(config.margin, None, config.seed, config.epochs), out)
    history_path = args.history or config.history
    if history_path:
        Path(history_path).write_text("epoch,loss\n" + "".join(f"{e + 1},{v!r}\n" for e, v in enumerate(history)))
    if history:
        print(f"trained on {len(pairs)} pairs: loss {history[0]:.6f} -> {history[-1]:.6f}")
    print(f"wrote checkpoint {out}")


def _input_size(model):
    return model.input_shape[1:]


def build_gallery(model, train_split):
    """Enroll each training client's lexicographically first real image."""
    gallery = Gallery.for_model(model)
    for client in train_split.clients:
        if not client.real_images:
            logger.warning("client %s has no real training image; not enrolled", client.client_id)
            continue
        ref = ImageRecord.load(client.real_images[0], client.client_id, Liveness.REAL, _input_size(model))
        enroll(gallery, client.client_id, ref, model)
    return gallery


def _labelled_samples(model, split, gallery):
    samples = []
    for client_id, path, label in split.samples():
        if client_id not in gallery:
            logger.warning("no gallery entry for client %s; skipping %s", client_id, path)
            continue
        samples.append((client_id, read_image(path, _input_size(model)), label))
    return samples


def cmd_calibrate(args):
    model, meta = load_checkpoint(args.ckpt)
    train = load_dataset(args.data, ("train",))["train"]
    gallery = build_gallery(model, train)
    save_gallery(gallery, args.gallery)
    print(f"enrolled {len(gallery)} clients into {args.gallery}")
    if not (Path(args.data) / "dev").is_dir():
        logger.warning("no dev split; keeping default threshold margin/2")
        return
    dev = load_dataset(args.data, ("dev",))["dev"]
    tau, report = calibrate_threshold(model, gallery, _labelled_samples(model, dev, gallery))
    meta.threshold = tau
    save_checkpoint(model, meta, args.ckpt)
    print(f"calibrated threshold {tau:.9g} on dev: FRR {report.frr:.4f} FAR {report.far:.4f} HTER {report.hter:.4f}")


def _threshold(meta: CheckpointMeta) -> float:
    return meta.threshold if meta.threshold is not None else meta.margin / 2


def _load_model_and_gallery(args):
    model, meta = load_checkpoint(args.ckpt)
    gallery = load_gallery(args.gallery)
    gallery.check_model(model)
    return model, meta, gallery


def cmd_eval(args):
    model, meta, gallery = _load_model_and_gallery(args)
    test = load_dataset(args.data, ("test",))["test"]
    tau = _threshold(meta)
    decisions, truths = [], []
    for client_id, image, label in _labelled_samples(model, test, gallery):
        decisions.append(verify(model, gallery, client_id, image, tau))
        truths.append(label)
    report = MetricsReport.from_counts(confusion_counts(decisions, truths), tau)
    sweep = threshold_sweep([d.distance for d in decisions], truths)
    report_path = Path(args.report)
    report_path.write_bytes(emit_report(report, sweep, "csv"))
    report_path.with_suffix(".json").write_bytes(emit_report(report, sweep, "json"))
    print(f"test: threshold {tau:.9g} FRR {report.frr:.4f} FAR {report.far:.4f} HTER {report.hter:.4f}")
    print(f"wrote {report_path} and {report_path.with_suffix('.json')}")


def cmd_verify(args):
    model, meta, gallery = _load_model_and_gallery(args)
    if args.client not in gallery:
        raise ProtocolError(f"client {args.client!r} is not enrolled in {args.gallery}")
    image = read_image(args.image, _input_size(model))
    decision = verify(model, gallery, args.client, image, _threshold(meta))
    print(
        json.dumps(
            {
                "client": args.client,
                "verdict": decision.verdict.name,
                "distance": decision.distance,
                "threshold": decision.threshold,
            }
        )
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idlv", description="Identity-conditioned face liveness detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic real/fake dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--clients", type=int, default=10)
    p.add_argument("--reals", type=int, default=40)
    p.add_argument("--fakes", type=int, default=40)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the Siamese embedding on same-client pairs")
    p.add_argument("--data")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--history", help="optional CSV of per-epoch mean loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="enroll training clients and calibrate the threshold on dev")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--gallery", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval", help="FAR/FRR/HTER on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="decide REAL/FAKE for one image of a known client")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--client", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_verify)
    return parser


def configure_logging():
    level = LOG_LEVELS.get(os.environ.get("IDLV_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logger.setLevel(level)


def dispatch(argv=None) -> int:
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        args.func(args)
    except (IdlvError, OSError, ValueError) as exc:
        print(f"idlv {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(dispatch())
