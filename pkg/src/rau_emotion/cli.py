"""Command line entry point: synth, split, train, eval, predict, viz.

Every command accepts ``--config FILE`` with flat ``key = value`` lines whose
keys are the long flag names (dashes or underscores); explicit flags win.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from . import cnn, data, rau
from .checkpoint import CheckpointError
from .evaluation import render_report, visualize_filter_maps
from .layers import OptimizerConfig

log = logging.getLogger("rau_emotion")


class CliError(Exception):
    pass


def _fraction(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"fraction must be strictly between 0 and 1, got {value}")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _add_optimizer(p, lr, batch):
    p.add_argument("--lr", "--learning-rate", dest="learning_rate", type=float, default=lr)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=_positive, default=batch)


def build_parser():
    parser = argparse.ArgumentParser(prog="rau-emotion", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic 7-class corpus")
    p.add_argument("--per-class", type=_positive, default=23)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("split", help="assign a stratified train/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fraction", type=_fraction, default=0.75)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output manifest (default: manifest.split.tsv next to the input)")

    p = sub.add_parser("train", help="train the RAU or CNN model")
    p.add_argument("family", choices=("rau", "cnn"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--structure", choices=("shallow", "deep"), default="deep")
    p.add_argument("--k", type=int, choices=(300, 500), default=300)
    p.add_argument("--epochs-per-class", type=int, default=100)
    p.add_argument("--embed-iterations", type=int, default=100)
    p.add_argument("--embed-mode", choices=rau.EMBED_MODES, default="fresh")
    p.add_argument("--filters", type=_positive, default=10)
    p.add_argument("--fc-hidden", type=_positive, default=64)
    p.add_argument("--epochs-per-run", type=int, default=20)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--validation-fraction", type=float, default=0.1)
    _add_optimizer(p, None, 32)

    p = sub.add_parser("eval", help="evaluate a trained model on a manifest split")
    p.add_argument("family", choices=("rau", "cnn"))
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--out", help="write the report here instead of stdout")

    p = sub.add_parser("predict", help="top-k classes for one image")
    p.add_argument("family", choices=("rau", "cnn"))
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--k", type=int, default=2)

    p = sub.add_parser("viz", help="write conv filter maps as PGM files")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--layer", type=int, default=1)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--out", required=True)

    for p in sub.choices.values():
        p.add_argument("--config", help="flat key=value config file")
    return parser


def read_config(path):
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CliError(f"{path}:{lineno}: expected key=value")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            values = read_config(args.config)
        except OSError as exc:
            parser.error(f"cannot read config {args.config}: {exc.strerror}")
        except CliError as exc:
            parser.error(str(exc))
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            parser.error(f"unknown config key(s): {', '.join(unknown)}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def _log_config(args):
    resolved = " ".join(f"{k}={v}" for k, v in sorted(vars(args).items()))
    log.info("resolved config: %s", resolved)


def cmd_synth(args):
    try:
        manifest = data.synth_generate(args.per_class, args.seed, args.out)
    except OSError as exc:
        raise CliError(f"cannot write to {args.out}: {exc.strerror or exc}") from None
    print(f"wrote {len(manifest.records)} images and {Path(args.out) / 'manifest.tsv'}")


def cmd_split(args):
    src = Path(args.manifest)
    manifest = data.read_manifest(src)
    out = Path(args.out) if args.out else src.with_name("manifest.split.tsv")
    if out.resolve() == src.resolve():
        raise CliError("refusing to overwrite the input manifest; choose another --out")
    split = data.split_dataset(manifest, args.fraction, args.seed)
    if out.parent.resolve() != src.parent.resolve():
        split.records = [data.Record(os.path.relpath(split.resolve(r), out.parent), r.label, r.split)
                         for r in split.records]
    out.parent.mkdir(parents=True, exist_ok=True)
    data.write_manifest(split, out)
    n_train, n_test = len(split.select("train")), len(split.select("test"))
    print(f"{n_train} train / {n_test} test -> {out}")


def _optimizer(args, default_lr):
    lr = default_lr if args.learning_rate is None else args.learning_rate
    return OptimizerConfig(lr, args.momentum, args.batch_size)


def cmd_train(args):
    manifest = data.read_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_lines = []
    if args.family == "rau":
        config = rau.AutoencoderConfig(args.structure, args.k, args.epochs_per_class,
                                       args.embed_iterations, _optimizer(args, 0.5), args.seed,
                                       args.embed_mode)
        model = rau.train_rau_from_manifest(manifest, config)
        rau.save_rau(model, out)
        log_lines.append("class\tepochs\tfinal_mse")
        for name, ae in zip(data.CLASS_NAMES, model.autoencoders):
            final = ae.loss_history[-1] if ae.loss_history else float("nan")
            log_lines.append(f"{name}\t{ae.epochs}\t{final:.6f}")
        print(f"wrote 7 class autoencoders and units.bin to {out}")
    else:
        config = cnn.CnnConfig(filters_per_conv=args.filters, fc_hidden=args.fc_hidden,
                               optimizer=_optimizer(args, 0.01), epochs_per_run=args.epochs_per_run,
                               runs=args.runs, validation_fraction=args.validation_fraction,
                               seed=args.seed)
        model = cnn.build_cnn(config)
        log_lines.append("block\titerations\ttrain_loss\tval_accuracy")

        def on_block(entry):
            log_lines.append(entry.line())
            log.info("block %d: %d iterations, loss %.4f, val acc %.4f",
                     entry.block, entry.iterations, entry.train_loss, entry.val_accuracy)

        cnn.train_cnn(model, manifest, log_fn=on_block)
        cnn.save_cnn(model, out / "cnn.ckpt")
        print(f"best validation accuracy {model.best_val_accuracy:.4f} after block "
              f"{model.best_block} ({model.best_block * config.epochs_per_run} iterations); "
              f"wrote {out / 'cnn.ckpt'}")
    (out / "train.log").write_text("\n".join(log_lines) + "\n")


def _load_model(family, path):
    path = Path(path)
    if not path.exists():
        raise CliError(f"model not found: {path}")
    if family == "rau":
        return rau.load_rau(path)
    return cnn.load_cnn(path if path.is_file() else path / "cnn.ckpt")


def cmd_eval(args):
    manifest = data.read_manifest(args.manifest)
    if not manifest.select(args.split):
        raise CliError(f"the {args.split!r} split of {args.manifest} is empty")
    model = _load_model(args.family, args.model)
    if args.family == "rau":
        reports = [rau.evaluate_rau(model, manifest, args.k, args.split, args.split)]
    else:
        reports = list(cnn.evaluate_cnn(model, manifest, args.k, args.split, args.split))
    text = "\n".join(render_report(r) for r in reports)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _read_image64(path):
    img = data.read_image(path)
    if img.shape != (data.IMAGE_SIZE, data.IMAGE_SIZE):
        print(f"notice: resizing {path} from {img.shape[0]}x{img.shape[1]} to 64x64",
              file=sys.stderr)
        img = data.resize_bilinear(img, data.IMAGE_SIZE, data.IMAGE_SIZE)
    return img


def cmd_predict(args):
    model = _load_model(args.family, args.model)
    img = _read_image64(args.image)
    if args.family == "rau":
        ranked = [(c, 1.0 - d) for c, d in rau.classify_topk(model, img.reshape(-1), args.k)]
    else:
        ranked = cnn.predict_image(model, img, args.k)
    for name, conf in ranked:
        print(f"{name}\t{100 * conf:.2f}%")


def cmd_viz(args):
    model = _load_model("cnn", args.model)
    img = data.read_image(args.image)
    maps = visualize_filter_maps(model, img, args.layer, args.scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, fmap in enumerate(maps, start=1):
        (out / f"layer{args.layer}_filter{i:02d}.pgm").write_bytes(data.encode_pgm(fmap))
    print(f"wrote {len(maps)} filter maps to {out}")


COMMANDS = {"synth": cmd_synth, "split": cmd_split, "train": cmd_train,
            "eval": cmd_eval, "predict": cmd_predict, "viz": cmd_viz}


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    _log_config(args)
    try:
        COMMANDS[args.command](args)
    except (CliError, ValueError, OSError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
