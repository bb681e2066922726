"""``hazegan`` command-line interface.

Settings come from, in increasing precedence: built-in defaults, the TOML
file passed with ``--config`` (section names are cosmetic, keys must match
flag names with dashes replaced by underscores), then explicit flags.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 runtime or
numerical error.
"""
import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import torch

from . import __version__
from .data import (
    from_net_tensor,
    generate_synthetic_dataset,
    open_dataset,
    read_image,
    save_manifest,
    split,
    to_net_tensor,
    write_image,
    IMAGE_EXTENSIONS,
)
from .dcp import DcpParams, dcp_dehaze
from .errors import (
    CheckpointIntegrityError,
    CheckpointVersionError,
    ConfigurationError,
    DataError,
    EmptyDatasetError,
    HazeganError,
    IncompatibleCheckpointError,
    InvalidParameterError,
    NumericalError,
)
from .losses import LossWeights
from .metrics import evaluate_set, markdown_table, read_report_csv
from .networks import CriticSpec, GeneratorSpec
from .trainer import (
    TrainConfig,
    desk_config,
    load_checkpoint,
    load_generator,
    full_config,
    read_checkpoint_header,
    train,
    transfer_learn,
)

log = logging.getLogger("hazegan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(HazeganError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------------------ config


def _load_toml(path):
    try:
        import tomllib
    except ImportError:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"malformed config {path}: {exc}") from exc
    flat = {}
    for key, value in doc.items():
        items = value.items() if isinstance(value, dict) else [(key, value)]
        for k, v in items:
            k = k.replace("-", "_")
            if k in flat:
                raise UsageError(f"config key {k!r} appears twice")
            flat[k] = v
    return flat


def _echo_config(args, directory, name="effective_config.json"):
    skip = {"func", "config_values"}
    doc = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in skip}
    doc["hazegan_version"] = __version__
    Path(directory).mkdir(parents=True, exist_ok=True)
    (Path(directory) / name).write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")


# ---------------------------------------------------------------- commands


def cmd_synthesize(args):
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    out = _require_out(args)
    manifest = generate_synthetic_dataset(
        out,
        args.n,
        (args.size, args.size),
        seed=args.seed,
        k_range=(args.k_min, args.k_max),
        airlight_range=(args.airlight_min, args.airlight_max),
        depth_range=(args.depth_min, args.depth_max),
        source_name=args.name,
    )
    _echo_config(args, out)
    print(f"wrote {len(manifest)} pairs to {out}")


def cmd_split(args):
    manifest = open_dataset(_require_path(args.data, "--data"))
    result = split(manifest, args.ratio, args.seed)
    out = _require_out(args)
    save_manifest(result.train, out / "train.json")
    save_manifest(result.test, out / "test.json")
    _echo_config(args, out)
    print(f"train {len(result.train)} / test {len(result.test)} -> {out}")


def _train_config(args, preset_epochs=None):
    preset = desk_config if args.preset == "desk" else full_config
    base = preset(seed=args.seed)
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    elif preset_epochs is not None:
        overrides["epochs"] = preset_epochs
    for name in ("batch_size", "image_size", "n_critic", "learning_rate", "beta1", "beta2", "checkpoint_interval"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.max_steps is not None:
        overrides["max_generator_steps"] = args.max_steps
    gen = base.generator
    if args.base_width is not None or args.depth is not None:
        gen = GeneratorSpec(
            base_width=args.base_width if args.base_width is not None else gen.base_width,
            depth=args.depth if args.depth is not None else gen.depth,
        )
    critic = CriticSpec(widths=tuple(args.critic_widths)) if args.critic_widths else base.critic
    w = base.weights
    weights = LossWeights(
        args.lambda1 if args.lambda1 is not None else w.lambda1,
        args.lambda2 if args.lambda2 is not None else w.lambda2,
        args.lambda3 if args.lambda3 is not None else w.lambda3,
    )
    cfg = asdict(base) | overrides
    cfg.update(
        generator=gen,
        critic=critic,
        weights=weights,
        vgg_weights=args.vgg_weights,
        vgg_tap=args.vgg_tap or base.vgg_tap,
        allow_vgg_fallback=not args.no_vgg_fallback,
    )
    return TrainConfig(**cfg)


def _run_dir(args, tag):
    if args.run_dir:
        return Path(args.run_dir)
    out = _require_out(args, create=False)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return out / f"{stamp}-{tag}"


def cmd_train(args, transfer=False):
    transfer = transfer or bool(getattr(args, "checkpoint", None))
    data_path = _require_path(args.data, "--data")
    if transfer and not args.checkpoint:
        raise UsageError("transfer needs --checkpoint")
    manifest = open_dataset(data_path)
    if not manifest.has_references:
        raise DataError("training requires a dataset with clear references")

    if args.resume:
        resume_path = _require_path(args.resume, "--resume")
        header = read_checkpoint_header(resume_path)
        config = TrainConfig.from_dict(header["config"])
        if args.max_steps is not None:
            config.max_generator_steps = args.max_steps
        run_dir = Path(args.run_dir) if args.run_dir else resume_path.resolve().parent.parent
        state = load_checkpoint(resume_path, config)
    else:
        config = _train_config(args, preset_epochs=100 if transfer and args.preset == "full" else None)
        run_dir = _run_dir(args, args.tag or ("transfer" if transfer else "train"))
        state = None

    config.checkpoint_dir = str(run_dir / "checkpoints")
    run_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(args, run_dir)
    (run_dir / "train_config.json").write_text(json.dumps(config.to_dict(), indent=1, sort_keys=True) + "\n")
    log_path = run_dir / "train_log.jsonl"

    if transfer and state is None:
        source = load_checkpoint(_require_path(args.checkpoint, "--checkpoint"), config)
        state, records = transfer_learn(source, config, manifest, log_path=log_path, stop_after=args.stop_after)
    else:
        state, records = train(config, manifest, state=state, log_path=log_path, stop_after=args.stop_after)
    print(
        f"{run_dir}: generator steps {state.generator_step}, critic steps {state.critic_step}, "
        f"{len(records)} log records"
    )


def _inputs(path):
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
        if not files:
            raise EmptyDatasetError(f"no images in {path}")
        return files
    if not path.is_file():
        raise DataError(f"input {path} does not exist")
    return [path]


def _dcp_params(args):
    return DcpParams(args.patch_size, args.omega, args.airlight_fraction, args.t_floor, args.guided_radius, args.guided_eps)


def cmd_dehaze(args):
    files = _inputs(_require_path(args.input, "--input"))
    out = _require_out(args)
    if args.method == "cwgan":
        if not args.checkpoint:
            raise UsageError("--method cwgan needs --checkpoint")
        ck = _require_path(args.checkpoint, "--checkpoint")
        expected = None
        if args.base_width is not None or args.depth is not None or args.critic_widths:
            header_cfg = TrainConfig.from_dict(read_checkpoint_header(ck)["config"])
            expected = _expected_config(args, header_cfg)
        generator = load_generator(ck, expected)
        size = read_checkpoint_header(ck)["config"]["image_size"]
        for f in files:
            with torch.no_grad():
                y = generator(to_net_tensor(f, size)[None])[0]
            write_image(out / f"{f.stem}.png", from_net_tensor(y))
    else:
        params = _dcp_params(args)
        for f in files:
            write_image(out / f"{f.stem}.png", dcp_dehaze(read_image(f), params))
    _echo_config(args, out)
    print(f"dehazed {len(files)} images with {args.method} -> {out}")


def _expected_config(args, header_cfg):
    gen = GeneratorSpec(
        base_width=args.base_width if args.base_width is not None else header_cfg.generator.base_width,
        depth=args.depth if args.depth is not None else header_cfg.generator.depth,
    )
    critic = CriticSpec(widths=tuple(args.critic_widths)) if args.critic_widths else header_cfg.critic
    return replace(header_cfg, generator=gen, critic=critic)


def _parse_outputs(items):
    pairs = []
    for item in items:
        name, sep, directory = item.partition("=")
        if not sep:
            name, directory = Path(item).name, item
        pairs.append((name, Path(directory)))
    return pairs


def cmd_evaluate(args):
    manifest = open_dataset(_require_path(args.data, "--data"))
    if not args.outputs:
        raise UsageError("--outputs NAME=DIR is required")
    out = _require_out(args)
    reports = []
    for name, directory in _parse_outputs(args.outputs):
        if not directory.is_dir():
            raise DataError(f"outputs directory {directory} does not exist")
        report = evaluate_set(manifest, directory, name)
        report.write_csv(out / f"{name}.csv")
        reports.append(report)
    table = markdown_table(reports, args.dataset or manifest.source_name)
    (out / "table.md").write_text(table)
    _echo_config(args, out)
    print(table)


def cmd_report(args):
    if not args.csv:
        raise UsageError("--csv is required")
    reports = []
    for item in args.csv:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        reports.append(read_report_csv(_require_path(path, "--csv"), name))
    table = markdown_table(reports, args.dataset or "dataset")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(table)
    print(table)


# ------------------------------------------------------------------ parser


def _require_out(args, create=True):
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    if create:
        out.mkdir(parents=True, exist_ok=True)
    return out


def _require_path(value, flag):
    if value is None:
        raise UsageError(f"{flag} is required")
    p = Path(value)
    if not p.exists():
        raise DataError(f"{flag} path {p} does not exist")
    return p


def _int_list(text):
    try:
        return [int(x) for x in str(text).replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _add_train_flags(p):
    p.add_argument("--data", help="dataset directory or manifest JSON")
    p.add_argument("--preset", choices=("desk", "full"), default="desk")
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int, help="cap on total generator steps")
    p.add_argument("--stop-after", type=int, help="halt after this many generator steps (checkpointed)")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--image-size", type=int)
    p.add_argument("--n-critic", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--lambda3", type=float)
    p.add_argument("--base-width", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--critic-widths", type=_int_list)
    p.add_argument("--vgg-weights")
    p.add_argument("--vgg-tap")
    p.add_argument("--no-vgg-fallback", action="store_true")
    p.add_argument("--checkpoint-interval", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--run-dir", help="explicit run directory (default <out>/<timestamp>-<tag>)")
    p.add_argument("--tag")


def build_parser():
    parser = _Parser(prog="hazegan", description="Single-image dehazing with a conditional WGAN-GP.")
    parser.add_argument("--version", action="version", version=__version__)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML settings file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synthesize", parents=[common], help="render a synthetic hazy/clear dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--k-min", type=float, default=0.3)
    p.add_argument("--k-max", type=float, default=1.0)
    p.add_argument("--airlight-min", type=float, default=0.75)
    p.add_argument("--airlight-max", type=float, default=1.0)
    p.add_argument("--depth-min", type=float, default=0.5)
    p.add_argument("--depth-max", type=float, default=2.5)
    p.add_argument("--name", default="synthetic")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("split", parents=[common], help="seeded train/test split")
    p.add_argument("--data")
    p.add_argument("--ratio", type=float, default=0.2)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="train the conditional WGAN")
    _add_train_flags(p)
    p.add_argument("--transfer", dest="checkpoint", help="checkpoint to transfer-learn from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", parents=[common], help="transfer-learn from a checkpoint")
    _add_train_flags(p)
    p.add_argument("--checkpoint")
    p.set_defaults(func=lambda a: cmd_train(a, transfer=True))

    p = sub.add_parser("dehaze", parents=[common], help="dehaze an image or directory")
    p.add_argument("--input")
    p.add_argument("--method", choices=("cwgan", "dcp"), default="dcp")
    p.add_argument("--checkpoint")
    p.add_argument("--base-width", type=int, help="expected architecture (checked against checkpoint)")
    p.add_argument("--depth", type=int)
    p.add_argument("--critic-widths", type=_int_list)
    defaults = DcpParams()
    p.add_argument("--patch-size", type=int, default=defaults.patch_size)
    p.add_argument("--omega", type=float, default=defaults.omega)
    p.add_argument("--airlight-fraction", type=float, default=defaults.airlight_fraction)
    p.add_argument("--t-floor", type=float, default=defaults.t_floor)
    p.add_argument("--guided-radius", type=int, default=defaults.guided_radius)
    p.add_argument("--guided-eps", type=float, default=defaults.guided_eps)
    p.set_defaults(func=cmd_dehaze)

    p = sub.add_parser("evaluate", parents=[common], help="metrics for one or more output sets")
    p.add_argument("--data")
    p.add_argument("--outputs", action="append", help="NAME=DIR, repeatable")
    p.add_argument("--dataset")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="Markdown table from metric CSVs")
    p.add_argument("--csv", action="append", help="[NAME=]CSV, repeatable")
    p.add_argument("--dataset")
    p.set_defaults(func=cmd_report)
    return parser


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        values = _load_toml(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        if not getattr(args, "command", None):
            parser.print_help()
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
        return EXIT_OK
    except (UsageError, ConfigurationError, InvalidParameterError) as exc:
        print(f"hazegan: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EmptyDatasetError, FileNotFoundError) as exc:
        print(f"hazegan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, IncompatibleCheckpointError, CheckpointVersionError, CheckpointIntegrityError) as exc:
        print(f"hazegan: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except HazeganError as exc:
        print(f"hazegan: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
