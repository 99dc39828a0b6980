"""Command-line interface: generate / train / eval / encode / gradcheck.

Exit codes: 0 success, 2 bad arguments, 3 data-format error, 4 gradcheck
failure. Every subcommand is deterministic given its flags. The
``MRDL_THREADS`` environment variable (0 = auto) caps the numeric
backend's thread pools; it is applied at package import time.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import format_kv, load_kv_file, parse_levels, parse_widths
from .fusion import ModelConfig, configure_levels, forward_from_descriptors, init_model
from .optim import TrainConfig, gradcheck, predict_logits, train
from .texdata import (
    ClassSpec,
    DataFormatError,
    Dataset,
    SyntheticSpec,
    generate,
    load_dataset,
    load_descriptor_maps,
    majority_vote,
    split,
    write_dataset,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_GRADCHECK = 4


def _spec_from_file(path, seed_override=None) -> SyntheticSpec:
    kv = load_kv_file(path)
    n_classes = int(kv.get("classes", "4"))
    if any(k.startswith("class0.") for k in kv):
        classes = tuple(
            ClassSpec(
                scale=kv[f"class{i}.scale"],
                frequency=float(kv[f"class{i}.frequency"]),
                orientation=float(kv.get(f"class{i}.orientation", "0")),
            )
            for i in range(n_classes)
        )
    else:
        classes = SyntheticSpec().classes
        if n_classes != len(classes):
            raise ValueError(
                f"spec declares {n_classes} classes but lists no class{{i}}.* parameters"
            )
    kwargs = dict(classes=classes)
    for key, cast in (
        ("image_size", int),
        ("noise", float),
        ("patches_per_group", int),
        ("signal_amplitude", float),
        ("background_amplitude", float),
        ("seed", int),
    ):
        if key in kv:
            kwargs[key] = cast(kv[key])
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return SyntheticSpec(**kwargs)


def cmd_generate(args) -> int:
    if args.spec:
        spec = _spec_from_file(args.spec, seed_override=args.seed)
    else:
        spec = SyntheticSpec(seed=args.seed if args.seed is not None else 0)
    dataset = generate(spec, args.n)
    write_dataset(args.out, dataset)
    print(f"wrote {len(dataset)} samples ({len(spec.classes)} classes) to {args.out}")
    return EXIT_OK


def _merged(args, file_map: dict[str, str], key: str, default, cast):
    """Flag beats config file beats default."""
    flag = getattr(args, key.replace("-", "_"))
    if flag is not None:
        return flag
    if key in file_map:
        return cast(file_map[key])
    return default


def _model_config_map(config: ModelConfig) -> dict[str, str]:
    return {
        "model.levels": ",".join(str(l) for l in config.levels),
        "model.widths": ",".join(str(w) for w in config.widths),
        "model.dict_size": str(config.dict_size),
        "model.shared_dim": str(config.shared_dim),
        "model.in_channels": str(config.in_channels),
        "model.num_classes": str(config.num_classes),
    }


def _model_config_from_map(kv: dict[str, str]) -> ModelConfig:
    try:
        return ModelConfig(
            levels=parse_levels(kv["model.levels"]),
            widths=parse_widths(kv["model.widths"]),
            dict_size=int(kv["model.dict_size"]),
            shared_dim=int(kv["model.shared_dim"]),
            in_channels=int(kv["model.in_channels"]),
            num_classes=int(kv["model.num_classes"]),
        )
    except KeyError as exc:
        raise DataFormatError("truncated", f"checkpoint config misses {exc}") from exc


def cmd_train(args) -> int:
    file_map = load_kv_file(args.config) if args.config else {}
    levels = parse_levels(_merged(args, file_map, "levels", "1,2,3", str))
    widths = parse_widths(_merged(args, file_map, "widths", "8,16,32", str))
    cfg = TrainConfig(
        lr=_merged(args, file_map, "lr", 0.01, float),
        momentum=_merged(args, file_map, "momentum", 0.9, float),
        batch_size=_merged(args, file_map, "batch-size", 32, int),
        epochs=_merged(args, file_map, "epochs", 20, int),
        seed=_merged(args, file_map, "seed", 0, int),
        dict_size=_merged(args, file_map, "dict-size", 8, int),
        levels=levels,
        shared_dim=_merged(args, file_map, "shared-dim", 64, int),
        lr_decay_epoch=_merged(args, file_map, "lr-decay-epoch", None, int),
    )
    val_fraction = _merged(args, file_map, "val-fraction", 0.2, float)

    data = load_dataset(args.data)
    num_classes = int(data.labels.max()) + 1
    config = configure_levels(
        levels,
        dict_size=cfg.dict_size,
        widths=widths,
        shared_dim=cfg.shared_dim,
        in_channels=data.images.shape[1],
        num_classes=num_classes,
    )
    if val_fraction > 0:
        train_data, val_data = split(data, 1.0 - val_fraction, cfg.seed)
    else:
        train_data, val_data = data, None

    params = init_model(config, cfg.seed)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    params, metrics = train(params, config, train_data, cfg, val_data, shuffle_rng=shuffle_rng)

    metrics_path = args.metrics or args.out + ".metrics.csv"
    metrics.write_csv(metrics_path)

    config_map = _model_config_map(config)
    config_map.update(
        {
            "train.lr": repr(cfg.lr),
            "train.momentum": repr(cfg.momentum),
            "train.batch_size": str(cfg.batch_size),
            "train.epochs": str(cfg.epochs),
            "train.seed": str(cfg.seed),
            "train.val_fraction": repr(val_fraction),
            "train.lr_decay_epoch": "" if cfg.lr_decay_epoch is None else str(cfg.lr_decay_epoch),
        }
    )
    rng_state = {
        "bit_generator": shuffle_rng.bit_generator.state["bit_generator"],
        "state": {k: str(v) for k, v in shuffle_rng.bit_generator.state["state"].items()},
    }
    save_checkpoint(args.out, params, config_map, rng_state)
    final_acc = metrics.val_acc[-1]
    print(f"trained {cfg.epochs} epochs on {len(train_data)} samples")
    print(f"final_loss={metrics.train_loss[-1]:.6f} final_val_acc={final_acc:.6f}")
    print(f"checkpoint={args.out}")
    print(f"metrics={metrics_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, config_map, _ = load_checkpoint(args.checkpoint)
    config = _model_config_from_map(config_map)
    data = load_dataset(args.data)
    logits = predict_logits(params, config, data.images)
    predicted = logits.argmax(axis=1)
    patch_acc = float(np.mean(predicted == data.labels))
    print(f"patch_accuracy={patch_acc:.6f}")
    if args.group_vote:
        correct = 0
        group_ids = np.unique(data.groups)
        for gid in group_ids:
            mask = data.groups == gid
            voted = majority_vote(predicted[mask])
            truth = majority_vote(data.labels[mask])
            correct += int(voted == truth)
        print(f"image_accuracy={correct / len(group_ids):.6f}")
    return EXIT_OK


def cmd_encode(args) -> int:
    params, config_map, _ = load_checkpoint(args.checkpoint)
    config = _model_config_from_map(config_map)
    sets, label = load_descriptor_maps(args.input)
    if len(sets) != len(config.levels):
        raise DataFormatError(
            "truncated",
            f"descriptor file holds {len(sets)} levels, model expects {len(config.levels)}",
        )
    fused, omega, _ = forward_from_descriptors(sets, params, config)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{v:.17g}\n" for v in fused)
    print(f"wrote {fused.shape[0]} values to {args.out} (label={label}, "
          f"omega={','.join(f'{w:.4f}' for w in omega)})")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = configure_levels(
        parse_levels(args.levels),
        dict_size=args.dict_size,
        widths=parse_widths(args.widths),
        shared_dim=args.shared_dim,
        in_channels=1,
        num_classes=args.classes,
    )
    report = gradcheck(config, seed=args.seed, tolerance=args.tol, image_size=args.image_size)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrdl",
        description="Multi-resolution dictionary learning for texture classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic multi-scale texture dataset")
    p.add_argument("--spec", help="key=value file describing the synthetic classes")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n", type=int, default=25, help="images per class")
    p.add_argument("--seed", type=int, default=None, help="overrides the spec seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory (manifest.csv)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--config", help="key=value defaults; explicit flags win")
    p.add_argument("--levels", help="active resolution levels, e.g. 1,2,3")
    p.add_argument("--dict-size", type=int, help="codewords per dictionary")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--widths", help="backbone stage widths, e.g. 8,16,32")
    p.add_argument("--shared-dim", type=int, help="fused embedding dimension")
    p.add_argument("--val-fraction", type=float, help="held-out fraction (group-aware)")
    p.add_argument("--lr-decay-epoch", type=int, help="epoch at which lr is cut to 10%%")
    p.add_argument("--metrics", help="metrics CSV path (default: <out>.metrics.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--group-vote", action="store_true",
                   help="also report group-level accuracy via majority voting")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("encode", help="emit the fused embedding of a descriptor-map file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="descriptor-map file")
    p.add_argument("--out", required=True, help="output text file, one value per line")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--levels", default="1,2,3")
    p.add_argument("--dict-size", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--widths", default="4,8,16")
    p.add_argument("--image-size", type=int, default=8)
    p.add_argument("--shared-dim", type=int, default=16)
    p.add_argument("--classes", type=int, default=2)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error [missing-file]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
