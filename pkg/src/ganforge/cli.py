"""``ganforge`` command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data or I/O error,
4 numeric abort, 5 unreadable checkpoint.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .checkpoint import read_header
from .config import format_config, resolve, train_config
from .data import grid_columns, load_dataset, sample_latent, save_image, save_image_grid, denormalize
from .errors import (
    CheckpointError,
    ConfigError,
    DatasetError,
    GanForgeError,
    NumericError,
    ShapeError,
)
from .fid import FIDResult, compute_fid, make_extractor
from .models import generate
from .synth import SynthIrisParams, generate_synthetic_dataset
from .train import LOSS_HEADER, load_discriminator, load_generator, run_training

log = logging.getLogger("ganforge")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_CHECKPOINT = 0, 2, 3, 4, 5


# -- train ----------------------------------------------------------------

def _add_train(sub) -> None:
    p = sub.add_parser("train", help="train a generator/discriminator pair",
                       description="Adversarial training with epoch snapshots and checkpoints.")
    p.add_argument("--config", help="key=value config file; flags override its values")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="directory of training images (searched recursively)")
    src.add_argument("--synthetic", type=int, metavar="N",
                     help="train on N procedurally generated eye images written to OUT/synthetic")
    p.add_argument("--out", help="output directory (default: ganforge_run)")
    p.add_argument("--epochs", type=int, help="number of epochs (default 120)")
    p.add_argument("--batch-size", type=int, help="images per batch (default 80)")
    p.add_argument("--latent-dim", type=int, help="latent vector length (default 100)")
    p.add_argument("--resolution", type=int, help="square training resolution, multiple of 16 (default 64)")
    p.add_argument("--base-channels", type=int, help="channel width of the widest-resolution layer (default 64)")
    p.add_argument("--snapshot-period", dest="snapshot_period_epochs", type=int,
                   help="epochs between snapshot grids (default 10)")
    p.add_argument("--snapshot-count", dest="snapshot_latent_count", type=int,
                   help="fixed latents per snapshot grid (default 16)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 0.0002)")
    p.add_argument("--beta1", type=float, help="Adam beta1 (default 0.5)")
    p.add_argument("--beta2", type=float, help="Adam beta2 (default 0.999)")
    p.add_argument("--d-steps", type=int, help="discriminator updates per generator update (default 1)")
    p.add_argument("--lr-decay", action=argparse.BooleanOptionalAction, default=None,
                   help="decay the learning rate linearly to zero over the run (default off)")
    p.add_argument("--strict-batchnorm", action=argparse.BooleanOptionalAction, default=None,
                   help="batch-normalize after every conv layer, including the first and last")
    p.add_argument("--leaky-slope", type=float, help="discriminator leaky-ReLU slope (default 0.2)")
    p.add_argument("--sample-mode", choices=("eval", "train"),
                   help="batch-norm mode used for snapshots (default eval)")
    p.add_argument("--synth-size", type=int, help="render size of synthetic images (default 64)")
    p.add_argument("--resume", help="continue from a checkpoint written by an earlier run")
    p.set_defaults(func=cmd_train)


def cmd_train(args) -> int:
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "config", "command")}
    values = resolve(flags, args.config)
    cfg = train_config(values)
    if values["data"] is None and values["synthetic"] is None:
        raise ConfigError("give a dataset with --data DIR or --synthetic N")
    if values["synthetic"] is not None and values["synthetic"] < 1:
        raise ConfigError("--synthetic needs a positive image count")
    if values["data"] is not None and not Path(values["data"]).is_dir():
        raise DatasetError(f"dataset directory {values['data']} does not exist")
    if values["resume"] is not None and not Path(values["resume"]).is_file():
        raise CheckpointError(f"checkpoint {values['resume']} does not exist")

    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.txt").write_text(format_config(values))

    if values["synthetic"] is not None:
        data_dir = out / "synthetic"
        params = SynthIrisParams(size=values["synth_size"], seed=cfg.seed)
        generate_synthetic_dataset(params, values["synthetic"], data_dir)
    else:
        data_dir = Path(values["data"])
    dataset = load_dataset(data_dir, cfg.resolution, seed=cfg.seed)
    run = run_training(cfg, dataset, out, resume=values["resume"])
    print(f"trained {run.state.epoch} epochs, {run.state.iteration} steps; artifacts in {out}")
    return EXIT_OK


# -- generate -------------------------------------------------------------

def _add_generate(sub) -> None:
    p = sub.add_parser("generate", help="sample images from a trained generator",
                       description="Write COUNT individual images and one grid from a checkpoint.")
    p.add_argument("--checkpoint", required=True, help="checkpoint file (.gfck)")
    p.add_argument("--count", type=int, default=8, help="number of images (default 8)")
    p.add_argument("--seed", type=int, default=0, help="latent sampling seed (default 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--columns", type=int, help="grid columns (default: smallest divisor >= sqrt(count))")
    p.add_argument("--mode", choices=("eval", "train"), default="eval",
                   help="batch-norm mode for sampling (default eval)")
    p.set_defaults(func=cmd_generate)


def cmd_generate(args) -> int:
    if args.count < 1:
        raise ConfigError("--count must be positive")
    net = load_generator(args.checkpoint)
    z = sample_latent(args.count, net.latent_dim, args.seed)
    images = generate(net, z, mode=args.mode).data
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        save_image(denormalize(img), out / f"sample_{i:04d}.png")
    save_image_grid(images, args.columns or grid_columns(args.count), out / "grid.png")
    print(f"wrote {args.count} samples and grid.png to {out}")
    return EXIT_OK


# -- fid ------------------------------------------------------------------

def _add_fid(sub) -> None:
    p = sub.add_parser("fid", help="Frechet distance between real and generated images",
                       description="Print one CSV record: fid,n_real,n_gen,extractor,feature_dim.")
    p.add_argument("--real", required=True, help="directory of real images")
    p.add_argument("--gen", help="directory of generated images")
    p.add_argument("--checkpoint", help="sample generated images from this checkpoint instead of --gen")
    p.add_argument("--count", type=int, help="samples to draw with --checkpoint (default: number of real images)")
    p.add_argument("--seed", type=int, default=0, help="latent seed for --checkpoint sampling (default 0)")
    p.add_argument("--extractor", choices=("randconv", "pixels", "discriminator"), default="randconv",
                   help="feature extractor (default randconv)")
    p.add_argument("--extractor-seed", type=int, default=0, help="weight seed of the randconv extractor")
    p.add_argument("--disc-checkpoint", help="checkpoint whose discriminator serves as extractor "
                   "(default: --checkpoint)")
    p.add_argument("--resolution", type=int,
                   help="resize all images to this side; by default native sizes must agree")
    p.add_argument("--header", action="store_true", help="print the CSV header line first")
    p.set_defaults(func=cmd_fid)


def cmd_fid(args) -> int:
    if (args.gen is None) == (args.checkpoint is None):
        raise ConfigError("give exactly one of --gen DIR or --checkpoint FILE")
    real = load_dataset(args.real, args.resolution)
    if args.gen is not None:
        gen_images = load_dataset(args.gen, args.resolution).images().data
    else:
        net = load_generator(args.checkpoint)
        if net.resolution != real.resolution:
            raise ShapeError(
                f"generator resolution {net.resolution} differs from real images ({real.resolution}); "
                "pass --resolution to resize the real set"
            )
        count = args.count or len(real)
        gen_images = generate(net, sample_latent(count, net.latent_dim, args.seed), mode="eval").data
    real_images = real.images().data
    if real_images.shape[1:] != gen_images.shape[1:]:
        raise ShapeError(
            f"real images are {real_images.shape[-1]}px but generated images are "
            f"{gen_images.shape[-1]}px; pass --resolution to compare them"
        )
    disc = None
    if args.extractor == "discriminator":
        source = args.disc_checkpoint or args.checkpoint
        if source is None:
            raise ConfigError("the discriminator extractor needs --disc-checkpoint or --checkpoint")
        disc = load_discriminator(source)
    extractor = make_extractor(args.extractor, channels=real_images.shape[1],
                               seed=args.extractor_seed, discriminator=disc)
    result = compute_fid(real_images, gen_images, extractor)
    if args.header:
        print(FIDResult.HEADER)
    print(result.to_csv())
    return EXIT_OK


# -- synth ----------------------------------------------------------------

def _add_synth(sub) -> None:
    d = SynthIrisParams()
    p = sub.add_parser("synth", help="write a procedural eye-image corpus",
                       description="Generate COUNT synthetic grayscale eye images and manifest.csv.")
    p.add_argument("--count", type=int, required=True, help="number of images")
    p.add_argument("--seed", type=int, default=0, help="corpus seed (default 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", type=int, default=d.size, help=f"image side in pixels (default {d.size})")
    p.add_argument("--pupil-min", type=float, default=d.pupil_radius[0], help="min pupil radius, fraction of side")
    p.add_argument("--pupil-max", type=float, default=d.pupil_radius[1], help="max pupil radius, fraction of side")
    p.add_argument("--iris-min", type=float, default=d.iris_radius[0], help="min iris radius, fraction of side")
    p.add_argument("--iris-max", type=float, default=d.iris_radius[1], help="max iris radius, fraction of side")
    p.add_argument("--freq-min", type=float, default=d.texture_freq[0], help="min radial texture frequency")
    p.add_argument("--freq-max", type=float, default=d.texture_freq[1], help="max radial texture frequency")
    p.add_argument("--eyelid-min", type=float, default=d.eyelid_angle[0], help="min eyelid angle (radians)")
    p.add_argument("--eyelid-max", type=float, default=d.eyelid_angle[1], help="max eyelid angle (radians)")
    p.add_argument("--eyelid-prob", type=float, default=d.eyelid_probability, help="probability of an eyelid")
    p.add_argument("--specular-prob", type=float, default=d.specular_probability,
                   help="probability of a specular highlight")
    p.add_argument("--background", type=float, default=d.background, help="sclera intensity 0-255")
    p.set_defaults(func=cmd_synth)


def cmd_synth(args) -> int:
    params = SynthIrisParams(
        size=args.size,
        pupil_radius=(args.pupil_min, args.pupil_max),
        iris_radius=(args.iris_min, args.iris_max),
        texture_freq=(args.freq_min, args.freq_max),
        eyelid_angle=(args.eyelid_min, args.eyelid_max),
        eyelid_probability=args.eyelid_prob,
        specular_probability=args.specular_prob,
        background=args.background,
        seed=args.seed,
    )
    params.validate()
    if args.count < 1:
        raise ConfigError(f"--count must be positive, got {args.count}")
    paths = generate_synthetic_dataset(params, args.count, args.out)
    print(f"wrote {len(paths)} images and manifest.csv to {args.out}")
    return EXIT_OK


# -- plot -----------------------------------------------------------------

def _add_plot(sub) -> None:
    p = sub.add_parser("plot", help="render discriminator/generator loss curves",
                       description="Plot both loss series of a losses.csv against iteration.")
    p.add_argument("loss_csv", help="loss log written by train")
    p.add_argument("--out", help="output PNG (default: loss_curves.png next to the CSV)")
    p.set_defaults(func=cmd_plot)


def read_loss_csv(path: Path) -> np.ndarray:
    """Rows of (iteration, epoch, d_loss, g_loss); malformed lines raise ConfigError."""
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from e
    if not lines or lines[0].strip() != LOSS_HEADER:
        raise ConfigError(f"{path}:1: expected header {LOSS_HEADER!r}")
    rows = []
    for lineno, fields in enumerate(csv.reader(lines[1:]), 2):
        if not fields:
            continue
        try:
            if len(fields) != 4:
                raise ValueError
            rows.append((int(fields[0]), int(fields[1]), float(fields[2]), float(fields[3])))
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: malformed row {','.join(fields)!r}") from None
    if not rows:
        raise ConfigError(f"{path}: no loss rows after the header")
    return np.array(rows, dtype=np.float64)


def render_loss_chart(rows: np.ndarray, out: Path) -> list[tuple[str, int]]:
    """Draw both loss series against iteration; returns (label, point count) per series."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 4.5), dpi=100)
    ax.plot(rows[:, 0], rows[:, 2], label="discriminator", linewidth=1.0)
    ax.plot(rows[:, 0], rows[:, 3], label="generator", linewidth=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, format="png", metadata={"Software": None})
    series = [(line.get_label(), len(line.get_xdata())) for line in ax.get_lines()]
    plt.close(fig)
    return series


def cmd_plot(args) -> int:
    path = Path(args.loss_csv)
    rows = read_loss_csv(path)
    out = Path(args.out) if args.out else path.with_name("loss_curves.png")
    render_loss_chart(rows, out)
    print(f"wrote {out}")
    return EXIT_OK


# -- inspect --------------------------------------------------------------

def _add_inspect(sub) -> None:
    p = sub.add_parser("inspect", help="print a checkpoint's header and tensor census",
                       description="Dump format version, configuration block and stored tensors.")
    p.add_argument("checkpoint", help="checkpoint file (.gfck)")
    p.set_defaults(func=cmd_inspect)


def cmd_inspect(args) -> int:
    version, config, census = read_header(args.checkpoint)
    state = config.get("state", {})
    if "history" in state:
        state = dict(state, history=f"<{len(state['history'])} rows>")
        config = dict(config, state=state)
    print(f"format: GANFORGE v{version}")
    print(json.dumps(config, indent=2, sort_keys=True))
    total = 0
    for name, shape in census:
        n = int(np.prod(shape, dtype=np.int64))
        total += n
        print(f"{name:40s} {'x'.join(map(str, shape)) or 'scalar':>20s} {n:>10d}")
    print(f"{len(census)} tensors, {total} values")
    return EXIT_OK


# -- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ganforge", description="DC-GAN training toolkit on a numpy autodiff core.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_train, _add_generate, _add_fid, _add_synth, _add_plot, _add_inspect):
        add(sub)
    return parser


def _exit_code(err: Exception) -> int:
    if isinstance(err, CheckpointError):
        return EXIT_CHECKPOINT
    if isinstance(err, NumericError):
        return EXIT_NUMERIC
    if isinstance(err, (DatasetError, OSError)):
        return EXIT_DATA
    if isinstance(err, (ConfigError, ShapeError, ValueError)):
        return EXIT_CONFIG
    return 1


def _thread_limit():
    raw = os.environ.get("GANFORGE_THREADS", "1")
    try:
        n = max(1, int(raw))
    except ValueError:
        raise ConfigError(f"GANFORGE_THREADS must be an integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except (GanForgeError, OSError, ValueError) as e:
        print(f"ganforge {args.command}: error: {e}", file=sys.stderr)
        return _exit_code(e)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
