"""Command-line front end: train / infer / eval / trajectory / ablate.

Configuration is layered: built-in defaults, then an optional flat
`key = value` config file (UTF-8, `#` comments), then flags that mirror
the keys with dashes. The effective config is echoed as `[config]` lines
before any work starts.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from pathlib import Path

import numpy as np

from .data import DatasetSpec, LrHrPair, load_dir, make_pair, toy_dataset
from .denoiser import DenoiserConfig
from .diffusion import forward_state, sample
from .imaging import (
    FormatError,
    ImagePlane,
    ResampleFilter,
    load_image,
    resample,
    save_image,
)
from .metrics import (
    NoImagesError,
    OrphanFilesError,
    evaluate_dir,
    evaluate_pairs,
    format_table,
    write_csv,
)
from .schedule import ScheduleConfig, build_schedule
from .trainer import (
    CheckpointFormatError,
    ConfigMismatchError,
    TrainConfig,
    TrainingDivergedError,
    as_predictor,
    fit,
    init_state,
    load_checkpoint,
)


class ConfigError(Exception):
    """Bad usage or configuration; maps to exit code 2."""


DEFAULTS: dict = {
    "steps": 4,
    "eta_start": 0.01,
    "eta_end": 0.99,
    "curvature_p": 1.0,
    "base_channels": 32,
    "depth": 3,
    "time_embed_dim": 128,
    "image_channels": 3,
    "lr": 5e-5,
    "batch_size": 8,
    "max_steps": 5000,
    "seed": 0,
    "checkpoint_every": 500,
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_eps": 1e-8,
    "grad_clip": None,
    "patch_size": 64,
    "scale": 4,
    "toy": 0,
    "toy_size": 96,
    "data_dir": None,
    "out": "runs",
    "checkpoint": None,
    "kappa": 0.05,
    "grid": "0.01:0.8,0.01:0.99,0.2:0.99,0.5:0.999",
    "csv": None,
}

_INT_KEYS = {
    "steps", "base_channels", "depth", "time_embed_dim", "image_channels",
    "batch_size", "max_steps", "seed", "checkpoint_every",
    "patch_size", "scale", "toy", "toy_size",
}
_FLOAT_KEYS = {
    "eta_start", "eta_end", "curvature_p", "lr",
    "adam_beta1", "adam_beta2", "adam_eps", "kappa",
}
_OPT_FLOAT_KEYS = {"grad_clip"}
_OPT_STR_KEYS = {"data_dir", "checkpoint", "csv"}
_STR_KEYS = {"out", "grid"}

_KEY_HELP = {
    "steps": "number of diffusion steps T",
    "eta_start": "first interpolation weight",
    "eta_end": "last interpolation weight",
    "curvature_p": "schedule curvature exponent",
    "base_channels": "denoiser channels at full resolution",
    "depth": "number of downsampling levels",
    "time_embed_dim": "sinusoidal time embedding width",
    "image_channels": "image channels the denoiser expects",
    "lr": "Adam learning rate",
    "batch_size": "patches per optimizer step",
    "max_steps": "total optimizer steps",
    "seed": "base random seed",
    "checkpoint_every": "steps between log lines and checkpoint writes",
    "adam_beta1": "Adam first-moment decay",
    "adam_beta2": "Adam second-moment decay",
    "adam_eps": "Adam denominator epsilon",
    "grad_clip": "gradient-norm clip threshold, 'none' to disable",
    "patch_size": "training patch side length",
    "scale": "super-resolution factor",
    "toy": "train on N synthetic images instead of data_dir",
    "toy_size": "synthetic image side length",
    "data_dir": "directory of *.png training images",
    "out": "output directory",
    "checkpoint": "checkpoint file to load",
    "kappa": "noise level for the noisy-baseline strip",
    "grid": "comma list of eta_start:eta_end pairs",
    "csv": "metrics CSV path (default <out>/metrics.csv)",
}


def _coerce(key: str, text: str, where: str):
    text = text.strip()
    try:
        if key in _INT_KEYS:
            return int(text)
        if key in _FLOAT_KEYS:
            return float(text)
        if key in _OPT_FLOAT_KEYS:
            return None if text.lower() in ("", "none") else float(text)
        if key in _OPT_STR_KEYS:
            return None if text.lower() in ("", "none") else text
        if key in _STR_KEYS:
            return text
    except ValueError:
        raise ConfigError(f"{where}: bad value for {key}: {text!r}") from None
    raise ConfigError(f"{where}: unknown key {key!r}")


def parse_config_file(path: Path | str) -> dict:
    """Flat `key = value` lines; `#` starts a comment; blank lines ignored."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value, where=f"{path}:{lineno}")
    return values


def resolve_config(args: argparse.Namespace) -> dict:
    """defaults <- config file <- flags, in increasing precedence."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(parse_config_file(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = _coerce(key, value, where=f"flag --{key.replace('_', '-')}")
    return cfg


def _echo_config(cfg: dict) -> None:
    for key in sorted(cfg):
        value = cfg[key]
        print(f"[config] {key} = {'none' if value is None else value}")


def _schedule_config(cfg: dict) -> ScheduleConfig:
    try:
        return ScheduleConfig(
            steps=cfg["steps"],
            eta_start=cfg["eta_start"],
            eta_end=cfg["eta_end"],
            curvature_p=cfg["curvature_p"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _denoiser_config(cfg: dict) -> DenoiserConfig:
    try:
        return DenoiserConfig(
            base_channels=cfg["base_channels"],
            depth=cfg["depth"],
            time_embed_dim=cfg["time_embed_dim"],
            image_channels=cfg["image_channels"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(
            lr=cfg["lr"],
            batch_size=cfg["batch_size"],
            max_steps=cfg["max_steps"],
            seed=cfg["seed"],
            checkpoint_every=cfg["checkpoint_every"],
            adam_beta1=cfg["adam_beta1"],
            adam_beta2=cfg["adam_beta2"],
            adam_eps=cfg["adam_eps"],
            grad_clip=cfg["grad_clip"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _dataset_spec(cfg: dict) -> DatasetSpec:
    try:
        return DatasetSpec(
            root=Path(cfg["data_dir"]) if cfg["data_dir"] else None,
            patch_size=cfg["patch_size"],
            scale=cfg["scale"],
            seed=cfg["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _center_crop_multiple(img: ImagePlane, m: int) -> ImagePlane | None:
    h = (img.height // m) * m
    w = (img.width // m) * m
    if h == 0 or w == 0:
        return None
    if h == img.height and w == img.width:
        return img
    oy, ox = (img.height - h) // 2, (img.width - w) // 2
    return ImagePlane.from_array(img.data[oy : oy + h, ox : ox + w])


def _training_corpus(cfg: dict) -> tuple[list[ImagePlane], list[LrHrPair]]:
    """Training images plus a small held-out validation split."""
    if cfg["toy"] > 0:
        images = toy_dataset(cfg["toy"] + 2, cfg["toy_size"], cfg["seed"])
        train, val = images[:-2], images[-2:]
    elif cfg["data_dir"]:
        try:
            named = load_dir(cfg["data_dir"])
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from None
        images = [img for _, img in named]
        if not images:
            raise ConfigError(f"no *.png images in {cfg['data_dir']}")
        n_val = min(2, len(images) - 1)
        train = images[: len(images) - n_val]
        val = images[len(images) - n_val :]
    else:
        raise ConfigError("no training data: set data_dir or toy > 0")
    p = cfg["patch_size"]
    usable = [im for im in train if im.height >= p and im.width >= p]
    if len(usable) < len(train):
        print(
            f"warning: dropped {len(train) - len(usable)} image(s) "
            f"smaller than patch_size {p}",
            file=sys.stderr,
        )
    if not usable:
        raise ConfigError(f"no training images at least {p}x{p}")
    m = math.lcm(cfg["scale"], 2 ** cfg["depth"])
    val_pairs = []
    for im in val:
        cropped = _center_crop_multiple(im, m)
        if cropped is not None:
            val_pairs.append(make_pair(cropped, cfg["scale"]))
    return usable, val_pairs


def cmd_train(cfg: dict, args: argparse.Namespace) -> int:
    scfg = _schedule_config(cfg)
    dcfg = _denoiser_config(cfg)
    tcfg = _train_config(cfg)
    spec = _dataset_spec(cfg)
    images, val_pairs = _training_corpus(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    state = init_state(dcfg, scfg, tcfg, scale=cfg["scale"])
    fit(state, images, spec, val_pairs, out_dir=out, log=print)
    summary = _final_summary(state, val_pairs)
    print(summary)
    (out / "summary.txt").write_text(summary + "\n", encoding="utf-8")
    return 0


def _final_summary(state, val_pairs: list[LrHrPair]) -> str:
    if not val_pairs:
        return "final: no validation split"
    schedule = build_schedule(state.schedule_config)
    predictor = as_predictor(state.model)
    model_rows, base_rows = [], []
    for i, pair in enumerate(val_pairs):
        sr, _ = sample(pair.lr_up, predictor, schedule)
        model_rows.append((f"val_{i:02d}", sr, pair.hr))
        base_rows.append((f"val_{i:02d}", pair.lr_up, pair.hr))
    model_rep = evaluate_pairs(model_rows)
    base_rep = evaluate_pairs(base_rows)
    return (
        f"final model   psnr={model_rep.psnr_db:.4f} ssim={model_rep.ssim:.6f}\n"
        f"final bicubic psnr={base_rep.psnr_db:.4f} ssim={base_rep.ssim:.6f}"
    )


def cmd_infer(cfg: dict, args: argparse.Namespace) -> int:
    if not cfg["checkpoint"]:
        raise ConfigError("infer needs a checkpoint (set --checkpoint)")
    try:
        state = load_checkpoint(cfg["checkpoint"])
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {cfg['checkpoint']}") from None
    schedule = build_schedule(state.schedule_config)
    predictor = as_predictor(state.model)
    scale = state.scale
    div = 2 ** state.denoiser_config.depth
    want_c = state.denoiser_config.image_channels
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    for raw in args.inputs:
        src = Path(raw)
        try:
            lr = load_image(src)
            if lr.channels != want_c:
                raise ValueError(
                    f"{lr.channels} channel(s), checkpoint expects {want_c}"
                )
            h, w = lr.height * scale, lr.width * scale
            if h % div or w % div:
                raise ValueError(f"output {h}x{w} not divisible by {div}")
            lr_up = resample(lr, h, w, ResampleFilter.BICUBIC)
            start = time.perf_counter()
            sr, _ = sample(lr_up, predictor, schedule)
            elapsed = time.perf_counter() - start
            dest = out / (src.stem + ".png")
            save_image(sr, dest)
            print(f"{src.name}: {elapsed:.3f}s -> {dest}")
        except (OSError, ValueError, FormatError) as exc:
            failures += 1
            print(f"error: {src}: {exc}", file=sys.stderr)
    return 1 if failures else 0


def cmd_eval(cfg: dict, args: argparse.Namespace) -> int:
    try:
        report = evaluate_dir(args.pred_dir, args.ref_dir)
    except NoImagesError as exc:
        raise ConfigError(str(exc)) from None
    print(format_table(report))
    csv_path = cfg["csv"]
    if csv_path is None:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "metrics.csv"
    else:
        csv_path = Path(csv_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(report, csv_path)
    print(f"wrote {csv_path}")
    return 0


def _strip_tiles(
    pair: LrHrPair, schedule, kappa: float, seed: int
) -> list[tuple[int, float, ImagePlane]]:
    """Degradation path with the sampler's endpoint identifications:
    first tile is the clean image (eta = 0), last is the degraded input."""
    tiles: list[tuple[int, float, ImagePlane]] = [(0, 0.0, pair.hr)]
    for t in range(1, schedule.steps):
        state = forward_state(pair.hr, pair.lr_up, schedule, t)
        tiles.append((t, float(schedule.etas[t - 1]), state.image))
    tiles.append((schedule.steps, float(schedule.etas[-1]), pair.lr_up))
    if kappa == 0.0:
        return tiles
    noisy = []
    for t, eta, img in tiles:
        rng = np.random.default_rng([seed, t])
        eps = rng.standard_normal(size=img.shape)
        out = ImagePlane.from_array(img.data + kappa * math.sqrt(eta) * eps)
        noisy.append((t, eta, out))
    return noisy


def _write_strip(
    tiles: list[tuple[int, float, ImagePlane]], png_path: Path, sidecar_path: Path
) -> None:
    strip = np.concatenate([img.data for _, _, img in tiles], axis=1)
    save_image(ImagePlane.from_array(strip), png_path)
    lines = [f"t={t} eta={eta:.6f}" for t, eta, _ in tiles]
    sidecar_path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_trajectory(cfg: dict, args: argparse.Namespace) -> int:
    if cfg["kappa"] < 0:
        raise ConfigError(f"kappa must be >= 0, got {cfg['kappa']}")
    src = Path(args.image)
    try:
        hr = load_image(src)
    except FileNotFoundError:
        raise ConfigError(f"image not found: {src}") from None
    except FormatError as exc:
        raise ConfigError(str(exc)) from None
    state = None
    if cfg["checkpoint"]:
        try:
            state = load_checkpoint(cfg["checkpoint"])
        except FileNotFoundError:
            raise ConfigError(f"checkpoint not found: {cfg['checkpoint']}") from None
        schedule = build_schedule(state.schedule_config)
        scale = state.scale
        if hr.channels != state.denoiser_config.image_channels:
            raise ConfigError(
                f"{src}: {hr.channels} channel(s), checkpoint expects "
                f"{state.denoiser_config.image_channels}"
            )
        div = 2 ** state.denoiser_config.depth
        if hr.height % div or hr.width % div:
            raise ConfigError(
                f"{src}: {hr.height}x{hr.width} not divisible by {div}"
            )
    else:
        schedule = build_schedule(_schedule_config(cfg))
        scale = cfg["scale"]
    if hr.height % scale or hr.width % scale:
        raise ConfigError(
            f"{src}: {hr.height}x{hr.width} not divisible by scale {scale}"
        )
    pair = make_pair(hr, scale)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)

    forward_tiles = _strip_tiles(pair, schedule, kappa=0.0, seed=cfg["seed"])
    noisy_tiles = _strip_tiles(pair, schedule, kappa=cfg["kappa"], seed=cfg["seed"])
    if state is not None:
        predictor = as_predictor(state.model)
    else:
        predictor = lambda y_t, t, lr_up: pair.hr  # oracle: the true clean image
    _, trajectory = sample(pair.lr_up, predictor, schedule)
    reverse_tiles = [
        (st.t, float(schedule.etas[st.t - 1]) if st.t >= 1 else 0.0, st.image)
        for st in trajectory.states
    ]
    _write_strip(forward_tiles, out / "forward.png", out / "forward_etas.txt")
    _write_strip(noisy_tiles, out / "noisy.png", out / "noisy_etas.txt")
    _write_strip(reverse_tiles, out / "reverse.png", out / "reverse_etas.txt")
    for name in ("forward", "noisy", "reverse"):
        print(f"wrote {out / (name + '.png')} and {out / (name + '_etas.txt')}")
    return 0


def _parse_grid(text: str) -> list[tuple[float, float]]:
    pairs = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 2:
            raise ConfigError(f"bad grid entry {chunk!r}, want eta_start:eta_end")
        try:
            pairs.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise ConfigError(
                f"bad grid entry {chunk!r}, want eta_start:eta_end"
            ) from None
    if not pairs:
        raise ConfigError("empty eta grid")
    return pairs


def cmd_ablate(cfg: dict, args: argparse.Namespace) -> int:
    grid = _parse_grid(cfg["grid"])
    dcfg = _denoiser_config(cfg)
    tcfg = _train_config(cfg)
    spec = _dataset_spec(cfg)
    images, val_pairs = _training_corpus(cfg)
    if not val_pairs:
        raise ConfigError("ablate needs a validation split; provide more data")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    rows: list[tuple[float, float, float | None, float | None, str]] = []
    for eta_start, eta_end in grid:
        try:
            scfg = ScheduleConfig(
                steps=cfg["steps"],
                eta_start=eta_start,
                eta_end=eta_end,
                curvature_p=cfg["curvature_p"],
            )
        except ValueError as exc:
            print(
                f"warning: skipping eta pair ({eta_start}, {eta_end}): {exc}",
                file=sys.stderr,
            )
            rows.append((eta_start, eta_end, None, None, f"skipped: {exc}"))
            continue
        state = init_state(dcfg, scfg, tcfg, scale=cfg["scale"])
        tag = f"[{eta_start}:{eta_end}]"
        fit(state, images, spec, (), log=lambda line: print(f"{tag} {line}"))
        schedule = build_schedule(scfg)
        predictor = as_predictor(state.model)
        triples = []
        for i, pair in enumerate(val_pairs):
            sr, _ = sample(pair.lr_up, predictor, schedule)
            triples.append((f"val_{i:02d}", sr, pair.hr))
        report = evaluate_pairs(triples)
        rows.append((eta_start, eta_end, report.psnr_db, report.ssim, "ok"))
        print(
            f"{tag} psnr={report.psnr_db:.4f} ssim={report.ssim:.6f}"
        )
    csv_path = out / "ablate.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["eta_start", "eta_end", "psnr_db", "ssim", "note"])
        for s, e, p, sv, note in rows:
            writer.writerow(
                [
                    s,
                    e,
                    "" if p is None else f"{p:.4f}",
                    "" if sv is None else f"{sv:.6f}",
                    note,
                ]
            )
    print(f"wrote {csv_path}")
    return 0


_SCHEDULE_KEYS = ["steps", "eta_start", "eta_end", "curvature_p"]
_MODEL_KEYS = ["base_channels", "depth", "time_embed_dim", "image_channels"]
_TRAIN_KEYS = [
    "lr", "batch_size", "max_steps", "checkpoint_every",
    "adam_beta1", "adam_beta2", "adam_eps", "grad_clip",
]
_DATA_KEYS = ["data_dir", "patch_size", "scale", "toy", "toy_size"]


def _add_key_flags(parser: argparse.ArgumentParser, keys: list[str]) -> None:
    for key in keys:
        parser.add_argument(
            "--" + key.replace("_", "-"),
            dest=key,
            metavar="V",
            default=None,
            help=_KEY_HELP[key],
        )


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="flat key = value config file")
    _add_key_flags(parser, ["seed", "out"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdsr",
        description="Deterministic residual-diffusion super-resolution toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the denoiser on toy or directory data")
    _common(p)
    _add_key_flags(p, _SCHEDULE_KEYS + _MODEL_KEYS + _TRAIN_KEYS + _DATA_KEYS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve LR images with a checkpoint")
    _common(p)
    _add_key_flags(p, ["checkpoint"])
    p.add_argument("inputs", nargs="+", metavar="LR_IMAGE", help="LR input image(s)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM between two image directories")
    _common(p)
    _add_key_flags(p, ["csv"])
    p.add_argument("pred_dir", help="directory of predictions")
    p.add_argument("ref_dir", help="directory of references")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "trajectory", help="render forward / noisy / reverse state strips"
    )
    _common(p)
    _add_key_flags(p, _SCHEDULE_KEYS + ["checkpoint", "kappa", "scale"])
    p.add_argument("image", metavar="HR_IMAGE", help="clean reference image")
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("ablate", help="train and score one model per eta pair")
    _common(p)
    _add_key_flags(
        p,
        ["steps", "curvature_p", "grid"] + _MODEL_KEYS + _TRAIN_KEYS + _DATA_KEYS,
    )
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        _echo_config(cfg)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (
        FormatError,
        OrphanFilesError,
        TrainingDivergedError,
        CheckpointFormatError,
        ConfigMismatchError,
        OSError,
        ValueError,
        RuntimeError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
