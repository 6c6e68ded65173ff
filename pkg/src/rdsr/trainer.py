"""Optimization loop for the clean-image denoiser, plus checkpoint I/O.

Training draws a timestep per batch element, builds the corresponding
degraded state, and regresses the network's prediction against the clean
target. There is no noise term anywhere in the process, so a run is a pure
function of (configs, seeds, data) and repeated runs agree exactly.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .data import DatasetSpec, LrHrPair, patch_stream
from .denoiser import Denoiser, DenoiserConfig, build_denoiser, predict
from .diffusion import forward_state, sample
from .imaging import ImagePlane
from .metrics import psnr
from .schedule import EtaSchedule, ScheduleConfig, build_schedule

CHECKPOINT_MAGIC = b"DDIF"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


class CheckpointFormatError(ValueError):
    """The file is not a readable checkpoint (bad magic, truncation, ...)."""


class CheckpointVersionError(CheckpointFormatError):
    """Valid container, but a format version this build does not speak."""


class ConfigMismatchError(ValueError):
    """Checkpoint configuration disagrees with what the caller expects."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 8
    max_steps: int = 5000
    seed: int = 0
    checkpoint_every: int = 500
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.checkpoint_every < 1:
            raise ValueError(
                f"checkpoint_every must be >= 1, got {self.checkpoint_every}"
            )
        if not 0.0 < self.adam_beta1 < self.adam_beta2 < 1.0:
            raise ValueError(
                "need 0 < adam_beta1 < adam_beta2 < 1, got "
                f"{self.adam_beta1} and {self.adam_beta2}"
            )
        if self.adam_eps <= 0:
            raise ValueError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError(f"grad_clip must be positive, got {self.grad_clip}")


@dataclass
class TrainState:
    """Everything a checkpoint must capture to resume a run."""

    model: Denoiser
    optimizer: torch.optim.Adam
    denoiser_config: DenoiserConfig
    schedule_config: ScheduleConfig
    train_config: TrainConfig
    scale: int
    step: int = 0
    loss_history: list[tuple[int, float]] = field(default_factory=list)


def _make_optimizer(model: Denoiser, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(
        model.parameters(),
        lr=cfg.lr,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        eps=cfg.adam_eps,
    )


def init_state(
    denoiser_config: DenoiserConfig,
    schedule_config: ScheduleConfig,
    train_config: TrainConfig,
    scale: int,
) -> TrainState:
    """Fresh state: seeded init, zero optimizer moments, step 0."""
    model = build_denoiser(denoiser_config, seed=train_config.seed)
    return TrainState(
        model=model,
        optimizer=_make_optimizer(model, train_config),
        denoiser_config=denoiser_config,
        schedule_config=schedule_config,
        train_config=train_config,
        scale=scale,
    )


def as_predictor(model: Denoiser) -> Callable[[ImagePlane, int, ImagePlane], ImagePlane]:
    """Wrap trained weights as the sampling-loop callback."""

    def _predict(y_t: ImagePlane, t: int, lr_up: ImagePlane) -> ImagePlane:
        return predict(model, y_t, t, lr_up)

    return _predict


def pair_loss(model: Denoiser, pair: LrHrPair, t: int, schedule: EtaSchedule) -> float:
    """Squared-error score of the prediction at one timestep of one pair."""
    state = forward_state(pair.hr, pair.lr_up, schedule, t)
    pred = predict(model, state.image, t, pair.lr_up)
    return float(np.mean((pred.data - pair.hr.data) ** 2))


def _stack_pairs(pairs: Sequence[LrHrPair]) -> tuple[torch.Tensor, torch.Tensor]:
    hr = np.stack([p.hr.data for p in pairs]).astype(np.float32)
    lr_up = np.stack([p.lr_up.data for p in pairs]).astype(np.float32)
    to_nchw = lambda a: torch.from_numpy(np.ascontiguousarray(a.transpose(0, 3, 1, 2)))
    return to_nchw(hr), to_nchw(lr_up)


def _batch_loss(
    model: Denoiser,
    hr: torch.Tensor,
    lr_up: torch.Tensor,
    ts: torch.Tensor,
    schedule: EtaSchedule,
) -> torch.Tensor:
    etas = torch.tensor(schedule.etas, dtype=torch.float32)[ts - 1]
    y_t = hr + etas.view(-1, 1, 1, 1) * (lr_up - hr)
    pred = model(y_t, ts.to(torch.float32), lr_up)
    return torch.mean((pred - hr) ** 2)


def train_step(
    state: TrainState,
    batch: Sequence[LrHrPair],
    schedule: EtaSchedule,
    rng: np.random.Generator,
) -> TrainState:
    """One optimizer update; timesteps are drawn per batch element."""
    if not batch:
        raise ValueError("train_step needs a non-empty batch")
    hr, lr_up = _stack_pairs(batch)
    ts = torch.from_numpy(rng.integers(1, schedule.steps + 1, size=len(batch)))
    state.model.train()
    loss = _batch_loss(state.model, hr, lr_up, ts, schedule)
    value = float(loss.item())
    state.step += 1
    if not math.isfinite(value):
        raise TrainingDivergedError(f"non-finite loss {value} at step {state.step}")
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if state.train_config.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(
            state.model.parameters(), state.train_config.grad_clip
        )
    state.optimizer.step()
    state.loss_history.append((state.step, value))
    return state


def validation_psnr(
    model: Denoiser, pairs: Sequence[LrHrPair], schedule: EtaSchedule
) -> float:
    """Mean PSNR of full reverse sampling over held-out pairs."""
    if not pairs:
        return float("nan")
    predictor = as_predictor(model)
    scores = [psnr(sample(p.lr_up, predictor, schedule)[0], p.hr) for p in pairs]
    return float(np.mean(scores))


def fit(
    state: TrainState,
    images: Sequence[ImagePlane],
    spec: DatasetSpec,
    val_pairs: Sequence[LrHrPair] = (),
    *,
    out_dir: Path | str | None = None,
    log: Callable[[str], None] = print,
) -> TrainState:
    """Run to max_steps, logging and checkpointing every checkpoint_every.

    Log lines are machine-parseable: `step=<n> loss=<v> psnr_val=<v>`.
    When out_dir is given, a rolling checkpoint.ddif is kept there.
    """
    cfg = state.train_config
    schedule = build_schedule(state.schedule_config)
    stream = patch_stream(list(images), spec)
    rng = np.random.default_rng([cfg.seed, 1])
    # realign the deterministic draws when resuming mid-run
    for _ in range(state.step):
        rng.integers(1, schedule.steps + 1, size=cfg.batch_size)
    for _ in range(state.step * cfg.batch_size):
        next(stream)
    ckpt_path = Path(out_dir) / "checkpoint.ddif" if out_dir is not None else None
    while state.step < cfg.max_steps:
        batch = [next(stream) for _ in range(cfg.batch_size)]
        train_step(state, batch, schedule, rng)
        if state.step % cfg.checkpoint_every == 0 or state.step == cfg.max_steps:
            val = validation_psnr(state.model, val_pairs, schedule)
            value = state.loss_history[-1][1]
            log(f"step={state.step} loss={value:.6g} psnr_val={val:.4f}")
            if ckpt_path is not None:
                save_checkpoint(ckpt_path, state)
    return state


def save_checkpoint(path: Path | str, state: TrainState) -> None:
    """Serialize params, Adam moments, and run metadata; atomic replace."""
    entries: list[dict] = []
    blobs: list[np.ndarray] = []

    def put(name: str, kind: str, tensor: torch.Tensor) -> None:
        arr = np.ascontiguousarray(tensor.detach().numpy(), dtype="<f4")
        entries.append({"name": name, "kind": kind, "shape": list(arr.shape)})
        blobs.append(arr)

    named = dict(state.model.named_parameters())
    for name, p in named.items():
        put(name, "param", p)
    adam_step = 0.0
    for name, p in named.items():
        opt_entry = state.optimizer.state.get(p)
        if not opt_entry:
            continue  # no update has touched this parameter yet
        adam_step = float(opt_entry["step"].item())
        put(name, "m1", opt_entry["exp_avg"])
        put(name, "m2", opt_entry["exp_avg_sq"])
    header = {
        "denoiser": dataclasses.asdict(state.denoiser_config),
        "schedule": dataclasses.asdict(state.schedule_config),
        "train": dataclasses.asdict(state.train_config),
        "scale": state.scale,
        "step": state.step,
        "adam_step": adam_step,
        "loss_history": [[s, v] for s, v in state.loss_history],
        "arrays": entries,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for arr in blobs:
            f.write(arr.tobytes())
    os.replace(tmp, path)


def _check_match(kind: str, got, want) -> None:
    if want is None or got == want:
        return
    for f in dataclasses.fields(got):
        a, b = getattr(got, f.name), getattr(want, f.name)
        if a != b:
            raise ConfigMismatchError(
                f"checkpoint {kind} config differs: {f.name} = {a!r}, expected {b!r}"
            )
    raise ConfigMismatchError(f"checkpoint {kind} config differs from expectation")


def load_checkpoint(
    path: Path | str,
    *,
    expect_denoiser: DenoiserConfig | None = None,
    expect_schedule: ScheduleConfig | None = None,
    expect_scale: int | None = None,
) -> TrainState:
    """Rebuild the full training state; arrays come back bitwise-equal.

    The expect_* arguments let a caller that already committed to a
    configuration reject a checkpoint written under a different one.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16:
        raise CheckpointFormatError(f"{path}: too short to be a checkpoint")
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
        )
    (header_len,) = struct.unpack_from("<Q", data, 8)
    if len(data) < 16 + header_len:
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable header ({exc})") from exc
    payload = data[16 + header_len :]
    promised = sum(
        int(np.prod(e["shape"], dtype=np.int64)) * 4 for e in header["arrays"]
    )
    if len(payload) != promised:
        raise CheckpointFormatError(
            f"{path}: payload is {len(payload)} bytes, header promises {promised}"
        )
    dcfg = DenoiserConfig(**header["denoiser"])
    scfg = ScheduleConfig(**header["schedule"])
    tcfg = TrainConfig(**header["train"])
    scale = int(header["scale"])
    _check_match("denoiser", dcfg, expect_denoiser)
    _check_match("schedule", scfg, expect_schedule)
    if expect_scale is not None and scale != expect_scale:
        raise ConfigMismatchError(
            f"checkpoint scale differs: scale = {scale}, expected {expect_scale}"
        )
    arrays: dict[tuple[str, str], np.ndarray] = {}
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        arrays[(entry["kind"], entry["name"])] = arr.reshape(shape)
        offset += count * 4
    model = build_denoiser(dcfg, seed=tcfg.seed)
    named = dict(model.named_parameters())
    with torch.no_grad():
        for name, p in named.items():
            stored = arrays.get(("param", name))
            if stored is None:
                raise CheckpointFormatError(f"{path}: missing parameter array {name}")
            if stored.shape != tuple(p.shape):
                raise CheckpointFormatError(
                    f"{path}: array {name} has shape {stored.shape}, "
                    f"model wants {tuple(p.shape)}"
                )
            p.copy_(torch.from_numpy(stored.copy()))
    optimizer = _make_optimizer(model, tcfg)
    adam_step = float(header.get("adam_step", 0.0))
    for name, p in named.items():
        m1 = arrays.get(("m1", name))
        m2 = arrays.get(("m2", name))
        if m1 is None or m2 is None:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(adam_step),
            "exp_avg": torch.from_numpy(m1.copy()),
            "exp_avg_sq": torch.from_numpy(m2.copy()),
        }
    history = [(int(s), float(v)) for s, v in header.get("loss_history", [])]
    return TrainState(
        model=model,
        optimizer=optimizer,
        denoiser_config=dcfg,
        schedule_config=scfg,
        train_config=tcfg,
        scale=scale,
        step=int(header["step"]),
        loss_history=history,
    )
