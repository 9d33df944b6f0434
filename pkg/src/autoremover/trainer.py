"""Training loops for the inpainting GAN and the shadow branch."""

import json
import logging
import math
import os
import queue
import threading
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, List, Optional

import numpy as np
import torch

from .errors import BadArgument, NoData, NonFiniteLoss
from .inpaint_net import (InpaintConfig, InpaintGenerator, PatchDiscriminator, composite_output,
                          flows_to_tensor, load_inpaint, save_inpaint)
from .losses import build_loss_validity, d_hinge_loss, g_hinge_loss, reconstruction_loss
from .checkpoint import load_checkpoint, save_checkpoint
from .shadow_net import ShadowUNet, iou, shadow_loss

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    max_iters: int = 2000
    seq_len: int = 5
    seed: int = 0
    checkpoint_every: int = 500
    log_every: int = 50
    beta1: float = 0.5
    beta2: float = 0.999
    alpha: float = 1.0
    adv_weight: float = 0.01
    bottom_crop_w: int = 562
    bottom_crop_h: int = 226
    crop_w: int = 384
    crop_h: int = 192
    eval_crop_w: int = 560
    eval_crop_h: int = 448
    hole_size: int = 24
    jitter_px: float = 3.0
    coarse_channels: int = 32
    feature_channels: int = 32
    disc_channels: int = 64
    disc_layers: int = 6
    use_warping: bool = True
    use_attention: bool = True
    shadow_depth: int = 4
    shadow_base_channels: int = 32
    shadow_threshold: float = 0.5
    prefetch: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type in (int, float, "int", "float") and not isinstance(v, bool):
                if not math.isfinite(v) or v < 0:
                    raise BadArgument(f"{f.name} must be finite and non-negative, got {v}")
        if self.seq_len % 2 == 0:
            raise BadArgument(f"seq_len must be odd, got {self.seq_len}")
        if self.batch_size < 1:
            raise BadArgument("batch_size must be positive")

    def inpaint_config(self):
        return InpaintConfig(num_frames=self.seq_len, coarse_channels=self.coarse_channels,
                             feature_channels=self.feature_channels, disc_channels=self.disc_channels,
                             disc_layers=self.disc_layers, use_warping=self.use_warping,
                             use_attention=self.use_attention)


def _parse_value(kind, text):
    if kind in (bool, "bool"):
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {text!r}")
        return low in ("true", "1", "yes")
    if kind in (int, "int"):
        return int(text)
    return float(text)


def load_config(path, **overrides) -> TrainConfig:
    """Read a flat ``key = value`` file; ``#`` starts a comment. Unknown keys are errors."""
    kinds = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in kinds:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _parse_value(kinds[key], val)
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def save_config(path, config: TrainConfig):
    with open(path, "w") as f:
        for k, v in asdict(config).items():
            f.write(f"{k} = {v}\n")


# ------------------------------------------------------------------ samples

def make_sample(seq, holes=None):
    """Tensors for one training/eval window.

    ``seq.masks`` are treated as real-object masks and ``holes`` (F, H, W) as
    synthetic holes; the network input mask is their intersection and the loss
    validity excludes real objects only.
    """
    n, h, w = seq.masks.shape
    objects = seq.masks.astype(np.uint8)
    holes = np.ones_like(objects) if holes is None else np.asarray(holes, np.uint8)
    masks = objects & holes
    valid = build_loss_validity(objects, holes)
    flows = flows_to_tensor(seq.flows, n, seq.target_index, h, w) if seq.flows else torch.zeros(n, 2, h, w)
    return {
        "frames": torch.as_tensor(seq.frames).permute(0, 3, 1, 2).contiguous(),
        "masks": torch.as_tensor(masks, dtype=torch.float32).unsqueeze(1),
        "flows": flows,
        "valid": torch.as_tensor(valid, dtype=torch.float32).unsqueeze(1),
    }


def collate(samples):
    return {k: torch.stack([s[k] for s in samples]) for k in samples[0]}


def batches(data, batch_size, seed, skip=0):
    """Endless stream of batches.

    A list is reshuffled every epoch with an order that depends only on
    ``(seed, epoch)``, so a resumed run can ``skip`` the batches it already used
    and continue exactly where it stopped. Other iterables are read in order.
    """
    if isinstance(data, (list, tuple)):
        if not data:
            raise NoData("empty dataset")
        n = len(data)
        per_epoch = max(n // batch_size, 1)
        epoch, offset = divmod(skip, per_epoch)
        while True:
            order = np.random.default_rng([seed, epoch]).permutation(n)
            for b in range(offset, per_epoch):
                idx = order[b * batch_size:(b + 1) * batch_size]
                yield collate([data[i] for i in idx])
            epoch, offset = epoch + 1, 0
    else:
        it = iter(data)
        for _ in range(skip * batch_size):
            next(it, None)
        while True:
            chunk = []
            for _ in range(batch_size):
                try:
                    chunk.append(next(it))
                except StopIteration:
                    break
            if not chunk:
                raise NoData("data source exhausted")
            yield collate(chunk)


_DONE = object()


def prefetch(iterator, maxsize=2):
    """Run ``iterator`` in a background thread behind a bounded queue.

    Items arrive in production order, each exactly once. Exceptions from the
    producer are re-raised in the consumer.
    """
    q = queue.Queue(maxsize=maxsize)
    stop = threading.Event()

    def producer():
        try:
            for item in iterator:
                while not stop.is_set():
                    try:
                        q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
            q.put(_DONE)
        except BaseException as e:  # forwarded to the consumer
            q.put(e)

    threading.Thread(target=producer, daemon=True).start()
    try:
        while True:
            item = q.get()
            if item is _DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()


# ------------------------------------------------------------------ inpainting

@dataclass
class InpaintTrainResult:
    generator: InpaintGenerator
    discriminator: PatchDiscriminator
    log: List[dict] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)


def _check_finite(iteration, **values):
    for name, v in values.items():
        if not math.isfinite(v):
            raise NonFiniteLoss(iteration, name, v)


def generator_forward(gen, batch, config: TrainConfig):
    """Run the generator; returns ``(L_g, composite_target, coarse, refined)``."""
    m = gen.config.target_index
    frames, masks = batch["frames"], batch["masks"]
    coarse, refined = gen(frames * masks, masks, batch["flows"])
    l_rec = reconstruction_loss(coarse, refined, frames, batch["valid"], config.alpha, m)
    comp = composite_output(refined, frames[:, m] * masks[:, m], masks[:, m])
    return l_rec, comp, coarse, refined


def train_inpainting(config: TrainConfig, data, out_dir=None, resume_from=None,
                     on_iteration: Optional[Callable] = None) -> InpaintTrainResult:
    """Alternate one discriminator and one generator Adam step per iteration.

    ``data`` is a list of samples from :func:`make_sample` (reshuffled every epoch
    with the config seed) or an iterator of samples. With ``out_dir`` set, an
    append-only ``train_log.jsonl`` and checkpoints are written there.
    ``on_iteration(it, generator, discriminator)`` runs after each step.
    """
    if isinstance(data, (list, tuple)) and not data:
        raise NoData("empty dataset")
    torch.manual_seed(config.seed)
    gen = InpaintGenerator(config.inpaint_config())
    disc = PatchDiscriminator(config.disc_channels, config.disc_layers)
    betas = (config.beta1, config.beta2)
    opt_g = torch.optim.Adam(gen.parameters(), lr=config.learning_rate, betas=betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.learning_rate, betas=betas)
    start = 0
    if resume_from is not None:
        gen, disc, payload = load_inpaint(resume_from)
        opt_g = torch.optim.Adam(gen.parameters(), lr=config.learning_rate, betas=betas)
        opt_d = torch.optim.Adam(disc.parameters(), lr=config.learning_rate, betas=betas)
        extra = payload["extra"]
        opt_g.load_state_dict(extra["opt_g"])
        opt_d.load_state_dict(extra["opt_d"])
        start = extra["iteration"]
    gen.train()
    disc.train()

    result = InpaintTrainResult(gen, disc)
    log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "train_log.jsonl")

    def checkpoint(it):
        if out_dir is None:
            return
        path = os.path.join(out_dir, f"inpaint_{it:06d}.pt")
        save_inpaint(path, gen, disc, {"iteration": it, "opt_g": opt_g.state_dict(),
                                       "opt_d": opt_d.state_dict(),
                                       "train_config": asdict(config)})
        result.checkpoints.append(path)

    if config.max_iters <= start:
        checkpoint(start)
        return result

    stream = batches(data, config.batch_size, config.seed, skip=start)
    if config.prefetch:
        stream = prefetch(stream, config.prefetch)
    m = gen.config.target_index
    for it in range(start + 1, config.max_iters + 1):
        t0 = time.perf_counter()
        batch = next(stream)
        frames, masks = batch["frames"], batch["masks"]

        l_rec, comp, _, _ = generator_forward(gen, batch, config)
        d_loss = d_hinge_loss(disc(frames[:, m], masks[:, m]), disc(comp.detach(), masks[:, m]))
        _check_finite(it, L_g=l_rec.item(), L_D=d_loss.item())
        opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        opt_d.step()

        l_adv = g_hinge_loss(disc(comp, masks[:, m]))
        _check_finite(it, L_G=l_adv.item())
        opt_g.zero_grad(set_to_none=True)
        (l_rec + config.adv_weight * l_adv).backward()
        opt_g.step()

        record = {"iter": it, "L_g": l_rec.item(), "L_G": l_adv.item(), "L_D": d_loss.item(),
                  "wall_ms": (time.perf_counter() - t0) * 1000.0}
        result.log.append(record)
        if log_path is not None:
            with open(log_path, "a") as f:
                f.write(json.dumps(record) + "\n")
        if config.log_every and it % config.log_every == 0:
            logger.info("iter %d  L_g %.4f  L_G %.4f  L_D %.4f", it, record["L_g"], record["L_G"], record["L_D"])
        if on_iteration is not None:
            on_iteration(it, gen, disc)
        if (config.checkpoint_every and it % config.checkpoint_every == 0) or it == config.max_iters:
            if not result.checkpoints or not result.checkpoints[-1].endswith(f"{it:06d}.pt"):
                checkpoint(it)
    return result


@torch.no_grad()
def inpaint_target(gen: InpaintGenerator, sample):
    """Composited inpainting of the target frame of one sample, (3, H, W)."""
    was_training = gen.training
    gen.eval()
    m = gen.config.target_index
    frames, masks = sample["frames"].unsqueeze(0), sample["masks"].unsqueeze(0)
    _, refined = gen(frames * masks, masks, sample["flows"].unsqueeze(0))
    out = composite_output(refined, frames[:, m] * masks[:, m], masks[:, m])[0]
    gen.train(was_training)
    return out


def hole_rmse(gen, sample):
    """8-bit RMSE of the composited target over its hole."""
    from .metrics import masked_rmse
    m = gen.config.target_index
    pred = inpaint_target(gen, sample).permute(1, 2, 0).numpy()
    gt = sample["frames"][m].permute(1, 2, 0).numpy()
    return masked_rmse(pred, gt, sample["masks"][m, 0].numpy())


# ------------------------------------------------------------------ shadow branch

@dataclass
class ShadowTrainResult:
    model: ShadowUNet
    log: List[dict] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)


def shadow_batch(items):
    rgb = torch.stack([torch.as_tensor(np.asarray(d["rgb"], np.float32)).permute(2, 0, 1) for d in items])
    obj = torch.stack([torch.as_tensor(np.asarray(d["object_mask"], np.float32)) for d in items])
    gt = torch.stack([torch.as_tensor(np.asarray(d["shadow"], np.float32)) for d in items])
    return rgb, obj, gt


@torch.no_grad()
def mean_iou(model, items, threshold=0.5):
    was_training = model.training
    model.eval()
    rgb, obj, gt = shadow_batch(items)
    prob = model(rgb, obj).numpy()
    model.train(was_training)
    return float(np.mean([iou(p, g, threshold) for p, g in zip(prob, gt.numpy())]))


def train_shadow(config: TrainConfig, data, out_dir=None, holdout=None, target_iou=None) -> ShadowTrainResult:
    """Fit the shadow U-net with the class-balanced BCE.

    ``data`` items are dicts with ``rgb`` (H, W, 3), ``object_mask`` and ``shadow``.
    IoU is logged every ``log_every`` iterations on ``holdout`` (or the training
    set). With ``target_iou`` the loop stops early once it is reached.
    """
    data = list(data)
    if not data:
        raise NoData("empty shadow dataset")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model = ShadowUNet(config.shadow_depth, config.shadow_base_channels)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2))
    result = ShadowTrainResult(model)
    log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "shadow_log.jsonl")

    def checkpoint(it):
        if out_dir is None:
            return
        from .shadow_net import save_shadow
        path = os.path.join(out_dir, f"shadow_{it:06d}.pt")
        save_shadow(path, model, {"iteration": it, "train_config": asdict(config)})
        result.checkpoints.append(path)

    if config.max_iters == 0:
        checkpoint(0)
        return result

    eval_items = holdout if holdout else data
    stream = (shadow_batch(b) for b in _item_batches(data, config.batch_size, rng))
    for it in range(1, config.max_iters + 1):
        t0 = time.perf_counter()
        rgb, obj, gt = next(stream)
        loss = shadow_loss(model(rgb, obj), gt)
        _check_finite(it, shadow_loss=loss.item())
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        record = {"iter": it, "loss": loss.item(), "wall_ms": (time.perf_counter() - t0) * 1000.0}
        done = False
        if config.log_every and (it % config.log_every == 0 or it == config.max_iters):
            record["iou"] = mean_iou(model, eval_items, config.shadow_threshold)
            done = target_iou is not None and record["iou"] > target_iou
        result.log.append(record)
        if log_path is not None:
            with open(log_path, "a") as f:
                f.write(json.dumps(record) + "\n")
        if (config.checkpoint_every and it % config.checkpoint_every == 0) or it == config.max_iters or done:
            checkpoint(it)
        if done:
            break
    return result


def _item_batches(items, batch_size, rng):
    while True:
        order = rng.permutation(len(items))
        for start in range(0, len(order), batch_size):
            yield [items[i] for i in order[start:start + batch_size]]


# ------------------------------------------------------------------ data from disk

def training_samples_from_root(root, config: TrainConfig, rng=None, seq_ids=None):
    """Build inpainting samples from every full window of every sequence under ``root``.

    Sequences need depth, poses and intrinsics. Synthetic holes come from
    ``<seq>/hole/<frame_id>.png`` when present; otherwise a random box in the
    target frame is propagated to the other frames with
    :func:`maskgen.generate_temporal_masks` (``jitter_px`` from the config).
    Each window is then bottom/random cropped with the configured sizes.
    """
    from .dataset import (crop_sequence, frame_path, list_frame_ids, list_sequences, load_sequence,
                          read_mask, train_crop_window)
    from .geometry import flow_from_depth
    from .maskgen import generate_temporal_masks, random_box_mask

    rng = rng if rng is not None else np.random.default_rng(config.seed)
    delta = config.seq_len // 2
    samples = []
    for seq_id in (seq_ids or list_sequences(root)):
        ids = list_frame_ids(root, seq_id)
        for center in ids[delta:len(ids) - delta]:
            seq = load_sequence(root, seq_id, center, delta)
            if seq.poses is None:
                raise NoData(f"{seq_id}: training needs depth, poses.txt and intrinsics.txt")
            stored = [frame_path(root, seq_id, "hole", fid) for fid in seq.frame_ids]
            if all(p is not None for p in stored):
                holes = np.stack([read_mask(p) for p in stored])
            else:
                h, w = seq.shape
                base = random_box_mask(h, w, rng, min_size=max(config.hole_size // 2, 1),
                                       max_size=config.hole_size)
                m = seq.target_index
                flows = [flow_from_depth(seq.camera(i), seq.poses[m]) for i in seq.reference_indices()]
                holes = generate_temporal_masks(base, flows, rng, config.jitter_px)
                holes.insert(m, base)
                holes = np.stack(holes)
            window = train_crop_window(seq.shape, rng, holes, (config.bottom_crop_w, config.bottom_crop_h),
                                       (config.crop_w, config.crop_h))
            top, left, hh, ww = window
            samples.append(make_sample(crop_sequence(seq, *window), holes[:, top:top + hh, left:left + ww]))
    if not samples:
        raise NoData(f"no complete {config.seq_len}-frame window under {root}")
    return samples


def shadow_items_from_root(root, seq_ids=None):
    """Labelled shadow images: ``<seq>/shadow/<frame_id>.png`` with 255 = shadow."""
    from .dataset import frame_path, list_frame_ids, list_sequences, read_image, read_mask

    items = []
    for seq_id in (seq_ids or list_sequences(root)):
        for fid in list_frame_ids(root, seq_id):
            sp = frame_path(root, seq_id, "shadow", fid)
            mp = frame_path(root, seq_id, "mask", fid)
            if sp is None or mp is None:
                continue
            items.append({"rgb": read_image(frame_path(root, seq_id, "image", fid)),
                          "object_mask": read_mask(mp), "shadow": read_mask(sp)})
    if not items:
        raise NoData(f"no labelled shadow images under {root}")
    return items
