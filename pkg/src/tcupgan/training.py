"""Adversarial training loop, evaluation, and checkpoint management.

One step per batch updates the discriminator on (image, consensus mask) as
real vs (image, generated mask) as fake, then the generator on the focal
Tversky loss plus the weighted adversarial term.  Everything is seeded:
identical config + data reproduce identical histories on a fixed platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from . import losses
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import TverskyParams
from .model import ConvLSTMUNet, DiscriminatorConfig, GeneratorConfig, PatchDiscriminator
from .pipeline import DatasetManifest


class TrainingDiverged(RuntimeError):
    """A loss term stopped being finite; names the offending term."""


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    epochs: int = 50
    batch_size: int = 2
    lr_generator: float = 2e-4
    lr_discriminator: float = 2e-4
    lambda_adv: float = 0.2
    tversky: TverskyParams = TverskyParams()
    gen_widths: tuple = (16, 32, 64, 128)
    disc_widths: tuple = (32, 64, 128, 256)
    val_fraction: float = 0.1
    threshold: float = 0.5
    checkpoint_every: int = 0  # 0 = final checkpoint only
    # The discriminator judges the generated mask in its delivered form
    # (thresholded), which blocks the degenerate soft-vs-binary shortcut and
    # forces it onto image/mask structure; set False to feed soft masks.
    disc_on_binarized_fakes: bool = True
    manifest_path: str | None = None

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("a seed is mandatory")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # lr 0 is allowed: it freezes that network while keeping the schedule
        if self.lr_generator < 0 or self.lr_discriminator < 0:
            raise ValueError("learning rates must be >= 0")
        if self.lambda_adv < 0:
            raise ValueError("lambda_adv must be >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def arch_fingerprint(self) -> dict:
        return {"gen_widths": list(self.gen_widths), "disc_widths": list(self.disc_widths)}


@dataclass
class EpochRecord:
    epoch: int
    gen_ftl: float
    gen_adv: float
    disc_bce: float
    val_tl: float | None = None
    metrics: dict | None = None


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must be strictly increasing")
        self.records.append(record)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(asdict(rec)) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "TrainingHistory":
        history = cls()
        for line in Path(path).read_text().splitlines():
            if line.strip():
                history.append(EpochRecord(**json.loads(line)))
        return history


def load_cube_tensors(manifest: DatasetManifest) -> tuple[torch.Tensor, torch.Tensor, list[str]]:
    """All cubes as (N, D, 1, H, W) image/mask tensors plus cube ids."""
    images, masks, ids = [], [], []
    for cube, mask in manifest.iter_cubes():
        images.append(cube.voxels.transpose(0, 3, 1, 2))
        masks.append(mask.voxels.transpose(0, 3, 1, 2))
        ids.append(cube.cube_id)
    if not images:
        raise ValueError("dataset is empty")
    img = torch.from_numpy(np.stack(images))
    msk = torch.from_numpy(np.stack(masks))
    size = img.shape[-1]
    if size % 32:
        raise ValueError(f"cube slices must be divisible by 32 for the patch grid, got {size}")
    return img, msk, ids


def _check_finite(value: torch.Tensor, term: str, epoch: int) -> None:
    if not torch.isfinite(value).all():
        raise TrainingDiverged(f"{term} became non-finite at epoch {epoch}")


def adversarial_step(generator, discriminator, opt_g, opt_d, img, msk,
                     config: TrainConfig, epoch: int = 0):
    """One batch: discriminator phase then generator phase.

    The discriminator sees the generated mask detached, so its update never
    reaches generator parameters; the generator phase only steps opt_g.
    Returns (disc_bce, gen_ftl, gen_adv) as floats.
    """
    pred = generator(img)

    fake_for_disc = pred.detach()
    if config.disc_on_binarized_fakes:
        fake_for_disc = (fake_for_disc >= 0.5).float()
    d_real = discriminator(img, msk)
    d_fake = discriminator(img, fake_for_disc)
    loss_d = losses.discriminator_bce(d_real, d_fake)
    _check_finite(loss_d, "discriminator BCE", epoch)
    opt_d.zero_grad()
    loss_d.backward()
    opt_d.step()

    fake_scores = discriminator(img, pred)
    breakdown = losses.generator_objective(
        pred.squeeze(2), msk.squeeze(2), fake_scores,
        params=config.tversky, lambda_adv=config.lambda_adv,
    )
    _check_finite(breakdown.ftl, "generator focal Tversky loss", epoch)
    _check_finite(breakdown.adv, "generator adversarial term", epoch)
    opt_g.zero_grad()
    breakdown.total.backward()
    opt_g.step()
    return float(loss_d.detach()), float(breakdown.ftl.detach()), float(breakdown.adv.detach())


def _validation_scores(generator, img, msk, config):
    generator.eval()
    with torch.no_grad():
        preds = torch.cat([generator(img[i:i + 1]) for i in range(img.shape[0])])
        tl = losses.tversky_loss_t(preds.squeeze(2), msk.squeeze(2), config.tversky)
        metrics = losses.segmentation_metrics(
            preds.squeeze(2).numpy(), msk.squeeze(2).numpy(), config.threshold
        )
    generator.train()
    return float(tl.mean()), metrics._asdict()


def _split_indices(n: int, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    # split by cube so overlapping crops of one source never straddle the split
    rng = np.random.default_rng([config.seed, 777])
    perm = rng.permutation(n)
    n_val = int(round(config.val_fraction * n))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _pack_optimizer(opt) -> tuple[dict[str, np.ndarray], dict]:
    sd = opt.state_dict()
    tensors, scalars = {}, {}
    for pid, state in sd["state"].items():
        for key, val in state.items():
            if isinstance(val, torch.Tensor):
                tensors[f"state.{pid}.{key}"] = val.detach().cpu().numpy()
            else:
                scalars[f"{pid}.{key}"] = val
    meta = {"param_groups": sd["param_groups"], "scalars": scalars}
    return tensors, meta


def _unpack_optimizer(opt, tensors: dict[str, np.ndarray], meta: dict, prefix: str) -> None:
    state: dict[int, dict] = {}
    mark = f"{prefix}.state."
    for name, arr in tensors.items():
        if not name.startswith(mark):
            continue
        pid_str, key = name[len(mark):].split(".", 1)
        state.setdefault(int(pid_str), {})[key] = torch.from_numpy(arr.copy())
    for flat_key, val in meta.get("scalars", {}).items():
        pid_str, key = flat_key.split(".", 1)
        state.setdefault(int(pid_str), {})[key] = val
    opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def _save_train_checkpoint(path, generator, discriminator, opt_g, opt_d,
                           config: TrainConfig, completed_epochs: int) -> Path:
    og_tensors, og_meta = _pack_optimizer(opt_g)
    od_tensors, od_meta = _pack_optimizer(opt_d)
    extra = {f"optim_g.{k}": v for k, v in og_tensors.items()}
    extra.update({f"optim_d.{k}": v for k, v in od_tensors.items()})
    meta = {
        "completed_epochs": completed_epochs,
        "seed": config.seed,
        "arch": config.arch_fingerprint(),
        "optim_g": og_meta,
        "optim_d": od_meta,
    }
    return save_checkpoint(path, generator=generator, discriminator=discriminator,
                           meta=meta, extra_tensors=extra)


def train(config: TrainConfig, data: DatasetManifest, out_dir=None,
          resume_from=None):
    """Run adversarial training; returns (generator, discriminator, history).

    With out_dir set, writes history.jsonl, cadence checkpoints and a final
    checkpoint there.  resume_from continues a previous run's checkpoint
    (same config) up to config.epochs total epochs.
    """
    img, msk, _ = load_cube_tensors(data)
    train_idx, val_idx = _split_indices(img.shape[0], config)
    if len(train_idx) == 0:
        raise ValueError("training split is empty")

    torch.manual_seed(config.seed)
    generator = ConvLSTMUNet(GeneratorConfig(widths=tuple(config.gen_widths)))
    discriminator = PatchDiscriminator(DiscriminatorConfig(widths=tuple(config.disc_widths)))
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr_generator)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.lr_discriminator)
    history = TrainingHistory()
    start_epoch = 0

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.meta.get("arch") != config.arch_fingerprint():
            raise ValueError(
                f"checkpoint architecture {ckpt.meta.get('arch')} does not match "
                f"config {config.arch_fingerprint()}"
            )
        generator = ckpt.build_generator()
        discriminator = ckpt.build_discriminator()
        opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr_generator)
        opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.lr_discriminator)
        _unpack_optimizer(opt_g, ckpt.tensors, ckpt.meta["optim_g"], "optim_g")
        _unpack_optimizer(opt_d, ckpt.tensors, ckpt.meta["optim_d"], "optim_d")
        # load_state_dict restores the checkpointed param_groups; the run being
        # resumed must use THIS config's learning rates, not the old ones
        for group in opt_g.param_groups:
            group["lr"] = config.lr_generator
        for group in opt_d.param_groups:
            group["lr"] = config.lr_discriminator
        start_epoch = int(ckpt.meta["completed_epochs"])

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    generator.train()
    discriminator.train()
    for epoch in range(start_epoch, config.epochs):
        order = np.random.default_rng([config.seed, 1000 + epoch]).permutation(train_idx)
        ftl_sum = adv_sum = bce_sum = 0.0
        n_batches = 0
        for b0 in range(0, len(order), config.batch_size):
            batch = torch.from_numpy(order[b0:b0 + config.batch_size])
            bce, ftl, adv = adversarial_step(
                generator, discriminator, opt_g, opt_d, img[batch], msk[batch], config, epoch
            )
            bce_sum += bce
            ftl_sum += ftl
            adv_sum += adv
            n_batches += 1

        record = EpochRecord(
            epoch=epoch,
            gen_ftl=ftl_sum / n_batches,
            gen_adv=adv_sum / n_batches,
            disc_bce=bce_sum / n_batches,
        )
        if len(val_idx):
            record.val_tl, record.metrics = _validation_scores(
                generator, img[torch.from_numpy(val_idx)], msk[torch.from_numpy(val_idx)], config
            )
        history.append(record)

        if out_dir is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            _save_train_checkpoint(out_dir / f"checkpoint-{epoch + 1:05d}.ckpt",
                                   generator, discriminator, opt_g, opt_d, config, epoch + 1)

    if out_dir is not None:
        _save_train_checkpoint(out_dir / "final.ckpt", generator, discriminator,
                               opt_g, opt_d, config, config.epochs)
        history.save(out_dir / "history.jsonl")
    return generator, discriminator, history


def evaluate(generator: ConvLSTMUNet, data: DatasetManifest,
             threshold: float = 0.5,
             tversky: TverskyParams = TverskyParams()):
    """Aggregate hard metrics plus a per-slice Tversky-loss table."""
    generator.eval()
    table = []
    all_pred, all_mask = [], []
    for cube, mask in data.iter_cubes():
        x = torch.from_numpy(cube.voxels.transpose(0, 3, 1, 2)[np.newaxis])
        with torch.no_grad():
            pred = generator(x)[0].squeeze(1)  # (D, H, W)
        target = torch.from_numpy(mask.voxels[..., 0])
        tl = losses.tversky_loss_t(pred, target, tversky)
        for d in range(cube.depth):
            table.append({
                "cube_id": cube.cube_id,
                "slice_index": d,
                "tl": float(tl[d]),
            })
        all_pred.append(pred.numpy())
        all_mask.append(mask.voxels[..., 0])
    metrics = losses.segmentation_metrics(
        np.concatenate(all_pred), np.concatenate(all_mask), threshold
    )
    return metrics, table
