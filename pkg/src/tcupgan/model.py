"""Generator and discriminator forward computations.

The generator is a U-Net whose convolutions are replaced by 2D convolutional
LSTM cells, run along the depth axis of an image cube so that each level
carries a hidden state h (per-slice features) and a cell state c
(accumulated depth-wise correlation).  Both h and c of every encoder level
are skipped across the bottleneck into the matching decoder level.

The discriminator is a patch-wise binary classifier over (image, mask)
slice pairs built from depth-extent-1 3D convolutions, so each slice is
scored independently of every other slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .cubes import ImageCube, MaskCube, PredictionCube, check_same_shape


@dataclass
class RecurrentState:
    """One level's (h, c) pair; shapes are identical, zeros at depth step 0."""

    h: torch.Tensor
    c: torch.Tensor

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise ValueError(
                f"h and c must have identical shapes, got {tuple(self.h.shape)} vs {tuple(self.c.shape)}"
            )


@dataclass
class PatchScoreGrid:
    """Per-slice grid of patch realism probabilities, shape (D, gh, gw)."""

    scores: np.ndarray
    cube_id: str = "cube"
    slice_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float32)
        if self.scores.ndim != 3:
            raise ValueError(f"scores must be (depth, gh, gw), got {self.scores.shape}")
        if self.scores.min() <= 0.0 or self.scores.max() >= 1.0:
            raise ValueError("patch scores must lie strictly inside (0, 1)")
        if not self.slice_ids:
            self.slice_ids = [f"{self.cube_id}/{i:03d}" for i in range(self.scores.shape[0])]

    @property
    def depth(self) -> int:
        return self.scores.shape[0]


class ConvLSTMCell(nn.Module):
    """Convolutional LSTM cell: gates are 3x3 convolutions over the input
    and the hidden state, candidate through tanh, states through sigmoid
    gating.  input_stride > 1 downsamples inside the input transform."""

    def __init__(self, in_channels: int, hidden_channels: int, input_stride: int = 1):
        super().__init__()
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.input_stride = input_stride
        self.conv_x = nn.Conv2d(in_channels, 4 * hidden_channels, 3,
                                stride=input_stride, padding=1)
        self.conv_h = nn.Conv2d(hidden_channels, 4 * hidden_channels, 3,
                                padding=1, bias=False)

    def zero_state(self, x: torch.Tensor) -> RecurrentState:
        b = x.shape[0]
        h = x.shape[-2] // self.input_stride
        w = x.shape[-1] // self.input_stride
        zeros = x.new_zeros((b, self.hidden_channels, h, w))
        return RecurrentState(h=zeros, c=zeros.clone())

    def forward(self, x: torch.Tensor, state: RecurrentState | None = None):
        if x.ndim != 4:
            raise ValueError(f"cell input must be (batch, channels, H, W), got {tuple(x.shape)}")
        if x.shape[1] != self.in_channels:
            raise ValueError(f"cell expects {self.in_channels} input channels, got {x.shape[1]}")
        if state is None:
            state = self.zero_state(x)
        expected = (x.shape[0], self.hidden_channels,
                    x.shape[-2] // self.input_stride, x.shape[-1] // self.input_stride)
        if tuple(state.h.shape) != expected:
            raise ValueError(
                f"state shape {tuple(state.h.shape)} does not match input {tuple(x.shape)}"
                f" (expected state {expected})"
            )
        gates = self.conv_x(x) + self.conv_h(state.h)
        i, f, o, g = torch.chunk(gates, 4, dim=1)
        c = torch.sigmoid(f) * state.c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, RecurrentState(h=h, c=c)


def conv_lstm_step(cell: ConvLSTMCell, x: torch.Tensor,
                   state: RecurrentState | None = None):
    """Advance one depth step; returns (h, new state) with h == state.h."""
    return cell(x, state)


@dataclass(frozen=True)
class GeneratorConfig:
    """Encoder widths per level (decoder mirrors them); spatial /2 per level."""

    widths: tuple = (16, 32, 64, 128)
    in_channels: int = 1

    @property
    def levels(self) -> int:
        return len(self.widths)

    @property
    def down_factor(self) -> int:
        return 2 ** self.levels

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "in_channels": self.in_channels}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(widths=tuple(d["widths"]), in_channels=int(d["in_channels"]))


class ConvLSTMUNet(nn.Module):
    """Recurrent U-Net generator over image cubes.

    Per depth slice: strided ConvLSTM encoder levels, then decoder levels
    that upsample 2x (nearest) and concatenate the h and c skip tensors of
    the level across from them before their own ConvLSTM.  Depth recurrence
    is unidirectional from slice 0 with zero initial state, so output slice
    t depends only on input slices <= t.
    """

    def __init__(self, config: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.config = config
        w = config.widths
        levels = config.levels

        encoder = []
        prev = config.in_channels
        for width in w:
            encoder.append(ConvLSTMCell(prev, width, input_stride=2))
            prev = width
        self.encoder = nn.ModuleList(encoder)

        decoder = [ConvLSTMCell(2 * w[-1], w[-1])]
        for j in range(1, levels):
            in_ch = w[levels - j] + 2 * w[levels - 1 - j]
            decoder.append(ConvLSTMCell(in_ch, w[levels - 1 - j]))
        self.decoder = nn.ModuleList(decoder)
        self.head = nn.Conv2d(w[0], 1, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (batch, depth, channels, H, W) in [0, 1] -> probabilities of
        the same shape with one channel."""
        if x.ndim != 5:
            raise ValueError(f"generator input must be (B, D, C, H, W), got {tuple(x.shape)}")
        if float(x.min()) < 0.0 or float(x.max()) > 1.0:
            raise ValueError("generator input must be normalized to [0, 1]")
        height, width = x.shape[-2], x.shape[-1]
        factor = self.config.down_factor
        if height % factor or width % factor:
            raise ValueError(
                f"input H and W must be divisible by 2^levels = {factor}, got {height}x{width}"
            )
        preds, _ = self._run(x)
        return preds

    def _run(self, x: torch.Tensor):
        levels = self.config.levels
        enc_states: list[RecurrentState | None] = [None] * levels
        dec_states: list[RecurrentState | None] = [None] * levels
        preds = []
        for t in range(x.shape[1]):
            feat = x[:, t]
            for lvl, cell in enumerate(self.encoder):
                feat, enc_states[lvl] = cell(feat, enc_states[lvl])
            y = torch.cat([enc_states[-1].h, enc_states[-1].c], dim=1)
            y, dec_states[0] = self.decoder[0](y, dec_states[0])
            for j in range(1, levels):
                y = F.interpolate(y, scale_factor=2, mode="nearest")
                skip = enc_states[levels - 1 - j]
                y = torch.cat([y, skip.h, skip.c], dim=1)
                y, dec_states[j] = self.decoder[j](y, dec_states[j])
            y = F.interpolate(y, scale_factor=2, mode="nearest")
            preds.append(torch.sigmoid(self.head(y)))
        final_states = {f"enc{i}": s for i, s in enumerate(enc_states)}
        final_states.update({f"dec{i}": s for i, s in enumerate(dec_states)})
        return torch.stack(preds, dim=1), final_states


class PerSliceLayerNorm(nn.Module):
    """Layer normalization over (channels, H, W) of each depth slice
    separately, so no information crosses the depth axis."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gain = nn.Parameter(torch.ones(1, channels, 1, 1, 1))
        self.bias = nn.Parameter(torch.zeros(1, channels, 1, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=(1, 3, 4), keepdim=True)
        var = x.var(dim=(1, 3, 4), keepdim=True, unbiased=False)
        return (x - mu) / torch.sqrt(var + self.eps) * self.gain + self.bias


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Widths of the four normalized stages; a fifth stage maps to one
    sigmoid channel.  Five stride-2 stages: 256 -> 8 patch grid."""

    widths: tuple = (32, 64, 128, 256)
    in_channels: int = 2

    @property
    def down_factor(self) -> int:
        return 2 ** (len(self.widths) + 1)

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "in_channels": self.in_channels}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        return cls(widths=tuple(d["widths"]), in_channels=int(d["in_channels"]))


class PatchDiscriminator(nn.Module):
    """Patch-wise realism classifier on concatenated (image, mask) cubes.

    All convolutions have kernel (1, 3, 3) and spatial stride 2, with
    per-slice layer normalization and LeakyReLU(0.2) after every stage but
    the last, which outputs a single sigmoid channel.
    """

    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.config = config
        convs, norms = [], []
        prev = config.in_channels
        for width in config.widths:
            convs.append(nn.Conv3d(prev, width, kernel_size=(1, 3, 3),
                                   stride=(1, 2, 2), padding=(0, 1, 1)))
            norms.append(PerSliceLayerNorm(width))
            prev = width
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList(norms)
        self.final = nn.Conv3d(prev, 1, kernel_size=(1, 3, 3),
                               stride=(1, 2, 2), padding=(0, 1, 1))

    def forward(self, image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """image, mask: (B, D, 1, H, W) -> patch scores (B, D, H/32, W/32)."""
        if image.shape != mask.shape:
            raise ValueError(
                f"image/mask shapes differ: {tuple(image.shape)} vs {tuple(mask.shape)}"
            )
        if image.ndim != 5:
            raise ValueError(f"discriminator input must be (B, D, C, H, W), got {tuple(image.shape)}")
        height, width = image.shape[-2], image.shape[-1]
        factor = self.config.down_factor
        if height % factor or width % factor:
            raise ValueError(
                f"input H and W must be divisible by {factor}, got {height}x{width}"
            )
        # (B, D, C, H, W) -> (B, C, D, H, W) for depth-extent-1 3D convs
        x = torch.cat([image, mask], dim=2).permute(0, 2, 1, 3, 4)
        for conv, norm in zip(self.convs, self.norms):
            x = F.leaky_relu(norm(conv(x)), negative_slope=0.2)
        x = torch.sigmoid(self.final(x))
        return x.squeeze(1)  # (B, D, gh, gw)


# --- cube-level entry points -------------------------------------------------


def _cube_to_tensor(cube) -> torch.Tensor:
    # (D, H, W, 1) -> (1, D, 1, H, W)
    return torch.from_numpy(np.ascontiguousarray(
        cube.voxels.transpose(0, 3, 1, 2)[np.newaxis]
    ))


def generator_forward(generator: ConvLSTMUNet, cube: ImageCube):
    """Predict a soft mask cube; also returns the final per-level states."""
    generator.eval()
    with torch.no_grad():
        preds, states = generator._run(_cube_to_tensor(cube))
    voxels = preds[0].permute(0, 2, 3, 1).numpy()
    pred = PredictionCube(voxels, cube_id=cube.cube_id)
    return pred, states


def discriminator_forward(discriminator: PatchDiscriminator, cube: ImageCube,
                          mask) -> PatchScoreGrid:
    """Score each slice's (image, mask) pair patch-wise."""
    check_same_shape(cube, mask)
    discriminator.eval()
    with torch.no_grad():
        scores = discriminator(_cube_to_tensor(cube), _cube_to_tensor(mask))
    # float32 sigmoid can saturate to exactly 0/1; keep scores in the open interval
    grid = np.clip(scores[0].numpy(), 1e-7, 1.0 - 1e-7)
    return PatchScoreGrid(grid, cube_id=cube.cube_id, slice_ids=list(cube.slice_ids))
