import numpy as np
import pytest
import torch

from tcupgan.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from tcupgan.cubes import ImageCube
from tcupgan.model import (
    ConvLSTMUNet,
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
    generator_forward,
)


def test_round_trip_is_bit_exact(tmp_path):
    torch.manual_seed(0)
    gen = ConvLSTMUNet(GeneratorConfig(widths=(2, 4)))
    disc = PatchDiscriminator(DiscriminatorConfig(widths=(2, 2, 2, 2)))
    extra = {"rng.payload": np.arange(7, dtype=np.uint8)}
    path = save_checkpoint(tmp_path / "m.ckpt", generator=gen, discriminator=disc,
                           meta={"epoch": 3}, extra_tensors=extra)

    ckpt = load_checkpoint(path)
    assert ckpt.meta == {"epoch": 3}
    assert np.array_equal(ckpt.tensors["rng.payload"], extra["rng.payload"])

    for name, value in gen.state_dict().items():
        stored = ckpt.tensors[f"generator.{name}"]
        assert stored.tobytes() == value.numpy().tobytes(), name

    gen2 = ckpt.build_generator()
    disc2 = ckpt.build_discriminator()
    for (n1, p1), (n2, p2) in zip(gen.state_dict().items(), gen2.state_dict().items()):
        assert n1 == n2 and torch.equal(p1, p2)
    for (n1, p1), (n2, p2) in zip(disc.state_dict().items(), disc2.state_dict().items()):
        assert n1 == n2 and torch.equal(p1, p2)


def test_forward_identical_after_round_trip(tmp_path):
    torch.manual_seed(1)
    gen = ConvLSTMUNet(GeneratorConfig(widths=(2, 4)))
    path = save_checkpoint(tmp_path / "g.ckpt", generator=gen)
    gen2 = load_checkpoint(path).build_generator()

    cube = ImageCube(np.random.default_rng(3).random((3, 32, 32, 1), dtype=np.float32))
    a, _ = generator_forward(gen, cube)
    b, _ = generator_forward(gen2, cube)
    assert np.array_equal(a.voxels, b.voxels)


def test_magic_string_present_and_checked(tmp_path):
    gen = ConvLSTMUNet(GeneratorConfig(widths=(2,)))
    path = save_checkpoint(tmp_path / "g.ckpt", generator=gen)
    assert path.read_bytes().startswith(MAGIC)
    assert MAGIC == b"TCUPGAN-CKPT-v1\n"

    bogus = tmp_path / "bogus.ckpt"
    bogus.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError, match="TCUPGAN-CKPT-v1"):
        load_checkpoint(bogus)


def test_missing_component_raises(tmp_path):
    gen = ConvLSTMUNet(GeneratorConfig(widths=(2,)))
    path = save_checkpoint(tmp_path / "g.ckpt", generator=gen)
    ckpt = load_checkpoint(path)
    with pytest.raises(ValueError, match="no discriminator"):
        ckpt.build_discriminator()
