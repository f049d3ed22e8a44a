"""Binary formats: cubes, PPM images, checkpoints, run configuration.

Golden files under tests/golden/ pin the byte layouts: each test
regenerates the expected content from its defining formula and requires
the serialized bytes to match the committed file exactly.
"""

import struct
from pathlib import Path

import numpy as np
import pytest

from mxrunet.errors import (
    ConfigError, DimensionError, FormatError, IntegrityError,
    TruncationError, VersionError,
)
from mxrunet.formats import (
    RunConfig, load_checkpoint, pair_dataset, read_cube, read_rgb,
    save_checkpoint, write_cube, write_rgb,
)
from mxrunet.loss import LossNetwork
from mxrunet.model import ModelConfig, build_unet
from mxrunet.training import AdamW, OneCycleSchedule

GOLDEN = Path(__file__).parent / "golden"


def golden_cube_array():
    c, h, w = 31, 4, 5
    return (np.arange(c * h * w, dtype=np.float32).reshape(c, h, w)
            * np.float32(0.01) - np.float32(1.5))


def golden_ppm_raster():
    hh, ww = 4, 6
    idx_i, idx_j = np.meshgrid(np.arange(hh), np.arange(ww), indexing="ij")
    return np.stack([(idx_i * 37 + idx_j * 11 + ch * 71) % 256
                     for ch in range(3)], axis=0).astype(np.uint8)


def golden_model():
    return build_unet(ModelConfig(encoder_depth=18, width_multiplier=0.125),
                      seed=3)


# -- hyperspectral cubes ----------------------------------------------------

def test_golden_cube_parses_byte_exactly(tmp_path):
    want = golden_cube_array()
    got = read_cube(GOLDEN / "sample.hsc")
    assert got.dtype == np.float32
    assert np.array_equal(got, want)
    rewritten = tmp_path / "rewrite.hsc"
    write_cube(got, rewritten)
    assert rewritten.read_bytes() == (GOLDEN / "sample.hsc").read_bytes()


def test_cube_roundtrip_and_exact_length(tmp_path):
    rng = np.random.default_rng(0)
    cube = rng.standard_normal((5, 3, 7)).astype(np.float32)
    path = tmp_path / "cube.hsc"
    write_cube(cube, path)
    assert path.stat().st_size == 17 + 4 * 5 * 3 * 7
    assert np.array_equal(read_cube(path), cube)


def test_cube_header_layout(tmp_path):
    path = tmp_path / "cube.hsc"
    write_cube(np.zeros((2, 3, 4), dtype=np.float32), path)
    raw = path.read_bytes()
    assert raw[:4] == b"HSC1"
    assert struct.unpack("<III", raw[4:16]) == (2, 3, 4)
    assert raw[16] == 1


def test_cube_bad_magic_reports_offset(tmp_path):
    path = tmp_path / "bad.hsc"
    path.write_bytes(b"XSC1" + b"\x00" * 20)
    with pytest.raises(FormatError) as err:
        read_cube(path)
    assert "offset 0" in str(err.value)


def test_cube_truncation_detected(tmp_path):
    good = tmp_path / "good.hsc"
    write_cube(np.ones((2, 2, 2), dtype=np.float32), good)
    clipped = tmp_path / "clipped.hsc"
    clipped.write_bytes(good.read_bytes()[:-5])
    with pytest.raises(TruncationError):
        read_cube(clipped)


def test_cube_trailing_bytes_rejected(tmp_path):
    good = tmp_path / "good.hsc"
    write_cube(np.ones((2, 2, 2), dtype=np.float32), good)
    padded = tmp_path / "padded.hsc"
    padded.write_bytes(good.read_bytes() + b"\x00")
    with pytest.raises(FormatError):
        read_cube(padded)


def test_cube_unknown_dtype_tag(tmp_path):
    good = tmp_path / "good.hsc"
    write_cube(np.ones((1, 1, 1), dtype=np.float32), good)
    raw = bytearray(good.read_bytes())
    raw[16] = 9
    bad = tmp_path / "bad.hsc"
    bad.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as err:
        read_cube(bad)
    assert "offset 16" in str(err.value)


def test_write_cube_rejects_wrong_rank():
    with pytest.raises(DimensionError):
        write_cube(np.zeros((4, 4), dtype=np.float32), "unused.hsc")


# -- ppm images -------------------------------------------------------------

def test_golden_ppm_parses_byte_exactly(tmp_path):
    raster = golden_ppm_raster()
    got = read_rgb(GOLDEN / "sample.ppm")
    assert got.shape == (3, 4, 6)
    assert np.array_equal(got, raster.astype(np.float32) / 255.0)
    rewritten = tmp_path / "rewrite.ppm"
    write_rgb(got, rewritten)
    assert rewritten.read_bytes() == (GOLDEN / "sample.ppm").read_bytes()


def test_ppm_roundtrip_quantizes_to_bytes(tmp_path):
    rng = np.random.default_rng(1)
    rgb = rng.random((3, 5, 4)).astype(np.float32)
    path = tmp_path / "img.ppm"
    write_rgb(rgb, path)
    back = read_rgb(path)
    assert np.abs(back - rgb).max() <= 0.5 / 255.0 + 1e-7
    write_rgb(back, tmp_path / "again.ppm")
    assert (tmp_path / "again.ppm").read_bytes() == path.read_bytes()


def test_ppm_header_comments_are_skipped(tmp_path):
    path = tmp_path / "commented.ppm"
    path.write_bytes(b"P6 # a comment\n2 # width done\n1\n255\n" + bytes(6))
    img = read_rgb(path)
    assert img.shape == (3, 1, 2)
    assert np.array_equal(img, np.zeros((3, 1, 2), dtype=np.float32))


def test_ppm_single_pixel_scaling(tmp_path):
    path = tmp_path / "one.ppm"
    path.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 128, 0]))
    img = read_rgb(path)
    assert img[0, 0, 0] == 1.0
    assert img[1, 0, 0] == np.float32(128.0 / 255.0)
    assert img[2, 0, 0] == 0.0


def test_ppm_p3_rejected_with_guidance(tmp_path):
    path = tmp_path / "ascii.ppm"
    path.write_bytes(b"P3\n1 1\n255\n255 0 0\n")
    with pytest.raises(FormatError) as err:
        read_rgb(path)
    assert "P6" in str(err.value)


def test_ppm_wrong_maxval_rejected(tmp_path):
    path = tmp_path / "deep.ppm"
    path.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(FormatError):
        read_rgb(path)


def test_ppm_truncated_raster(tmp_path):
    path = tmp_path / "short.ppm"
    path.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(TruncationError):
        read_rgb(path)


# -- dataset pairing --------------------------------------------------------

def make_pair_tree(root, stems, orphans=()):
    (root / "rgb").mkdir(parents=True)
    (root / "cubes").mkdir()
    for stem in stems:
        write_rgb(np.zeros((3, 2, 2), dtype=np.float32),
                  root / "rgb" / f"{stem}.ppm")
        write_cube(np.zeros((31, 2, 2), dtype=np.float32),
                   root / "cubes" / f"{stem}.hsc")
    for stem in orphans:
        write_rgb(np.zeros((3, 2, 2), dtype=np.float32),
                  root / "rgb" / f"{stem}.ppm")


def test_pair_dataset_sorts_and_warns_on_orphans(tmp_path, caplog):
    import logging
    make_pair_tree(tmp_path, ["b", "a", "c"], orphans=["zzz"])
    with caplog.at_level(logging.WARNING):
        pairs = pair_dataset(tmp_path)
    assert [p[0].stem for p in pairs] == ["a", "b", "c"]
    assert any("zzz" in rec.getMessage() for rec in caplog.records)


def test_pair_dataset_empty_raises(tmp_path):
    with pytest.raises(ConfigError):
        pair_dataset(tmp_path)


# -- checkpoints ------------------------------------------------------------

def test_golden_checkpoint_parses_byte_exactly(tmp_path):
    model, opt_state = load_checkpoint(GOLDEN / "sample.ckpt")
    assert opt_state is None
    reference = golden_model()
    for (na, pa), (nb, pb) in zip(reference.named_parameters(),
                                  model.named_parameters()):
        assert na == nb
        assert np.array_equal(pa.data, pb.data)
    rewritten = tmp_path / "rewrite.ckpt"
    save_checkpoint(rewritten, model)
    assert rewritten.read_bytes() == (GOLDEN / "sample.ckpt").read_bytes()


def test_checkpoint_roundtrip_params_and_buffers_bitwise(tmp_path):
    model = golden_model()
    # move running stats off their init values so the test is not vacuous
    for name, buf in model.named_buffers():
        buf += np.float32(0.125)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model)
    loaded, _ = load_checkpoint(path)
    for (na, pa), (nb, pb) in zip(model.named_parameters(),
                                  loaded.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)
    for (na, ba), (nb, bb) in zip(model.named_buffers(),
                                  loaded.named_buffers()):
        assert na == nb and np.array_equal(ba, bb)


def test_checkpoint_optimizer_state_roundtrip(tmp_path):
    model = golden_model()
    opt = AdamW(model)
    x = np.random.default_rng(0).standard_normal((1, 3, 32, 32)).astype(np.float32)
    from mxrunet.tensor import Tensor, backward
    backward(model(Tensor(x)).mean())
    opt.step(lr=1e-3, beta1=0.9)
    path = tmp_path / "with_opt.ckpt"
    save_checkpoint(path, model, optimizer=opt)
    loaded, state = load_checkpoint(path)
    assert state is not None
    fresh = AdamW(loaded)
    fresh.load_state(state)
    assert fresh.step_count == 1
    for name in opt._m:
        assert np.array_equal(fresh._m[name], opt._m[name])
        assert np.array_equal(fresh._v[name], opt._v[name])


def test_checkpoint_into_existing_model_requires_matching_config(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, golden_model())
    other = build_unet(ModelConfig(encoder_depth=34, width_multiplier=0.125),
                       seed=0)
    with pytest.raises(IntegrityError):
        load_checkpoint(path, model=other)


def test_checkpoint_loss_network_roundtrip(tmp_path):
    net = LossNetwork(in_channels=4, seed=1)
    path = tmp_path / "lossnet.ckpt"
    save_checkpoint(path, net)
    loaded, _ = load_checkpoint(path)
    assert isinstance(loaded, LossNetwork)
    for (na, pa), (nb, pb) in zip(net.named_parameters(),
                                  loaded.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)


def test_checkpoint_version_and_magic_errors(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, golden_model())
    raw = bytearray(path.read_bytes())
    future = tmp_path / "future.ckpt"
    future.write_bytes(raw[:4] + struct.pack("<I", 9) + raw[8:])
    with pytest.raises(VersionError):
        load_checkpoint(future)
    wrong = tmp_path / "wrong.ckpt"
    wrong.write_bytes(b"NOPE" + bytes(raw[4:]))
    with pytest.raises(FormatError):
        load_checkpoint(wrong)


def test_checkpoint_truncation_detected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, golden_model())
    cut = tmp_path / "cut.ckpt"
    cut.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(TruncationError):
        load_checkpoint(cut)


def test_checkpoint_corrupt_entry_names_parameter(tmp_path):
    path = tmp_path / "m.ckpt"
    model = golden_model()
    save_checkpoint(path, model)
    raw = bytearray(path.read_bytes())
    first_name = next(iter(dict(model.named_parameters())))
    idx = raw.find(first_name.encode())
    raw[idx] = ord("X")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError) as err:
        load_checkpoint(bad)
    assert "X" + first_name[1:] in str(err.value) or first_name in str(err.value)


def test_save_checkpoint_rejects_unknown_model_kind(tmp_path):
    class Mystery:
        pass
    with pytest.raises(ConfigError):
        save_checkpoint(tmp_path / "x.ckpt", Mystery())


# -- run configuration ------------------------------------------------------

def test_run_config_defaults_validate_without_paths():
    config = RunConfig()
    config.validate(check_paths=False)
    assert config.track == "clean"
    assert config.epochs == 200
    assert config.model.encoder_depth == 50


def test_run_config_json_roundtrip(tmp_path):
    config = RunConfig(track="real", epochs=12, batch_size=3, seed=9,
                       model=ModelConfig(encoder_depth=34, width_multiplier=0.5),
                       schedule=OneCycleSchedule(lr_peak=2e-3, phase1=3.6,
                                                 phase2=8.4))
    path = tmp_path / "run.json"
    config.to_json(path)
    back = RunConfig.from_json(path, check_paths=False)
    assert back == config


def test_run_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "run.json"
    path.write_text('{"track": "clean", "warp_factor": 9}')
    with pytest.raises(ConfigError):
        RunConfig.from_json(path, check_paths=False)


def test_run_config_rejects_bad_track():
    with pytest.raises(ConfigError):
        RunConfig(track="sepia").validate(check_paths=False)


def test_run_config_checks_data_paths(tmp_path):
    config = RunConfig(train_root=str(tmp_path / "missing"))
    with pytest.raises(ConfigError):
        config.validate()
