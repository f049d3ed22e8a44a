"""Bit-exact file formats and run configuration.

Every binary format here is little-endian with documented offsets:

.hsc hyperspectral cube
    offset 0   magic b"HSC1"
    offset 4   u32 C, u32 H, u32 W
    offset 16  u8 dtype tag (1 = float32)
    offset 17  C*H*W float32 values, channel-major, rows in order
    total size is exactly 17 + 4*C*H*W bytes

.ppm rgb image
    binary P6 with maxval 255; loads as float32 (3, H, W) scaled v/255

checkpoint
    offset 0   magic b"MXRW"
    offset 4   u32 format version (1)
    offset 8   u8 model kind (1 = reconstruction net, 2 = loss net)
    kind 1 config: u32 depth, u32 in, u32 out, f64 width_multiplier,
                   u8 self_attention, u8 blur, u8 final_blur
    kind 2 config: u32 in_channels
    parameter table: u32 count, then per entry u32 name_len, utf-8
        name, u32 rank, u32 extents[rank], float32 payload
        (parameters first, then buffers such as bn running stats)
    optimizer block: u8 present; if 1: u64 step, u32 count, entries in
        the same layout with names suffixed ".m" / ".v"
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ConfigError, DimensionError, FormatError, IntegrityError,
                     TruncationError, VersionError)
from .loss import LossNetwork, LossWeights
from .model import MXRUNet, ModelConfig, build_unet
from .training import OneCycleSchedule

log = logging.getLogger(__name__)

_HSC_MAGIC = b"HSC1"
_CKPT_MAGIC = b"MXRW"
_CKPT_VERSION = 1
_DTYPE_FLOAT32 = 1
_KIND_MODEL = 1
_KIND_LOSSNET = 2


class _Reader:
    """Sequential binary reader that reports byte offsets on failure."""

    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncationError(
                f"truncated while reading {what}: need {n} bytes, "
                f"file has {len(self.data) - self.pos} left", offset=self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))[0]

    def u8(self, what):
        return self.unpack("<B", what)

    def u32(self, what):
        return self.unpack("<I", what)

    def u64(self, what):
        return self.unpack("<Q", what)

    def f64(self, what):
        return self.unpack("<d", what)

    def expect_end(self, what):
        if self.pos != len(self.data):
            raise FormatError(
                f"{len(self.data) - self.pos} unexpected trailing bytes after {what}",
                offset=self.pos)


# ---------------------------------------------------------------------------
# hyperspectral cubes
# ---------------------------------------------------------------------------

def write_cube(cube, path):
    """Write a (C, H, W) array as float32 .hsc."""
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise DimensionError(f"write_cube expects a (C,H,W) array, got shape {cube.shape}")
    c, h, w = cube.shape
    payload = np.ascontiguousarray(cube, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(_HSC_MAGIC)
        f.write(struct.pack("<III", c, h, w))
        f.write(struct.pack("<B", _DTYPE_FLOAT32))
        f.write(payload)


def read_cube(path):
    """Read an .hsc file back into a float32 (C, H, W) array."""
    data = Path(path).read_bytes()
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != _HSC_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_HSC_MAGIC!r}", offset=0)
    c = r.u32("channel count")
    h = r.u32("height")
    w = r.u32("width")
    tag = r.u8("dtype tag")
    if tag != _DTYPE_FLOAT32:
        raise FormatError(f"unknown dtype tag {tag}", offset=16)
    expected = 4 * c * h * w
    if len(data) - r.pos < expected:
        raise TruncationError(
            f"payload for ({c},{h},{w}) needs {expected} bytes, "
            f"file has {len(data) - r.pos}", offset=r.pos)
    values = np.frombuffer(r.take(expected, "payload"), dtype="<f4")
    r.expect_end("cube payload")
    return values.reshape(c, h, w).astype(np.float32, copy=True)


# ---------------------------------------------------------------------------
# ppm images
# ---------------------------------------------------------------------------

def _ppm_token(r):
    """Next whitespace-delimited header token; '#' starts a comment."""
    token = b""
    while True:
        ch = r.take(1, "ppm header")
        if ch == b"#":
            while r.take(1, "ppm comment") not in b"\r\n":
                pass
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def read_rgb(path):
    """Read a binary P6 PPM (maxval 255) as float32 (3, H, W) in [0, 1]."""
    data = Path(path).read_bytes()
    r = _Reader(data)
    magic = r.take(2, "magic")
    if magic == b"P3":
        raise FormatError(
            "ASCII 'P3' images are not supported; convert to binary P6", offset=0)
    if magic != b"P6":
        raise FormatError(f"bad magic {magic!r}, expected b'P6'", offset=0)
    try:
        width = int(_ppm_token(r))
        height = int(_ppm_token(r))
        maxval = int(_ppm_token(r))
    except ValueError as exc:
        raise FormatError(f"malformed ppm header: {exc}", offset=r.pos) from None
    if width < 1 or height < 1:
        raise FormatError(f"bad dimensions {width}x{height}", offset=r.pos)
    if maxval != 255:
        raise FormatError(f"maxval must be 255, got {maxval}", offset=r.pos)
    expected = 3 * width * height
    if len(data) - r.pos < expected:
        raise TruncationError(
            f"pixel data for {width}x{height} needs {expected} bytes, "
            f"file has {len(data) - r.pos}", offset=r.pos)
    raster = np.frombuffer(r.take(expected, "pixels"), dtype=np.uint8)
    r.expect_end("ppm pixels")
    image = raster.reshape(height, width, 3).transpose(2, 0, 1)
    return (image.astype(np.float32) / 255.0)


def write_rgb(rgb, path):
    """Write float (3, H, W) values in [0, 1] as binary P6, maxval 255."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise DimensionError(f"write_rgb expects a (3,H,W) array, got shape {rgb.shape}")
    h, w = rgb.shape[1], rgb.shape[2]
    raster = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(raster.transpose(1, 2, 0).tobytes())


# ---------------------------------------------------------------------------
# dataset pairing
# ---------------------------------------------------------------------------

def pair_dataset(root):
    """Match root/rgb/NAME.ppm with root/cubes/NAME.hsc by stem.

    Returns (rgb path, cube path) tuples sorted by stem; files without
    a partner are logged by name.
    """
    root = Path(root)
    rgb_dir = root / "rgb"
    cube_dir = root / "cubes"
    rgbs = {p.stem: p for p in sorted(rgb_dir.glob("*.ppm"))} if rgb_dir.is_dir() else {}
    cubes = {p.stem: p for p in sorted(cube_dir.glob("*.hsc"))} if cube_dir.is_dir() else {}
    matched = sorted(set(rgbs) & set(cubes))
    for stem in sorted(set(rgbs) - set(cubes)):
        log.warning("rgb image %r has no cube partner", stem)
    for stem in sorted(set(cubes) - set(rgbs)):
        log.warning("cube %r has no rgb partner", stem)
    if not matched:
        raise ConfigError(
            f"no (rgb, cube) pairs under {root} (need rgb/NAME.ppm + cubes/NAME.hsc)")
    return [(rgbs[s], cubes[s]) for s in matched]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _entry_bytes(name, array):
    nb = name.encode("utf-8")
    payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
    head = struct.pack("<I", len(nb)) + nb
    head += struct.pack("<I", array.ndim)
    head += struct.pack(f"<{array.ndim}I", *array.shape) if array.ndim else b""
    return head + payload


def _read_entry(r):
    name_len = r.u32("entry name length")
    name = r.take(name_len, "entry name").decode("utf-8")
    rank = r.u32(f"rank of {name!r}")
    extents = tuple(r.u32(f"extent of {name!r}") for _ in range(rank))
    count = 1
    for e in extents:
        count *= e
    payload = r.take(4 * count, f"payload of {name!r}")
    return name, np.frombuffer(payload, dtype="<f4").reshape(extents).copy()


def _model_entries(model):
    for name, p in model.named_parameters():
        yield name, p.data
    for name, b in model.named_buffers():
        yield name, b


def save_checkpoint(path, model, optimizer=None):
    """Serialize a model (and optionally AdamW state) to `path`."""
    chunks = [_CKPT_MAGIC, struct.pack("<I", _CKPT_VERSION)]
    if isinstance(model, MXRUNet):
        cfg = model.config
        chunks.append(struct.pack("<B", _KIND_MODEL))
        chunks.append(struct.pack("<III", cfg.encoder_depth, cfg.in_channels,
                                  cfg.out_channels))
        chunks.append(struct.pack("<d", cfg.width_multiplier))
        chunks.append(struct.pack("<BBB", int(cfg.self_attention), int(cfg.blur),
                                  int(cfg.final_blur)))
    elif isinstance(model, LossNetwork):
        chunks.append(struct.pack("<B", _KIND_LOSSNET))
        chunks.append(struct.pack("<I", model.in_channels))
    else:
        raise ConfigError(f"cannot checkpoint a {type(model).__name__}")

    entries = list(_model_entries(model))
    chunks.append(struct.pack("<I", len(entries)))
    for name, array in entries:
        chunks.append(_entry_bytes(name, np.asarray(array)))

    if optimizer is None:
        chunks.append(struct.pack("<B", 0))
    else:
        state = optimizer.state_dict() if hasattr(optimizer, "state_dict") else optimizer
        chunks.append(struct.pack("<B", 1))
        chunks.append(struct.pack("<Q", state["step"]))
        chunks.append(struct.pack("<I", len(state["entries"])))
        for name, array in state["entries"].items():
            chunks.append(_entry_bytes(name, np.asarray(array)))

    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def _read_config(r):
    kind = r.u8("model kind")
    if kind == _KIND_MODEL:
        depth = r.u32("encoder depth")
        in_ch = r.u32("in channels")
        out_ch = r.u32("out channels")
        width = r.f64("width multiplier")
        sa = r.u8("self-attention flag")
        blur_flag = r.u8("blur flag")
        final_blur = r.u8("final blur flag")
        return kind, ModelConfig(encoder_depth=depth, in_channels=in_ch,
                                 out_channels=out_ch, width_multiplier=width,
                                 self_attention=bool(sa), blur=bool(blur_flag),
                                 final_blur=bool(final_blur))
    if kind == _KIND_LOSSNET:
        return kind, r.u32("loss net in channels")
    raise FormatError(f"unknown model kind {kind}", offset=r.pos - 1)


def _check_model_matches(model, kind, cfg):
    if kind == _KIND_MODEL:
        if not isinstance(model, MXRUNet):
            raise IntegrityError(
                f"checkpoint holds a reconstruction net, target is {type(model).__name__}")
        mine = model.config
        for attr in ("encoder_depth", "in_channels", "out_channels",
                     "width_multiplier", "self_attention", "blur", "final_blur"):
            if getattr(mine, attr) != getattr(cfg, attr):
                raise IntegrityError(
                    f"checkpoint {attr} is {getattr(cfg, attr)!r}, "
                    f"target model has {getattr(mine, attr)!r}")
    else:
        if not isinstance(model, LossNetwork):
            raise IntegrityError(
                f"checkpoint holds a loss network, target is {type(model).__name__}")
        if model.in_channels != cfg:
            raise IntegrityError(
                f"checkpoint loss net has {cfg} input channels, "
                f"target has {model.in_channels}")


def load_checkpoint(path, model=None, seed=0, dtype=np.float32):
    """Rebuild (or fill) a model from a checkpoint.

    With model=None the architecture in the config block is built
    fresh; otherwise the block must match the given model.  Returns
    (model, optimizer_state) where optimizer_state is None or a dict
    accepted by AdamW.load_state.  Parameter payloads are float32, so
    a float32 model round-trips bitwise.
    """
    data = Path(path).read_bytes()
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != _CKPT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_CKPT_MAGIC!r}", offset=0)
    version = r.u32("format version")
    if version != _CKPT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version} "
                           f"(supported: {_CKPT_VERSION})", offset=4)
    kind, cfg = _read_config(r)
    if model is None:
        if kind == _KIND_MODEL:
            model = build_unet(cfg, seed=seed, dtype=dtype)
        else:
            model = LossNetwork(in_channels=cfg, seed=seed, dtype=dtype)
    else:
        _check_model_matches(model, kind, cfg)

    targets = dict(_model_entries(model))
    count = r.u32("parameter count")
    seen = set()
    for _ in range(count):
        name, array = _read_entry(r)
        if name in seen:
            raise IntegrityError(f"parameter {name!r} appears twice in checkpoint")
        seen.add(name)
        if name not in targets:
            raise IntegrityError(f"checkpoint parameter {name!r} not present in model")
        dest = targets[name]
        if dest.shape != array.shape:
            raise IntegrityError(
                f"parameter {name!r} has shape {array.shape} in checkpoint, "
                f"model expects {dest.shape}")
        dest[...] = array
    missing = sorted(set(targets) - seen)
    if missing:
        raise IntegrityError(f"checkpoint is missing parameter {missing[0]!r} "
                             f"({len(missing)} missing in total)")

    opt_state = None
    if r.u8("optimizer presence flag"):
        step = r.u64("optimizer step")
        opt_count = r.u32("optimizer entry count")
        entries = {}
        for _ in range(opt_count):
            name, array = _read_entry(r)
            entries[name] = array
        opt_state = {"step": step, "entries": entries}
    r.expect_end("checkpoint")
    return model, opt_state


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

_TRACKS = ("clean", "real")


@dataclass
class RunConfig:
    """Everything a training/eval run needs, JSON round-trippable."""

    train_root: str = None
    val_root: str = None
    track: str = "clean"
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    schedule: OneCycleSchedule = None
    epochs: int = 200
    batch_size: int = 8
    seed: int = 0
    threads: int = 1
    out_dir: str = "runs"

    def validate(self, check_paths=True):
        if self.track not in _TRACKS:
            raise ConfigError(f"track must be one of {_TRACKS}, got {self.track!r}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        self.model.validate()
        self.loss.validate()
        if check_paths:
            for name in ("train_root", "val_root"):
                value = getattr(self, name)
                if value is not None and not Path(value).exists():
                    raise ConfigError(f"{name} path does not exist: {value}")
        return self

    def to_json(self, path):
        body = asdict(self)
        body["loss"]["alpha"] = list(self.loss.alpha)
        body["loss"]["beta"] = list(self.loss.beta)
        Path(path).write_text(json.dumps(body, indent=2) + "\n")

    @classmethod
    def from_json(cls, path, check_paths=True):
        try:
            body = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(body, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        kwargs = dict(body)
        if "model" in kwargs and kwargs["model"] is not None:
            kwargs["model"] = ModelConfig(**kwargs["model"])
        if "loss" in kwargs and kwargs["loss"] is not None:
            loss_body = dict(kwargs["loss"])
            for key in ("alpha", "beta"):
                if key in loss_body:
                    loss_body[key] = tuple(loss_body[key])
            kwargs["loss"] = LossWeights(**loss_body)
        if "schedule" in kwargs and kwargs["schedule"] is not None:
            kwargs["schedule"] = OneCycleSchedule(**kwargs["schedule"])
        unknown = set(kwargs) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            config = cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad config structure: {exc}") from None
        return config.validate(check_paths=check_paths)
