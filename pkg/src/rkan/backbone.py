"""Four-stage residual micro backbone with per-stage KAN block attachment.

The host is a plain ReLU residual net (two 3x3 convs per basic block,
identity or 1x1-projection shortcut). A residual KAN block can enclose any
of stages 2-4: it consumes that stage's input and its output is added to the
stage's main-path output. The second KAN conv inside an attached block is
kept only at stage 4.

Checkpoints are flat binary containers of named parameter arrays: for each
parameter, a little-endian u32 name length, the UTF-8 name bytes, a u32
rank, u32 dims, then the float64 little-endian data; records are
concatenated with no header and read until EOF. A text manifest of the spec
is written alongside.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .block import RkanBlock, RkanBlockConfig
from .errors import ConfigError, FormatError, GeometryError
from .layers import Activation, ChannelAffine, Conv2d, Linear, Module

RKAN_ATTACHABLE_STAGES = (2, 3, 4)


@dataclass(frozen=True)
class StageSpec:
    out_channels: int
    num_blocks: int
    stride: int


@dataclass(frozen=True)
class RkanSettings:
    """Block template shared by every attached stage."""

    reduce_factor: int = 2
    basis: str = "chebyshev"
    degrees: tuple[int, int] = (3, 2)
    rbf_centers: tuple[float, ...] = (-1.0, 0.0, 1.0)
    rbf_width: float = 1.0
    rbf_match_degree: bool = False
    zero_init_expand: bool = False


@dataclass(frozen=True)
class BackboneSpec:
    stem_channels: int = 16
    stages: tuple[StageSpec, ...] = (
        StageSpec(16, 2, 1),
        StageSpec(32, 2, 2),
        StageSpec(64, 2, 2),
        StageSpec(128, 2, 2),
    )
    num_classes: int = 3
    in_channels: int = 3
    channel_affine: bool = False
    rkan_stages: tuple[int, ...] = ()
    rkan: RkanSettings = field(default_factory=RkanSettings)

    def violations(self):
        problems = []
        if len(self.stages) != 4:
            problems.append(f"exactly 4 stages required, got {len(self.stages)}")
        for i, st in enumerate(self.stages, start=1):
            if st.stride not in (1, 2):
                problems.append(
                    f"stage {i} stride must be 1 or 2, got {st.stride}")
            if st.out_channels < 1 or st.num_blocks < 1:
                problems.append(f"stage {i} channels/blocks must be positive")
        if self.num_classes < 2:
            problems.append(f"num_classes must be >= 2, got {self.num_classes}")
        if self.stem_channels < 1:
            problems.append("stem_channels must be positive")
        bad = [s for s in self.rkan_stages if s not in RKAN_ATTACHABLE_STAGES]
        if bad:
            problems.append(
                f"rkan_stages must be a subset of {RKAN_ATTACHABLE_STAGES}, "
                f"got {tuple(self.rkan_stages)}")
        if len(set(self.rkan_stages)) != len(self.rkan_stages):
            problems.append(f"duplicate rkan stages: {tuple(self.rkan_stages)}")
        for s in self.rkan_stages:
            if s in RKAN_ATTACHABLE_STAGES:
                cfg = self.block_config_for(s)
                problems += [f"stage {s} block: {p}" for p in cfg.violations()]
        return problems

    def stage_input_channels(self, stage_index):
        """Channels entering a 1-based stage (stage 1 consumes the stem)."""
        if stage_index == 1:
            return self.stem_channels
        return self.stages[stage_index - 2].out_channels

    def block_config_for(self, stage_index):
        st = self.stages[stage_index - 1]
        r = self.rkan
        return RkanBlockConfig(
            in_channels=self.stage_input_channels(stage_index),
            stage_channels=st.out_channels,
            reduce_factor=r.reduce_factor,
            stride=st.stride,
            degrees=tuple(r.degrees),
            second_kan=(stage_index == 4),
            basis=r.basis,
            rbf_centers=tuple(r.rbf_centers),
            rbf_width=r.rbf_width,
            rbf_match_degree=r.rbf_match_degree,
            zero_init_expand=r.zero_init_expand,
        )

    def to_dict(self):
        return asdict(self)


def spec_from_dict(d):
    d = dict(d)
    d["stages"] = tuple(StageSpec(**s) for s in d["stages"])
    rk = dict(d["rkan"])
    rk["degrees"] = tuple(rk["degrees"])
    rk["rbf_centers"] = tuple(rk["rbf_centers"])
    d["rkan"] = RkanSettings(**rk)
    d["rkan_stages"] = tuple(d["rkan_stages"])
    return BackboneSpec(**d)


def default_micro_spec(num_classes=3, rkan_stages=(), **rkan_kwargs):
    """The desk-scale host: 16-channel stem, stages 16/32/64/128 at 32x32."""
    return BackboneSpec(
        num_classes=num_classes,
        rkan_stages=tuple(rkan_stages),
        rkan=RkanSettings(**rkan_kwargs),
    )


class BasicBlock(Module):
    """Two 3x3 convs with ReLU and an identity or projection shortcut."""

    def __init__(self, in_channels, out_channels, stride, affine, rng):
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride=stride,
                            padding=1, rng=rng)
        self.affine1 = ChannelAffine(out_channels) if affine else None
        self.act1 = Activation("relu")
        self.conv2 = Conv2d(out_channels, out_channels, 3, padding=1, rng=rng)
        self.affine2 = ChannelAffine(out_channels) if affine else None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = Conv2d(in_channels, out_channels, 1, stride=stride,
                                   init="fan_in", rng=rng)
        else:
            self.shortcut = None
        self._pre_relu = None

    def forward(self, x):
        h = self.conv1.forward(x)
        if self.affine1 is not None:
            h = self.affine1.forward(h)
        h = self.conv2.forward(self.act1.forward(h))
        if self.affine2 is not None:
            h = self.affine2.forward(h)
        sc = x if self.shortcut is None else self.shortcut.forward(x)
        self._pre_relu = h + sc
        return ops.activation(self._pre_relu, "relu")

    def backward(self, grad_out):
        g = ops.activation_backward(grad_out, self._pre_relu, "relu")
        gm = g
        if self.affine2 is not None:
            gm = self.affine2.backward(gm)
        gm = self.act1.backward(self.conv2.backward(gm))
        if self.affine1 is not None:
            gm = self.affine1.backward(gm)
        gx = self.conv1.backward(gm)
        if self.shortcut is None:
            return gx + g
        return gx + self.shortcut.backward(g)


class Model(Module):
    """Stem, four stages with optional KAN-block merges, pooled linear head."""

    def __init__(self, spec: BackboneSpec, stem, stages, rkan_blocks, head):
        self.spec = spec
        self.stem = stem
        self.stem_act = Activation("relu")
        self.stages = stages
        self.rkan_blocks = rkan_blocks
        self.head = head
        self._cache = None

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise GeometryError(
                f"expected [B, {self.spec.in_channels}, H, W] input, "
                f"got shape {tuple(x.shape)}")
        y = self.stem_act.forward(self.stem.forward(x))
        stage_inputs = []
        for idx, blocks in enumerate(self.stages, start=1):
            stage_inputs.append(y)
            x_in = y
            for blk in blocks:
                y = blk.forward(y)
            if idx in self.rkan_blocks:
                y = y + self.rkan_blocks[idx].forward(x_in)
        pooled = ops.global_avg_pool(y)
        flat = pooled.reshape(pooled.shape[0], -1)
        self._cache = (stage_inputs, y.shape)
        return self.head.forward(flat)

    def backward(self, grad_logits):
        stage_inputs, feat_shape = self._cache
        g = self.head.backward(grad_logits)
        g = ops.global_avg_pool_backward(
            g.reshape(feat_shape[0], feat_shape[1], 1, 1), feat_shape)
        for idx in range(len(self.stages), 0, -1):
            g_res = None
            if idx in self.rkan_blocks:
                g_res = self.rkan_blocks[idx].backward(g)
            for blk in reversed(self.stages[idx - 1]):
                g = blk.backward(g)
            if g_res is not None:
                g = g + g_res
        return self.stem.backward(self.stem_act.backward(g))


def build(spec: BackboneSpec, seed=0):
    """Construct a model with deterministic seed-derived initialization.

    Backbone weights are drawn from a stream independent of the attached
    blocks, so a baseline and an augmented build with the same seed share
    backbone parameters exactly.
    """
    problems = spec.violations()
    if problems:
        raise ConfigError("invalid backbone spec: " + "; ".join(problems))
    root = np.random.SeedSequence(seed)
    backbone_ss, rkan_ss = root.spawn(2)
    rng = np.random.default_rng(backbone_ss)

    stem = Conv2d(spec.in_channels, spec.stem_channels, 3, padding=1, rng=rng)
    stages = []
    in_ch = spec.stem_channels
    for st in spec.stages:
        blocks = []
        for j in range(st.num_blocks):
            stride = st.stride if j == 0 else 1
            blocks.append(BasicBlock(in_ch, st.out_channels, stride,
                                     spec.channel_affine, rng))
            in_ch = st.out_channels
        stages.append(blocks)
    head = Linear(spec.stages[-1].out_channels, spec.num_classes, rng=rng)

    rkan_blocks = {}
    rkan_children = rkan_ss.spawn(len(RKAN_ATTACHABLE_STAGES))
    for s in sorted(spec.rkan_stages):
        block_rng = np.random.default_rng(rkan_children[s - 2])
        rkan_blocks[s] = RkanBlock(spec.block_config_for(s), rng=block_rng)

    return Model(spec, stem, stages, rkan_blocks, head)


def model_forward(model, batch):
    """Logits ``[B, K]`` for a preprocessed input batch."""
    return model.forward(batch)


_U32 = np.dtype("<u4")
_F64 = np.dtype("<f8")


def save_checkpoint(model, path):
    """Write named parameters as the flat binary container plus a manifest."""
    with open(path, "wb") as f:
        for name, p in model.named_parameters():
            raw = name.encode("utf-8")
            f.write(np.array([len(raw)], dtype=_U32).tobytes())
            f.write(raw)
            arr = np.ascontiguousarray(p.data, dtype=np.float64)
            f.write(np.array([arr.ndim], dtype=_U32).tobytes())
            f.write(np.array(arr.shape, dtype=_U32).tobytes())
            f.write(arr.astype(_F64).tobytes())
    with open(str(path) + ".manifest.txt", "w") as f:
        json.dump(model.spec.to_dict(), f, indent=2)
        f.write("\n")


def read_checkpoint(path):
    """Parse a checkpoint container into ``{name: array}``."""
    with open(path, "rb") as f:
        blob = f.read()
    arrays = {}
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise FormatError(
                f"checkpoint truncated at byte {off} while reading {what}")
        chunk = blob[off : off + n]
        off += n
        return chunk

    while off < len(blob):
        (name_len,) = np.frombuffer(take(4, "name length"), dtype=_U32)
        name = take(int(name_len), "name").decode("utf-8")
        (rank,) = np.frombuffer(take(4, "rank"), dtype=_U32)
        dims = np.frombuffer(take(4 * int(rank), "dims"), dtype=_U32)
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(8 * count, f"data of {name}"), dtype=_F64)
        arrays[name] = data.reshape(dims.astype(int)).copy()
    return arrays


def load_checkpoint_into(model, path):
    """Restore parameters by name; shapes must match the live model."""
    arrays = read_checkpoint(path)
    for name, p in model.named_parameters():
        if name not in arrays:
            raise FormatError(f"checkpoint missing parameter {name!r}")
        if arrays[name].shape != p.data.shape:
            raise FormatError(
                f"checkpoint shape {arrays[name].shape} for {name!r} does "
                f"not match model shape {p.data.shape}")
        p.data = arrays[name].astype(p.data.dtype)
        p.grad = np.zeros_like(p.data)
    return model
