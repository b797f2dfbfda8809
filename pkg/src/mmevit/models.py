"""IMU ViT branch, skeleton 3D-CNN + ViT branch, and the fusion head."""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .exceptions import ShapeError, ValidationError
from .tensor import Tensor, get_default_dtype, no_grad


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype or get_default_dtype())


class Module:
    training = True

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def requires_grad_(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise ValidationError(f"state mismatch: missing={missing[:3]} unexpected={extra[:3]}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=state[name].dtype, copy=True)

    def digest(self) -> str:
        """SHA-256 over parameter names, dtypes, shapes and raw bytes."""
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(str(p.dtype).encode())
            h.update(str(p.shape).encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def set_dropout_rng(self, rng):
        for m in self.modules():
            if hasattr(m, "rng"):
                m.rng = rng


# -- building blocks -----------------------------------------------------
class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        limit = math.sqrt(6.0 / (n_in + n_out))
        self.weight = Parameter(rng.uniform(-limit, limit, size=(n_in, n_out)))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class Dropout(Module):
    def __init__(self, p, rng=None):
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def __call__(self, x):
        return T.dropout(x, self.p, self.rng, self.training)


class MultiHeadAttention(Module):
    def __init__(self, dim, heads, rng, dropout=0.0):
        if dim % heads:
            raise ValidationError(f"embed dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.drop = Dropout(dropout)

    def __call__(self, x):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).transpose(2, 0, 3, 1, 4)
        out = T.attention(qkv[0], qkv[1], qkv[2])
        out = out.transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.drop(self.proj(out))


class TransformerBlock(Module):
    """Pre-norm block: x + attn(LN(x)), then x + mlp(LN(x))."""

    def __init__(self, dim, heads, mlp_ratio, rng, dropout=0.0):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng, dropout)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, int(dim * mlp_ratio), rng)
        self.fc2 = Linear(int(dim * mlp_ratio), dim, rng)
        self.drop = Dropout(dropout)

    def __call__(self, x):
        x = x + self.attn(self.norm1(x))
        h = self.fc2(self.drop(T.gelu(self.fc1(self.norm2(x)))))
        return x + self.drop(h)


# -- ViT -----------------------------------------------------------------
@dataclass
class ViTConfig:
    depth: int = 6
    heads: int = 8
    embed_dim: int = 256
    patch_shape: tuple = (4, 4)
    mlp_ratio: float = 4.0
    input_shape: tuple = (120, 4, 3)
    dropout: float = 0.1

    def __post_init__(self):
        self.patch_shape = tuple(int(v) for v in self.patch_shape)
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if self.depth < 0 or self.heads < 1 or self.embed_dim < 1:
            raise ValidationError("ViT depth/heads/embed_dim out of range")
        if self.embed_dim % self.heads:
            raise ValidationError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        rows, cols, _ = self.input_shape
        ph, pw = self.patch_shape
        if rows % ph or cols % pw:
            raise ValidationError(f"patch {self.patch_shape} does not tile input {self.input_shape[:2]}")

    @property
    def grid(self):
        return self.input_shape[0] // self.patch_shape[0], self.input_shape[1] // self.patch_shape[1]

    @property
    def num_tokens(self) -> int:
        gr, gc = self.grid
        return gr * gc

    @property
    def patch_dim(self) -> int:
        return self.patch_shape[0] * self.patch_shape[1] * self.input_shape[2]


def patchify(img, patch=(4, 4)):
    """``[..., R, C, ch]`` -> ``[..., (R/ph)*(C/pw), ph*pw*ch]``.

    Tokens run row-major over the patch grid; inside a token values run
    row-major over the patch with channels innermost. Works on arrays and
    Tensors (gradients flow through).
    """
    ph, pw = patch
    *lead, r, c, ch = img.shape
    if r % ph or c % pw:
        raise ShapeError(f"patch {patch} does not tile [{r}, {c}]")
    nl = len(lead)
    x = img.reshape(*lead, r // ph, ph, c // pw, pw, ch)
    order = tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4)
    x = x.transpose(order)
    return x.reshape(*lead, (r // ph) * (c // pw), ph * pw * ch)


def unpatchify(tokens, image_shape, patch=(4, 4)):
    ph, pw = patch
    r, c, ch = image_shape
    *lead, _, _ = tokens.shape
    nl = len(lead)
    x = tokens.reshape(*lead, r // ph, c // pw, ph, pw, ch)
    order = tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4)
    return x.transpose(order).reshape(*lead, r, c, ch)


class ViT(Module):
    """Class-token ViT over pre-patchified tokens ``[B, N, patch_dim]`` -> ``[B, D]``."""

    def __init__(self, cfg: ViTConfig, rng):
        self.cfg = cfg
        d = cfg.embed_dim
        self.patch_embed = Linear(cfg.patch_dim, d, rng)
        self.cls_token = Parameter(rng.normal(0.0, 0.02, size=(1, 1, d)))
        self.pos_embed = Parameter(rng.normal(0.0, 0.02, size=(1, cfg.num_tokens + 1, d)))
        self.blocks = [TransformerBlock(d, cfg.heads, cfg.mlp_ratio, rng, cfg.dropout) for _ in range(cfg.depth)]
        self.norm = LayerNorm(d)

    def __call__(self, tokens):
        b, n, p = tokens.shape
        if n != self.cfg.num_tokens or p != self.cfg.patch_dim:
            raise ShapeError(
                f"expected tokens [B, {self.cfg.num_tokens}, {self.cfg.patch_dim}], got {tokens.shape}"
            )
        x = self.patch_embed(tokens)
        cls = T.broadcast_to(self.cls_token, (b, 1, self.cfg.embed_dim))
        x = T.concat([cls, x], axis=1) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        return self.norm(x[:, 0])


# -- 3D CNN --------------------------------------------------------------
@dataclass
class Cnn3dConfig:
    in_channels: int = 53
    channels: tuple = (32, 64, 64, 32)
    time_strides: tuple = (1, 2, 1, 2)
    space_strides: tuple = (1, 2, 1, 2)
    kernel: int = 3
    input_shape: tuple = (48, 56, 56)  # (T, H, W)

    def __post_init__(self):
        self.channels = tuple(int(v) for v in self.channels)
        self.time_strides = tuple(int(v) for v in self.time_strides)
        self.space_strides = tuple(int(v) for v in self.space_strides)
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if not (len(self.channels) == len(self.time_strides) == len(self.space_strides) == 4):
            raise ValidationError("the 3D CNN has exactly 4 residual stages plus a compression stage")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValidationError("kernel size must be odd")

    def stage_shapes(self):
        """(T, H, W) after each of the four residual stages; raises on underflow."""
        t, h, w = self.input_shape
        shapes = []
        for i, (st, ss) in enumerate(zip(self.time_strides, self.space_strides), start=1):
            if t < st or h < ss or w < ss:
                raise ShapeError(f"input {self.input_shape} too small for the strides of stage {i}")
            t, h, w = -(-t // st), -(-h // ss), -(-w // ss)
            shapes.append((t, h, w))
        return shapes

    @property
    def map_shape(self):
        _, h, w = self.stage_shapes()[-1]
        return h, w


def _conv_weight(rng, k, cin, cout, gain=1.0):
    std = gain * math.sqrt(2.0 / (k * k * k * cin))
    return Parameter(rng.normal(0.0, std, size=(k, k, k, cin, cout)))


class Conv3d(Module):
    """Edge-padded ("same") 3-D convolution on channels-last input."""

    def __init__(self, cin, cout, kernel, stride, rng, gain=1.0):
        self.weight = _conv_weight(rng, kernel, cin, cout, gain)
        self.bias = Parameter(np.zeros(cout))
        self.stride = tuple(stride)
        self.pad = kernel // 2

    def __call__(self, x):
        if self.pad:
            for axis in (1, 2, 3):
                x = T.pad_edge(x, axis, self.pad, self.pad)
        return T.conv3d(x, self.weight, self.bias, self.stride)


class ResBlock3d(Module):
    def __init__(self, cin, cout, stride, kernel, rng):
        self.conv1 = Conv3d(cin, cout, kernel, stride, rng)
        self.conv2 = Conv3d(cout, cout, kernel, (1, 1, 1), rng, gain=0.5)
        self.shortcut = Conv3d(cin, cout, 1, stride, rng) if (cin != cout or max(stride) > 1) else None

    def __call__(self, x):
        h = self.conv2(T.relu(self.conv1(x)))
        skip = self.shortcut(x) if self.shortcut is not None else x
        return T.relu(h + skip)


class Cnn3d(Module):
    """Four residual stages, then a 1x1x1 conv to one channel averaged over time.

    Input ``[B, K, T, H, W]``; output the gray map ``[B, H', W']``.
    """

    def __init__(self, cfg: Cnn3dConfig, rng):
        self.cfg = cfg
        cfg.stage_shapes()
        chans = (cfg.in_channels,) + cfg.channels
        self.stages = [
            ResBlock3d(chans[i], chans[i + 1], (cfg.time_strides[i], cfg.space_strides[i], cfg.space_strides[i]),
                       cfg.kernel, rng)
            for i in range(4)
        ]
        self.compress = Conv3d(chans[-1], 1, 1, (1, 1, 1), rng)

    def __call__(self, volume):
        b, k, t, h, w = volume.shape
        if k != self.cfg.in_channels or (t, h, w) != self.cfg.input_shape:
            raise ShapeError(
                f"volume [{k}, {t}, {h}, {w}] does not match config "
                f"[{self.cfg.in_channels}, {', '.join(map(str, self.cfg.input_shape))}]"
            )
        x = T.transpose(volume, (0, 2, 3, 4, 1))
        for stage in self.stages:
            x = stage(x)
        x = self.compress(x)
        return x.mean(axis=1)[..., 0]


# -- branches and ensemble -------------------------------------------------
class IMUBranch(Module):
    def __init__(self, cfg: ViTConfig, rng):
        self.vit = ViT(cfg, rng)

    @property
    def repr_dim(self):
        return self.vit.cfg.embed_dim

    def __call__(self, windows):
        raw = windows.data if isinstance(windows, Tensor) else windows
        tokens = patchify(np.asarray(raw), self.vit.cfg.patch_shape)
        return self.vit(Tensor(tokens, dtype=self.vit.patch_embed.weight.dtype))


class SkeletonBranch(Module):
    def __init__(self, cnn_cfg: Cnn3dConfig, vit_cfg: ViTConfig, rng):
        if tuple(vit_cfg.input_shape) != (*cnn_cfg.map_shape, 1):
            raise ValidationError(
                f"skeleton ViT input {vit_cfg.input_shape} != CNN map {(*cnn_cfg.map_shape, 1)}"
            )
        self.cnn = Cnn3d(cnn_cfg, rng)
        self.vit = ViT(vit_cfg, rng)

    @property
    def repr_dim(self):
        return self.vit.cfg.embed_dim

    def __call__(self, volumes):
        if not isinstance(volumes, Tensor):
            volumes = Tensor(volumes, dtype=self.vit.patch_embed.weight.dtype)
        gray = self.cnn(volumes)
        b, h, w = gray.shape
        return self.vit(patchify(gray.reshape(b, h, w, 1), self.vit.cfg.patch_shape))


class MLPHead(Module):
    """Layer norm then one fully connected layer; softmax is applied by callers."""

    def __init__(self, in_dim, n_classes, rng):
        self.norm = LayerNorm(in_dim)
        self.fc = Linear(in_dim, n_classes, rng)

    def __call__(self, x):
        return self.fc(self.norm(x))


@dataclass
class ModelConfig:
    n_classes: int = 9
    imu: ViTConfig = field(default_factory=lambda: ViTConfig(depth=6, heads=8, embed_dim=256))
    skeleton_cnn: Cnn3dConfig = field(default_factory=Cnn3dConfig)
    skeleton_vit: ViTConfig = field(
        default_factory=lambda: ViTConfig(depth=2, heads=8, embed_dim=256, patch_shape=(2, 2), input_shape=(14, 14, 1))
    )
    seed: int = 0

    @classmethod
    def scaled(cls, n_classes=9, dim=32, heads=4, grid=16, frames=8, cnn_channels=(8, 16, 16, 8),
               imu_depth=6, skel_depth=2, skel_patch=(1, 1), window=120, dropout=0.1, seed=0):
        """Desk-scale variant with the same topology and smaller extents."""
        cnn = Cnn3dConfig(channels=cnn_channels, input_shape=(frames, grid, grid))
        h, w = cnn.map_shape
        return cls(
            n_classes=n_classes,
            imu=ViTConfig(depth=imu_depth, heads=heads, embed_dim=dim, input_shape=(window, 4, 3), dropout=dropout),
            skeleton_cnn=cnn,
            skeleton_vit=ViTConfig(depth=skel_depth, heads=heads, embed_dim=dim, patch_shape=skel_patch,
                                   input_shape=(h, w, 1), dropout=dropout),
            seed=seed,
        )

    # key=value text form
    def to_text(self) -> str:
        lines = [f"n_classes={self.n_classes}", f"seed={self.seed}"]
        subs = (("imu", self.imu), ("skeleton_cnn", self.skeleton_cnn), ("skeleton_vit", self.skeleton_vit))
        for prefix, sub in subs:
            for k, v in asdict(sub).items():
                if isinstance(v, (tuple, list)):
                    v = ",".join(str(x) for x in v)
                lines.append(f"{prefix}.{k}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"model config line {lineno}: expected key=value")
            k, v = line.split("=", 1)
            values[k.strip()] = v.strip()
        subs = {}
        for prefix, kind in (("imu", ViTConfig), ("skeleton_cnn", Cnn3dConfig), ("skeleton_vit", ViTConfig)):
            kwargs = {}
            for f in fields(kind):
                key = f"{prefix}.{f.name}"
                if key not in values:
                    continue
                raw = values.pop(key)
                default = getattr(kind(), f.name) if kind is Cnn3dConfig else f.default
                if isinstance(default, tuple):
                    kwargs[f.name] = tuple(int(x) for x in raw.split(","))
                elif isinstance(default, float):
                    kwargs[f.name] = float(raw)
                else:
                    kwargs[f.name] = int(raw)
            subs[prefix] = kind(**kwargs)
        n_classes = int(values.pop("n_classes", 9))
        seed = int(values.pop("seed", 0))
        if values:
            raise ValidationError(f"unknown model config keys: {sorted(values)}")
        return cls(n_classes=n_classes, seed=seed, **subs)


class EnsembleModel(Module):
    """IMU branch and skeleton branch representations, concatenated into the head."""

    def __init__(self, cfg: ModelConfig, rng=None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.imu = IMUBranch(cfg.imu, rng)
        self.skeleton = SkeletonBranch(cfg.skeleton_cnn, cfg.skeleton_vit, rng)
        self.head = MLPHead(self.imu.repr_dim + self.skeleton.repr_dim, cfg.n_classes, rng)

    @classmethod
    def from_parts(cls, cfg: ModelConfig, imu: IMUBranch, skeleton: SkeletonBranch, head: MLPHead):
        model = cls.__new__(cls)
        model.cfg, model.imu, model.skeleton, model.head = cfg, imu, skeleton, head
        return model

    @property
    def n_classes(self):
        return self.cfg.n_classes

    def logits(self, windows, volumes):
        fused = T.concat([self.imu(windows), self.skeleton(volumes)], axis=1)
        return self.head(fused)

    def __call__(self, windows, volumes):
        return T.softmax(self.logits(windows, volumes), axis=-1)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "model.cfg").write_text(self.cfg.to_text())
        checkpoint.save(directory / "model.ckpt", self.state_dict())

    @classmethod
    def load(cls, directory) -> "EnsembleModel":
        directory = Path(directory)
        model = cls(ModelConfig.from_text((directory / "model.cfg").read_text()))
        model.load_state_dict(checkpoint.load(directory / "model.ckpt"))
        return model


def ensemble_forward(model: EnsembleModel, imu_window, skel_volume, n_classes=None) -> np.ndarray:
    """Class probabilities for one IMU window paired with one heatmap volume (eval mode)."""
    if n_classes is not None and n_classes != model.n_classes:
        raise ValidationError(f"model emits {model.n_classes} classes, label map has {n_classes}")
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            probs = model(np.asarray(imu_window)[None], np.asarray(skel_volume)[None])
    finally:
        model.train(was_training)
    return probs.data[0]
