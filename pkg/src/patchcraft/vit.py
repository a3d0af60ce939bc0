"""Vision transformer for square RGB rasters.

Pipeline: non-overlapping patches -> linear projection + learnable positional
embedding + class token -> a stack of pre-norm encoder blocks (multi-head
self-attention, then a GELU MLP, each wrapped in a residual skip) -> final
layer norm -> MLP head over the class-token row, producing unnormalized
logits. Softmax lives in the loss / predict path, not here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

INIT_STD = 0.02
LAYER_NORM_EPS = 1e-6


class ConfigError(ValueError):
    """Raised for hyperparameter combinations the model cannot realize."""


@dataclass(frozen=True)
class ViTConfig:
    """Hyperparameters of one model variant.

    mlp_hidden defaults to (2*projection_dim, projection_dim); its last entry
    must equal projection_dim so the block MLP feeds the residual add.
    """

    image_size: int = 72
    patch_size: int = 8
    projection_dim: int = 64
    num_heads: int = 4
    num_layers: int = 8
    num_classes: int = 4
    mlp_hidden: tuple[int, ...] | None = None
    head_hidden: tuple[int, ...] = (2048, 1024)
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.mlp_hidden is None:
            object.__setattr__(self, "mlp_hidden",
                               (2 * self.projection_dim, self.projection_dim))
        object.__setattr__(self, "mlp_hidden", tuple(self.mlp_hidden))
        object.__setattr__(self, "head_hidden", tuple(self.head_hidden))
        dims = (self.image_size, self.patch_size, self.projection_dim,
                self.num_heads, self.num_layers, *self.mlp_hidden, *self.head_hidden)
        if any(d <= 0 for d in dims):
            raise ConfigError(f"all dimensions must be positive: {self}")
        if self.patch_size > self.image_size:
            raise ConfigError(
                f"patch_size {self.patch_size} exceeds image_size {self.image_size}")
        if self.projection_dim % self.num_heads != 0:
            raise ConfigError(
                f"projection_dim {self.projection_dim} not divisible by "
                f"num_heads {self.num_heads}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.mlp_hidden[-1] != self.projection_dim:
            raise ConfigError(
                f"mlp_hidden must end in projection_dim {self.projection_dim}, "
                f"got {self.mlp_hidden}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1): {self.dropout_rate}")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def seq_len(self) -> int:
        return self.num_patches + 1

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3


@dataclass
class BlockParams:
    ln1_gamma: Tensor
    ln1_beta: Tensor
    q_weight: Tensor
    q_bias: Tensor
    k_weight: Tensor
    k_bias: Tensor
    v_weight: Tensor
    v_bias: Tensor
    out_weight: Tensor
    out_bias: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    mlp: list[tuple[Tensor, Tensor]] = field(default_factory=list)


@dataclass
class ViTParams:
    """The learnable tensors of one model instance, shapes fixed by ViTConfig."""

    patch_weight: Tensor          # projection_dim x patch_dim
    patch_bias: Tensor            # projection_dim
    pos_embedding: Tensor         # (num_patches + 1) x projection_dim
    class_token: Tensor           # 1 x projection_dim
    blocks: list[BlockParams]
    final_gamma: Tensor
    final_beta: Tensor
    head: list[tuple[Tensor, Tensor]]   # hidden layers then the C-way output

    def named(self) -> dict[str, Tensor]:
        """Stable name -> tensor mapping (checkpoint and optimizer order)."""
        out: dict[str, Tensor] = {
            "patch_proj.weight": self.patch_weight,
            "patch_proj.bias": self.patch_bias,
            "pos_embedding": self.pos_embedding,
            "class_token": self.class_token,
        }
        for i, b in enumerate(self.blocks):
            pre = f"block{i}"
            out[f"{pre}.ln1.gamma"] = b.ln1_gamma
            out[f"{pre}.ln1.beta"] = b.ln1_beta
            for tag, w, bias in (("q", b.q_weight, b.q_bias),
                                 ("k", b.k_weight, b.k_bias),
                                 ("v", b.v_weight, b.v_bias),
                                 ("out", b.out_weight, b.out_bias)):
                out[f"{pre}.attn.{tag}.weight"] = w
                out[f"{pre}.attn.{tag}.bias"] = bias
            out[f"{pre}.ln2.gamma"] = b.ln2_gamma
            out[f"{pre}.ln2.beta"] = b.ln2_beta
            for j, (w, bias) in enumerate(b.mlp):
                out[f"{pre}.mlp{j}.weight"] = w
                out[f"{pre}.mlp{j}.bias"] = bias
        out["final_norm.gamma"] = self.final_gamma
        out["final_norm.beta"] = self.final_beta
        for j, (w, bias) in enumerate(self.head):
            out[f"head{j}.weight"] = w
            out[f"head{j}.bias"] = bias
        return out

    def tensors(self) -> Iterator[Tensor]:
        return iter(self.named().values())

    @staticmethod
    def from_named(config: ViTConfig, mapping: dict[str, Tensor]) -> "ViTParams":
        shapes = param_shapes(config)
        missing = shapes.keys() - mapping.keys()
        if missing:
            raise ConfigError(f"missing parameter tensors: {sorted(missing)}")
        for name, shape in shapes.items():
            if tuple(mapping[name].shape) != shape:
                raise ConfigError(
                    f"parameter {name!r} has shape {mapping[name].shape}, expected {shape}")

        def take(name):
            return mapping[name]

        blocks = []
        for i in range(config.num_layers):
            pre = f"block{i}"
            blocks.append(BlockParams(
                ln1_gamma=take(f"{pre}.ln1.gamma"), ln1_beta=take(f"{pre}.ln1.beta"),
                q_weight=take(f"{pre}.attn.q.weight"), q_bias=take(f"{pre}.attn.q.bias"),
                k_weight=take(f"{pre}.attn.k.weight"), k_bias=take(f"{pre}.attn.k.bias"),
                v_weight=take(f"{pre}.attn.v.weight"), v_bias=take(f"{pre}.attn.v.bias"),
                out_weight=take(f"{pre}.attn.out.weight"), out_bias=take(f"{pre}.attn.out.bias"),
                ln2_gamma=take(f"{pre}.ln2.gamma"), ln2_beta=take(f"{pre}.ln2.beta"),
                mlp=[(take(f"{pre}.mlp{j}.weight"), take(f"{pre}.mlp{j}.bias"))
                     for j in range(len(config.mlp_hidden))],
            ))
        n_head = len(config.head_hidden) + 1
        return ViTParams(
            patch_weight=take("patch_proj.weight"),
            patch_bias=take("patch_proj.bias"),
            pos_embedding=take("pos_embedding"),
            class_token=take("class_token"),
            blocks=blocks,
            final_gamma=take("final_norm.gamma"),
            final_beta=take("final_norm.beta"),
            head=[(take(f"head{j}.weight"), take(f"head{j}.bias")) for j in range(n_head)],
        )


def param_shapes(config: ViTConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter names and shapes, in checkpoint order."""
    d = config.projection_dim
    shapes: dict[str, tuple[int, ...]] = {
        "patch_proj.weight": (d, config.patch_dim),
        "patch_proj.bias": (d,),
        "pos_embedding": (config.num_patches + 1, d),
        "class_token": (1, d),
    }
    for i in range(config.num_layers):
        pre = f"block{i}"
        shapes[f"{pre}.ln1.gamma"] = (d,)
        shapes[f"{pre}.ln1.beta"] = (d,)
        for tag in ("q", "k", "v", "out"):
            shapes[f"{pre}.attn.{tag}.weight"] = (d, d)
            shapes[f"{pre}.attn.{tag}.bias"] = (d,)
        shapes[f"{pre}.ln2.gamma"] = (d,)
        shapes[f"{pre}.ln2.beta"] = (d,)
        width = d
        for j, out in enumerate(config.mlp_hidden):
            shapes[f"{pre}.mlp{j}.weight"] = (out, width)
            shapes[f"{pre}.mlp{j}.bias"] = (out,)
            width = out
    shapes["final_norm.gamma"] = (d,)
    shapes["final_norm.beta"] = (d,)
    width = d
    for j, out in enumerate((*config.head_hidden, config.num_classes)):
        shapes[f"head{j}.weight"] = (out, width)
        shapes[f"head{j}.bias"] = (out,)
        width = out
    return shapes


def param_count(config: ViTConfig) -> int:
    """Closed-form number of learnable scalars for a config."""
    d = config.projection_dim
    n = config.num_patches
    total = d * config.patch_dim + d          # patch projection
    total += (n + 1) * d                      # positional embedding
    total += d                                # class token
    per_block = 4 * d                         # two layer norms
    per_block += 4 * (d * d + d)              # q/k/v/out projections
    width = d
    for out in config.mlp_hidden:
        per_block += width * out + out
        width = out
    total += config.num_layers * per_block
    total += 2 * d                            # final layer norm
    width = d
    for out in (*config.head_hidden, config.num_classes):
        total += width * out + out
        width = out
    return total


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    # resample anything beyond +-2 std until the whole draw is in range
    out = rng.normal(0.0, std, size=shape)
    mask = np.abs(out) > 2.0 * std
    while mask.any():
        out[mask] = rng.normal(0.0, std, size=int(mask.sum()))
        mask = np.abs(out) > 2.0 * std
    return out.astype(np.float32)


def init_params(config: ViTConfig, seed: int) -> ViTParams:
    """Fresh parameters: truncated normal weights, zero biases, unit gammas."""
    rng = np.random.Generator(np.random.PCG64(seed))
    named: dict[str, Tensor] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".gamma"):
            data = np.ones(shape, dtype=np.float32)
        elif name.endswith((".bias", ".beta")):
            data = np.zeros(shape, dtype=np.float32)
        else:
            data = _truncated_normal(rng, shape, INIT_STD)
        named[name] = Tensor(data, requires_grad=True)
    return ViTParams.from_named(config, named)


def cast_params(params: ViTParams, config: ViTConfig, dtype) -> ViTParams:
    """Copy of the parameters at another float width (f64 shadow mode)."""
    named = {name: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
             for name, t in params.named().items()}
    return ViTParams.from_named(config, named)


# ---------------------------------------------------------------------------
# forward pass


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """Cut an HxWx3 raster into non-overlapping flattened patch rows.

    Tiles are emitted in row-major tile order and each tile is flattened
    row-major as (row, col, channel). Right/bottom remainder pixels when the
    side is not a multiple of patch_size are discarded.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"patchify: expected HxWx3 image, got {image.shape}")
    h, w = image.shape[0], image.shape[1]
    if patch_size > h or patch_size > w:
        raise ConfigError(f"patch_size {patch_size} exceeds image side {(h, w)}")
    gh, gw = h // patch_size, w // patch_size
    crop = image[:gh * patch_size, :gw * patch_size, :]
    tiles = crop.reshape(gh, patch_size, gw, patch_size, 3).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(tiles.reshape(gh * gw, patch_size * patch_size * 3))


def _linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    # weights are stored (out, in); rows of x are samples
    return ad.add_bias(ad.matmul(x, ad.transpose(weight)), bias)


def encode_patches(patches: np.ndarray | Tensor, params: ViTParams) -> Tensor:
    """Project patch rows to projection_dim and add positional rows 1..N."""
    if not isinstance(patches, Tensor):
        patches = Tensor(patches)
    n = patches.shape[0]
    x = _linear(patches, params.patch_weight, params.patch_bias)
    return ad.add(x, ad.slice_rows(params.pos_embedding, 1, n + 1))


def prepend_class_token(seq: Tensor, params: ViTParams) -> Tensor:
    """Row 0 becomes class_token + positional row 0; patch rows shift down."""
    row0 = ad.add(params.class_token, ad.slice_rows(params.pos_embedding, 0, 1))
    return ad.concat_rows([row0, seq])


def multi_head_self_attention(seq: Tensor, block: BlockParams, num_heads: int,
                              return_attn: bool = False):
    """Scaled dot-product attention over num_heads slices of width D/H.

    Heads are concatenated and re-projected. With return_attn, also returns
    the per-head attention matrices (plain arrays, detached from the tape).
    """
    t_len, dim = seq.shape
    if dim % num_heads != 0:
        raise ConfigError(f"width {dim} not divisible by {num_heads} heads")
    head_dim = dim // num_heads
    inv_sqrt_d = 1.0 / math.sqrt(head_dim)

    q = _linear(seq, block.q_weight, block.q_bias)
    k = _linear(seq, block.k_weight, block.k_bias)
    v = _linear(seq, block.v_weight, block.v_bias)

    heads, attns = [], []
    for h in range(num_heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh = ad.slice_cols(q, lo, hi)
        kh = ad.slice_cols(k, lo, hi)
        vh = ad.slice_cols(v, lo, hi)
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), inv_sqrt_d)
        attn = ad.softmax(scores, axis=-1)
        attns.append(attn.data)
        heads.append(ad.matmul(attn, vh))

    out = _linear(ad.concat_cols(heads), block.out_weight, block.out_bias)
    return (out, attns) if return_attn else out


def encoder_block(seq: Tensor, block: BlockParams, config: ViTConfig,
                  training: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Pre-norm residual unit: x + MHSA(LN(x)), then x + MLP(LN(x)).

    The block MLP applies GELU between layers and dropout after every layer.
    """
    drop = config.dropout_rate if training else 0.0
    attn_in = ad.layer_norm(seq, block.ln1_gamma, block.ln1_beta, LAYER_NORM_EPS)
    x1 = ad.add(seq, multi_head_self_attention(attn_in, block, config.num_heads))
    m = ad.layer_norm(x1, block.ln2_gamma, block.ln2_beta, LAYER_NORM_EPS)
    for i, (w, b) in enumerate(block.mlp):
        m = _linear(m, w, b)
        if i < len(block.mlp) - 1:
            m = ad.gelu(m)
        if drop > 0.0:
            m = ad.dropout(m, drop, rng)
    return ad.add(x1, m)


def forward(image: np.ndarray, params: ViTParams, config: ViTConfig,
            mode: str = "eval", rng: np.random.Generator | None = None) -> Tensor:
    """Run one image through the model; returns unnormalized logits (C,)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    s = config.image_size
    if image.shape != (s, s, 3):
        raise ValueError(f"expected image of shape {(s, s, 3)}, got {image.shape}")
    training = mode == "train"
    if training and config.dropout_rate > 0.0 and rng is None:
        raise ValueError("training forward with dropout needs an rng")

    x = prepend_class_token(encode_patches(patchify(image, config.patch_size), params),
                            params)
    for block in params.blocks:
        x = encoder_block(x, block, config, training=training, rng=rng)
    x = ad.layer_norm(x, params.final_gamma, params.final_beta, LAYER_NORM_EPS)

    # class-token readout through the head: GELU (+ dropout) on hidden layers,
    # final projection left linear so logits stay unnormalized
    drop = config.dropout_rate if training else 0.0
    token = ad.slice_rows(x, 0, 1)
    for w, b in params.head[:-1]:
        token = ad.gelu(_linear(token, w, b))
        if drop > 0.0:
            token = ad.dropout(token, drop, rng)
    logits = _linear(token, *params.head[-1])
    return ad.reshape(logits, (config.num_classes,))
