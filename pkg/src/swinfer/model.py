"""Hierarchical windowed-attention classifier.

The network follows the classic four-stage layout: non-overlapping 4x4
patches are linearly embedded to dimension C, each stage applies
transformer blocks whose self-attention is restricted to w x w local
windows (alternating between the regular and the cyclically shifted
configuration), and a merge step between stages concatenates 2x2 token
groups and reduces 4D -> 2D, halving each grid side. The final token
map is layer-normed and mean-pooled into a single classification
vector, optionally passed through the excitation gate, then projected
to class logits.

All functions accept a leading batch axis; the spec-level single-sample
signatures are the batch-1 case.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .rng import SplitMix64, derive_seed
from .se import excite, init_se_parameters

MASK_NEG = -1e9


@dataclass
class SwinConfig:
    """Architecture hyperparameters; `validate()` raises on inconsistency."""

    image_size: int = 64
    patch_size: int = 4
    in_channels: int = 3
    embed_dim: int = 24
    depths: tuple[int, ...] = (1, 1, 2, 1)
    num_heads: tuple[int, ...] = (2, 4, 6, 8)
    window_size: int = 4
    mlp_ratio: float = 4.0
    num_classes: int = 7
    se_reduction: int = 4
    use_se: bool = True
    drop_rate: float = 0.0

    def __post_init__(self):
        self.depths = tuple(int(d) for d in self.depths)
        self.num_heads = tuple(int(h) for h in self.num_heads)

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    def stage_dim(self, stage: int) -> int:
        return self.embed_dim * (2 ** stage)

    def stage_grid(self, stage: int) -> int:
        return self.image_size // self.patch_size // (2 ** stage)

    def effective_window(self, stage: int) -> int:
        return min(self.window_size, self.stage_grid(stage))

    def stage_shift(self, stage: int) -> int:
        # shifting is pointless (and disabled) once one window covers the grid
        w = self.effective_window(stage)
        return w // 2 if w < self.stage_grid(stage) else 0

    @property
    def final_dim(self) -> int:
        return self.stage_dim(self.num_stages - 1)

    @property
    def patch_vec(self) -> int:
        return self.patch_size * self.patch_size * self.in_channels

    def validate(self) -> None:
        if self.num_stages != 4 or len(self.num_heads) != 4:
            raise ConfigError("exactly 4 stages of depths and head counts required")
        if any(d < 1 for d in self.depths):
            raise ConfigError(f"every stage needs at least one block: {self.depths}")
        if self.image_size % (self.patch_size * 8) != 0:
            raise ConfigError(
                f"image_size {self.image_size} must be divisible by "
                f"patch_size * 8 = {self.patch_size * 8} so the last stage grid is integral"
            )
        for s in range(4):
            dim, heads = self.stage_dim(s), self.num_heads[s]
            if dim % heads != 0:
                raise ConfigError(f"stage {s} dim {dim} not divisible by {heads} heads")
            grid, w = self.stage_grid(s), self.effective_window(s)
            if grid % w != 0:
                raise ConfigError(
                    f"stage {s} grid {grid} not divisible by window {w} "
                    "(padded windows are unsupported)"
                )
        if self.num_classes not in (7, 8):
            raise ConfigError(f"num_classes must be 7 or 8, got {self.num_classes}")
        if self.use_se and self.final_dim % self.se_reduction != 0:
            raise ConfigError(
                f"final dim {self.final_dim} not divisible by se_reduction "
                f"{self.se_reduction}"
            )
        if not 0.0 <= self.drop_rate < 1.0:
            raise ConfigError(f"drop_rate must be in [0, 1), got {self.drop_rate}")
        if self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio must be positive")


# -- parameters -------------------------------------------------------------------


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with redraws outside +-2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def _param(arr) -> T.Tensor:
    return T.Tensor(arr, requires_grad=True)


def init_parameters(config: SwinConfig, seed: int) -> dict[str, T.Tensor]:
    """Freshly initialized named parameter tensors for the full model.

    Projections are truncated-normal (std 0.02); biases, relative
    position tables and norm offsets start at zero; norm gains at one.
    """
    config.validate()
    rng = SplitMix64(derive_seed(seed, "init")).numpy_rng()
    p: dict[str, T.Tensor] = {}

    def proj(name, fan_in, fan_out, bias=True):
        p[f"{name}.weight"] = _param(trunc_normal(rng, (fan_in, fan_out)))
        if bias:
            p[f"{name}.bias"] = _param(np.zeros(fan_out))

    def norm(name, dim):
        p[f"{name}.gain"] = _param(np.ones(dim))
        p[f"{name}.bias"] = _param(np.zeros(dim))

    proj("patch_embed", config.patch_vec, config.embed_dim)
    for s in range(config.num_stages):
        dim = config.stage_dim(s)
        w = config.effective_window(s)
        hidden = int(dim * config.mlp_ratio)
        for b in range(config.depths[s]):
            pre = f"stages.{s}.blocks.{b}"
            norm(f"{pre}.norm1", dim)
            proj(f"{pre}.attn.qkv", dim, 3 * dim)
            proj(f"{pre}.attn.proj", dim, dim)
            p[f"{pre}.attn.rel_bias"] = _param(
                np.zeros(((2 * w - 1) ** 2, config.num_heads[s]))
            )
            norm(f"{pre}.norm2", dim)
            proj(f"{pre}.mlp.fc1", dim, hidden)
            proj(f"{pre}.mlp.fc2", hidden, dim)
        if s < config.num_stages - 1:
            norm(f"merges.{s}.norm", 4 * dim)
            proj(f"merges.{s}.reduce", 4 * dim, 2 * dim, bias=False)
    norm("final_norm", config.final_dim)
    if config.use_se:
        p.update(init_se_parameters(config.final_dim, config.se_reduction, rng))
    proj("head", config.final_dim, config.num_classes)
    return p


# -- patch embedding ---------------------------------------------------------------


def patch_embed(images: T.Tensor, params: dict, config: SwinConfig) -> T.Tensor:
    """Split into patch_size^2 patches, flatten (row-major, channel-fastest),
    and project the raw pixel vectors to the embedding dimension.

    images: [B, H, W, C_in] -> [B, (H/p)*(W/p), embed_dim]
    """
    b, h, w, c = images.shape
    ps = config.patch_size
    if h % ps or w % ps:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {ps}")
    gh, gw = h // ps, w // ps
    x = T.reshape(images, (b, gh, ps, gw, ps, c))
    x = T.permute(x, (0, 1, 3, 2, 4, 5))
    x = T.reshape(x, (b, gh * gw, ps * ps * c))
    return T.linear(x, params["patch_embed.weight"], params["patch_embed.bias"])


# -- windowing ---------------------------------------------------------------------


def window_partition(tokens: T.Tensor, grid: int, window: int) -> T.Tensor:
    """[..., grid*grid, D] -> [..., nW, window*window, D]; bijective."""
    if grid % window:
        raise ConfigError(f"window {window} does not divide grid {grid}")
    lead = tokens.shape[:-2]
    d = tokens.shape[-1]
    if tokens.shape[-2] != grid * grid:
        raise DimensionError(
            f"token count {tokens.shape[-2]} does not match grid {grid}x{grid}"
        )
    n = grid // window
    x = T.reshape(tokens, lead + (n, window, n, window, d))
    k = len(lead)
    x = T.permute(x, tuple(range(k)) + (k, k + 2, k + 1, k + 3, k + 4))
    return T.reshape(x, lead + (n * n, window * window, d))


def window_reverse(windows: T.Tensor, grid: int, window: int) -> T.Tensor:
    """Inverse of window_partition."""
    lead = windows.shape[:-3]
    d = windows.shape[-1]
    n = grid // window
    k = len(lead)
    x = T.reshape(windows, lead + (n, n, window, window, d))
    x = T.permute(x, tuple(range(k)) + (k, k + 2, k + 1, k + 3, k + 4))
    return T.reshape(x, lead + (grid * grid, d))


def shift_region_labels(grid: int, window: int, shift: int) -> np.ndarray:
    """Label each cell of the post-shift grid by its contiguous source region.

    After rolling the token map by (-shift, -shift), the windows along
    the bottom/right edge stitch together strips that were not adjacent
    in the original image; cells from different strips must not attend
    to each other. Rows split into [0, g-w), [g-w, g-s), [g-s, g) and
    likewise for columns, giving at most nine labels.
    """
    labels = np.zeros((grid, grid), dtype=np.int64)
    if shift == 0:
        return labels
    cuts = (slice(0, grid - window), slice(grid - window, grid - shift),
            slice(grid - shift, grid))
    region = 0
    for rows in cuts:
        for cols in cuts:
            labels[rows, cols] = region
            region += 1
    return labels


def build_shift_mask(grid: int, window: int, shift: int) -> np.ndarray:
    """Per-window additive attention bias: 0 within a region, -1e9 across.

    Returns [nW, w*w, w*w]; all zeros when shift == 0. Symmetric with a
    zero diagonal by construction.
    """
    if not 0 <= shift < window:
        raise ConfigError(f"shift {shift} must satisfy 0 <= shift < window {window}")
    labels = shift_region_labels(grid, window, shift)
    n = grid // window
    lw = labels.reshape(n, window, n, window).transpose(0, 2, 1, 3)
    lw = lw.reshape(n * n, window * window)
    differs = lw[:, :, None] != lw[:, None, :]
    return np.where(differs, MASK_NEG, 0.0).astype(T.get_dtype())


@lru_cache(maxsize=32)
def _rel_position_index(window: int) -> np.ndarray:
    """[w*w, w*w] index into the (2w-1)^2 relative-offset bias table."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :]
    rel = rel.transpose(1, 2, 0) + (window - 1)
    return rel[:, :, 0] * (2 * window - 1) + rel[:, :, 1]


def window_attention(
    x: T.Tensor,
    params: dict,
    prefix: str,
    heads: int,
    mask: np.ndarray | None = None,
    drop_rate: float = 0.0,
    drop_rng: np.random.Generator | None = None,
    return_probs: bool = False,
):
    """Multi-head self-attention within each window.

    x: [B, nW, T, D] with T = window*window. Per head:
    softmax(Q K^T / sqrt(d) + relative_bias + mask) V, heads concatenated
    and output-projected. `mask` is [nW, T, T] additive.
    """
    b, nw, t, d = x.shape
    if d % heads:
        raise ConfigError(f"dim {d} not divisible by {heads} heads")
    hd = d // heads
    window = int(round(t ** 0.5))

    qkv = T.linear(x, params[f"{prefix}.qkv.weight"], params[f"{prefix}.qkv.bias"])
    qkv = T.reshape(qkv, (b, nw, t, 3, heads, hd))
    qkv = T.permute(qkv, (3, 0, 1, 4, 2, 5))  # [3, B, nW, heads, T, hd]
    q, k, v = qkv[0], qkv[1], qkv[2]

    scores = T.scale(T.matmul(q, T.permute(k, (0, 1, 2, 4, 3))), 1.0 / np.sqrt(hd))

    bias_rows = T.take_rows(params[f"{prefix}.rel_bias"], _rel_position_index(window).reshape(-1))
    bias = T.permute(T.reshape(bias_rows, (t, t, heads)), (2, 0, 1))
    scores = T.add(scores, bias)  # broadcasts over [B, nW]

    if mask is not None:
        scores = T.add(scores, T.Tensor(mask.reshape(nw, 1, t, t)))

    probs = T.softmax(scores, axis=-1)
    out = T.matmul(probs, v)  # [B, nW, heads, T, hd]
    out = T.reshape(T.permute(out, (0, 1, 3, 2, 4)), (b, nw, t, d))
    out = T.linear(out, params[f"{prefix}.proj.weight"], params[f"{prefix}.proj.bias"])
    if drop_rate > 0.0 and drop_rng is not None:
        out = T.dropout(out, drop_rate, drop_rng)
    if return_probs:
        return out, probs
    return out


def swin_block(
    x: T.Tensor,
    params: dict,
    prefix: str,
    grid: int,
    heads: int,
    window: int,
    shifted: bool,
    drop_rate: float = 0.0,
    drop_rng: np.random.Generator | None = None,
) -> T.Tensor:
    """One transformer block: pre-norm windowed MSA and pre-norm MLP,
    each wrapped in a residual connection. The shifted variant rolls the
    token grid by -window//2 before partitioning and masks cross-region
    pairs."""
    b, n, d = x.shape
    shift = window // 2 if shifted else 0
    if window >= grid:
        shift = 0

    h = T.layer_norm(x, params[f"{prefix}.norm1.gain"], params[f"{prefix}.norm1.bias"])
    h = T.reshape(h, (b, grid, grid, d))
    if shift:
        h = T.cyclic_roll(h, (-shift, -shift), (1, 2))
    h = T.reshape(h, (b, grid * grid, d))
    h = window_partition(h, grid, window)
    mask = build_shift_mask(grid, window, shift) if shift else None
    h = window_attention(
        h, params, f"{prefix}.attn", heads, mask, drop_rate, drop_rng
    )
    h = window_reverse(h, grid, window)
    if shift:
        h = T.reshape(h, (b, grid, grid, d))
        h = T.cyclic_roll(h, (shift, shift), (1, 2))
        h = T.reshape(h, (b, grid * grid, d))
    x = T.add(x, h)

    m = T.layer_norm(x, params[f"{prefix}.norm2.gain"], params[f"{prefix}.norm2.bias"])
    m = T.gelu(T.linear(m, params[f"{prefix}.mlp.fc1.weight"], params[f"{prefix}.mlp.fc1.bias"]))
    if drop_rate > 0.0 and drop_rng is not None:
        m = T.dropout(m, drop_rate, drop_rng)
    m = T.linear(m, params[f"{prefix}.mlp.fc2.weight"], params[f"{prefix}.mlp.fc2.bias"])
    if drop_rate > 0.0 and drop_rng is not None:
        m = T.dropout(m, drop_rate, drop_rng)
    return T.add(x, m)


def patch_merge(x: T.Tensor, params: dict, prefix: str, grid: int) -> T.Tensor:
    """Concatenate each 2x2 token group (order (0,0),(1,0),(0,1),(1,1)),
    layer-norm the 4D vector, and reduce linearly to 2D. Token count
    drops by a factor of 4."""
    b, n, d = x.shape
    if grid % 2:
        raise ConfigError(f"patch merge needs an even grid, got {grid}")
    h = T.reshape(x, (b, grid, grid, d))
    groups = [h[:, 0::2, 0::2, :], h[:, 1::2, 0::2, :],
              h[:, 0::2, 1::2, :], h[:, 1::2, 1::2, :]]
    h = T.concat(groups, axis=-1)
    h = T.reshape(h, (b, (grid // 2) ** 2, 4 * d))
    h = T.layer_norm(h, params[f"{prefix}.norm.gain"], params[f"{prefix}.norm.bias"])
    return T.matmul(h, params[f"{prefix}.reduce.weight"])


# -- full model -------------------------------------------------------------------


def forward(
    images: T.Tensor,
    params: dict,
    config: SwinConfig,
    train: bool = False,
    drop_rng: np.random.Generator | None = None,
) -> tuple[T.Tensor, T.Tensor]:
    """Full network: returns (logits, pooled classification vector).

    Accepts a single [H, W, C] image or a batch [B, H, W, C]; outputs
    are squeezed accordingly. The pooled vector is the mean over final
    tokens, before the optional excitation gate.
    """
    single = images.ndim == 3
    if single:
        images = T.reshape(images, (1,) + images.shape)
    if images.ndim != 4:
        raise DimensionError(f"expected [B, H, W, C] images, got {images.shape}")
    b, h, w, c = images.shape
    if h != config.image_size or w != config.image_size or c != config.in_channels:
        raise ConfigError(
            f"image {h}x{w}x{c} does not match configured "
            f"{config.image_size}x{config.image_size}x{config.in_channels}"
        )
    rate = config.drop_rate if train else 0.0

    x = patch_embed(images, params, config)
    for s in range(config.num_stages):
        grid = config.stage_grid(s)
        for blk in range(config.depths[s]):
            x = swin_block(
                x, params, f"stages.{s}.blocks.{blk}", grid,
                config.num_heads[s], config.effective_window(s),
                shifted=(blk % 2 == 1), drop_rate=rate, drop_rng=drop_rng,
            )
        if s < config.num_stages - 1:
            x = patch_merge(x, params, f"merges.{s}", grid)

    x = T.layer_norm(x, params["final_norm.gain"], params["final_norm.bias"])
    pooled = T.mmean(x, axis=1)  # [B, final_dim]
    feats = excite(pooled, params) if config.use_se else pooled
    logits = T.linear(feats, params["head.weight"], params["head.bias"])
    if single:
        logits = T.reshape(logits, (config.num_classes,))
        pooled = T.reshape(pooled, (config.final_dim,))
    return logits, pooled
