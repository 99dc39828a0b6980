"""Multi-resolution model: backbone, per-level dictionaries, fusion, classifier.

The backbone is a small stack of conv stages (3x3 kernels, zero padding 1,
ReLU, then 2x2 average pooling), so each stage halves the spatial grid and
the stage-l feature map doubles as the descriptor set of resolution level
l: an (H_l * W_l) x C_l array of local descriptors. Each active level owns
a residual-encoding codebook plus a learnable linear projection of its
K*D_l encoding into a shared dimension M. Level contributions are blended
with adaptive weights held on the open probability simplex by
construction: omega = softmax(z) over unconstrained logits z, so
sum(omega) == 1 and 0 < omega_l < 1 at every training step. A final
affine layer maps the fused M-vector to class logits.

Parameters live in a flat name -> float64 ndarray mapping so the
optimizer, gradient checker and checkpoint code can treat them uniformly:

    stage{i}.kernels / stage{i}.bias       conv stages, i = 1..max(levels)
    level{l}.codewords / level{l}.smoothing / level{l}.projection
    fusion.logits
    classifier.weight / classifier.bias

``model_backward`` returns a mapping with exactly the same keys/shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .encoding import Codebook, EncodeCache, batch_encode_backward, batch_encode_forward, init_codebook
from .validation import as_f64, check_finite

__all__ = [
    "ModelConfig",
    "ModelOutput",
    "ModelCache",
    "configure_levels",
    "init_model",
    "backbone_forward",
    "fuse_forward",
    "model_forward",
    "model_backward",
    "forward_from_descriptors",
    "codebook_at",
]


@dataclass(frozen=True)
class ModelConfig:
    levels: tuple[int, ...] = (1, 2, 3)
    widths: tuple[int, ...] = (8, 16, 32)
    dict_size: int = 8
    shared_dim: int = 64
    in_channels: int = 1
    num_classes: int = 4

    def __post_init__(self):
        if not self.levels:
            raise ValueError("at least one resolution level must be active")
        lv = tuple(sorted(set(int(l) for l in self.levels)))
        if lv[0] < 1 or lv[-1] > len(self.widths):
            raise ValueError(
                f"levels {self.levels} out of range for {len(self.widths)} backbone stages"
            )
        object.__setattr__(self, "levels", lv)
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        for name in ("dict_size", "shared_dim", "in_channels", "num_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def num_stages(self) -> int:
        return max(self.levels)

    def descriptor_dim(self, level: int) -> int:
        return self.widths[level - 1]

    def encoding_length(self, level: int) -> int:
        return self.dict_size * self.descriptor_dim(level)


def configure_levels(levels, **overrides) -> ModelConfig:
    """Model configuration restricted to the given resolution levels.

    Only listed levels receive dictionaries and projections; the fusion
    weights span exactly those levels. Remaining fields take their
    defaults unless overridden.
    """
    return ModelConfig(levels=tuple(levels), **overrides)


def _glorot(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def _conv_init(rng, fan_in: int, shape) -> np.ndarray:
    # Wide uniform fan-in scaling: without normalization layers, smaller
    # kernels leave the descriptors an order of magnitude below the
    # codeword scale and the encoder's input sensitivity starves.
    bound = 2.0 * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_model(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Deterministic parameter initialization for a model configuration."""
    ss = np.random.SeedSequence(seed)
    params: dict[str, np.ndarray] = {}
    cin = config.in_channels
    for i in range(1, config.num_stages + 1):
        cout = config.widths[i - 1]
        rng = np.random.default_rng(ss.spawn(1)[0])
        params[f"stage{i}.kernels"] = _conv_init(rng, cin * 9, (cout, cin, 3, 3))
        params[f"stage{i}.bias"] = np.zeros(cout)
        cin = cout
    for level in config.levels:
        d = config.descriptor_dim(level)
        book_seed = int(ss.spawn(1)[0].generate_state(1)[0])
        book = init_codebook(config.dict_size, d, book_seed)
        params[f"level{level}.codewords"] = book.codewords
        params[f"level{level}.smoothing"] = book.smoothing
        rng = np.random.default_rng(ss.spawn(1)[0])
        length = config.encoding_length(level)
        params[f"level{level}.projection"] = _glorot(
            rng, length, config.shared_dim, (length, config.shared_dim)
        )
    params["fusion.logits"] = np.zeros(len(config.levels))
    rng = np.random.default_rng(ss.spawn(1)[0])
    params["classifier.weight"] = _glorot(
        rng, config.shared_dim, config.num_classes, (config.shared_dim, config.num_classes)
    )
    params["classifier.bias"] = np.zeros(config.num_classes)
    return params


def codebook_at(params: dict[str, np.ndarray], level: int) -> Codebook:
    return Codebook(params[f"level{level}.codewords"], params[f"level{level}.smoothing"])


@dataclass
class BackboneCache:
    stage_inputs: list[np.ndarray] = field(default_factory=list)  # conv inputs
    conv_outs: list[np.ndarray] = field(default_factory=list)  # pre-activation
    pooled: list[np.ndarray] = field(default_factory=list)  # stage outputs


def _run_backbone(images: np.ndarray, params, config: ModelConfig) -> BackboneCache:
    cache = BackboneCache()
    x = images
    for i in range(1, config.num_stages + 1):
        conv = nk.conv2d_forward(x, params[f"stage{i}.kernels"], params[f"stage{i}.bias"], 1, 1)
        act = nk.relu(conv)
        pooled = nk.avgpool2_forward(act)
        cache.stage_inputs.append(x)
        cache.conv_outs.append(conv)
        cache.pooled.append(pooled)
        x = pooled
    return cache


def _to_descriptors(feature_map: np.ndarray) -> np.ndarray:
    """(B, C, H, W) feature map -> (B, H*W, C) descriptor sets, row-major scan."""
    b, c, h, w = feature_map.shape
    return np.ascontiguousarray(feature_map.transpose(0, 2, 3, 1).reshape(b, h * w, c))


def _check_images(images, config: ModelConfig) -> np.ndarray:
    x = as_f64(images, "images", ndim=4)
    check_finite(x, "images")
    if x.shape[1] != config.in_channels:
        raise ValueError(
            f"images: expected {config.in_channels} channels, got shape {x.shape}"
        )
    div = 2**config.num_stages
    h, w = x.shape[2], x.shape[3]
    if h % div or w % div:
        need_h, need_w = (div - h % div) % div, (div - w % div) % div
        raise ValueError(
            f"images: spatial dims {h}x{w} must be divisible by {div} for "
            f"{config.num_stages} pooling stages; pad by {need_h}x{need_w} "
            f"to {h + need_h}x{w + need_w}"
        )
    return x


def backbone_forward(images, params, config: ModelConfig):
    """Per-level descriptor sets for a batch of images.

    Returns ``(descriptors, cache)`` where descriptors maps each active
    level l to a (B, N_l, D_l) array with N_l = H_l * W_l and D_l equal to
    the stage-l channel width.
    """
    x = _check_images(images, config)
    cache = _run_backbone(x, params, config)
    descriptors = {l: _to_descriptors(cache.pooled[l - 1]) for l in config.levels}
    return descriptors, cache


def fuse_forward(encodings, projections, fusion_logits):
    """Simplex-weighted sum of projected per-level encodings.

    ``encodings[l]`` is (B, len_l), ``projections[l]`` is (len_l, M).
    Returns ``(fused (B, M), omega (L,))`` with omega = softmax(logits).
    """
    z = as_f64(fusion_logits, "fusion_logits", ndim=1)
    if len(encodings) != len(projections) or len(encodings) != z.shape[0]:
        raise ValueError(
            f"fuse_forward: got {len(encodings)} encodings, {len(projections)} "
            f"projections and {z.shape[0]} fusion logits"
        )
    omega = nk.softmax(z[None])[0]
    fused = None
    for enc, proj, wt in zip(encodings, projections, omega):
        enc = as_f64(enc, "encoding", ndim=2)
        proj = as_f64(proj, "projection", ndim=2)
        if enc.shape[1] != proj.shape[0]:
            raise ValueError(
                f"fuse_forward: encoding length {enc.shape[1]} does not match "
                f"projection rows {proj.shape[0]}"
            )
        term = wt * (enc @ proj)
        fused = term if fused is None else fused + term
    return fused, omega


@dataclass
class ModelOutput:
    logits: np.ndarray  # (B, num_classes)
    encodings: dict[int, np.ndarray]  # level -> (B, K*D_l)
    omega: np.ndarray  # (L,)


@dataclass
class ModelCache:
    backbone: BackboneCache
    descriptors: dict[int, np.ndarray]
    encode_caches: dict[int, EncodeCache]
    encodings: dict[int, np.ndarray]
    projected: dict[int, np.ndarray]
    fused: np.ndarray
    omega: np.ndarray


def model_forward(images, params, config: ModelConfig):
    """End-to-end forward pass; returns ``(ModelOutput, ModelCache)``."""
    descriptors, backbone_cache = backbone_forward(images, params, config)
    encodings: dict[int, np.ndarray] = {}
    encode_caches: dict[int, EncodeCache] = {}
    for level in config.levels:
        enc, ecache = batch_encode_forward(descriptors[level], codebook_at(params, level))
        encodings[level] = enc
        encode_caches[level] = ecache
    fused, omega = fuse_forward(
        [encodings[l] for l in config.levels],
        [params[f"level{l}.projection"] for l in config.levels],
        params["fusion.logits"],
    )
    projected = {
        l: encodings[l] @ params[f"level{l}.projection"] for l in config.levels
    }
    logits = nk.affine_forward(fused, params["classifier.weight"], params["classifier.bias"])
    output = ModelOutput(logits=logits, encodings=encodings, omega=omega)
    cache = ModelCache(
        backbone=backbone_cache,
        descriptors=descriptors,
        encode_caches=encode_caches,
        encodings=encodings,
        projected=projected,
        fused=fused,
        omega=omega,
    )
    return output, cache


def model_backward(grad_logits, params, config: ModelConfig, cache: ModelCache):
    """Gradients of a scalar loss w.r.t. every parameter.

    ``grad_logits`` is the loss gradient at the classifier output for the
    batch the cache was produced from. Returns a name -> array mapping
    with exactly the shapes of ``params``.
    """
    grad_logits = as_f64(grad_logits, "grad_logits", ndim=2)
    b = cache.fused.shape[0]
    if grad_logits.shape != (b, config.num_classes):
        raise ValueError(
            f"model_backward: grad_logits shape {grad_logits.shape} does not match "
            f"cached batch ({b}, {config.num_classes})"
        )
    grads: dict[str, np.ndarray] = {}

    g_fused, g_w, g_b = nk.affine_backward(grad_logits, cache.fused, params["classifier.weight"])
    grads["classifier.weight"] = g_w
    grads["classifier.bias"] = g_b

    omega = cache.omega
    g_omega = np.array(
        [np.vdot(g_fused, cache.projected[l]) for l in config.levels]
    )
    grads["fusion.logits"] = omega * (g_omega - float(omega @ g_omega))

    # Gradients entering each backbone stage output (from its dictionary,
    # if that level is active, plus the chain from deeper stages).
    stage_grads: list[np.ndarray | None] = [None] * config.num_stages
    for idx, level in enumerate(config.levels):
        g_proj = omega[idx] * g_fused
        enc = cache.encodings[level]
        grads[f"level{level}.projection"] = enc.T @ g_proj
        g_enc = g_proj @ params[f"level{level}.projection"].T
        g_desc, g_code, g_smooth = batch_encode_backward(
            g_enc, codebook_at(params, level), cache.encode_caches[level]
        )
        grads[f"level{level}.codewords"] = g_code
        grads[f"level{level}.smoothing"] = g_smooth
        pooled = cache.backbone.pooled[level - 1]
        bb, c, h, w = pooled.shape
        stage_grads[level - 1] = np.ascontiguousarray(
            g_desc.reshape(bb, h, w, c).transpose(0, 3, 1, 2)
        )

    chain: np.ndarray | None = None
    for i in range(config.num_stages, 0, -1):
        g_pool = stage_grads[i - 1]
        if chain is not None:
            g_pool = chain if g_pool is None else g_pool + chain
        if g_pool is None:
            g_pool = np.zeros_like(cache.backbone.pooled[i - 1])
        g_act = nk.avgpool2_backward(g_pool)
        g_conv = nk.relu_backward(g_act, cache.backbone.conv_outs[i - 1])
        chain, g_k, g_bias = nk.conv2d_backward(
            g_conv, cache.backbone.stage_inputs[i - 1], params[f"stage{i}.kernels"], 1, 1
        )
        grads[f"stage{i}.kernels"] = g_k
        grads[f"stage{i}.bias"] = g_bias
    return grads


def forward_from_descriptors(descriptor_sets, params, config: ModelConfig):
    """Forward pass for one sample given externally computed descriptors.

    ``descriptor_sets`` lists one (N_l, D_l) array per active level, in
    level order; the backbone is bypassed. Returns
    ``(fused (M,), omega, logits (num_classes,))``.
    """
    if len(descriptor_sets) != len(config.levels):
        raise ValueError(
            f"expected descriptors for levels {config.levels}, got {len(descriptor_sets)} sets"
        )
    encodings = []
    for level, desc in zip(config.levels, descriptor_sets):
        desc = as_f64(desc, f"level {level} descriptors", ndim=2)
        if desc.shape[1] != config.descriptor_dim(level):
            raise ValueError(
                f"level {level} descriptors have dim {desc.shape[1]}, "
                f"model expects {config.descriptor_dim(level)}"
            )
        enc, _ = batch_encode_forward(desc[None], codebook_at(params, level))
        encodings.append(enc)
    fused, omega = fuse_forward(
        encodings,
        [params[f"level{l}.projection"] for l in config.levels],
        params["fusion.logits"],
    )
    logits = nk.affine_forward(fused, params["classifier.weight"], params["classifier.bias"])
    return fused[0], omega, logits[0]
