"""Residual encoding layer with a learnable codebook.

A set of N local descriptors ``x_i`` (rows of an N x D array) is softly
assigned to K learnable codewords ``c_k``, each carrying a learnable
per-codeword smoothing factor ``s_k`` that sharpens or relaxes its
assignments. The layer aggregates assignment-weighted residuals

    e_k = sum_i a_ik * (x_i - c_k),
    a_ik = exp(-s_k * ||x_i - c_k||^2) / sum_j exp(-s_j * ||x_i - c_j||^2)

into a fixed-length K x D representation that is independent of N and of
descriptor order, then L2-normalizes each D-sized block. Assignments are
computed in a shifted form: both numerator and denominator are scaled by
``exp(phi_i)`` with ``phi_i = min_k s_k * ||x_i - c_k||^2``, which pins
the largest exponent at zero so arbitrarily large scaled distances cannot
overflow. The shift cancels exactly, so the result equals the plain form
whenever that form is representable.

The backward pass is hand-derived. Because every assignment row shares
one softmax denominator, each block of the encoding depends on *all*
codewords and smoothing factors, not only its own; the gradients below
carry those cross terms (dropping them fails finite-difference checks).
With ``G_k`` the upstream gradient for block k (after back-propagating
through the normalization), ``w_ik = G_k . r_ik`` and
``wbar_i = sum_k a_ik w_ik``:

    dL/dx_i = sum_k a_ik G_k - 2 sum_k s_k a_ik w_ik r_ik
              + 2 wbar_i sum_k s_k a_ik r_ik
    dL/dc_k = 2 s_k sum_i a_ik (w_ik - wbar_i) r_ik - (sum_i a_ik) G_k
    dL/ds_k = - sum_i ||r_ik||^2 a_ik (w_ik - wbar_i)

Functions whose first axis is a batch of independent descriptor sets are
prefixed ``batch_``; the plain functions operate on one set and are thin
wrappers over them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import as_f64, check_finite

__all__ = [
    "Codebook",
    "EncodeCache",
    "init_codebook",
    "soft_assign",
    "aggregate",
    "normalize",
    "encode_forward",
    "encode_backward",
    "batch_encode_forward",
    "batch_encode_backward",
    "normalize_backward",
    "ZERO_BLOCK_EPS",
]

# Blocks whose pre-normalization norm falls below this are emitted as
# zeros and receive zero gradient (the direction is undefined there).
ZERO_BLOCK_EPS = 1e-12


@dataclass
class Codebook:
    """K codewords of dimension D plus one smoothing factor per codeword."""

    codewords: np.ndarray  # (K, D)
    smoothing: np.ndarray  # (K,)

    def __post_init__(self):
        self.codewords = as_f64(self.codewords, "codewords", ndim=2)
        self.smoothing = as_f64(self.smoothing, "smoothing", ndim=1)
        if self.smoothing.shape[0] != self.codewords.shape[0]:
            raise ValueError(
                f"codebook: {self.smoothing.shape[0]} smoothing factors for "
                f"{self.codewords.shape[0]} codewords"
            )
        check_finite(self.codewords, "codewords")
        check_finite(self.smoothing, "smoothing")

    @property
    def K(self) -> int:
        return self.codewords.shape[0]

    @property
    def D(self) -> int:
        return self.codewords.shape[1]


@dataclass
class EncodeCache:
    """Forward intermediates required by the backward pass.

    All arrays carry a leading sample axis; the single-set API uses B=1.
    """

    residuals: np.ndarray  # (B, N, K, D) x_i - c_k
    sq_norms: np.ndarray  # (B, N, K)    ||x_i - c_k||^2
    shifts: np.ndarray  # (B, N)       phi_i
    assignments: np.ndarray  # (B, N, K)
    raw: np.ndarray  # (B, K, D)    pre-normalization aggregate
    block_norms: np.ndarray  # (B, K)


def init_codebook(num_codewords: int, dim: int, seed: int) -> Codebook:
    """Draw codewords uniform in [-1/sqrt(K), +1/sqrt(K)] and smoothing
    factors uniform in (0, 1], deterministically for a given seed."""
    if num_codewords < 1 or dim < 1:
        raise ValueError(f"codebook dims must be >= 1, got K={num_codewords}, D={dim}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(num_codewords)
    codewords = rng.uniform(-bound, bound, size=(num_codewords, dim))
    smoothing = 1.0 - rng.uniform(0.0, 1.0, size=num_codewords)  # (0, 1]
    return Codebook(codewords, smoothing)


def _check_descriptors(descriptors: np.ndarray, book: Codebook, name: str) -> None:
    if descriptors.shape[-1] != book.D:
        raise ValueError(
            f"{name}: descriptor dim {descriptors.shape[-1]} does not match "
            f"codebook dim {book.D}"
        )
    check_finite(descriptors, name)


def _batch_soft_assign(X: np.ndarray, book: Codebook) -> tuple[np.ndarray, EncodeCache]:
    residuals = X[:, :, None, :] - book.codewords[None, None, :, :]
    sq_norms = np.einsum("bnkd,bnkd->bnk", residuals, residuals, optimize=True)
    scaled = book.smoothing[None, None, :] * sq_norms
    shifts = scaled.min(axis=2)
    # Largest exponent is exactly 0, so exp never overflows.
    weights = np.exp(shifts[:, :, None] - scaled)
    assignments = weights / weights.sum(axis=2, keepdims=True)
    b, k = X.shape[0], book.K
    cache = EncodeCache(
        residuals=residuals,
        sq_norms=sq_norms,
        shifts=shifts,
        assignments=assignments,
        raw=np.zeros((b, k, book.D)),
        block_norms=np.zeros((b, k)),
    )
    return assignments, cache


def soft_assign(descriptors, book: Codebook) -> tuple[np.ndarray, EncodeCache]:
    """Assignment weights of N descriptors to K codewords; rows sum to 1.

    Returns ``(assignments, cache)`` where assignments is N x K and the
    cache feeds :func:`aggregate` / :func:`encode_backward`.
    """
    X = as_f64(descriptors, "descriptors", ndim=2)
    _check_descriptors(X, book, "descriptors")
    assignments, cache = _batch_soft_assign(X[None], book)
    return assignments[0], cache


def aggregate(descriptors, book: Codebook, assignments, cache: EncodeCache) -> np.ndarray:
    """Assignment-weighted residual sums, one D-vector per codeword (K x D)."""
    X = as_f64(descriptors, "descriptors", ndim=2)
    _check_descriptors(X, book, "descriptors")
    a = as_f64(assignments, "assignments", ndim=2)
    if a.shape != (X.shape[0], book.K):
        raise ValueError(
            f"aggregate: assignments shape {a.shape} does not match "
            f"(N={X.shape[0]}, K={book.K})"
        )
    if cache.residuals.shape[1:] != (X.shape[0], book.K, book.D):
        raise ValueError(
            f"aggregate: cache residual shape {cache.residuals.shape} does not match inputs"
        )
    raw = np.einsum("bnk,bnkd->bkd", a[None], cache.residuals, optimize=True)[0]
    cache.raw[0] = raw
    cache.block_norms[0] = np.linalg.norm(raw, axis=1)
    return raw


def normalize(raw_encoding) -> np.ndarray:
    """Scale each codeword block to unit L2 norm; near-zero blocks become zeros.

    Accepts K x D and returns the flattened length-K*D encoding vector.
    """
    raw = as_f64(raw_encoding, "raw_encoding", ndim=2)
    check_finite(raw, "raw_encoding")
    norms = np.linalg.norm(raw, axis=1)
    safe = np.where(norms < ZERO_BLOCK_EPS, 1.0, norms)
    out = raw / safe[:, None]
    out[norms < ZERO_BLOCK_EPS] = 0.0
    return out.reshape(-1)


def batch_encode_forward(X, book: Codebook) -> tuple[np.ndarray, EncodeCache]:
    """Encode B independent descriptor sets (B, N, D) -> (B, K*D)."""
    X = as_f64(X, "descriptors", ndim=3)
    _check_descriptors(X, book, "descriptors")
    assignments, cache = _batch_soft_assign(X, book)
    raw = np.einsum("bnk,bnkd->bkd", assignments, cache.residuals, optimize=True)
    norms = np.linalg.norm(raw, axis=2)
    safe = np.where(norms < ZERO_BLOCK_EPS, 1.0, norms)
    encoded = raw / safe[:, :, None]
    encoded[norms < ZERO_BLOCK_EPS] = 0.0
    cache.raw = raw
    cache.block_norms = norms
    return encoded.reshape(X.shape[0], -1), cache


def encode_forward(descriptors, book: Codebook) -> tuple[np.ndarray, EncodeCache]:
    """Full layer for one descriptor set: assign, aggregate, normalize.

    Returns the length-K*D encoding vector and the backward cache.
    """
    X = as_f64(descriptors, "descriptors", ndim=2)
    encoded, cache = batch_encode_forward(X[None], book)
    return encoded[0], cache


def normalize_backward(grad_encoded: np.ndarray, cache: EncodeCache) -> np.ndarray:
    """Map d/d(normalized blocks) to d/d(raw blocks); zero blocks stay zero."""
    b, k = cache.block_norms.shape
    d = cache.raw.shape[2]
    g_hat = grad_encoded.reshape(b, k, d)
    norms = cache.block_norms
    safe = np.where(norms < ZERO_BLOCK_EPS, 1.0, norms)
    unit = cache.raw / safe[:, :, None]
    inner = np.einsum("bkd,bkd->bk", unit, g_hat, optimize=True)
    g_raw = (g_hat - unit * inner[:, :, None]) / safe[:, :, None]
    g_raw[norms < ZERO_BLOCK_EPS] = 0.0
    return g_raw


def batch_encode_backward(grad_encoding, book: Codebook, cache: EncodeCache):
    """Gradients for a batched forward: (B, K*D) upstream -> (grad_X, grad_C, grad_s).

    ``grad_X`` is (B, N, D); codebook gradients are summed over the batch.
    """
    g = as_f64(grad_encoding, "grad_encoding")
    b, n, k, d = cache.residuals.shape
    if g.shape != (b, k * d):
        raise ValueError(
            f"encode_backward: grad shape {g.shape} does not match encoding ({b}, {k * d})"
        )
    if (book.K, book.D) != (k, d):
        raise ValueError(
            f"encode_backward: codebook ({book.K}, {book.D}) does not match cache ({k}, {d})"
        )
    G = normalize_backward(g, cache)  # (B, K, D)

    a = cache.assignments
    r = cache.residuals
    s = book.smoothing
    w = np.einsum("bkd,bnkd->bnk", G, r, optimize=True)
    wbar = np.einsum("bnk,bnk->bn", a, w, optimize=True)
    centered = a * (w - wbar[:, :, None])  # a_ik (w_ik - wbar_i)

    grad_x = np.einsum("bnk,bkd->bnd", a, G, optimize=True)
    grad_x -= 2.0 * np.einsum("k,bnk,bnk,bnkd->bnd", s, a, w, r, optimize=True)
    grad_x += 2.0 * wbar[:, :, None] * np.einsum("k,bnk,bnkd->bnd", s, a, r, optimize=True)

    grad_c = 2.0 * s[:, None] * np.einsum("bnk,bnkd->kd", centered, r, optimize=True)
    grad_c -= np.einsum("bnk,bkd->kd", a, G, optimize=True)

    grad_s = -np.einsum("bnk,bnk->k", cache.sq_norms, centered, optimize=True)
    return grad_x, grad_c, grad_s


def encode_backward(grad_encoding, descriptors, book: Codebook, cache: EncodeCache):
    """Gradients of a downstream loss w.r.t. descriptors, codewords, smoothing.

    ``grad_encoding`` is the loss gradient w.r.t. the *normalized* K*D
    encoding; the normalization step is traversed internally. Returns
    ``(grad_X, grad_C, grad_s)`` of shapes (N, D), (K, D), (K,).
    """
    X = as_f64(descriptors, "descriptors", ndim=2)
    g = as_f64(grad_encoding, "grad_encoding").reshape(-1)
    if cache.residuals.shape != (1, X.shape[0], book.K, book.D):
        raise ValueError(
            f"encode_backward: cache shape {cache.residuals.shape} does not match "
            f"descriptors {X.shape} and codebook ({book.K}, {book.D})"
        )
    grad_x, grad_c, grad_s = batch_encode_backward(g[None], book, cache)
    return grad_x[0], grad_c, grad_s
