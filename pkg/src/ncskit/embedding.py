"""Random Gaussian embeddings between the ambient and effective subspace.

An embedding is a D x d matrix A with i.i.d. standard-normal entries.
Decoding is the plain product x = A y; encoding is the least-squares
preimage through the Moore-Penrose pseudo-inverse,

    y = (A^T A)^{-1} A^T x,

which only ever needs the cached d x d Gram matrix and its inverse.

Matrix entries are produced in fixed row blocks by counter-based Philox
streams keyed on (seed, block), so a memory-bounded lazy representation
reproduces the dense matrix bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericError

# Rows per Philox block. Fixed: changing it changes every generated matrix.
_BLOCK_ROWS = 4096

# Gram condition estimate above this is treated as a failed generation.
_COND_LIMIT = 1e12

_MAX_RETRIES = 3


def _entry_blocks(seed: int, attempt: int, D: int, d: int, dtype=np.float64):
    """Yield the row blocks of the matrix for (seed, attempt), in order."""
    base = np.random.SeedSequence(seed, spawn_key=(attempt,))
    key = int(base.generate_state(1, dtype=np.uint64)[0])
    for block_idx, start in enumerate(range(0, D, _BLOCK_ROWS)):
        rows = min(_BLOCK_ROWS, D - start)
        gen = np.random.Generator(np.random.Philox(key=[key, block_idx]))
        yield start, gen.standard_normal((rows, d), dtype=dtype)


@dataclass
class RandomEmbedding:
    """Immutable after construction; share freely across threads.

    ``dtype`` is the storage and product precision of the matrix entries
    (float64 default; float32 halves memory traffic at desk scale).  The
    Gram matrix and its inverse are always kept in float64, and encode /
    decode accept and return float64 regardless of the internal dtype.
    """

    ambient_dim: int
    embed_dim: int
    seed: int
    attempt: int
    gram: np.ndarray
    gram_inv: np.ndarray
    matrix: np.ndarray | None = field(default=None, repr=False)  # None => lazy rows
    dtype: np.dtype = np.float64

    def dense(self) -> np.ndarray:
        """Materialize the full D x d matrix (test/inspection helper)."""
        if self.matrix is not None:
            return self.matrix
        out = np.empty((self.ambient_dim, self.embed_dim), dtype=self.dtype)
        for start, block in _entry_blocks(self.seed, self.attempt, self.ambient_dim,
                                          self.embed_dim, self.dtype):
            out[start:start + block.shape[0]] = block
        return out

    def encode(self, x: np.ndarray, bounds: tuple[float, float] | None = None) -> np.ndarray:
        """Least-squares preimage y = (A^T A)^{-1} A^T x, optionally clipped.

        ``x`` is a single length-D vector or an (n, D) row stack of points.
        ``bounds=(l, h)`` clips each component of y into [l, h]; omit for
        the unclipped linear map.
        """
        x = np.asarray(x)
        if x.shape[-1] != self.ambient_dim:
            raise InputError(f"expected length-{self.ambient_dim} input, got {x.shape}")
        if not np.isfinite(x).all():
            raise InputError("encode input contains non-finite entries")
        x = x.astype(self.dtype, copy=False)
        if self.matrix is not None:
            proj = x @ self.matrix
        else:
            proj = np.zeros(x.shape[:-1] + (self.embed_dim,), dtype=self.dtype)
            for start, block in _entry_blocks(self.seed, self.attempt,
                                              self.ambient_dim, self.embed_dim,
                                              self.dtype):
                proj += x[..., start:start + block.shape[0]] @ block
        y = proj @ self.gram_inv  # gram_inv is symmetric, float64
        if bounds is not None:
            np.clip(y, bounds[0], bounds[1], out=y)
        return y

    def decode(self, y: np.ndarray) -> np.ndarray:
        """Back to the ambient space: x = A y (linear, no clipping).

        ``y`` is a single length-d vector or an (n, d) row stack.
        """
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != self.embed_dim:
            raise InputError(f"expected length-{self.embed_dim} input, got {y.shape}")
        if not np.isfinite(y).all():
            raise InputError("decode input contains non-finite entries")
        yd = y.astype(self.dtype, copy=False)
        if self.matrix is not None:
            out = (self.matrix @ yd) if yd.ndim == 1 else (yd @ self.matrix.T)
        else:
            out = np.empty(yd.shape[:-1] + (self.ambient_dim,), dtype=self.dtype)
            for start, block in _entry_blocks(self.seed, self.attempt,
                                              self.ambient_dim, self.embed_dim,
                                              self.dtype):
                out[..., start:start + block.shape[0]] = yd @ block.T
        return out.astype(np.float64, copy=False)


def generate(D: int, d: int, seed: int, max_dense_entries: int = 50_000_000,
             dtype=np.float64) -> RandomEmbedding:
    """Draw a fresh embedding matrix; deterministic in (D, d, seed, dtype).

    When the Gram matrix comes out numerically singular the matrix is
    redrawn from a seed derived for the retry attempt, at most 3 times.
    Matrices with more than ``max_dense_entries`` entries are kept lazy
    (rows regenerated on demand) with bit-identical values.
    """
    if not (D >= d >= 1):
        raise InputError(f"need D >= d >= 1, got D={D}, d={d}")
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise InputError(f"embedding dtype must be float64 or float32, got {dtype}")
    for attempt in range(_MAX_RETRIES + 1):
        dense_ok = D * d <= max_dense_entries
        if dense_ok:
            matrix = np.empty((D, d), dtype=dtype)
            for start, block in _entry_blocks(seed, attempt, D, d, dtype):
                matrix[start:start + block.shape[0]] = block
            gram = (matrix.T @ matrix).astype(np.float64)
        else:
            matrix = None
            gram = np.zeros((d, d))
            for _, block in _entry_blocks(seed, attempt, D, d, dtype):
                gram += block.T @ block
        try:
            gram_inv = np.linalg.inv(gram)
        except np.linalg.LinAlgError:
            continue
        # 1-norm condition estimate; cheap since the inverse is needed anyway
        cond = np.abs(gram).sum(axis=0).max() * np.abs(gram_inv).sum(axis=0).max()
        if cond <= _COND_LIMIT:
            return RandomEmbedding(D, d, seed, attempt, gram, gram_inv, matrix, dtype)
    raise NumericError(
        f"embedding Gram matrix still ill-conditioned after {_MAX_RETRIES} retries "
        f"(D={D}, d={d}, seed={seed})"
    )


class IdentityEmbedding:
    """Bypass double: encode and decode are the identity, no clipping.

    Stands in for a RandomEmbedding when the dimensionality-reduction stage
    is disabled, so the search runs directly in the ambient space.
    """

    def __init__(self, dim: int):
        self.ambient_dim = dim
        self.embed_dim = dim

    def encode(self, x: np.ndarray, bounds=None) -> np.ndarray:
        return np.asarray(x, dtype=np.float64)

    def decode(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64)
