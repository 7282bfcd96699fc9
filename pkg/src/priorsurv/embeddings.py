"""File-backed embeddings and a deterministic pseudo text encoder.

Embedding matrices travel in the VLSB binary format:

    magic "VLSB" | u8 version=1 | u32 LE rows | u32 LE dim |
    rows*dim float32 LE, row major

Real deployments drop precomputed encoder outputs into these files; tests
and synthetic experiments use :class:`PseudoEncoder`, a frozen random
projection that maps token matrices to unit-norm embedding vectors and is
differentiable with respect to the tokens.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

MAGIC = b"VLSB"
VERSION = 1
_HEADER = struct.Struct("<4sBII")


def save_embeddings(path, matrix) -> None:
    """Write a 2-D float matrix as a VLSB file (payload is float32)."""
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        r, c = np.argwhere(~np.isfinite(m))[0]
        raise ValueError(f"non-finite value at ({r}, {c})")
    rows, dim = m.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, rows, dim))
        fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def load_embeddings(path) -> np.ndarray:
    """Read a VLSB file into a float32 array of shape (rows, dim)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, rows, dim = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        if dim == 0:
            raise ValueError(f"{path}: dim must be positive")
        payload = fh.read()
    expected = rows * dim * 4
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload length mismatch (got {len(payload)} bytes, "
            f"expected {expected})"
        )
    m = np.frombuffer(payload, dtype="<f4").reshape(rows, dim)
    bad = np.argwhere(~np.isfinite(m))
    if bad.size:
        r, c = bad[0]
        raise ValueError(f"{path}: non-finite value at ({r}, {c})")
    return m.copy()


@dataclass(frozen=True)
class PseudoEncoder:
    """Frozen random projection standing in for a text encoder.

    The projection matrix is derived from the seed with a counter-based
    generator (Philox), so identical seeds give bit-identical encoders.
    Entries are scaled by 1/sqrt(token_dim) to keep outputs O(1) before
    normalization.
    """

    seed: int
    token_dim: int = 768
    out_dim: int = 512
    projection: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rng = np.random.Generator(np.random.Philox(self.seed))
        proj = rng.standard_normal((self.out_dim, self.token_dim)) / np.sqrt(
            self.token_dim
        )
        proj.setflags(write=False)
        object.__setattr__(self, "projection", proj)


def pseudo_encode(encoder: PseudoEncoder, tokens) -> ad.Tensor:
    """Encode an (L, token_dim) token matrix to a unit-norm vector.

    Mean-pools the token rows, applies the frozen projection, and
    L2-normalizes.  Differentiable w.r.t. the tokens.
    """
    tokens = ad.astensor(tokens)
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ValueError(f"tokens must be (L, {encoder.token_dim}) with L >= 1")
    if tokens.shape[1] != encoder.token_dim:
        raise ValueError(
            f"token dim {tokens.shape[1]} != encoder token_dim {encoder.token_dim}"
        )
    pooled = ad.mean_(tokens, axis=0)
    projected = ad.matmul(ad.Tensor(encoder.projection), pooled)
    norm = float(np.linalg.norm(projected.value))
    if norm == 0.0:
        raise ValueError("degenerate encoding: zero vector after projection")
    return ad.l2_normalize(projected, axis=0)
