"""Tensor-train (MPS / MPO) data types and their binary format."""

import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from ..utils.constants import (
    DEFAULT_MAX_BOND,
    DEFAULT_SV_CUTOFF,
    TENSOR_TRAIN_MAGIC,
    TENSOR_TRAIN_VERSION,
)
from ..utils.errors import CorruptCache, NonPositiveParameter, StructurallyInvalid


@dataclass(frozen=True)
class TruncationPolicy:
    """Bond-dimension and singular-value rules applied at every compression."""

    max_bond: int = DEFAULT_MAX_BOND
    sv_cutoff: float = DEFAULT_SV_CUTOFF
    renormalize: bool = False

    def __post_init__(self):
        if self.max_bond < 1:
            raise NonPositiveParameter(f"max_bond must be >= 1, got {self.max_bond}")
        if not 0.0 <= self.sv_cutoff < 1.0:
            raise NonPositiveParameter(f"sv_cutoff must lie in [0, 1), got {self.sv_cutoff}")

    def keep(self, singular_values):
        """Number of singular values kept (input sorted descending)."""
        if singular_values.size == 0 or singular_values[0] <= 0.0:
            return 0
        kept = int(np.count_nonzero(singular_values >= self.sv_cutoff * singular_values[0]))
        return max(1, min(kept, self.max_bond))

    @classmethod
    def exact(cls):
        """Policy that never truncates anything but numerical zeros."""
        return cls(max_bond=2**31 - 1, sv_cutoff=1e-14)


@dataclass(frozen=True, eq=False)
class TensorTrain:
    """Matrix product state; site tensors are (left, physical, right)."""

    site_tensors: tuple
    canonical_center: object = None
    log_norm: float = 0.0
    truncation_error: float = 0.0

    def __post_init__(self):
        tensors = tuple(np.asarray(t, dtype=complex) for t in self.site_tensors)
        object.__setattr__(self, "site_tensors", tensors)
        validate_bonds(tensors, rank=3)

    @property
    def num_sites(self):
        return len(self.site_tensors)

    @property
    def bond_dims(self):
        return [t.shape[-1] for t in self.site_tensors[:-1]]

    @property
    def max_bond(self):
        return max([1] + self.bond_dims)

    def with_tensors(self, tensors, **changes):
        return replace(self, site_tensors=tuple(tensors), **changes)

    def scaled(self, log_factor):
        return replace(self, log_norm=self.log_norm + log_factor)

    @classmethod
    def product_state(cls, local_vectors):
        """Product state from a list of length-2 local vectors (normalised per site)."""
        tensors = []
        for vector in local_vectors:
            vector = np.asarray(vector, dtype=complex)
            norm = np.linalg.norm(vector)
            if norm == 0.0:
                raise StructurallyInvalid("local vector of a product state has zero norm")
            tensors.append((vector / norm).reshape(1, -1, 1))
        return cls(tuple(tensors), canonical_center=0)

    @classmethod
    def from_bits(cls, bits):
        """Computational basis state; bit 0 is spin up (sigma^z = +1)."""
        vectors = [np.array([1.0, 0.0]) if b == 0 else np.array([0.0, 1.0]) for b in bits]
        return cls.product_state(vectors)

    @classmethod
    def from_dense(cls, vector, num_sites, d=2):
        """Exact MPS of a dense vector by successive SVDs (left canonical)."""
        vector = np.asarray(vector, dtype=complex).reshape(-1)
        if vector.size != d**num_sites:
            raise StructurallyInvalid(f"vector of size {vector.size} is not {d}^{num_sites}")
        norm = np.linalg.norm(vector)
        if norm == 0.0:
            raise StructurallyInvalid("cannot build a tensor train from the zero vector")
        rest = (vector / norm).reshape(1, -1)
        tensors = []
        for _ in range(num_sites - 1):
            left = rest.shape[0]
            rest = rest.reshape(left * d, -1)
            u, s, vh = np.linalg.svd(rest, full_matrices=False)
            rank = max(1, int(np.count_nonzero(s > 1e-14 * s[0])))
            tensors.append(u[:, :rank].reshape(left, d, rank))
            rest = s[:rank, None] * vh[:rank]
        tensors.append(rest.reshape(rest.shape[0], d, 1))
        return cls(tuple(tensors), canonical_center=num_sites - 1, log_norm=float(np.log(norm)))

    def to_dense(self):
        """Dense state vector; site 0 is the most significant index."""
        result = np.ones((1, 1), dtype=complex)
        for tensor in self.site_tensors:
            left, d, right = tensor.shape
            result = (result @ tensor.reshape(left, d * right)).reshape(-1, right)
        return result.reshape(-1) * np.exp(self.log_norm)


@dataclass(frozen=True, eq=False)
class OperatorTrain:
    """Matrix product operator; site tensors are (left, out, in, right)."""

    site_tensors: tuple
    log_norm: float = 0.0
    truncation_error: float = 0.0
    canonical_center: object = None

    def __post_init__(self):
        tensors = tuple(np.asarray(t, dtype=complex) for t in self.site_tensors)
        object.__setattr__(self, "site_tensors", tensors)
        validate_bonds(tensors, rank=4)

    @property
    def num_sites(self):
        return len(self.site_tensors)

    @property
    def bond_dims(self):
        return [t.shape[-1] for t in self.site_tensors[:-1]]

    @property
    def max_bond(self):
        return max([1] + self.bond_dims)

    def with_tensors(self, tensors, **changes):
        return replace(self, site_tensors=tuple(tensors), **changes)

    @classmethod
    def identity(cls, num_sites, d=2):
        return cls(tuple(np.eye(d, dtype=complex).reshape(1, d, d, 1) for _ in range(num_sites)))

    @classmethod
    def from_local(cls, local_ops):
        """Tensor product of single-site operators (bond dimension 1)."""
        return cls(tuple(np.asarray(op, dtype=complex).reshape(1, *op.shape, 1) for op in local_ops))

    def dagger(self):
        tensors = [np.conj(t).transpose(0, 2, 1, 3) for t in self.site_tensors]
        return replace(self, site_tensors=tuple(tensors))

    def scaled(self, factor):
        """Multiply by a (possibly complex or negative) scalar."""
        if factor == 0:
            raise StructurallyInvalid("scaling an operator train by zero")
        tensors = list(self.site_tensors)
        phase = factor / abs(factor)
        tensors[0] = tensors[0] * phase
        return replace(self, site_tensors=tuple(tensors), log_norm=self.log_norm + float(np.log(abs(factor))))

    def to_dense(self):
        """Dense matrix (rows = out indices, site 0 most significant)."""
        result = np.ones((1, 1, 1), dtype=complex)
        for tensor in self.site_tensors:
            left, d_out, d_in, right = tensor.shape
            result = np.einsum("oia,abcr->obicr", result, tensor)
            rows, _, cols, _, _ = result.shape
            result = result.reshape(rows * d_out, cols * d_in, right)
        return result[:, :, 0] * np.exp(self.log_norm)


def validate_bonds(tensors, rank):
    """Check ranks, boundary bonds and that adjacent bonds match."""
    if len(tensors) == 0:
        raise StructurallyInvalid("a tensor train needs at least one site")
    for index, tensor in enumerate(tensors):
        if tensor.ndim != rank:
            raise StructurallyInvalid(f"site {index} has rank {tensor.ndim}, expected {rank}")
    if tensors[0].shape[0] != 1 or tensors[-1].shape[-1] != 1:
        raise StructurallyInvalid("boundary bond dimensions must be 1")
    for index in range(len(tensors) - 1):
        if tensors[index].shape[-1] != tensors[index + 1].shape[0]:
            raise StructurallyInvalid(
                f"bond mismatch between sites {index} and {index + 1}: "
                f"{tensors[index].shape[-1]} != {tensors[index + 1].shape[0]}"
            )


def isometry_deviation(train):
    """Largest deviation from the left/right isometry conditions around the center."""
    center = train.canonical_center
    if center is None:
        return float("inf")
    worst = 0.0
    for index, tensor in enumerate(train.site_tensors):
        matrix = tensor.reshape(tensor.shape[0], -1, tensor.shape[-1])
        left, _, right = matrix.shape
        if index < center:
            flat = matrix.reshape(-1, right)
            gram = flat.conj().T @ flat
            worst = max(worst, np.max(np.abs(gram - np.eye(right))))
        elif index > center:
            flat = matrix.reshape(left, -1)
            gram = flat @ flat.conj().T
            worst = max(worst, np.max(np.abs(gram - np.eye(left))))
    return float(worst)


# Binary format: magic, version byte, u64 site count, per site four u64 dims
# (left, out, in, right; MPS sites are written with in = 1) and the row-major
# complex128 entries, then the f64 log_norm.

def dumps_train(train):
    buffer = io.BytesIO()
    buffer.write(TENSOR_TRAIN_MAGIC)
    buffer.write(struct.pack("<B", TENSOR_TRAIN_VERSION))
    buffer.write(struct.pack("<Q", train.num_sites))
    for tensor in train.site_tensors:
        if tensor.ndim == 3:
            dims = (tensor.shape[0], tensor.shape[1], 1, tensor.shape[2])
        else:
            dims = tensor.shape
        buffer.write(struct.pack("<4Q", *dims))
        buffer.write(np.ascontiguousarray(tensor, dtype="<c16").tobytes())
    buffer.write(struct.pack("<d", train.log_norm))
    return buffer.getvalue()


def loads_train(payload, name="<bytes>"):
    """Inverse of dumps_train; a train whose every in-dimension is 1 is an MPS."""
    view = memoryview(payload)
    header = len(TENSOR_TRAIN_MAGIC) + 1 + 8
    if len(view) < header or bytes(view[:len(TENSOR_TRAIN_MAGIC)]) != TENSOR_TRAIN_MAGIC:
        raise CorruptCache(f"bad magic in {name}")
    version = view[len(TENSOR_TRAIN_MAGIC)]
    if version != TENSOR_TRAIN_VERSION:
        raise CorruptCache(f"unsupported version {version} in {name}")
    (count,) = struct.unpack_from("<Q", view, len(TENSOR_TRAIN_MAGIC) + 1)
    offset = header
    tensors = []
    for _ in range(count):
        if offset + 32 > len(view):
            raise CorruptCache(f"truncated site header in {name}")
        dims = struct.unpack_from("<4Q", view, offset)
        offset += 32
        size = int(np.prod(dims)) * 16
        if offset + size > len(view):
            raise CorruptCache(f"truncated tensor data in {name}")
        tensor = np.frombuffer(view[offset:offset + size], dtype="<c16").reshape(dims)
        tensors.append(tensor.astype(complex))
        offset += size
    if offset + 8 != len(view):
        raise CorruptCache(f"unexpected file size for {name}")
    (log_norm,) = struct.unpack_from("<d", view, offset)
    if count and all(t.shape[2] == 1 for t in tensors):
        return TensorTrain(tuple(t[:, :, 0, :] for t in tensors), log_norm=log_norm)
    try:
        return OperatorTrain(tuple(tensors), log_norm=log_norm)
    except StructurallyInvalid as error:
        raise CorruptCache(f"{name}: {error}") from error
