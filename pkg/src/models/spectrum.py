"""Exact spectra and their FESD1 binary format."""

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from ..utils.constants import SPECTRUM_MAGIC
from ..utils.errors import CorruptCache, StructurallyInvalid


@dataclass(frozen=True, eq=False)
class SpectrumData:
    """Eigenvalues E_k, diagonal elements O_kk and optional state overlaps |c_k|^2.

    ``eigenvectors``, ``coefficients`` (complex c_k) and ``observable_matrix``
    are kept in memory only when the caller needs off-diagonal information
    (state filtering, time averages); they are never serialised.
    """

    eigenvalues: np.ndarray
    obs_diag: np.ndarray
    overlaps: np.ndarray = None
    observable: str = "m_z"
    eigenvectors: np.ndarray = field(default=None, repr=False)
    coefficients: np.ndarray = field(default=None, repr=False)
    observable_matrix: object = field(default=None, repr=False)

    def __post_init__(self):
        eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        obs_diag = np.asarray(self.obs_diag, dtype=float)
        if eigenvalues.ndim != 1 or obs_diag.shape != eigenvalues.shape:
            raise StructurallyInvalid("eigenvalues and obs_diag must be vectors of equal length")
        if np.any(np.diff(eigenvalues) < 0):
            raise StructurallyInvalid("eigenvalues must be ascending")
        object.__setattr__(self, "eigenvalues", eigenvalues)
        object.__setattr__(self, "obs_diag", obs_diag)
        if self.overlaps is not None:
            overlaps = np.asarray(self.overlaps, dtype=float)
            if overlaps.shape != eigenvalues.shape:
                raise StructurallyInvalid("overlaps must match the eigenvalue count")
            if abs(overlaps.sum() - 1.0) > 1e-10:
                raise StructurallyInvalid(f"overlaps sum to {overlaps.sum():.12f}, expected 1")
            object.__setattr__(self, "overlaps", overlaps)

    @property
    def size(self):
        return self.eigenvalues.size

    @property
    def has_overlaps(self):
        return self.overlaps is not None


def dumps_spectrum(sd):
    buffer = io.BytesIO()
    buffer.write(SPECTRUM_MAGIC)
    buffer.write(struct.pack("<QB", sd.size, 1 if sd.has_overlaps else 0))
    buffer.write(np.ascontiguousarray(sd.eigenvalues, dtype="<f8").tobytes())
    buffer.write(np.ascontiguousarray(sd.obs_diag, dtype="<f8").tobytes())
    if sd.has_overlaps:
        buffer.write(np.ascontiguousarray(sd.overlaps, dtype="<f8").tobytes())
    return buffer.getvalue()


def loads_spectrum(payload, name="<bytes>", observable="m_z"):
    header = len(SPECTRUM_MAGIC) + 9
    if len(payload) < header or payload[:len(SPECTRUM_MAGIC)] != SPECTRUM_MAGIC:
        raise CorruptCache(f"bad magic in {name}")
    count, has_overlaps = struct.unpack_from("<QB", payload, len(SPECTRUM_MAGIC))
    arrays = 3 if has_overlaps else 2
    if len(payload) != header + arrays * 8 * count:
        raise CorruptCache(f"unexpected file size for {name}")
    data = np.frombuffer(payload, dtype="<f8", offset=header).reshape(arrays, count)
    return SpectrumData(
        eigenvalues=data[0].copy(),
        obs_diag=data[1].copy(),
        overlaps=data[2].copy() if has_overlaps else None,
        observable=observable,
    )
