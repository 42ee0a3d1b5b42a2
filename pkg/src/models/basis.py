"""Product-basis points, sampler settings and the running state of a Metropolis chain."""

from dataclasses import dataclass, field

import numpy as np

from ..utils.constants import (
    DEFAULT_BATCHES,
    DEFAULT_BURN_IN,
    DEFAULT_CUTOFF_REL,
    DEFAULT_N_SAMPLES,
    PAULIS,
)
from ..utils.errors import NonPositiveParameter, StructurallyInvalid
from .tensor_train import TensorTrain

BASIS_KINDS = ("computational", "pauli-dressed")
PROPOSALS = ("single-site-flip", "single-site-pauli")


@dataclass(frozen=True, eq=False)
class BasisPoint:
    """A bitstring, or a seed state dressed with a Pauli string.

    Pauli labels use 0=I, 1=X, 2=Z, 3=Y so composing two of them is an XOR
    (up to a global phase).
    """

    kind: str
    bits: tuple = None
    pauli_string: tuple = None
    seed: TensorTrain = field(default=None, repr=False)
    mean_energy: float = None
    width: float = None

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise StructurallyInvalid(f"unknown basis kind {self.kind!r}")
        if self.kind == "computational" and self.bits is None:
            raise StructurallyInvalid("computational basis point needs bits")
        if self.kind == "pauli-dressed" and (self.seed is None or self.pauli_string is None):
            raise StructurallyInvalid("pauli-dressed basis point needs a seed and a pauli string")

    @classmethod
    def computational(cls, bits, mean_energy=None, width=None):
        return cls("computational", bits=tuple(int(b) for b in bits), mean_energy=mean_energy, width=width)

    @classmethod
    def dressed(cls, seed, pauli_string=None, mean_energy=None, width=None):
        labels = tuple(pauli_string) if pauli_string is not None else (0,) * seed.num_sites
        return cls("pauli-dressed", pauli_string=labels, seed=seed, mean_energy=mean_energy, width=width)

    @property
    def num_sites(self):
        return len(self.bits) if self.kind == "computational" else len(self.pauli_string)

    @property
    def key(self):
        return self.bits if self.kind == "computational" else self.pauli_string

    def flipped(self, site):
        bits = list(self.bits)
        bits[site] ^= 1
        return BasisPoint.computational(bits)

    def with_pauli(self, site, label):
        labels = list(self.pauli_string)
        labels[site] ^= label
        return BasisPoint.dressed(self.seed, labels)

    def to_train(self):
        if self.kind == "computational":
            return TensorTrain.from_bits(self.bits)
        tensors = list(self.seed.site_tensors)
        for site, label in enumerate(self.pauli_string):
            if label:
                tensors[site] = np.einsum("st,atb->asb", PAULIS[label], tensors[site])
        return self.seed.with_tensors(tensors)


@dataclass(frozen=True)
class SamplerConfig:
    """Metropolis settings for one or more independent chains."""

    n_samples: int = DEFAULT_N_SAMPLES
    burn_in: int = DEFAULT_BURN_IN
    proposal: str = "single-site-flip"
    cutoff_rel: float = DEFAULT_CUTOFF_REL
    rng_seed: int = 0
    backend: str = "mpo-cache"
    batches: int = DEFAULT_BATCHES
    n_chains: int = 1
    keep_trace: bool = False

    def __post_init__(self):
        if not self.n_samples > self.burn_in >= 0:
            raise NonPositiveParameter(
                f"need n_samples > burn_in >= 0, got n_samples={self.n_samples}, burn_in={self.burn_in}"
            )
        if not 0.0 <= self.cutoff_rel < 1.0:
            raise NonPositiveParameter(f"cutoff_rel must lie in [0, 1), got {self.cutoff_rel}")
        if self.proposal not in PROPOSALS:
            raise StructurallyInvalid(f"unknown proposal {self.proposal!r}")
        if self.batches < 2 or self.n_chains < 1:
            raise NonPositiveParameter("need batches >= 2 and n_chains >= 1")


@dataclass
class ChainState:
    """Running statistics of one chain; owned by exactly one worker."""

    point: BasisPoint
    weight: float
    value: float
    rng: np.random.Generator = field(repr=False)
    steps: int = 0
    accepted: int = 0
    accepted_after_burn_in: int = 0
    cutoff_rejections: int = 0
    max_residue: float = 0.0
    value_sum: float = 0.0
    values: list = field(default_factory=list, repr=False)
    trace: list = field(default_factory=list, repr=False)

    @property
    def estimate(self):
        return self.value_sum / len(self.values) if self.values else float("nan")
