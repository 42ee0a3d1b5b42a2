"""Open-boundary Ising chain: Hamiltonian, observables, Trotter layers and moments.

    H = J sum_i Z_i Z_{i+1} + g sum_i X_i + h sum_i Z_i
"""

import hashlib
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from ..utils.constants import BENCHMARK_COUPLINGS, IDENTITY, SIGMA_X, SIGMA_Y, SIGMA_Z
from ..utils.errors import StructurallyInvalid, UnknownObservable, UnsupportedOrder
from .tensor_train import OperatorTrain

# Single-site-sum observables O = (1/N) sum_i o_i, by name
OBSERVABLES = {
    "m_z": SIGMA_Z,
    "m_x": SIGMA_X,
    "m_y": SIGMA_Y,
}


def register_observable(name, local_op):
    """Register an additional (1/N) sum_i o_i observable."""
    local_op = np.asarray(local_op, dtype=complex)
    if local_op.shape != (2, 2):
        raise StructurallyInvalid(f"local operator for {name!r} must be 2x2")
    OBSERVABLES[name] = local_op


@dataclass(frozen=True)
class IsingSpec:
    """Couplings and size of the benchmark chain."""

    N: int
    J: float = BENCHMARK_COUPLINGS[0]
    g: float = BENCHMARK_COUPLINGS[1]
    h: float = BENCHMARK_COUPLINGS[2]
    boundary: str = "open"

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise StructurallyInvalid(f"N must be a positive integer, got {self.N}")
        if self.boundary != "open":
            raise StructurallyInvalid(f"only open boundaries are supported, got {self.boundary!r}")

    @property
    def local_field(self):
        return self.g * SIGMA_X + self.h * SIGMA_Z

    @property
    def sigma0(self):
        """Per-site DOS width, sigma0^2 = tr(H^2) / (2^N N)."""
        return float(np.sqrt(pauli_moments(self)[1] / self.N))

    def spec_hash(self):
        text = f"ising|N={self.N}|J={self.J!r}|g={self.g!r}|h={self.h!r}|{self.boundary}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class GateLayer:
    """One Trotter layer; ``sites[k]`` is the first site acted on by ``gates[k]``."""

    placement: str
    gates: tuple
    timestep: float
    sites: tuple = ()


def build_hamiltonian_mpo(spec, shift=0.0):
    """Bond-3 MPO of H - shift (the shift is spread evenly over the sites).

    Args:
        spec (IsingSpec): Chain definition.
        shift (float): Energy subtracted from H, used for (H - E)^2.

    Returns:
        OperatorTrain: Exact MPO.
    """
    n = spec.N
    onsite = spec.local_field - (shift / n) * IDENTITY
    if n == 1:
        return OperatorTrain((onsite.reshape(1, 2, 2, 1),))
    bulk = np.zeros((3, 2, 2, 3), dtype=complex)
    bulk[0, :, :, 0] = IDENTITY
    bulk[0, :, :, 1] = SIGMA_Z
    bulk[1, :, :, 2] = spec.J * SIGMA_Z
    bulk[0, :, :, 2] = onsite
    bulk[2, :, :, 2] = IDENTITY
    tensors = [bulk[0:1]] + [bulk] * (n - 2) + [bulk[:, :, :, 2:3]]
    return OperatorTrain(tuple(tensors))


def build_observable_mpo(spec, name="m_z"):
    """Bond-2 MPO of (1/N) sum_i o_i for a registered observable."""
    if name not in OBSERVABLES:
        raise UnknownObservable(f"unknown observable {name!r}; known: {sorted(OBSERVABLES)}")
    local = OBSERVABLES[name] / spec.N
    if spec.N == 1:
        return OperatorTrain((local.reshape(1, 2, 2, 1),))
    bulk = np.zeros((2, 2, 2, 2), dtype=complex)
    bulk[0, :, :, 0] = IDENTITY
    bulk[0, :, :, 1] = local
    bulk[1, :, :, 1] = IDENTITY
    tensors = [bulk[0:1]] + [bulk] * (spec.N - 2) + [bulk[:, :, :, 1:2]]
    return OperatorTrain(tuple(tensors))


def pauli_moments(spec):
    """(tr H / 2^N, tr H^2 / 2^N) from Pauli-string orthogonality."""
    second = spec.J**2 * (spec.N - 1) + (spec.g**2 + spec.h**2) * spec.N
    return 0.0, float(second)


def bond_hamiltonian(spec, bond):
    """4x4 two-site term on (bond, bond+1) with the fields folded in.

    Each site's field is split between its two bonds; the end sites have a
    single bond and keep the full field.
    """
    left_weight = 1.0 if bond == 0 else 0.5
    right_weight = 1.0 if bond + 1 == spec.N - 1 else 0.5
    field = spec.local_field
    return (
        spec.J * np.kron(SIGMA_Z, SIGMA_Z)
        + left_weight * np.kron(field, IDENTITY)
        + right_weight * np.kron(IDENTITY, field)
    )


def _propagator(generator, step, imaginary):
    if imaginary:
        return scipy.linalg.expm(-step * generator)
    return scipy.linalg.expm(-1j * step * generator)


def _bond_layer(spec, placement, step, imaginary):
    first = 0 if placement == "even-bond" else 1
    bonds = tuple(range(first, spec.N - 1, 2))
    gates = tuple(_propagator(bond_hamiltonian(spec, b), step, imaginary) for b in bonds)
    return GateLayer(placement, gates, step, bonds)


def trotter_layers(spec, dt, order=2, imaginary=False):
    """Symmetric second-order splitting even(dt/2) odd(dt) even(dt/2).

    With ``imaginary=True`` the gates are exp(-dt h) instead of exp(-i dt h).
    Empty layers (N = 2 has no odd bond) are dropped.
    """
    if order != 2:
        raise UnsupportedOrder(f"only second-order Trotter splitting is implemented, got {order}")
    if dt < 0:
        raise StructurallyInvalid(f"dt must be non-negative, got {dt}")
    if spec.N == 1:
        return [GateLayer("single-site", (_propagator(spec.local_field, dt, imaginary),), dt, (0,))]
    layers = [
        _bond_layer(spec, "even-bond", dt / 2, imaginary),
        _bond_layer(spec, "odd-bond", dt, imaginary),
        _bond_layer(spec, "even-bond", dt / 2, imaginary),
    ]
    return [layer for layer in layers if layer.gates]


def trotter_sequence(spec, dt, steps, imaginary=False):
    """Layers of ``steps`` consecutive Trotter steps with the inner even half-layers merged.

    The result has 2*steps + 1 layers (fewer for N <= 2), ordered by application.
    """
    if steps == 0:
        return []
    if spec.N == 1:
        return [GateLayer("single-site", (_propagator(spec.local_field, dt * steps, imaginary),), dt * steps, (0,))]
    if spec.N == 2:
        # a single bond: all steps commute into one gate
        return [_bond_layer(spec, "even-bond", dt * steps, imaginary)]
    half = _bond_layer(spec, "even-bond", dt / 2, imaginary)
    full = _bond_layer(spec, "even-bond", dt, imaginary)
    odd = _bond_layer(spec, "odd-bond", dt, imaginary)
    sequence = [half]
    for step in range(steps):
        sequence.append(odd)
        sequence.append(half if step == steps - 1 else full)
    return sequence


def gate_to_mpo_pair(gate):
    """Split a 4x4 two-site gate into (left, right) MPO tensors by SVD."""
    block = np.asarray(gate, dtype=complex).reshape(2, 2, 2, 2).transpose(0, 2, 1, 3).reshape(4, 4)
    u, s, vh = np.linalg.svd(block)
    rank = max(1, int(np.count_nonzero(s > 1e-14 * s[0])))
    root = np.sqrt(s[:rank])
    left = (u[:, :rank] * root).reshape(1, 2, 2, rank)
    right = (root[:, None] * vh[:rank]).reshape(rank, 2, 2, 1)
    return left, right


def layer_to_mpo(layer, num_sites):
    """OperatorTrain of one gate layer (identity on untouched sites)."""
    tensors = [IDENTITY.reshape(1, 2, 2, 1) for _ in range(num_sites)]
    for site, gate in zip(layer.sites, layer.gates):
        if layer.placement == "single-site":
            tensors[site] = np.asarray(gate, dtype=complex).reshape(1, 2, 2, 1)
        else:
            tensors[site], tensors[site + 1] = gate_to_mpo_pair(gate)
    return OperatorTrain(tuple(tensors))


def layer_to_dense(layer, num_sites):
    """Dense 2^N x 2^N matrix of a gate layer."""
    result = np.eye(1, dtype=complex)
    site = 0
    gates = dict(zip(layer.sites, layer.gates))
    while site < num_sites:
        if site in gates:
            gate = gates[site]
            result = np.kron(result, gate)
            site += 1 if layer.placement == "single-site" else 2
        else:
            result = np.kron(result, IDENTITY)
            site += 1
    return result


def _site_operator(local, site, num_sites):
    return sp.kron(
        sp.kron(sp.identity(2**site, format="csr"), sp.csr_matrix(local)),
        sp.identity(2 ** (num_sites - site - 1), format="csr"),
        format="csr",
    )


def sparse_hamiltonian(spec):
    """Sparse 2^N x 2^N Hamiltonian (site 0 most significant)."""
    n = spec.N
    dim = 2**n
    z_ops = [_site_operator(SIGMA_Z, i, n) for i in range(n)]
    ham = sp.csr_matrix((dim, dim), dtype=complex)
    for i in range(n):
        ham = ham + spec.g * _site_operator(SIGMA_X, i, n) + spec.h * z_ops[i]
        if i < n - 1:
            ham = ham + spec.J * (z_ops[i] @ z_ops[i + 1])
    return ham.tocsr()


def sparse_observable(spec, name="m_z"):
    if name not in OBSERVABLES:
        raise UnknownObservable(f"unknown observable {name!r}; known: {sorted(OBSERVABLES)}")
    local = OBSERVABLES[name]
    total = sum(_site_operator(local, i, spec.N) for i in range(spec.N))
    return (total / spec.N).tocsr()


def bitstring_energy(spec, bits):
    """Diagonal energy <b|H|b> of bitstrings (last axis runs over sites; bit 0 = up)."""
    spins = 1.0 - 2.0 * np.asarray(bits, dtype=float)
    bonds = np.sum(spins[..., :-1] * spins[..., 1:], axis=-1)
    return spec.J * bonds + spec.h * np.sum(spins, axis=-1)


def bitstring_objective(spec, bits, energy):
    """<b|(H - E)^2|b> = (E_diag - E)^2 + g^2 N for a computational state."""
    return (bitstring_energy(spec, bits) - energy) ** 2 + spec.g**2 * spec.N
