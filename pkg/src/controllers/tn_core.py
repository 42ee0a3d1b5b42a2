"""Tensor-train algebra: compression, contractions, traces and operator products.

All functions are pure: they never modify their inputs and return new trains.
Scale factors are carried in ``log_norm`` so traces of order 2^N stay finite,
and every compression adds its discarded weight to ``truncation_error``.
"""

import numpy as np

from ..models.tensor_train import OperatorTrain, TensorTrain, TruncationPolicy
from ..utils.errors import LengthMismatch, StructurallyInvalid, ZeroNorm
from ..utils.log import get_logger

logger = get_logger(__name__)


def _check_lengths(*trains):
    lengths = {train.num_sites for train in trains}
    if len(lengths) != 1:
        raise LengthMismatch(f"tensor trains of different lengths: {sorted(lengths)}")


def canonical_compress(train, policy):
    """Bring a train into canonical form (center at site 0) and truncate its bonds.

    Args:
        train (TensorTrain | OperatorTrain): Train to compress.
        policy (TruncationPolicy): Bond cap and relative singular-value cutoff.

    Returns:
        tuple: (compressed train, truncation error summed over bonds).

    Raises:
        StructurallyInvalid: If the argument is not a tensor train.
        ZeroNorm: If the train represents the zero vector/operator.
    """
    if not isinstance(train, (TensorTrain, OperatorTrain)):
        raise StructurallyInvalid(f"cannot compress {type(train).__name__}")
    physical = [t.shape[1:-1] for t in train.site_tensors]
    tensors = [t.reshape(t.shape[0], -1, t.shape[-1]) for t in train.site_tensors]
    num_sites = len(tensors)
    log_norm = train.log_norm

    # Left-to-right QR sweep: everything left of the last site becomes an isometry.
    carry = np.ones((1, 1), dtype=complex)
    for index in range(num_sites - 1):
        block = np.tensordot(carry, tensors[index], axes=(1, 0))
        left, phys, right = block.shape
        q, r = np.linalg.qr(block.reshape(left * phys, right))
        scale = np.linalg.norm(r)
        if scale == 0.0 or not np.isfinite(scale):
            raise ZeroNorm(f"train collapsed to zero at site {index}")
        tensors[index] = q.reshape(left, phys, q.shape[1])
        carry = r / scale
        log_norm += float(np.log(scale))
    tensors[-1] = np.tensordot(carry, tensors[-1], axes=(1, 0))

    # Right-to-left SVD sweep with truncation.
    error = 0.0
    carry = None
    for index in range(num_sites - 1, 0, -1):
        block = tensors[index] if carry is None else np.tensordot(tensors[index], carry, axes=(2, 0))
        left, phys, right = block.shape
        u, s, vh = np.linalg.svd(block.reshape(left, phys * right), full_matrices=False)
        total = float(np.sqrt(np.sum(s**2)))
        if total == 0.0 or not np.isfinite(total):
            raise ZeroNorm(f"all singular values vanish at bond {index - 1}")
        keep = policy.keep(s)
        error += float(np.sqrt(np.sum(s[keep:]**2))) / total
        tensors[index] = vh[:keep].reshape(keep, phys, right)
        carry = u[:, :keep] * (s[:keep] / total)
        log_norm += float(np.log(total))
    first = tensors[0] if carry is None else np.tensordot(tensors[0], carry, axes=(2, 0))
    scale = float(np.linalg.norm(first))
    if scale == 0.0 or not np.isfinite(scale):
        raise ZeroNorm("train has zero norm")
    tensors[0] = first / scale
    log_norm += float(np.log(scale))
    if policy.renormalize:
        log_norm = 0.0

    shaped = [t.reshape(t.shape[0], *phys, t.shape[-1]) for t, phys in zip(tensors, physical)]
    compressed = train.with_tensors(
        shaped,
        canonical_center=0,
        log_norm=log_norm,
        truncation_error=train.truncation_error + error,
    )
    return compressed, error


def sandwich(bra, op, ket):
    """Compute <bra|op|ket>; ``op`` may be None or "identity" for the overlap."""
    identity = op is None or (isinstance(op, str) and op == "identity")
    trains = (bra, ket) if identity else (bra, op, ket)
    _check_lengths(*trains)
    log_scale = bra.log_norm + ket.log_norm + (0.0 if identity else op.log_norm)

    if identity:
        env = np.ones((1, 1), dtype=complex)
        for b, k in zip(bra.site_tensors, ket.site_tensors):
            if b.shape[1] != k.shape[1]:
                raise LengthMismatch("physical dimensions differ")
            env = np.tensordot(env, np.conj(b), axes=(0, 0))
            env = np.tensordot(env, k, axes=([0, 1], [0, 1]))
            env, log_scale = _rescale(env, log_scale)
        return complex(env[0, 0] * np.exp(log_scale))

    env = np.ones((1, 1, 1), dtype=complex)
    for b, w, k in zip(bra.site_tensors, op.site_tensors, ket.site_tensors):
        if b.shape[1] != w.shape[1] or k.shape[1] != w.shape[2]:
            raise LengthMismatch("physical dimensions differ")
        tmp = np.tensordot(env, np.conj(b), axes=(0, 0))          # (w, k, s, c)
        tmp = np.tensordot(tmp, w, axes=([0, 2], [0, 1]))          # (k, c, t, z)
        env = np.tensordot(tmp, k, axes=([0, 2], [0, 1]))          # (c, z, d)
        env, log_scale = _rescale(env, log_scale)
    return complex(env[0, 0, 0] * np.exp(log_scale))


def _rescale(env, log_scale):
    peak = float(np.max(np.abs(env)))
    if peak == 0.0 or not np.isfinite(peak):
        return env, log_scale
    return env / peak, log_scale + float(np.log(peak))


def mpo_trace(op):
    """Trace of an operator train by closing every physical index pair."""
    if not isinstance(op, OperatorTrain):
        raise StructurallyInvalid(f"mpo_trace expects an OperatorTrain, got {type(op).__name__}")
    env = np.ones(1, dtype=complex)
    log_scale = op.log_norm
    for tensor in op.site_tensors:
        if tensor.shape[1] != tensor.shape[2]:
            raise StructurallyInvalid("trace needs square site tensors")
        env = env @ np.trace(tensor, axis1=1, axis2=2)
        env, log_scale = _rescale(env, log_scale)
    return complex(env[0] * np.exp(log_scale))


def trace_sandwich(a, op, b):
    """tr(a^dagger op b) for operator trains; ``op`` None means identity."""
    trains = (a, b) if op is None else (a, op, b)
    _check_lengths(*trains)
    log_scale = a.log_norm + b.log_norm + (0.0 if op is None else op.log_norm)
    if op is None:
        env = np.ones((1, 1), dtype=complex)
        for x, y in zip(a.site_tensors, b.site_tensors):
            tmp = np.tensordot(env, np.conj(x), axes=(0, 0))                # (b, t, s, c)
            env = np.tensordot(tmp, y, axes=([0, 1, 2], [0, 1, 2]))          # (c, d)
            env, log_scale = _rescale(env, log_scale)
        return complex(env[0, 0] * np.exp(log_scale))
    env = np.ones((1, 1, 1), dtype=complex)
    for x, w, y in zip(a.site_tensors, op.site_tensors, b.site_tensors):
        tmp = np.tensordot(env, np.conj(x), axes=(0, 0))                    # (w, b, t, s, c)
        tmp = np.tensordot(tmp, w, axes=([0, 2], [0, 1]))                    # (b, s, c, u, z)
        env = np.tensordot(tmp, y, axes=([0, 3, 1], [0, 1, 2]))              # (c, z, d)
        env, log_scale = _rescale(env, log_scale)
    return complex(env[0, 0, 0] * np.exp(log_scale))


def apply_mpo(op, state, policy, method="zipup"):
    """Apply an operator train to a state and compress the result.

    ``method`` selects the contraction: "zipup" truncates while contracting
    left to right, "direct" forms the exact product first. Both end with a
    single canonical_compress pass; no variational sweeps are performed.
    """
    _check_lengths(op, state)
    for w, k in zip(op.site_tensors, state.site_tensors):
        if w.shape[2] != k.shape[1]:
            raise LengthMismatch("operator input dimension differs from state physical dimension")

    if method == "direct":
        tensors = []
        for w, k in zip(op.site_tensors, state.site_tensors):
            block = np.einsum("wotz,btd->wbozd", w, k)
            lw, lb, o, z, d = block.shape
            tensors.append(block.reshape(lw * lb, o, z * d))
        product = TensorTrain(
            tuple(tensors),
            log_norm=op.log_norm + state.log_norm,
            truncation_error=op.truncation_error + state.truncation_error,
        )
        return canonical_compress(product, policy)[0]
    if method != "zipup":
        raise StructurallyInvalid(f"unknown MPO application method {method!r}")

    if state.canonical_center != 0:
        state = canonical_compress(state, TruncationPolicy.exact())[0]
    inner = TruncationPolicy(max_bond=2 * policy.max_bond, sv_cutoff=0.1 * policy.sv_cutoff)
    carry = np.ones((1, 1, 1), dtype=complex)
    log_norm = op.log_norm + state.log_norm
    error = 0.0
    tensors = []
    last = state.num_sites - 1
    for index, (w, k) in enumerate(zip(op.site_tensors, state.site_tensors)):
        block = np.einsum("nwb,wotz,btd->nozd", carry, w, k)
        n, o, z, d = block.shape
        if index == last:
            tensors.append(block.reshape(n, o, z * d))
            break
        u, s, vh = np.linalg.svd(block.reshape(n * o, z * d), full_matrices=False)
        total = float(np.sqrt(np.sum(s**2)))
        if total == 0.0:
            raise ZeroNorm("operator annihilates the state")
        keep = inner.keep(s)
        error += float(np.sqrt(np.sum(s[keep:]**2))) / total
        tensors.append(u[:, :keep].reshape(n, o, keep))
        carry = ((s[:keep] / total)[:, None] * vh[:keep]).reshape(keep, z, d)
        log_norm += float(np.log(total))
    zipped = TensorTrain(
        tuple(tensors),
        log_norm=log_norm,
        truncation_error=op.truncation_error + state.truncation_error + error,
    )
    return canonical_compress(zipped, policy)[0]


def mpo_multiply(a, b, policy):
    """Operator product a·b, compressed by ``policy``."""
    _check_lengths(a, b)
    tensors = []
    for x, y in zip(a.site_tensors, b.site_tensors):
        if x.shape[2] != y.shape[1]:
            raise LengthMismatch("inner physical dimensions differ")
        block = np.einsum("aokr,bkis->aboirs", x, y)
        la, lb, o, i, ra, rb = block.shape
        tensors.append(block.reshape(la * lb, o, i, ra * rb))
    product = OperatorTrain(
        tuple(tensors),
        log_norm=a.log_norm + b.log_norm,
        truncation_error=a.truncation_error + b.truncation_error,
    )
    return canonical_compress(product, policy)[0]


def mpo_add(a, b):
    """Direct sum a + b (bond dimensions add)."""
    _check_lengths(a, b)
    x_sites = list(a.site_tensors)
    y_sites = list(b.site_tensors)
    x_sites[0] = x_sites[0] * np.exp(a.log_norm)
    y_sites[0] = y_sites[0] * np.exp(b.log_norm)
    if len(x_sites) == 1:
        return OperatorTrain((x_sites[0] + y_sites[0],))
    tensors = []
    last = len(x_sites) - 1
    for index, (x, y) in enumerate(zip(x_sites, y_sites)):
        lx, o, i, rx = x.shape
        ly, _, _, ry = y.shape
        if index == 0:
            block = np.concatenate([x, y], axis=3)
        elif index == last:
            block = np.concatenate([x, y], axis=0)
        else:
            block = np.zeros((lx + ly, o, i, rx + ry), dtype=complex)
            block[:lx, :, :, :rx] = x
            block[lx:, :, :, rx:] = y
        tensors.append(block)
    return OperatorTrain(tuple(tensors), truncation_error=a.truncation_error + b.truncation_error)


def mpo_matvec(op, vectors):
    """Apply an operator train to dense vectors (shape (2^N,) or (2^N, k))."""
    data = np.asarray(vectors, dtype=complex)
    single = data.ndim == 1
    if single:
        data = data[:, None]
    batch = data.shape[1]
    block = data.reshape(1, 1, -1, batch)
    for w in op.site_tensors:
        done, chi, rest, _ = block.shape
        d_in = w.shape[2]
        block = block.reshape(done, chi, d_in, rest // d_in, batch)
        block = np.einsum("acjrk,cojb->aobrk", block, w)
        block = block.reshape(done * w.shape[1], w.shape[3], rest // d_in, batch)
    result = block.reshape(-1, batch) * np.exp(op.log_norm)
    return result[:, 0] if single else result


def apply_local(state, site, local_op):
    """Apply a single-site operator exactly (bond dimensions unchanged)."""
    tensors = list(state.site_tensors)
    tensors[site] = np.einsum("st,atb->asb", local_op, tensors[site])
    return state.with_tensors(tensors)


def state_norm(state):
    return float(np.sqrt(max(sandwich(state, None, state).real, 0.0)))


def normalized(state):
    """Same state with unit norm (only log_norm changes)."""
    norm = state_norm(state)
    if norm == 0.0 or not np.isfinite(norm):
        raise ZeroNorm("cannot normalise a zero state")
    return state.scaled(-float(np.log(norm)))


def expectation(state, op):
    """<state|op|state> / <state|state>, real part."""
    return sandwich(state, op, state).real / sandwich(state, None, state).real
