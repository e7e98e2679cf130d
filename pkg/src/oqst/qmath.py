"""Dense complex linear algebra on small Hilbert spaces plus entropy functionals.

Everything here is a pure function of its inputs.  Matrices are plain
``numpy`` arrays in row-major order; states are wrapped in
:class:`DensityOperator`, a validating container that most functions also
accept unwrapped (as a bare matrix) so that unnormalized intermediate
states can reuse the same kernels.

Conventions: entropies are in nats, ``0 * log 0 == 0``, and eigenvalues
below ``EIG_CLAMP`` are clamped to zero before any logarithm because
post-measurement states are routinely rank deficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Eigenvalues below this are treated as exact zeros inside logarithms.
EIG_CLAMP = 1e-12

HERMITICITY_ATOL = 1e-10
TRACE_ATOL = 1e-10
POSITIVITY_ATOL = 1e-10
PROBABILITY_ATOL = 1e-12


class QmathError(ValueError):
    """Raised when a matrix or probability vector violates its contract."""


def as_matrix(op) -> np.ndarray:
    """Return the underlying complex matrix of ``op``.

    Accepts a :class:`DensityOperator` or anything ``np.asarray`` handles.
    """
    if isinstance(op, DensityOperator):
        return op.matrix
    return np.asarray(op, dtype=complex)


def dag(a) -> np.ndarray:
    """Conjugate transpose."""
    return np.conj(np.asarray(a)).T


def hermitize(a) -> np.ndarray:
    """Symmetrize ``(a + a†)/2`` to suppress accumulated floating-point skew."""
    m = as_matrix(a)
    return 0.5 * (m + dag(m))


def is_hermitian(a, atol: float = HERMITICITY_ATOL) -> bool:
    m = as_matrix(a)
    return bool(np.max(np.abs(m - dag(m))) <= atol)


def is_unitary(a, atol: float = HERMITICITY_ATOL) -> bool:
    m = as_matrix(a)
    return bool(np.max(np.abs(dag(m) @ m - np.eye(m.shape[0]))) <= atol)


@dataclass(frozen=True)
class DensityOperator:
    """A finite-dimensional quantum state: Hermitian, unit trace, positive.

    The constructor validates all three invariants and freezes the matrix.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise QmathError(f"density operator must be square, got shape {m.shape}")
        if np.max(np.abs(m - dag(m))) > HERMITICITY_ATOL:
            raise QmathError("density operator is not Hermitian within 1e-10")
        tr = np.trace(m).real
        if abs(tr - 1.0) > TRACE_ATOL:
            raise QmathError(f"density operator trace {tr!r} differs from 1 beyond 1e-10")
        evals = np.linalg.eigvalsh(hermitize(m))
        if evals[0] < -POSITIVITY_ATOL:
            raise QmathError(f"density operator has eigenvalue {evals[0]!r} below -1e-10")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def pure(cls, vec) -> "DensityOperator":
        """Projector onto a (normalized) state vector."""
        v = np.asarray(vec, dtype=complex).ravel()
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, np.conj(v)))

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityOperator":
        return cls(np.eye(dim, dtype=complex) / dim)

    @classmethod
    def from_diagonal(cls, probs) -> "DensityOperator":
        p = np.asarray(probs, dtype=float)
        return cls(np.diag(p.astype(complex)))

    @classmethod
    def basis_state(cls, dim: int, index: int) -> "DensityOperator":
        v = np.zeros(dim, dtype=complex)
        v[index] = 1.0
        return cls.pure(v)

    def expectation(self, op) -> float:
        """Real expectation value of a Hermitian observable."""
        return float(np.trace(as_matrix(op) @ self.matrix).real)

    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal().real.copy()


def assert_probability_vector(p, atol: float = PROBABILITY_ATOL) -> np.ndarray:
    """Validate nonnegative entries summing to one; returns the float array."""
    v = np.asarray(p, dtype=float)
    if v.ndim != 1:
        raise QmathError("probability vector must be one-dimensional")
    if np.any(v < -atol):
        raise QmathError("probability vector has a negative entry")
    if abs(v.sum() - 1.0) > atol:
        raise QmathError(f"probabilities sum to {v.sum()!r}, not 1 within {atol}")
    return v


def tensor_product(*ops) -> np.ndarray:
    """Kronecker product of one or more matrices, left factor outermost."""
    if not ops:
        raise QmathError("tensor_product needs at least one operand")
    out = as_matrix(ops[0])
    for op in ops[1:]:
        out = np.kron(out, as_matrix(op))
    return out


def _partial_trace_matrix(mat: np.ndarray, dims, keep) -> np.ndarray:
    dims = [int(d) for d in dims]
    total = int(np.prod(dims))
    if mat.shape != (total, total):
        raise QmathError(
            f"joint dimension {mat.shape[0]} does not match subsystem dims {dims}"
        )
    keep = sorted(keep)
    n = len(dims)
    if any(k < 0 or k >= n for k in keep) or len(set(keep)) != len(keep):
        raise QmathError(f"invalid keep set {keep} for {n} subsystems")
    t = mat.reshape(dims + dims)
    # Trace out the complement, highest index first so axes stay valid.
    for idx in sorted(set(range(n)) - set(keep), reverse=True):
        t = np.trace(t, axis1=idx, axis2=idx + t.ndim // 2)
    d_keep = int(np.prod([dims[k] for k in keep])) if keep else 1
    return t.reshape(d_keep, d_keep)


def partial_trace(joint, dims, keep):
    """Marginal state on the kept subsystem indices (original order).

    Returns a :class:`DensityOperator` when given one, otherwise a bare
    matrix (useful for unnormalized states).
    """
    if isinstance(joint, DensityOperator):
        return DensityOperator(_partial_trace_matrix(joint.matrix, dims, keep))
    return _partial_trace_matrix(np.asarray(joint, dtype=complex), dims, keep)


def clamped_eigenvalues(rho) -> np.ndarray:
    """Eigenvalues of a Hermitian operator with the sub-``EIG_CLAMP`` tail zeroed."""
    evals = np.linalg.eigvalsh(hermitize(rho))
    evals = evals.copy()
    evals[evals < EIG_CLAMP] = 0.0
    return evals


def von_neumann_entropy(rho) -> float:
    """-tr(rho ln rho) in nats, with eigenvalues below 1e-12 clamped to zero."""
    evals = clamped_eigenvalues(rho)
    nz = evals[evals > 0.0]
    return float(-np.sum(nz * np.log(nz)))


def shannon_entropy(p) -> float:
    """-sum p ln p in nats over the entries of a probability vector."""
    v = np.asarray(p, dtype=float)
    nz = v[v > EIG_CLAMP]
    return float(-np.sum(nz * np.log(nz)))


def mutual_information(joint, dims, cut) -> float:
    """S(X) + S(Y) - S(XY) across the bipartition ``cut`` | complement.

    ``cut`` lists the subsystem indices of the X side.
    """
    dims = [int(d) for d in dims]
    cut = sorted(int(c) for c in cut)
    rest = sorted(set(range(len(dims))) - set(cut))
    if not cut or not rest:
        raise QmathError("cut must be a proper nonempty bipartition")
    mat = as_matrix(joint)
    s_x = von_neumann_entropy(_partial_trace_matrix(mat, dims, cut))
    s_y = von_neumann_entropy(_partial_trace_matrix(mat, dims, rest))
    s_xy = von_neumann_entropy(mat)
    return s_x + s_y - s_xy


def random_unitary(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Haar-distributed unitary via QR with the phase convention fixed."""
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(g)
    phases = np.diagonal(r) / np.abs(np.diagonal(r))
    return q * phases


def random_density(rng: np.random.Generator, dim: int, rank: int | None = None) -> DensityOperator:
    """Random mixed state from a Wishart-like construction."""
    if rank is None:
        rank = dim
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    m = g @ dag(g)
    return DensityOperator(m / np.trace(m).real)


def random_pure(rng: np.random.Generator, dim: int) -> DensityOperator:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return DensityOperator.pure(v)
