"""Outcome-labeled quantum instruments and their ancilla-unitary-readout form.

An :class:`Instrument` is a family of completely positive maps, one per
outcome label, given in operator-sum (Kraus) form and summing to a trace
preserving map.  :func:`ancilla_dilation` rewrites any instrument as a
fresh ancilla ("unit") in a pure state, a joint unitary, and a projective
readout of the unit; that form is what fixes the work/heat split of a
control operation in the thermodynamics layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qmath import (
    DensityOperator,
    QmathError,
    as_matrix,
    dag,
    hermitize,
    tensor_product,
    _partial_trace_matrix,
)

COMPLETENESS_ATOL = 1e-10
DILATION_ATOL = 1e-9
# Branch probabilities below this are flagged impossible and carry no state.
IMPOSSIBLE_BRANCH = 1e-15


class ChannelError(ValueError):
    """Raised for structurally invalid instruments or dilations."""


@dataclass(frozen=True)
class OutcomeBranch:
    """One outcome's CP map as a nonempty tuple of Kraus operators."""

    label: int
    kraus: tuple

    def __post_init__(self):
        if not self.kraus:
            raise ChannelError(f"branch {self.label} has no Kraus operators")
        ops = tuple(np.array(k, dtype=complex) for k in self.kraus)
        d = ops[0].shape[0]
        for k in ops:
            if k.ndim != 2 or k.shape != (d, d):
                raise ChannelError("Kraus operators must be square and equally sized")
            k.setflags(write=False)
        object.__setattr__(self, "kraus", ops)

    def apply_matrix(self, mat: np.ndarray) -> np.ndarray:
        """Unnormalized branch action sum_a A_a mat A_a†."""
        out = np.zeros_like(mat)
        for k in self.kraus:
            out += k @ mat @ dag(k)
        return out


@dataclass(frozen=True)
class Instrument:
    """Outcome-labeled family of CP maps summing to a CPTP map.

    Construction checks shapes and label ordering only; completeness is the
    job of :func:`verify_instrument` so that deliberately broken instruments
    can still be built and reported on.
    """

    dim: int
    outcomes: tuple

    def __post_init__(self):
        branches = tuple(self.outcomes)
        if not branches:
            raise ChannelError("instrument needs at least one outcome branch")
        labels = [b.label for b in branches]
        if labels != sorted(labels) or len(set(labels)) != len(labels):
            raise ChannelError("outcome labels must be unique and ascending")
        for b in branches:
            if b.kraus[0].shape[0] != self.dim:
                raise ChannelError("branch dimension differs from instrument dim")
        object.__setattr__(self, "outcomes", branches)

    @property
    def labels(self) -> tuple:
        return tuple(b.label for b in self.outcomes)

    @property
    def kraus_count(self) -> int:
        return sum(len(b.kraus) for b in self.outcomes)

    @property
    def efficient(self) -> bool:
        """True when every branch has exactly one Kraus operator."""
        return all(len(b.kraus) == 1 for b in self.outcomes)

    def completeness_deviation(self) -> float:
        total = np.zeros((self.dim, self.dim), dtype=complex)
        for b in self.outcomes:
            for k in b.kraus:
                total += dag(k) @ k
        return float(np.max(np.abs(total - np.eye(self.dim))))

    def branch(self, label: int) -> OutcomeBranch:
        for b in self.outcomes:
            if b.label == label:
                return b
        raise KeyError(label)


@dataclass(frozen=True)
class VerificationReport:
    passed: bool
    max_deviation: float


def verify_instrument(instr: Instrument, atol: float = COMPLETENESS_ATOL) -> VerificationReport:
    """Check sum_{r,a} A_a†(r) A_a(r) == identity within ``atol``."""
    dev = instr.completeness_deviation()
    return VerificationReport(passed=dev <= atol, max_deviation=dev)


@dataclass(frozen=True)
class BranchResult:
    """One outcome of applying an instrument: label, probability, conditional state.

    ``state`` is None for impossible branches (probability below 1e-15).
    """

    label: int
    probability: float
    state: DensityOperator | None


def branch_probabilities(instr: Instrument, mat: np.ndarray) -> np.ndarray:
    """Branch probabilities in label order for a state given as a matrix."""
    return np.array(
        [np.trace(b.apply_matrix(mat)).real for b in instr.outcomes], dtype=float
    )


def apply_instrument(instr: Instrument, rho: DensityOperator) -> list[BranchResult]:
    """Apply every branch, returning (label, probability, normalized state) triples.

    Probabilities sum to one for a complete instrument; branches with
    probability below ``IMPOSSIBLE_BRANCH`` carry no state.
    """
    if instr.dim != rho.dim:
        raise ChannelError(f"instrument dim {instr.dim} != state dim {rho.dim}")
    results = []
    for b in instr.outcomes:
        raw = b.apply_matrix(rho.matrix)
        p = float(np.trace(raw).real)
        if p < IMPOSSIBLE_BRANCH:
            results.append(BranchResult(b.label, max(p, 0.0), None))
        else:
            results.append(BranchResult(b.label, p, DensityOperator(hermitize(raw) / p)))
    return results


def average_map(instr: Instrument, rho: DensityOperator) -> DensityOperator:
    """The outcome-averaged CPTP map applied to ``rho``."""
    if instr.dim != rho.dim:
        raise ChannelError(f"instrument dim {instr.dim} != state dim {rho.dim}")
    out = np.zeros((instr.dim, instr.dim), dtype=complex)
    for b in instr.outcomes:
        out += b.apply_matrix(rho.matrix)
    return DensityOperator(hermitize(out))


def projective_instrument(basis) -> Instrument:
    """Rank-1 projective instrument from an orthonormal basis (rows or list)."""
    vecs = [np.asarray(v, dtype=complex).ravel() for v in basis]
    dim = vecs[0].size
    gram = np.array([[np.vdot(a, b) for b in vecs] for a in vecs])
    if np.max(np.abs(gram - np.eye(len(vecs)))) > 1e-10:
        raise ChannelError("basis vectors are not orthonormal within 1e-10")
    branches = tuple(
        OutcomeBranch(label=i, kraus=(np.outer(v, np.conj(v)),))
        for i, v in enumerate(vecs)
    )
    return Instrument(dim=dim, outcomes=branches)


def dephasing_map(basis, rho: DensityOperator) -> DensityOperator:
    """Remove off-diagonal elements in the given orthonormal basis. Idempotent."""
    instr = projective_instrument(basis)
    return average_map(instr, rho)


@dataclass(frozen=True)
class StinespringDilation:
    """Unit + joint unitary + unit projectors realizing an instrument.

    Applying the joint unitary to (system ⊗ unit), measuring the unit with
    the projector of outcome ``r`` and tracing out the unit reproduces the
    branch map of ``r`` exactly.
    """

    system_dim: int
    unit_dim: int
    unit_state: DensityOperator
    joint_unitary: np.ndarray
    projectors: tuple  # ((label, matrix on the unit), ...) in label order

    def __post_init__(self):
        v = np.array(self.joint_unitary, dtype=complex)
        d = self.system_dim * self.unit_dim
        if v.shape != (d, d):
            raise ChannelError("joint unitary has the wrong shape")
        if np.max(np.abs(dag(v) @ v - np.eye(d))) > COMPLETENESS_ATOL:
            raise ChannelError("joint unitary is not unitary within 1e-10")
        total = np.zeros((self.unit_dim, self.unit_dim), dtype=complex)
        projs = []
        for label, p in self.projectors:
            p = np.array(p, dtype=complex)
            p.setflags(write=False)
            projs.append((int(label), p))
            total += p @ p
        if np.max(np.abs(total - np.eye(self.unit_dim))) > COMPLETENESS_ATOL:
            raise ChannelError("unit projectors do not square-sum to the identity")
        v.setflags(write=False)
        object.__setattr__(self, "joint_unitary", v)
        object.__setattr__(self, "projectors", tuple(projs))

    def joint_after_unitary(self, rho: DensityOperator) -> np.ndarray:
        """V (rho ⊗ unit_state) V† as a matrix on system ⊗ unit."""
        joint = tensor_product(rho.matrix, self.unit_state.matrix)
        return self.joint_unitary @ joint @ dag(self.joint_unitary)

    def apply(self, rho: DensityOperator) -> list[BranchResult]:
        """Reduced branch action; should match :func:`apply_instrument`."""
        correlated = self.joint_after_unitary(rho)
        dims = [self.system_dim, self.unit_dim]
        results = []
        for label, p_u in self.projectors:
            p_full = tensor_product(np.eye(self.system_dim), p_u)
            raw = p_full @ correlated @ dag(p_full)
            reduced = _partial_trace_matrix(raw, dims, [0])
            p = float(np.trace(reduced).real)
            if p < IMPOSSIBLE_BRANCH:
                results.append(BranchResult(label, max(p, 0.0), None))
            else:
                results.append(BranchResult(label, p, DensityOperator(hermitize(reduced) / p)))
        return results


def _complete_to_unitary(columns: np.ndarray, dim: int) -> np.ndarray:
    """Complete orthonormal columns to a full unitary via the SVD complement."""
    u_full, _, _ = np.linalg.svd(columns, full_matrices=True)
    complement = u_full[:, columns.shape[1] :]
    return np.column_stack([columns, complement])


def stinespring_dilate(instr: Instrument) -> StinespringDilation:
    """Minimal dilation: one unit level per Kraus operator (padded to >= 2).

    The unit starts in its first basis state; the joint unitary sends
    ``|psi>|0>`` to ``sum_(r,a) A_a(r)|psi> |index(r,a)>`` and is completed
    deterministically on the remaining columns.  The projector of outcome
    ``r`` is the sum of ``|index><index|`` over that branch, with any pad
    levels attached to the last outcome so the readout stays complete.
    """
    report = verify_instrument(instr)
    if not report.passed:
        raise ChannelError(
            f"cannot dilate: completeness deviation {report.max_deviation:.3e}"
        )
    d = instr.dim
    unit_dim = max(instr.kraus_count, 2)
    # Isometry columns: stacked Kraus blocks indexed by (outcome, kraus).
    iso = np.zeros((d * unit_dim, d), dtype=complex)
    index_of = {}
    idx = 0
    for b in instr.outcomes:
        for k in b.kraus:
            # Row block for unit level `idx`: component <s, idx|W|s'> = A[s, s'].
            for s in range(d):
                iso[s * unit_dim + idx, :] = k[s, :]
            index_of.setdefault(b.label, []).append(idx)
            idx += 1
    # Column of V for input |s, 0> is iso[:, s]; other inputs are free.
    v = np.zeros((d * unit_dim, d * unit_dim), dtype=complex)
    constrained = np.zeros((d * unit_dim, d), dtype=complex)
    for s in range(d):
        constrained[:, s] = iso[:, s]
    full = _complete_to_unitary(constrained, d * unit_dim)
    free_cols = iter(range(d, d * unit_dim))
    for s in range(d):
        for u in range(unit_dim):
            col = s * unit_dim + u
            if u == 0:
                v[:, col] = full[:, s]
            else:
                v[:, col] = full[:, next(free_cols)]
    projectors = []
    pad_levels = list(range(idx, unit_dim))
    for i, b in enumerate(instr.outcomes):
        levels = list(index_of[b.label])
        if i == len(instr.outcomes) - 1:
            levels += pad_levels
        p = np.zeros((unit_dim, unit_dim), dtype=complex)
        for lv in levels:
            p[lv, lv] = 1.0
        projectors.append((b.label, p))
    return StinespringDilation(
        system_dim=d,
        unit_dim=unit_dim,
        unit_state=DensityOperator.basis_state(unit_dim, 0),
        joint_unitary=v,
        projectors=tuple(projectors),
    )


def random_instrument(
    rng: np.random.Generator,
    dim: int,
    n_outcomes: int,
    kraus_per_outcome: int = 1,
) -> Instrument:
    """Random complete instrument from a Haar-ish isometry, split into branches."""
    total = n_outcomes * kraus_per_outcome
    g = rng.normal(size=(dim * total, dim)) + 1j * rng.normal(size=(dim * total, dim))
    q, _ = np.linalg.qr(g)
    blocks = [q[i * dim : (i + 1) * dim, :] for i in range(total)]
    branches = []
    for r in range(n_outcomes):
        ops = tuple(blocks[r * kraus_per_outcome + a] for a in range(kraus_per_outcome))
        branches.append(OutcomeBranch(label=r, kraus=ops))
    return Instrument(dim=dim, outcomes=tuple(branches))


def unitary_kick(u) -> Instrument:
    """Single-outcome instrument applying a unitary (a deterministic kick)."""
    m = np.array(u, dtype=complex)
    if np.max(np.abs(dag(m) @ m - np.eye(m.shape[0]))) > 1e-10:
        raise ChannelError("kick operator is not unitary within 1e-10")
    return Instrument(dim=m.shape[0], outcomes=(OutcomeBranch(label=0, kraus=(m,)),))


def identity_instrument(dim: int) -> Instrument:
    return unitary_kick(np.eye(dim, dtype=complex))
