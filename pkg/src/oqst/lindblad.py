"""Markovian propagation between control operations, with heat/work integrals.

A :class:`ThermalGenerator` bundles a Hamiltonian, a set of jump dissipators
and an inverse temperature.  Propagation is available either as the exact
superoperator exponential or as the first-order map ``rho + L rho * dt``.

Unit conventions are the caller's: rates carry 1/time, the Hamiltonian
carries the energy unit used for all reported work and heat, and ``beta``
is expressed in the inverse of that energy unit so that entropies stay in
nats.  The cavity factory uses single-photon energy quanta as the energy
unit and seconds as time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import constants
from scipy.linalg import expm

from .qmath import DensityOperator, dag, hermitize

# First-order steps may leak positivity at this scale before it is a bug.
FIRST_ORDER_LEAK = 1e-9


class LindbladError(ValueError):
    """Raised for invalid generators, protocols or propagation requests."""


@dataclass(frozen=True)
class ThermalGenerator:
    """Lindblad generator with jump operators, rates and temperature metadata.

    ``hamiltonian`` enters both the coherent term and the default energy
    bookkeeping; ``beta`` is the inverse temperature in the Hamiltonian's
    energy unit.
    """

    dim: int
    hamiltonian: np.ndarray
    dissipators: tuple  # ((jump operator, rate >= 0), ...)
    beta: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        h = np.array(self.hamiltonian, dtype=complex)
        if h.shape != (self.dim, self.dim):
            raise LindbladError("hamiltonian shape does not match dim")
        if np.max(np.abs(h - dag(h))) > 1e-10:
            raise LindbladError("hamiltonian is not Hermitian within 1e-10")
        ops = []
        for op, rate in self.dissipators:
            if rate < 0:
                raise LindbladError("dissipator rates must be nonnegative")
            m = np.array(op, dtype=complex)
            if m.shape != (self.dim, self.dim):
                raise LindbladError("jump operator shape does not match dim")
            m.setflags(write=False)
            ops.append((m, float(rate)))
        h.setflags(write=False)
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "dissipators", tuple(ops))

    def apply(self, mat: np.ndarray) -> np.ndarray:
        """Generator action L(rho) on a matrix."""
        h = self.hamiltonian
        out = -1j * (h @ mat - mat @ h)
        for op, rate in self.dissipators:
            od = dag(op)
            anti = od @ op
            out += rate * (op @ mat @ od - 0.5 * (anti @ mat + mat @ anti))
        return out

    def liouvillian_matrix(self) -> np.ndarray:
        """Superoperator matrix acting on row-major vectorized states."""
        if "liouvillian" not in self._cache:
            d = self.dim
            eye = np.eye(d)
            h = self.hamiltonian
            lm = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
            for op, rate in self.dissipators:
                anti = dag(op) @ op
                lm += rate * (
                    np.kron(op, np.conj(op))
                    - 0.5 * (np.kron(anti, eye) + np.kron(eye, anti.T))
                )
            self._cache["liouvillian"] = lm
        return self._cache["liouvillian"]

    def propagator(self, dt: float) -> np.ndarray:
        """exp(L dt) as a superoperator matrix (cached per dt)."""
        key = ("prop", float(dt))
        if key not in self._cache:
            self._cache[key] = expm(self.liouvillian_matrix() * dt)
        return self._cache[key]


def n_thermal(omega: float, temperature: float) -> float:
    """Bose-Einstein occupation 1/(exp(hbar omega / kB T) - 1)."""
    if temperature <= 0:
        raise LindbladError("temperature must be positive")
    x = constants.hbar * omega / (constants.k * temperature)
    return 1.0 / np.expm1(x)


def thermal_cavity_generator(
    omega_c: float, temperature: float, lifetime_tc: float, cutoff: int
) -> ThermalGenerator:
    """Damped cavity mode on a truncated number basis, in a rotating frame.

    Photon loss at rate ``(1 + n_th)/T_c`` and gain at ``n_th/T_c``.  The
    Hamiltonian is the number operator in single-photon energy units; it
    commutes with every state these scenarios reach, so it only sets the
    energy bookkeeping.  ``beta`` comes out dimensionless as
    ``ln(1 + 1/n_th)``.
    """
    if temperature <= 0 or lifetime_tc <= 0:
        raise LindbladError("temperature and lifetime must be positive")
    if cutoff < 1:
        raise LindbladError("cutoff must be at least 1")
    dim = cutoff + 1
    nth = n_thermal(omega_c, temperature)
    lower = np.diag(np.sqrt(np.arange(1, dim)), k=1).astype(complex)
    number = np.diag(np.arange(dim, dtype=float)).astype(complex)
    return ThermalGenerator(
        dim=dim,
        hamiltonian=number,
        dissipators=(
            (lower, (1.0 + nth) / lifetime_tc),
            (dag(lower), nth / lifetime_tc),
        ),
        beta=float(np.log1p(1.0 / nth)),
    )


def gibbs_state(hamiltonian, beta: float) -> DensityOperator:
    """exp(-beta H)/Z for a Hermitian H."""
    h = hermitize(hamiltonian)
    evals, vecs = np.linalg.eigh(h)
    w = np.exp(-beta * (evals - evals.min()))
    w = w / w.sum()
    return DensityOperator((vecs * w) @ dag(vecs))


def _clamp_negative(mat: np.ndarray) -> np.ndarray:
    """Zero out small negative weight, erroring beyond the tolerated leak."""
    target_trace = np.trace(mat).real
    offdiag = mat - np.diag(mat.diagonal())
    if np.max(np.abs(offdiag)) < 1e-14:
        diag = mat.diagonal().real.copy()
        low = diag.min()
        if low >= 0.0:
            return mat
        if low < -FIRST_ORDER_LEAK:
            raise LindbladError(f"first-order step lost positivity by {low:.3e}")
        diag[diag < 0.0] = 0.0
        diag *= target_trace / diag.sum()
        return np.diag(diag.astype(complex))
    evals, vecs = np.linalg.eigh(hermitize(mat))
    low = evals.min()
    if low >= 0.0:
        return mat
    if low < -FIRST_ORDER_LEAK:
        raise LindbladError(f"first-order step lost positivity by {low:.3e}")
    evals = np.clip(evals, 0.0, None)
    evals *= target_trace / evals.sum()
    return (vecs * evals) @ dag(vecs)


def _propagate_matrix(gen: ThermalGenerator, mat: np.ndarray, dt: float, method: str) -> np.ndarray:
    if dt < 0:
        raise LindbladError("dt must be nonnegative")
    if dt == 0.0:
        return mat
    if method == "exact":
        vec = gen.propagator(dt) @ mat.reshape(-1)
        return hermitize(vec.reshape(gen.dim, gen.dim))
    if method == "first_order":
        out = mat + dt * gen.apply(mat)
        return _clamp_negative(hermitize(out))
    raise LindbladError(f"unknown propagation method {method!r}")


def propagate(
    gen: ThermalGenerator, rho: DensityOperator, dt: float, method: str = "exact"
) -> DensityOperator:
    """Evolve a state for ``dt`` under the generator; trace is preserved."""
    if rho.dim != gen.dim:
        raise LindbladError("state dimension does not match generator")
    return DensityOperator(_propagate_matrix(gen, rho.matrix, dt, method))


@dataclass(frozen=True)
class Protocol:
    """Hamiltonian schedule: piecewise constant with sudden switches.

    ``hamiltonian(t)`` is right-continuous at switch times and
    ``hamiltonian_before(t)`` gives the left limit, which is what the work
    bookkeeping of a switch at a segment boundary needs.  A callable
    schedule covers continuously driven cases.
    """

    switch_times: tuple = ()
    hamiltonians: tuple = ()
    function: Callable | None = None

    def __post_init__(self):
        if self.function is not None:
            return
        times = tuple(float(t) for t in self.switch_times)
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise LindbladError("switch times must be strictly increasing")
        hams = tuple(np.array(h, dtype=complex) for h in self.hamiltonians)
        if len(hams) != len(times) + 1:
            raise LindbladError("need one more Hamiltonian than switch times")
        for h in hams:
            if np.max(np.abs(h - dag(h))) > 1e-10:
                raise LindbladError("protocol Hamiltonians must be Hermitian")
            h.setflags(write=False)
        object.__setattr__(self, "switch_times", times)
        object.__setattr__(self, "hamiltonians", hams)

    @classmethod
    def constant(cls, hamiltonian) -> "Protocol":
        return cls(switch_times=(), hamiltonians=(np.asarray(hamiltonian),))

    @classmethod
    def sudden(cls, hamiltonians, switch_times) -> "Protocol":
        return cls(switch_times=tuple(switch_times), hamiltonians=tuple(hamiltonians))

    def hamiltonian(self, t: float) -> np.ndarray:
        if self.function is not None:
            return np.asarray(self.function(t), dtype=complex)
        idx = int(np.searchsorted(self.switch_times, t, side="right"))
        return self.hamiltonians[idx]

    def hamiltonian_before(self, t: float) -> np.ndarray:
        if self.function is not None:
            return np.asarray(self.function(t), dtype=complex)
        idx = int(np.searchsorted(self.switch_times, t, side="left"))
        return self.hamiltonians[idx]


def heat_work_segment(
    gen: ThermalGenerator,
    protocol: Protocol,
    rho_start: DensityOperator,
    t_start: float,
    t_end: float,
    substeps: int = 100,
    method: str = "exact",
) -> tuple[float, float, DensityOperator]:
    """Work and heat over a drift segment, left-endpoint Riemann convention.

    Work accumulates protocol switches against the current state; heat
    accumulates state changes against the current Hamiltonian, so that
    ``work + heat`` telescopes exactly to the segment's energy change.
    The generator drives the state; for protocols that alter the coherent
    dynamics mid-segment the generator must be built to match.
    """
    if t_end < t_start:
        raise LindbladError("t_end must not precede t_start")
    if substeps < 1:
        raise LindbladError("substeps must be positive")
    h_prev = protocol.hamiltonian_before(t_start)
    mat = rho_start.matrix
    taus = np.linspace(t_start, t_end, substeps + 1)
    work = 0.0
    heat = 0.0
    for k in range(1, substeps + 1):
        h_k = protocol.hamiltonian(taus[k - 1])
        if h_k is not h_prev:
            work += float(np.trace((h_k - h_prev) @ mat).real)
        nxt = _propagate_matrix(gen, mat, taus[k] - taus[k - 1], method)
        heat += float(np.trace(h_k @ (nxt - mat)).real)
        mat, h_prev = nxt, h_k
    return work, heat, DensityOperator(mat)
