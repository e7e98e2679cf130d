"""Per-trajectory thermodynamic bookkeeping for control operations.

The split of a control operation's energy cost into work and heat follows
from its ancilla-unitary-readout form: the unitary part is work (it does
not depend on the outcome), the readout part is heat (it does).  The
system-side parts reduce to expressions in the instrument alone; the unit
parts need the dilation and vanish for energetically neutral units, which
is the default everywhere.

Entropy production over one interval splits into a drift part, positive
segment by segment for a thermal generator, and a control part, positive
only on average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channels import (
    IMPOSSIBLE_BRANCH,
    Instrument,
    StinespringDilation,
    stinespring_dilate,
    verify_instrument,
)
from .qmath import (
    DensityOperator,
    as_matrix,
    dag,
    hermitize,
    shannon_entropy,
    tensor_product,
    von_neumann_entropy,
    _partial_trace_matrix,
)

FIRST_LAW_ATOL = 1e-10
AVG_HEAT_ATOL = 1e-10
SEGMENT_EP_FLOOR = -1e-6


class ThermoError(ValueError):
    """Raised when the bookkeeping identities fail beyond tolerance."""


@dataclass(frozen=True)
class ControlEnergetics:
    """Work and per-outcome heat of one control operation.

    ``q_system`` and ``q_unit`` map outcome labels to heat; impossible
    outcomes carry no entry.  ``de_unit`` is the unit's total energy change
    per outcome, computed independently of the work/heat split so the unit
    first law can be checked rather than assumed.
    """

    labels: tuple
    probabilities: np.ndarray
    w_system: float
    w_unit: float
    q_system: dict
    q_unit: dict
    de_unit: dict

    def average_system_heat(self) -> float:
        return float(
            sum(self.probabilities[i] * self.q_system[lab]
                for i, lab in enumerate(self.labels) if lab in self.q_system)
        )


def control_energetics(
    instr: Instrument,
    h_system,
    rho_pre: DensityOperator,
    h_unit=None,
    dilation: StinespringDilation | None = None,
) -> ControlEnergetics:
    """Energetics of applying ``instr`` to ``rho_pre`` under ``h_system``.

    With ``h_unit`` omitted the unit is energetically neutral and all unit
    entries are zero.  Otherwise the dilation supplies the unit marginals
    (it is computed on demand when not passed in).
    """
    if not verify_instrument(instr).passed:
        raise ThermoError("instrument fails completeness; refusing energetics")
    h = as_matrix(h_system)
    mat = rho_pre.matrix
    branch_raw = [b.apply_matrix(mat) for b in instr.outcomes]
    avg = sum(branch_raw)
    probs = np.array([np.trace(raw).real for raw in branch_raw])
    w_sys = float(np.trace(h @ (avg - mat)).real)
    e_avg = float(np.trace(h @ avg).real)
    q_sys: dict = {}
    for b, raw, p in zip(instr.outcomes, branch_raw, probs):
        if p < IMPOSSIBLE_BRANCH:
            continue
        q_sys[b.label] = float(np.trace(h @ raw).real / p - e_avg)
    avg_q = sum(probs[i] * q_sys[b.label]
                for i, b in enumerate(instr.outcomes) if b.label in q_sys)
    if abs(avg_q) > AVG_HEAT_ATOL:
        raise ThermoError(f"average control heat {avg_q:.3e} is not zero")

    w_unit = 0.0
    q_unit: dict = {}
    de_unit: dict = {}
    if h_unit is not None:
        hu = as_matrix(h_unit)
        if dilation is None:
            dilation = stinespring_dilate(instr)
        if hu.shape != (dilation.unit_dim, dilation.unit_dim):
            raise ThermoError("unit Hamiltonian shape does not match the dilation")
        dims = [dilation.system_dim, dilation.unit_dim]
        correlated = dilation.joint_after_unitary(rho_pre)
        u_after_v = _partial_trace_matrix(correlated, dims, [1])
        e_u0 = float(np.trace(hu @ dilation.unit_state.matrix).real)
        e_uv = float(np.trace(hu @ u_after_v).real)
        w_unit = e_uv - e_u0
        for label, p_u in dilation.projectors:
            p_full = tensor_product(np.eye(dilation.system_dim), p_u)
            raw = p_full @ correlated @ dag(p_full)
            p = float(np.trace(raw).real)
            if p < IMPOSSIBLE_BRANCH:
                continue
            u_r = _partial_trace_matrix(raw, dims, [1]) / p
            e_ur = float(np.trace(hu @ u_r).real)
            q_unit[label] = e_ur - e_uv
            de_unit[label] = e_ur - e_u0
    else:
        for b in instr.outcomes:
            if b.label in q_sys:
                q_unit[b.label] = 0.0
                de_unit[b.label] = 0.0
    return ControlEnergetics(
        labels=instr.labels,
        probabilities=probs,
        w_system=w_sys,
        w_unit=w_unit,
        q_system=q_sys,
        q_unit=q_unit,
        de_unit=de_unit,
    )


def stochastic_entropy(log_prob: float, state) -> float:
    """Record surprisal plus von Neumann entropy of the tracked state.

    On the efficient fast path the tracked state is the system alone; past
    units are pure and decorrelated there, so they contribute nothing.
    """
    if log_prob < -1e-12:
        raise ThermoError("accumulated -ln p cannot be negative")
    return float(log_prob) + von_neumann_entropy(as_matrix(state))


@dataclass(frozen=True, slots=True)
class StepLedger:
    """Thermodynamic bookkeeping for one interval (segment then control).

    Energies are in the protocol's energy unit, entropies in nats.  The
    stochastic entropies ``s_start``/``s_pre``/``s_end`` refer to just
    after the previous control, just before this one, and just after it.
    """

    step: int
    outcome: int
    logp_increment: float
    e_sys_start: float
    e_sys_pre: float
    e_sys_end: float
    de_unit: float
    w_seg: float
    q_seg: float
    w_ctrl_sys: float
    w_ctrl_unit: float
    q_ctrl_sys: float
    q_ctrl_unit: float
    s_start: float
    s_pre: float
    s_end: float
    sigma_ctrl: float = math.nan
    sigma_seg: float = math.nan

    @property
    def work_total(self) -> float:
        return self.w_seg + self.w_ctrl_sys + self.w_ctrl_unit

    @property
    def heat_total(self) -> float:
        return self.q_seg + self.q_ctrl_sys + self.q_ctrl_unit

    @property
    def first_law_residual(self) -> float:
        de = (self.e_sys_end - self.e_sys_start) + self.de_unit
        return de - self.work_total - self.heat_total


def entropy_production_step(ledger: StepLedger, beta: float) -> StepLedger:
    """Fill in the control and segment entropy productions and check them.

    The segment part must be nonnegative for a thermal generator; a value
    below ``SEGMENT_EP_FLOOR`` signals a propagation or bookkeeping bug.
    """
    sigma_ctrl = (ledger.s_end - ledger.s_pre) - beta * ledger.q_ctrl_sys
    sigma_seg = (ledger.s_pre - ledger.s_start) - beta * ledger.q_seg
    if sigma_seg < SEGMENT_EP_FLOOR:
        raise ThermoError(
            f"segment entropy production {sigma_seg:.3e} below {SEGMENT_EP_FLOOR}"
        )
    out = replace(ledger, sigma_ctrl=sigma_ctrl, sigma_seg=sigma_seg)
    if abs(out.first_law_residual) > FIRST_LAW_ATOL:
        raise ThermoError(
            f"first law residual {out.first_law_residual:.3e} beyond {FIRST_LAW_ATOL}"
        )
    return out


@dataclass(frozen=True)
class LemmaReport:
    lhs: float
    rhs: float
    margin: float
    passed: bool


def check_measurement_entropy_lemma(
    rho: DensityOperator, positive_ops, slack: float = 1e-9
) -> LemmaReport:
    """Check S(rho) <= S_Sh(p) + sum_n p_n S(rho_n) for a square-root readout.

    ``positive_ops`` must be positive operators whose squares sum to the
    identity; outcomes with negligible probability are skipped.
    """
    ops = [np.asarray(p, dtype=complex) for p in positive_ops]
    total = sum(dag(p) @ p for p in ops)
    if np.max(np.abs(total - np.eye(rho.dim))) > 1e-10:
        raise ThermoError("operators do not square-sum to the identity")
    probs = []
    cond_entropy = 0.0
    for p_op in ops:
        raw = p_op @ rho.matrix @ dag(p_op)
        p = float(np.trace(raw).real)
        probs.append(max(p, 0.0))
        if p > IMPOSSIBLE_BRANCH:
            cond_entropy += p * von_neumann_entropy(hermitize(raw) / p)
    lhs = von_neumann_entropy(rho)
    rhs = shannon_entropy(np.array(probs)) + cond_entropy
    margin = rhs - lhs
    return LemmaReport(lhs=lhs, rhs=rhs, margin=margin, passed=margin >= -slack)


def average_control_entropy_production(
    instr: Instrument,
    rho_pre: DensityOperator,
    dilation: StinespringDilation | None = None,
) -> float:
    """Outcome-averaged control entropy production via the dilated joint state.

    Equals ``S_Sh(p) + sum_r p(r) S(joint post) - S(joint pre)`` since the
    average system heat vanishes; valid for inefficient instruments too.
    """
    if dilation is None:
        dilation = stinespring_dilate(instr)
    correlated = dilation.joint_after_unitary(rho_pre)
    probs = []
    post_term = 0.0
    for label, p_u in dilation.projectors:
        p_full = tensor_product(np.eye(dilation.system_dim), p_u)
        raw = p_full @ correlated @ dag(p_full)
        p = float(np.trace(raw).real)
        probs.append(max(p, 0.0))
        if p > IMPOSSIBLE_BRANCH:
            post_term += p * von_neumann_entropy(hermitize(raw) / p)
    s_pre = von_neumann_entropy(rho_pre)  # unit starts pure and uncorrelated
    return shannon_entropy(np.array(probs)) + post_term - s_pre
