"""Photon-number stabilization of a damped cavity by delayed atomic feedback.

A stream of two-level atoms interrogates the cavity once per step: sensor
atoms perform a dispersive (number-preserving) readout, emitter and
absorber atoms add or remove a photon via a resonant pulse.  Detection
lags by ``delay_d`` atoms, so the controller steers on a stale state
estimate and holds off for another ``delay_d`` steps after each feedback
atom.

Everything the controller sees is diagonal in the number basis, so the
production path evolves bare population vectors; the full density-matrix
path through the generic engine exists to validate it and must reproduce
the same outcome sequences from the same seeds.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from ..channels import Instrument, OutcomeBranch
from ..lindblad import ThermalGenerator, n_thermal, thermal_cavity_generator
from ..qmath import DensityOperator, shannon_entropy
from ..thermo import StepLedger, entropy_production_step
from ..trajectory import (
    ControlSchedule,
    FeedbackPolicy,
    StepPlan,
    TrajectoryRecord,
    choose_branch,
    derive_stream_seed,
    sample_trajectory,
    stream_rng,
)

ATOM_KINDS = ("sensor", "emitter", "absorber")
FEEDBACK_KINDS = ("emitter", "absorber")
TRUNCATION_LEAK = 1e-6
# Ramsey preparation puts sensor atoms in an equal superposition (half a
# quantum), emitters are prepared excited, absorbers stay in the ground
# state; informational only, never part of the efficiency.
ATOM_PREP_WORK = {"sensor": 0.5, "emitter": 1.0, "absorber": 0.0}


class TruncationLeakError(RuntimeError):
    """Conditional population reached the number-basis cutoff."""


@dataclass(frozen=True)
class CavityConfig:
    """Physical and run parameters for the stabilization experiment."""

    omega_c: float = 2 * math.pi * 51.1e9
    temperature: float = 0.8
    lifetime_tc: float = 65e-3
    step_ta: float = 82e-6
    target_nt: int = 2
    delay_d: int = 5
    cutoff: int = 8
    steps: int = 200
    trajectories: int = 2000
    seed: int = 0
    exact_propagator: bool = False
    dense: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.target_nt < 1:
            raise ValueError("target photon number must be positive")
        if self.cutoff < self.target_nt + 4:
            raise ValueError("cutoff must be at least target_nt + 4")
        if not (self.step_ta > 0 and self.lifetime_tc > 0 and self.temperature > 0):
            raise ValueError("time and temperature parameters must be positive")
        if self.step_ta > self.lifetime_tc / 10:
            raise ValueError("step_ta must be far below the cavity lifetime")
        if self.delay_d < 0 or self.steps < 1 or self.trajectories < 1:
            raise ValueError("delay, steps and trajectories must be nonnegative/positive")

    @property
    def dim(self) -> int:
        return self.cutoff + 1

    @property
    def method(self) -> str:
        return "exact" if self.exact_propagator else "first_order"


def sensor_weights(target_nt: int, cutoff: int) -> np.ndarray:
    """pi_s(r|n): chance that a dispersive atom exits in state r given n photons."""
    n = np.arange(cutoff + 1)
    out = np.empty((2, cutoff + 1))
    for r in (0, 1):
        out[r] = 0.5 * (1 + np.cos(np.pi / 4 * (n - target_nt) + np.pi / 2 * (2 * r - 1)))
    return out


def atom_transfer(kind: str, target_nt: int, cutoff: int) -> np.ndarray:
    """Per-outcome population transfer matrices, shape (2, dim, dim).

    ``M[r][n, n']`` is the joint probability of outcome ``r`` and the
    cavity moving ``n' -> n``; columns of ``M[0] + M[1]`` sum to one.  The
    emission branch at the cutoff level is folded into the no-transition
    branch, which is harmless below the truncation-leak threshold.
    """
    if cutoff < target_nt + 4:
        raise ValueError("cutoff must be at least target_nt + 4")
    dim = cutoff + 1
    out = np.zeros((2, dim, dim))
    if kind == "sensor":
        pi = sensor_weights(target_nt, cutoff)
        for r in (0, 1):
            np.fill_diagonal(out[r], pi[r])
    elif kind == "emitter":
        theta = np.pi / 2 * np.sqrt(np.arange(1, dim + 1)) / math.sqrt(target_nt)
        for src in range(dim):
            if src < cutoff:
                out[0][src + 1, src] = math.sin(theta[src]) ** 2
                out[1][src, src] = math.cos(theta[src]) ** 2
            else:
                out[1][src, src] = 1.0
    elif kind == "absorber":
        theta = np.pi / 2 * np.sqrt(np.arange(dim)) / math.sqrt(target_nt + 1)
        for src in range(dim):
            out[0][src, src] = math.cos(theta[src]) ** 2
            if src > 0:
                out[1][src - 1, src] = math.sin(theta[src]) ** 2
    else:
        raise ValueError(f"unknown atom kind {kind!r}")
    return out


def atom_instrument(kind: str, target_nt: int, cutoff: int) -> Instrument:
    """The same transfer in operator form: one Kraus operator per outcome."""
    transfer = atom_transfer(kind, target_nt, cutoff)
    branches = tuple(
        OutcomeBranch(label=r, kraus=(np.sqrt(transfer[r]).astype(complex),))
        for r in (0, 1)
    )
    return Instrument(dim=cutoff + 1, outcomes=branches)


def feedback_decision(estimate, target_nt: int) -> str:
    """Steering rule on a population estimate; ties keep measuring."""
    p = np.asarray(estimate, dtype=float)
    p_target = p[target_nt]
    if p[target_nt + 1 :].sum() > p_target:
        return "absorber"
    if p[:target_nt].sum() > p_target:
        return "emitter"
    return "sensor"


def _populations(state) -> np.ndarray:
    m = np.asarray(state)
    return np.real(np.diagonal(m)) if m.ndim == 2 else np.real(m)


class CavityPolicy(FeedbackPolicy):
    """Delayed-estimate feedback with a post-feedback hold-off window."""

    def __init__(self, target_nt: int, delay: int, cooldown: int | None = None,
                 instruments: dict | None = None):
        self.instruments = instruments
        self.target_nt = target_nt
        self.delay = delay
        self.cooldown = delay if cooldown is None else cooldown

    def decide(self, step: int, estimate, kinds) -> str:
        # hold off iff a feedback atom went out within the last `cooldown` steps
        if self.cooldown:
            lo = max(0, step - self.cooldown - 1)
            for kind in kinds[lo : step - 1]:
                if kind in FEEDBACK_KINDS:
                    return "sensor"
        return feedback_decision(_populations(estimate), self.target_nt)

    def plan(self, step, estimate, outcomes, kinds):
        if self.instruments is None:
            raise RuntimeError("policy was built without instrument operators")
        kind = self.decide(step, estimate, kinds)
        return StepPlan(instrument=self.instruments[kind], kind=kind)


def classical_rate_matrix(gen: ThermalGenerator) -> np.ndarray:
    """Population-sector generator: columns sum to zero."""
    dim = gen.dim
    rates = np.zeros((dim, dim))
    for op, rate in gen.dissipators:
        rates += rate * np.abs(op) ** 2
        rates -= rate * np.diag(np.diagonal(np.conj(op.T) @ op).real)
    return rates


def thermal_populations(beta: float, dim: int) -> np.ndarray:
    w = np.exp(-beta * np.arange(dim))
    return w / w.sum()


class _DiagonalContext:
    """Precomputed tables for the population-vector sampler."""

    def __init__(self, config: CavityConfig):
        self.config = config
        gen = thermal_cavity_generator(
            config.omega_c, config.temperature, config.lifetime_tc, config.cutoff
        )
        self.beta = gen.beta
        self.n_vec = np.arange(config.dim, dtype=float)
        self.nsq_vec = self.n_vec**2
        rates = classical_rate_matrix(gen)
        if config.exact_propagator:
            self.step_map = expm(rates * config.step_ta)
        else:
            self.step_map = np.eye(config.dim) + rates * config.step_ta
        self.transfer = {
            kind: atom_transfer(kind, config.target_nt, config.cutoff)
            for kind in ATOM_KINDS
        }
        self.avg_transfer = {k: m[0] + m[1] for k, m in self.transfer.items()}
        self.p0 = thermal_populations(self.beta, config.dim)
        self.times = tuple((i + 1) * config.step_ta for i in range(config.steps))
        self.policy = CavityPolicy(target_nt=config.target_nt, delay=config.delay_d)


def _run_diagonal_trajectory(ctx: _DiagonalContext, seed: int) -> TrajectoryRecord:
    cfg = ctx.config
    rng = stream_rng(seed)
    n_vec, step_map, beta = ctx.n_vec, ctx.step_map, ctx.beta
    cutoff = cfg.cutoff
    p = ctx.p0
    log_prob = 0.0
    s_prev = shannon_entropy(p)
    estimates = [p]
    outcomes: list = []
    kinds: list = []
    ledgers: list = []
    states: list = []
    for step in range(1, cfg.steps + 1):
        e_start = float(n_vec @ p)
        s_start = s_prev
        p_mid = step_map @ p
        e_pre = float(n_vec @ p_mid)
        q_seg = e_pre - e_start
        s_pre = log_prob + shannon_entropy(p_mid)
        est = estimates[max(0, step - cfg.delay_d)] if cfg.delay_d > 0 else p_mid
        kind = ctx.policy.decide(step, est, kinds)
        weights = ctx.transfer[kind] @ p_mid  # (2, dim)
        probs = weights.sum(axis=1)
        e_avg_post = float(n_vec @ (weights[0] + weights[1]))
        w_ctrl = e_avg_post - e_pre
        label = choose_branch(probs, rng.random())
        prob = float(probs[label])
        post = weights[label] / prob
        if post[cutoff] > TRUNCATION_LEAK:
            raise TruncationLeakError(
                f"population {post[cutoff]:.2e} at the cutoff level on step {step}"
            )
        e_end = float(n_vec @ post)
        q_ctrl = e_end - e_avg_post
        logp_inc = float(-np.log(prob)) + 0.0
        log_prob += logp_inc
        s_end = log_prob + shannon_entropy(post)
        ledger = StepLedger(
            step=step,
            outcome=int(label),
            logp_increment=logp_inc,
            e_sys_start=e_start,
            e_sys_pre=e_pre,
            e_sys_end=e_end,
            de_unit=0.0,
            w_seg=0.0,
            q_seg=q_seg,
            w_ctrl_sys=w_ctrl,
            w_ctrl_unit=0.0,
            q_ctrl_sys=q_ctrl,
            q_ctrl_unit=0.0,
            s_start=s_start,
            s_pre=s_pre,
            s_end=s_end,
        )
        ledgers.append(entropy_production_step(ledger, beta))
        outcomes.append(int(label))
        kinds.append(kind)
        estimates.append(post)
        states.append(post)
        p = post
        s_prev = s_end
    return TrajectoryRecord(
        outcomes=tuple(outcomes),
        kinds=tuple(kinds),
        log_prob=log_prob,
        ledgers=tuple(ledgers),
        states=tuple(states),
        final_state=p,
        times=ctx.times,
    )


def _diagonal_chunk(config: CavityConfig, indices) -> list:
    ctx = _DiagonalContext(config)
    return [
        _run_diagonal_trajectory(ctx, derive_stream_seed(config.seed, i)) for i in indices
    ]


def _dense_chunk(config: CavityConfig, indices) -> list:
    gen = thermal_cavity_generator(
        config.omega_c, config.temperature, config.lifetime_tc, config.cutoff
    )
    instruments = {
        kind: atom_instrument(kind, config.target_nt, config.cutoff) for kind in ATOM_KINDS
    }
    policy = CavityPolicy(config.target_nt, config.delay_d, instruments=instruments)
    schedule = ControlSchedule.uniform(config.steps, config.step_ta)
    rho0 = DensityOperator.from_diagonal(thermal_populations(gen.beta, config.dim))
    out = []
    for i in indices:
        rec = sample_trajectory(
            gen, schedule, policy, rho0,
            seed=derive_stream_seed(config.seed, i),
            method=config.method,
        )
        for state in rec.states:
            if np.real(np.diagonal(state))[config.cutoff] > TRUNCATION_LEAK:
                raise TruncationLeakError("population reached the cutoff level")
        out.append(rec)
    return out


@dataclass(frozen=True)
class CavityReport:
    """Per-step ensemble view of a stabilization run plus the raw records."""

    config: CavityConfig
    records: tuple
    times: np.ndarray
    populations: np.ndarray       # (steps, dim) ensemble-average conditional populations
    mean_n_avg: np.ndarray
    var_n_avg: np.ndarray
    var_below_fraction: np.ndarray  # fraction of trajectories with var(n) < 0.1
    sigma_ctrl_avg: np.ndarray
    sigma_ctrl_se: np.ndarray
    sigma_seg_avg: np.ndarray
    sigma_seg_se: np.ndarray
    w_ctrl_avg: np.ndarray
    q_ctrl_avg: np.ndarray
    q_seg_avg: np.ndarray
    logp_avg: np.ndarray
    entropy_avg: np.ndarray
    energy_avg: np.ndarray
    atom_prep_avg: np.ndarray
    efficiency: np.ndarray
    beta: float
    law_checks: dict
    totals: dict

    def population(self, n: int) -> np.ndarray:
        return self.populations[:, n]


def _efficiency_curve(
    energy_avg, entropy_avg, w_ctrl_avg, logp_avg, beta, e0, s0
) -> np.ndarray:
    """Free-energy gain over resources spent, step by step.

    Resources are the integrated work put into the cavity plus the
    temperature-weighted information accumulated in the record; the gain
    is the nonequilibrium free energy relative to the initial Gibbs state.
    The no-resources-yet corner reports zero.
    """
    delta_f = (energy_avg - entropy_avg / beta) - (e0 - s0 / beta)
    spent = np.cumsum(w_ctrl_avg) + np.cumsum(logp_avg) / beta
    eta = np.zeros_like(delta_f)
    ok = spent > 1e-12
    eta[ok] = delta_f[ok] / spent[ok]
    return eta


def cavity_efficiency(report: "CavityReport", config: CavityConfig | None = None) -> np.ndarray:
    """Recompute the per-step efficiency curve from an ensemble report."""
    cfg = report.config if config is None else config
    n_vec = np.arange(cfg.dim, dtype=float)
    p0 = thermal_populations(report.beta, cfg.dim)
    return _efficiency_curve(
        report.energy_avg, report.entropy_avg, report.w_ctrl_avg, report.logp_avg,
        report.beta, float(n_vec @ p0), shannon_entropy(p0),
    )


def _stack_column(records, name) -> np.ndarray:
    return np.array([[getattr(l, name) for l in r.ledgers] for r in records])


def _build_report(config: CavityConfig, records: list) -> CavityReport:
    n_traj = len(records)
    pops = np.array([[_populations(s) for s in r.states] for r in records])  # (N, steps, dim)
    if pops[:, :, config.cutoff].max() > TRUNCATION_LEAK:
        raise TruncationLeakError("population reached the cutoff level")
    n_vec = np.arange(config.dim, dtype=float)
    mean_n = pops @ n_vec
    var_n = pops @ (n_vec**2) - mean_n**2
    sigma_ctrl = _stack_column(records, "sigma_ctrl")
    sigma_seg = _stack_column(records, "sigma_seg")
    w_ctrl = _stack_column(records, "w_ctrl_sys")
    q_ctrl = _stack_column(records, "q_ctrl_sys")
    q_seg = _stack_column(records, "q_seg")
    logp = _stack_column(records, "logp_increment")
    s_end = _stack_column(records, "s_end")
    e_end = _stack_column(records, "e_sys_end")
    e_start = _stack_column(records, "e_sys_start")
    w_seg = _stack_column(records, "w_seg")
    entropy = s_end - np.cumsum(logp, axis=1)
    residual = e_end - e_start - (w_seg + w_ctrl + q_seg + q_ctrl)
    prep = np.array(
        [[ATOM_PREP_WORK[k] for k in r.kinds] for r in records], dtype=float
    )
    nth = n_thermal(config.omega_c, config.temperature)
    beta = float(np.log1p(1.0 / nth))
    p0 = thermal_populations(beta, config.dim)
    e0 = float(n_vec @ p0)
    s0 = shannon_entropy(p0)
    eff = _efficiency_curve(
        e_end.mean(axis=0), entropy.mean(axis=0), w_ctrl.mean(axis=0),
        logp.mean(axis=0), beta, e0, s0,
    )

    def se(data):
        if n_traj < 2:
            return np.zeros(data.shape[1])
        return data.std(axis=0, ddof=1) / math.sqrt(n_traj)

    law_checks = {
        "first_law_max_residual": float(np.abs(residual).max()),
        "sigma_seg_min": float(sigma_seg.min()),
        "sigma_ctrl_avg_min": float(sigma_ctrl.mean(axis=0).min()),
        "truncation_max": float(pops[:, :, config.cutoff].max()),
        "efficiency_max": float(eff.max()),
    }
    totals = {
        "work_cavity_total": float(w_ctrl.mean(axis=0).sum()),
        "information_total_nats": float(logp.mean(axis=0).sum()),
        "atom_prep_work_total": float(prep.mean(axis=0).sum()),
        "p_target_final": float(pops[:, -1, config.target_nt].mean()),
        "sensor_fraction": float(
            np.mean([[k == "sensor" for k in r.kinds] for r in records])
        ),
    }
    return CavityReport(
        config=config,
        records=tuple(records),
        times=np.asarray(records[0].times),
        populations=pops.mean(axis=0),
        mean_n_avg=mean_n.mean(axis=0),
        var_n_avg=var_n.mean(axis=0),
        var_below_fraction=(var_n < 0.1).mean(axis=0),
        sigma_ctrl_avg=sigma_ctrl.mean(axis=0),
        sigma_ctrl_se=se(sigma_ctrl),
        sigma_seg_avg=sigma_seg.mean(axis=0),
        sigma_seg_se=se(sigma_seg),
        w_ctrl_avg=w_ctrl.mean(axis=0),
        q_ctrl_avg=q_ctrl.mean(axis=0),
        q_seg_avg=q_seg.mean(axis=0),
        logp_avg=logp.mean(axis=0),
        entropy_avg=entropy.mean(axis=0),
        energy_avg=e_end.mean(axis=0),
        atom_prep_avg=prep.mean(axis=0),
        efficiency=eff,
        beta=beta,
        law_checks=law_checks,
        totals=totals,
    )


def run_cavity(config: CavityConfig) -> CavityReport:
    """Run the stabilization experiment and reduce it to an ensemble report."""
    chunk_fn = _dense_chunk if config.dense else _diagonal_chunk
    indices = list(range(config.trajectories))
    if config.workers <= 1 or config.trajectories < 4:
        records = chunk_fn(config, indices)
    else:
        workers = min(config.workers, config.trajectories)
        chunks = [indices[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(chunk_fn, [config] * workers, chunks))
        by_index: dict = {}
        for chunk, recs in zip(chunks, parts):
            for i, rec in zip(chunk, recs):
                by_index[i] = rec
        records = [by_index[i] for i in indices]
    return _build_report(config, records)
