"""Control energetics, stochastic entropy and entropy production checks."""

import math

import numpy as np
import pytest

from oqst import qmath
from oqst.channels import (
    apply_instrument,
    identity_instrument,
    projective_instrument,
    random_instrument,
    stinespring_dilate,
)
from oqst.qmath import DensityOperator, dag, mutual_information, von_neumann_entropy
from oqst.thermo import (
    StepLedger,
    ThermoError,
    average_control_entropy_production,
    check_measurement_entropy_lemma,
    control_energetics,
    entropy_production_step,
    stochastic_entropy,
)

SZ = np.diag([1.0, -1.0]).astype(complex)


class TestControlEnergetics:
    def test_projective_z_on_plus(self):
        # H = (w/2) sigma_z with w = 1
        rho = DensityOperator.pure([1, 1])
        instr = projective_instrument(np.eye(2))
        ce = control_energetics(instr, 0.5 * SZ, rho)
        assert ce.w_system == pytest.approx(0.0, abs=1e-12)
        assert ce.q_system[0] == pytest.approx(+0.5, abs=1e-12)
        assert ce.q_system[1] == pytest.approx(-0.5, abs=1e-12)
        assert ce.average_system_heat() == pytest.approx(0.0, abs=1e-12)

    def test_identity_instrument_all_zero(self):
        rho = DensityOperator.pure([1, 2j])
        ce = control_energetics(identity_instrument(2), 0.5 * SZ, rho)
        assert ce.w_system == pytest.approx(0.0, abs=1e-14)
        assert ce.q_system[0] == pytest.approx(0.0, abs=1e-14)
        assert ce.w_unit == 0.0

    def test_zero_average_heat_random(self):
        rng = np.random.default_rng(313)
        for _ in range(200):
            dim = int(rng.integers(2, 5))
            instr = random_instrument(rng, dim, int(rng.integers(2, 4)), int(rng.integers(1, 3)))
            rho = qmath.random_density(rng, dim)
            h = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
            h = 0.5 * (h + dag(h))
            ce = control_energetics(instr, h, rho)
            assert abs(ce.average_system_heat()) <= 1e-10

    def test_first_law_per_outcome(self):
        rng = np.random.default_rng(99)
        for _ in range(50):
            instr = random_instrument(rng, 3, 2, 2)
            rho = qmath.random_density(rng, 3)
            h = np.diag(rng.normal(size=3)).astype(complex)
            ce = control_energetics(instr, h, rho)
            e_pre = rho.expectation(h)
            for res in apply_instrument(instr, rho):
                if res.state is None:
                    continue
                de = res.state.expectation(h) - e_pre
                assert de == pytest.approx(ce.w_system + ce.q_system[res.label], abs=1e-10)

    def test_unit_energetics_commuting_projectors(self):
        # diagonal unit Hamiltonian commutes with the readout, so the
        # average unit heat vanishes and the unit first law closes
        rng = np.random.default_rng(55)
        instr = random_instrument(rng, 2, 2, 1)
        dil = stinespring_dilate(instr)
        h_unit = np.diag(np.arange(dil.unit_dim, dtype=float)).astype(complex)
        rho = qmath.random_density(rng, 2)
        ce = control_energetics(instr, 0.5 * SZ, rho, h_unit=h_unit, dilation=dil)
        avg_q_unit = sum(
            ce.probabilities[i] * ce.q_unit[lab]
            for i, lab in enumerate(ce.labels) if lab in ce.q_unit
        )
        assert abs(avg_q_unit) <= 1e-10
        for lab in ce.labels:
            if lab in ce.de_unit:
                assert ce.de_unit[lab] == pytest.approx(ce.w_unit + ce.q_unit[lab], abs=1e-10)

    def test_incomplete_instrument_rejected(self):
        from oqst.channels import Instrument, OutcomeBranch
        broken = Instrument(2, (OutcomeBranch(0, (0.5 * np.eye(2),)),))
        with pytest.raises(ThermoError):
            control_energetics(broken, SZ, DensityOperator.maximally_mixed(2))


class TestStochasticEntropy:
    def test_initial_gibbs(self):
        rho = DensityOperator.from_diagonal([0.7, 0.3])
        s = stochastic_entropy(0.0, rho)
        assert s == pytest.approx(von_neumann_entropy(rho), abs=1e-14)

    def test_fair_measurement_pure_outcome(self):
        s = stochastic_entropy(math.log(2), DensityOperator.basis_state(2, 0))
        assert s == pytest.approx(math.log(2), abs=1e-12)

    def test_deterministic_outcomes_pure_state(self):
        s = stochastic_entropy(0.0, DensityOperator.basis_state(2, 1))
        assert s == pytest.approx(0.0, abs=1e-12)

    def test_negative_log_prob_rejected(self):
        with pytest.raises(ThermoError):
            stochastic_entropy(-0.5, DensityOperator.maximally_mixed(2))


def make_ledger(**overrides):
    base = dict(
        step=1, outcome=0, logp_increment=math.log(2),
        e_sys_start=0.0, e_sys_pre=0.0, e_sys_end=0.5, de_unit=0.0,
        w_seg=0.0, q_seg=0.0, w_ctrl_sys=0.0, w_ctrl_unit=0.0,
        q_ctrl_sys=0.5, q_ctrl_unit=0.0,
        s_start=0.0, s_pre=0.0, s_end=math.log(2),
    )
    base.update(overrides)
    return StepLedger(**base)


class TestEntropyProductionStep:
    def test_balanced_sensor_outcome_gives_log2(self):
        ledger = make_ledger(q_ctrl_sys=0.0, e_sys_end=0.0)
        done = entropy_production_step(ledger, beta=3.0)
        assert done.sigma_ctrl == pytest.approx(math.log(2), abs=1e-12)
        assert done.sigma_seg == 0.0

    def test_thermal_state_no_control(self):
        ledger = make_ledger(
            logp_increment=0.0, q_ctrl_sys=0.0, e_sys_end=0.0, s_end=0.0,
        )
        done = entropy_production_step(ledger, beta=1.0)
        assert done.sigma_seg == pytest.approx(0.0, abs=1e-12)
        assert done.sigma_ctrl == pytest.approx(0.0, abs=1e-12)

    def test_first_law_violation_raises(self):
        ledger = make_ledger(e_sys_end=1.0)  # de != w + q
        with pytest.raises(ThermoError):
            entropy_production_step(ledger, beta=1.0)

    def test_segment_second_law_violation_raises(self):
        ledger = make_ledger(s_pre=-1.0, s_start=0.0, q_seg=0.0, q_ctrl_sys=0.0,
                             e_sys_end=0.0, s_end=-1.0 + math.log(2))
        with pytest.raises(ThermoError):
            entropy_production_step(ledger, beta=1.0)


def random_sqrt_family(rng, dim, n_ops):
    """Positive operators whose squares sum to the identity."""
    blocks = []
    for _ in range(n_ops):
        g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        blocks.append(g @ dag(g) + 1e-3 * np.eye(dim))
    total = sum(blocks)
    evals, vecs = np.linalg.eigh(total)
    inv_sqrt = (vecs / np.sqrt(evals)) @ dag(vecs)
    family = []
    for b in blocks:
        m = inv_sqrt @ b @ inv_sqrt
        evals_m, vecs_m = np.linalg.eigh(0.5 * (m + dag(m)))
        family.append((vecs_m * np.sqrt(np.clip(evals_m, 0, None))) @ dag(vecs_m))
    return family


class TestMeasurementEntropyLemma:
    def test_maximally_mixed_z_projectors_equality(self):
        report = check_measurement_entropy_lemma(
            DensityOperator.maximally_mixed(2), [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]
        )
        assert report.passed
        assert report.lhs == pytest.approx(math.log(2), abs=1e-12)
        assert report.rhs == pytest.approx(math.log(2), abs=1e-12)

    def test_pure_state_own_basis(self):
        report = check_measurement_entropy_lemma(
            DensityOperator.basis_state(2, 0), [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]
        )
        assert report.passed
        assert report.lhs == pytest.approx(0.0, abs=1e-12)
        assert report.rhs == pytest.approx(0.0, abs=1e-12)

    def test_random_sqrt_families(self):
        rng = np.random.default_rng(2718)
        for _ in range(500):
            dim = int(rng.integers(2, 5))
            rho = qmath.random_density(rng, dim)
            family = random_sqrt_family(rng, dim, int(rng.integers(2, 5)))
            report = check_measurement_entropy_lemma(rho, family)
            assert report.margin >= -1e-9

    def test_invalid_operator_set_rejected(self):
        with pytest.raises(ThermoError):
            check_measurement_entropy_lemma(
                DensityOperator.maximally_mixed(2), [np.eye(2), np.eye(2)]
            )


class TestAverageControlEntropyProduction:
    def test_positive_random(self):
        rng = np.random.default_rng(161)
        for _ in range(200):
            dim = int(rng.integers(2, 5))
            instr = random_instrument(rng, dim, int(rng.integers(1, 4)), int(rng.integers(1, 3)))
            rho = qmath.random_density(rng, dim)
            assert average_control_entropy_production(instr, rho) >= -1e-10

    def test_single_outcome_unitary_invariance(self):
        # a no-readout operation produces exactly zero on average
        rng = np.random.default_rng(9)
        rho = qmath.random_density(rng, 3)
        u = qmath.random_unitary(rng, 3)
        from oqst.channels import unitary_kick
        assert abs(average_control_entropy_production(unitary_kick(u), rho)) <= 1e-10

    def test_projective_equals_shannon_minus_spectrum(self):
        rho = DensityOperator.pure([1, 1])
        instr = projective_instrument(np.eye(2))
        val = average_control_entropy_production(instr, rho)
        assert val == pytest.approx(math.log(2), abs=1e-10)


class TestDataProcessing:
    def test_mutual_information_never_increases_under_local_maps(self):
        rng = np.random.default_rng(1234)
        for _ in range(500):
            ds = int(rng.integers(2, 4))
            du = int(rng.integers(2, 4))
            joint = qmath.random_density(rng, ds * du)
            channel = random_instrument(rng, ds, 1, int(rng.integers(1, 4)))
            before = mutual_information(joint, [ds, du], [0])
            out = np.zeros_like(joint.matrix)
            for k in channel.outcomes[0].kraus:
                k_full = np.kron(k, np.eye(du))
                out += k_full @ joint.matrix @ dag(k_full)
            after = mutual_information(out, [ds, du], [0])
            assert before - after >= -1e-9
