"""Projective, two-point-measurement and classical-limit scenario checks."""

import numpy as np
import pytest

from oqst import qmath
from oqst.channels import ChannelError
from oqst.qmath import DensityOperator, dag
from oqst.scenarios import (
    RateModel,
    run_classical_limit,
    run_projective_example,
    run_tpm_jarzynski,
    tpm_process,
)
from oqst.scenarios.classical import ClassicalModelError
from oqst.trajectory import enumerate_tree

SZ = np.diag([1.0, -1.0]).astype(complex)
HADAMARD = np.array([[1, 1], [1, -1]]) / np.sqrt(2)


class TestProjectiveExample:
    def test_plus_state_z_basis(self):
        rep = run_projective_example(0.5 * SZ, DensityOperator.pure([1, 1]), np.eye(2))
        assert rep.w_ctrl == pytest.approx(0.0, abs=1e-12)
        assert rep.q_ctrl[0] == pytest.approx(+0.5, abs=1e-12)
        assert rep.q_ctrl[1] == pytest.approx(-0.5, abs=1e-12)
        assert rep.avg_heat == pytest.approx(0.0, abs=1e-12)
        assert rep.entropy_gain == pytest.approx(np.log(2), abs=1e-10)

    def test_eigenbasis_measurement(self):
        rng = np.random.default_rng(2)
        rho = qmath.random_density(rng, 3)
        evals, vecs = np.linalg.eigh(rho.matrix)
        h = np.diag(rng.normal(size=3)).astype(complex)
        rep = run_projective_example(h, rho, vecs.T)
        assert rep.w_ctrl == pytest.approx(0.0, abs=1e-10)
        assert rep.entropy_gain == pytest.approx(0.0, abs=1e-9)

    def test_maximally_mixed_any_basis(self):
        rng = np.random.default_rng(31)
        basis = qmath.random_unitary(rng, 4).T
        h = np.diag(rng.normal(size=4)).astype(complex)
        rep = run_projective_example(h, DensityOperator.maximally_mixed(4), basis)
        assert rep.w_ctrl == pytest.approx(0.0, abs=1e-10)
        assert np.allclose(rep.probabilities, 0.25, atol=1e-10)

    def test_closed_forms_match_channel_route(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            dim = int(rng.integers(2, 5))
            rho = qmath.random_density(rng, dim)
            basis = qmath.random_unitary(rng, dim).T
            h = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
            h = 0.5 * (h + dag(h))
            rep = run_projective_example(h, rho, basis)
            assert rep.w_ctrl == pytest.approx(rep.w_closed, abs=1e-10)
            for r, q in rep.q_closed.items():
                assert rep.q_ctrl[r] == pytest.approx(q, abs=1e-10)
            assert rep.entropy_gain >= -1e-9


class TestTpmJarzynski:
    def test_trivial_protocol(self):
        rep = run_tpm_jarzynski(SZ, SZ, np.eye(2), beta=0.7)
        assert rep.exp_average == pytest.approx(1.0, abs=1e-14)
        assert rep.z_ratio == pytest.approx(1.0, abs=1e-14)
        for leaf in rep.leaves:
            assert leaf.eps1 == pytest.approx(leaf.eps0, abs=1e-12)

    def test_qubit_hadamard_closed_form(self):
        rep = run_tpm_jarzynski(0.5 * SZ, SZ, HADAMARD, beta=1.0)
        expected = np.cosh(1.0) / np.cosh(0.5)
        assert rep.exp_average == pytest.approx(expected, abs=1e-12)
        assert rep.identity_residual <= 1e-12

    def test_leaf_decomposition_closes(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            dim = int(rng.integers(2, 4))
            h0 = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
            h0 = 0.5 * (h0 + dag(h0))
            h1 = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
            h1 = 0.5 * (h1 + dag(h1))
            u = qmath.random_unitary(rng, dim)
            beta = float(rng.uniform(0.2, 2.0))
            rep = run_tpm_jarzynski(h0, h1, u, beta)
            assert rep.identity_residual <= 1e-10
            total = 0.0
            for leaf in rep.leaves:
                assert (leaf.eps1 - leaf.eps0) == pytest.approx(
                    leaf.w_drive + leaf.w_ctrl + leaf.q_ctrl, abs=1e-10
                )
                total += leaf.probability
            assert total == pytest.approx(1.0, abs=1e-10)

    def test_classical_permutation_has_no_readout_heat(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            dim = int(rng.integers(2, 4))
            h0 = np.diag(np.sort(rng.normal(size=dim))).astype(complex)
            h1 = np.diag(np.sort(rng.normal(size=dim))).astype(complex)
            perm = rng.permutation(dim)
            u = np.zeros((dim, dim), dtype=complex)
            for i, j in enumerate(perm):
                u[j, i] = 1.0
            rep = run_tpm_jarzynski(h0, h1, u, beta=1.0)
            for leaf in rep.leaves:
                assert abs(leaf.q_ctrl) <= 1e-12
                assert abs(leaf.w_ctrl) <= 1e-12

    def test_non_unitary_rejected(self):
        with pytest.raises(ChannelError):
            run_tpm_jarzynski(SZ, SZ, np.diag([1.0, 0.5]), beta=1.0)

    def test_engine_tree_matches_closed_enumeration(self):
        rep = run_tpm_jarzynski(0.5 * SZ, SZ, HADAMARD, beta=1.0)
        table = {(leaf.r0, leaf.r1): leaf for leaf in rep.leaves}
        gen, sched, pol, rho0, h0 = tpm_process(0.5 * SZ, SZ, HADAMARD, beta=1.0)
        leaves = enumerate_tree(gen, sched, pol, rho0, hamiltonian0=h0)
        assert len(leaves) == len(table)
        for outcomes, prob, rec in leaves:
            leaf = table[(outcomes[0], outcomes[2])]
            assert prob == pytest.approx(leaf.probability, abs=1e-12)
            w_total = sum(l.w_seg + l.w_ctrl_sys for l in rec.ledgers)
            q_total = sum(l.q_ctrl_sys for l in rec.ledgers)
            assert w_total == pytest.approx(leaf.w_drive, abs=1e-10)
            assert q_total == pytest.approx(leaf.q_first + leaf.q_ctrl, abs=1e-10)
            de = leaf.eps1 - (leaf.eps0 - leaf.q_first)
            assert de == pytest.approx(w_total + q_total, abs=1e-10)


class TestRateModel:
    def test_thermal_construction_satisfies_detailed_balance(self):
        m = RateModel.thermal([0.0, 1.0, 2.5], beta=0.8)
        assert m.n_states == 3

    def test_detailed_balance_violation_rejected(self):
        rates = np.array([[-1.0, 2.0], [1.0, -2.0]])
        with pytest.raises(ClassicalModelError):
            RateModel(energies=np.array([0.0, 1.0]), rates=rates, beta=1.0)

    def test_one_way_transition_rejected(self):
        rates = np.array([[-1.0, 0.0], [1.0, 0.0]])
        with pytest.raises(ClassicalModelError):
            RateModel(energies=np.array([0.0, 1.0]), rates=rates, beta=1.0)

    def test_stationary_is_gibbs(self):
        m = RateModel.thermal([0.0, 1.0], beta=1.0)
        p = m.stationary()
        assert p[1] / p[0] == pytest.approx(np.exp(-1.0), rel=1e-12)
        assert np.abs(m.rates @ p).max() <= 1e-12


class TestClassicalLimit:
    def test_equilibrium_split(self):
        m = RateModel.thermal([0.0, 1.0], beta=1.0)
        rep = run_classical_limit(m, steps=6, dt=0.02, mode="enumerate")
        assert np.abs(rep.sigma_state).max() <= 1e-10
        assert rep.sigma_record.min() > 0.0

    def test_difference_identity(self):
        m = RateModel.thermal([0.0, 1.0], beta=1.0)
        p0 = np.array([0.9, 0.1])
        rep = run_classical_limit(m, steps=8, dt=0.02, mode="enumerate", p0=p0)
        assert rep.max_identity_residual <= 1e-8
        assert rep.max_redefined_residual <= 1e-12

    def test_three_state_identity(self):
        m = RateModel.thermal([0.0, 0.7, 1.3], beta=1.3, attempt_rate=0.5)
        p0 = np.array([0.5, 0.3, 0.2])
        rep = run_classical_limit(m, steps=8, dt=0.02, mode="enumerate", p0=p0)
        assert rep.max_identity_residual <= 1e-8
        assert (rep.sigma_record >= rep.sigma_state - 1e-12).all()

    def test_frozen_rates_produce_nothing(self):
        m = RateModel(energies=np.array([0.0, 1.0]), rates=np.zeros((2, 2)), beta=1.0)
        rep = run_classical_limit(m, steps=4, dt=0.02, mode="enumerate")
        assert np.abs(rep.sigma_record).max() <= 1e-12
        assert np.abs(rep.sigma_state).max() <= 1e-12

    def test_step_size_guard(self):
        m = RateModel.thermal([0.0, 1.0], beta=1.0)
        with pytest.raises(ClassicalModelError):
            run_classical_limit(m, steps=2, dt=1.0, mode="enumerate")

    def test_gillespie_matches_enumeration(self):
        m = RateModel.thermal([0.0, 1.0], beta=1.0)
        p0 = np.array([0.8, 0.2])
        exact = run_classical_limit(m, steps=4, dt=0.02, mode="enumerate", p0=p0)
        n = 20_000
        sampled = run_classical_limit(
            m, steps=4, dt=0.02, mode="gillespie", p0=p0, trajectories=n, seed=12
        )
        # empirical per-step joints within binomial error of the exact ones
        transition = m.transition_matrix(0.02)
        p = p0
        for step in range(4):
            joint = transition * p[None, :]
            for idx in np.ndindex(2, 2):
                se = np.sqrt(max(joint[idx] * (1 - joint[idx]), 1e-12) / n)
                assert abs(sampled.sample_joints[step][idx] - joint[idx]) <= 4 * se
            p = joint.sum(axis=1)
        assert np.allclose(sampled.sigma_record, exact.sigma_record, atol=0.02)

    def test_gillespie_reproducible(self):
        m = RateModel.thermal([0.0, 1.0], beta=1.0)
        a = run_classical_limit(m, steps=3, dt=0.02, mode="gillespie", trajectories=50, seed=4)
        b = run_classical_limit(m, steps=3, dt=0.02, mode="gillespie", trajectories=50, seed=4)
        assert np.array_equal(a.sample_joints, b.sample_joints)
