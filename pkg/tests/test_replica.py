import math

import numpy as np
import pytest

from replica_lab.model import (
    ModelParams,
    SpinState,
    WellLabel,
    beta_cross_moment,
    closed_form_offdiag,
    closed_form_p_ll,
    laplace_p_ll,
    laplace_p_ll_sq,
    relaxation_times,
)
from replica_lab.replica import (
    MomentSpec,
    NoStationaryLimitError,
    PairState,
    ReplicaBasisState,
    build_generator,
    evolve,
    finite_time_moment,
    infinite_time_moment,
    mixed_initial_moment,
    moment_decay_rates,
    pair_initial_vector,
    pair_jump_matrix,
    permutation_symmetry_defect,
    spectrum,
    trace_selector,
)

LEFT = SpinState.localized(WellLabel.LEFT)
RIGHT = SpinState.localized(WellLabel.RIGHT)

# <P^2>(t) golden values: 40-digit numerical inverse Laplace (mpmath, Talbot)
# of the second-moment transform.
P_SQ_GOLD = {
    (1.0, 1.0, 1.5): 0.49291146278195214186,
    (3.0, 1.0, 0.8): 0.84908373309158129654,
}


class TestPairBasis:
    def test_jump_matrix_entries(self):
        expected = np.array(
            [[0, -1, 1, 0], [-1, 0, 0, 1], [1, 0, 0, -1], [0, 1, -1, 0]], dtype=float
        )
        assert np.array_equal(pair_jump_matrix(), expected)

    def test_jump_matrix_symmetric_zero_rowsum(self):
        lam = pair_jump_matrix()
        assert np.array_equal(lam, lam.T)
        assert np.array_equal(lam.sum(axis=1), np.zeros(4))

    def test_pair_state_index_and_xi(self):
        states = [PairState.from_index(i) for i in range(4)]
        assert [s.index for s in states] == [0, 1, 2, 3]
        assert [s.xi for s in states] == [0.0, -1.0, 1.0, 0.0]
        assert states[1].ket_well is WellLabel.LEFT and states[1].bra_well is WellLabel.RIGHT

    def test_basis_state_roundtrip(self):
        for index in range(64):
            state = ReplicaBasisState.from_index(3, index)
            assert state.index == index
            assert -3 <= state.total_xi <= 3

    def test_basis_state_little_endian(self):
        # index 6 = 2 + 1*4: pair 0 in state 2 (ket R), pair 1 in state 1 (bra R)
        state = ReplicaBasisState.from_index(2, 6)
        assert state.pairs[0].index == 2
        assert state.pairs[1].index == 1


class TestBuildGenerator:
    def test_single_pair_dephasing_diagonal(self):
        gen = build_generator(1, ModelParams(delta=1.0, gamma=2.5))
        assert np.allclose(gen.dephasing_diag, [0.0, -2.5, -2.5, 0.0])

    def test_two_pair_dephasing_values(self):
        gamma = 1.7
        gen = build_generator(2, ModelParams(delta=1.0, gamma=gamma))
        both_lr = 1 + 1 * 4  # both pairs in the ket-L/bra-R coherence
        both_rl = 2 + 2 * 4
        opposed = 1 + 2 * 4  # separations -1 and +1 cancel
        assert gen.dephasing_diag[both_lr] == pytest.approx(-4.0 * gamma)
        assert gen.dephasing_diag[both_rl] == pytest.approx(-4.0 * gamma)
        assert gen.dephasing_diag[opposed] == 0.0

    def test_dephasing_nonpositive_and_diagonal_states_zero(self):
        gen = build_generator(3, ModelParams(delta=1.0, gamma=1.0))
        assert np.all(gen.dephasing_diag <= 0.0)
        for index in range(gen.dim):
            state = ReplicaBasisState.from_index(3, index)
            if all(p.xi == 0.0 for p in state.pairs):
                assert gen.dephasing_diag[index] == 0.0

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_jump_structure(self, n):
        delta = 1.3
        gen = build_generator(n, ModelParams(delta=delta, gamma=0.7))
        connectivity = gen.jump / (0.5j * delta)
        assert np.allclose(connectivity.imag, 0.0)
        real = connectivity.real
        assert np.allclose(real, real.T)
        values = np.unique(np.round(real, 12))
        assert set(values).issubset({-1.0, 0.0, 1.0})
        assert np.all((real != 0).sum(axis=1) == 2 * n)

    def test_replica_count_bounds(self):
        params = ModelParams(delta=1.0, gamma=1.0)
        with pytest.raises(ValueError):
            build_generator(0, params)
        with pytest.raises(ValueError):
            build_generator(7, params)


class TestEvolve:
    def test_time_zero_identity(self):
        gen = build_generator(1, ModelParams(delta=1.0, gamma=1.0))
        v0 = pair_initial_vector(SpinState.normalized(1, 1j))
        assert np.array_equal(evolve(gen, v0, 0.0), v0)

    def test_dimension_mismatch(self):
        gen = build_generator(2, ModelParams(delta=1.0, gamma=1.0))
        with pytest.raises(ValueError):
            evolve(gen, np.zeros(4), 1.0)

    def test_non_finite_time(self):
        gen = build_generator(1, ModelParams(delta=1.0, gamma=1.0))
        with pytest.raises(ValueError):
            evolve(gen, np.zeros(4), math.inf)

    @pytest.mark.parametrize("n", [1, 2])
    def test_trace_conservation(self, n):
        params = ModelParams(delta=1.0, gamma=0.8)
        gen = build_generator(n, params)
        v0 = np.kron(
            *([pair_initial_vector(LEFT)] * 2)
        ) if n == 2 else pair_initial_vector(LEFT)
        sel = trace_selector(n)
        for t in np.linspace(0.0, 12.0, 13):
            total = sel @ evolve(gen, v0, float(t))
            assert abs(total - 1.0) < 1e-9

    def test_matches_survival_and_coherence_curves(self):
        params = ModelParams(delta=1.0, gamma=1.0)
        gen = build_generator(1, params)
        v0 = pair_initial_vector(LEFT)
        for t in np.linspace(0.0, 15.0, 46):
            vec = evolve(gen, v0, float(t))
            assert abs(vec[0] - closed_form_p_ll(params, float(t))) < 1e-8
            offdiag = closed_form_offdiag(params, float(t))
            assert abs(vec[1] - offdiag) < 1e-8
            assert abs(vec[2] - offdiag.conjugate()) < 1e-8

    def test_hermitian_structure_preserved(self):
        # swapping ket and bra in every pair while conjugating must commute
        # with the evolution
        params = ModelParams(delta=0.9, gamma=1.4)
        n = 2
        gen = build_generator(n, params)
        swap = np.array([0, 2, 1, 3])
        perm = np.array([swap[i % 4] + 4 * swap[i // 4] for i in range(16)])
        rng = np.random.default_rng(42)
        raw = rng.normal(size=16) + 1j * rng.normal(size=16)
        vec = raw + np.conj(raw[perm])  # build a structure-obeying vector
        assert np.allclose(vec, np.conj(vec[perm]))
        out = evolve(gen, vec, 2.3)
        assert np.max(np.abs(out - np.conj(out[perm]))) < 1e-10


class TestResolventIsLaplaceTransform:
    """The generator's resolvent entries are the closed-form transforms."""

    @pytest.mark.parametrize("gamma,delta", [(1.0, 1.0), (3.0, 1.0), (0.5, 2.0)])
    def test_single_pair_entry(self, gamma, delta):
        params = ModelParams(delta=delta, gamma=gamma)
        mat = build_generator(1, params).matrix()
        for lam in (0.31, 1.0, 2.7):
            resolvent = np.linalg.inv(lam * np.eye(4) - mat)
            assert resolvent[0, 0] == pytest.approx(laplace_p_ll(params, lam), abs=1e-12)

    @pytest.mark.parametrize("gamma,delta", [(1.0, 1.0), (3.0, 1.0)])
    def test_two_pair_entry(self, gamma, delta):
        params = ModelParams(delta=delta, gamma=gamma)
        mat = build_generator(2, params).matrix()
        for lam in (0.31, 1.0, 2.7):
            resolvent = np.linalg.inv(lam * np.eye(16) - mat)
            assert resolvent[0, 0] == pytest.approx(laplace_p_ll_sq(params, lam), abs=1e-10)

    def test_residue_at_origin(self):
        params = ModelParams(delta=1.0, gamma=1.0)
        mat = build_generator(1, params).matrix()
        values = []
        for lam in (1e-6, 5e-7):
            resolvent = np.linalg.inv(lam * np.eye(4) - mat)
            values.append(lam * resolvent[0, 0].real)
        extrapolated = 2.0 * values[1] - values[0]
        assert extrapolated == pytest.approx(0.5, abs=1e-10)


class TestFiniteTimeMoment:
    def test_single_replica_reduces_to_closed_form(self):
        for gamma, delta in [(1.0, 1.0), (5.0, 1.0), (0.1, 1.0)]:
            params = ModelParams(delta=delta, gamma=gamma)
            horizon = 20.0 * max(relaxation_times(params))
            spec = MomentSpec(LEFT, 1, 0)
            for t in np.linspace(0.0, horizon, 50):
                got = finite_time_moment(spec, params, float(t))
                assert abs(got - closed_form_p_ll(params, float(t))) < 1e-8

    def test_time_zero_trivial_values(self):
        params = ModelParams(delta=1.0, gamma=1.0)
        assert finite_time_moment(MomentSpec(LEFT, 2, 0), params, 0.0) == pytest.approx(1.0)
        assert finite_time_moment(MomentSpec(LEFT, 1, 1), params, 0.0) == pytest.approx(0.0)

    def test_second_moment_golden(self):
        for (gamma, delta, t), expected in P_SQ_GOLD.items():
            got = finite_time_moment(MomentSpec(LEFT, 2, 0), ModelParams(delta=delta, gamma=gamma), t)
            assert got == pytest.approx(expected, abs=1e-10)

    def test_stays_in_unit_interval(self):
        params = ModelParams(delta=1.2, gamma=0.7)
        for spec in (MomentSpec(LEFT, 2, 1), MomentSpec(SpinState.normalized(1, 1j), 1, 1)):
            for t in np.linspace(0.0, 10.0, 21):
                value = finite_time_moment(spec, params, float(t))
                assert 0.0 <= value <= 1.0

    def test_moment_spec_validation(self):
        with pytest.raises(ValueError):
            MomentSpec(LEFT, 0, 0)
        with pytest.raises(ValueError):
            MomentSpec(LEFT, -1, 2)


class TestInfiniteTimeMoment:
    @pytest.mark.parametrize("gamma,delta", [(1.0, 1.0), (3.0, 1.0), (1.0, 2.0)])
    def test_pure_and_cross_moments(self, gamma, delta):
        params = ModelParams(delta=delta, gamma=gamma)
        for n_left, n_right in [(1, 0), (2, 0), (3, 0), (4, 0), (1, 1), (0, 2), (2, 1), (2, 2)]:
            value = infinite_time_moment(MomentSpec(LEFT, n_left, n_right), params)
            assert value == pytest.approx(float(beta_cross_moment(n_left, n_right)), abs=1e-8)

    def test_initial_state_independence(self):
        params = ModelParams(delta=1.0, gamma=1.0)
        for state in (SpinState.normalized(1, 1), SpinState.normalized(1, 1j), LEFT):
            for n in (1, 2, 3):
                value = infinite_time_moment(MomentSpec(state, n, 0), params)
                assert value == pytest.approx(1.0 / (n + 1), abs=1e-8)

    def test_methods_agree(self):
        params = ModelParams(delta=0.9, gamma=2.0)
        for spec in (MomentSpec(LEFT, 2, 0), MomentSpec(LEFT, 2, 1), MomentSpec(LEFT, 1, 2)):
            eig = infinite_time_moment(spec, params, method="eig")
            reduced = infinite_time_moment(spec, params, method="reduced")
            resolvent = infinite_time_moment(spec, params, method="resolvent")
            assert reduced == pytest.approx(eig, abs=1e-10)
            assert resolvent == pytest.approx(eig, abs=1e-8)

    def test_critically_damped_point_meets_contract(self):
        # at gamma = 2*delta the transient block is defective (a Jordan pair),
        # which degrades the eigenbasis conditioning; the stationary values
        # must still come out within the stated accuracy
        params = ModelParams(delta=1.0, gamma=2.0)
        for n_left, n_right in [(1, 0), (2, 0), (1, 1)]:
            value = infinite_time_moment(MomentSpec(LEFT, n_left, n_right), params)
            assert value == pytest.approx(float(beta_cross_moment(n_left, n_right)), abs=1e-8)

    def test_extended_orders(self):
        params = ModelParams(delta=1.0, gamma=1.0)
        for n in (5, 6):
            value = infinite_time_moment(MomentSpec(LEFT, n, 0), params)
            assert value == pytest.approx(1.0 / (n + 1), abs=1e-7)

    def test_no_stationary_limit(self):
        with pytest.raises(NoStationaryLimitError):
            infinite_time_moment(MomentSpec(LEFT, 1, 0), ModelParams(delta=1.0, gamma=0.0))
        with pytest.raises(NoStationaryLimitError):
            infinite_time_moment(MomentSpec(LEFT, 1, 0), ModelParams(delta=0.0, gamma=1.0))

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            infinite_time_moment(MomentSpec(LEFT, 1, 0), ModelParams(delta=1.0, gamma=1.0), "qr")


class TestMixedInitialMoment:
    def test_reduces_to_moment_spec(self):
        params = ModelParams(delta=1.0, gamma=1.0)
        replicas = [(LEFT, WellLabel.LEFT), (LEFT, WellLabel.RIGHT)]
        mixed = mixed_initial_moment(replicas, params, t=2.0)
        direct = finite_time_moment(MomentSpec(LEFT, 1, 1), params, 2.0)
        assert mixed == pytest.approx(direct, abs=1e-12)

    def test_sensitivity_law_cross_term(self):
        # <(P_S - P_S')^2> = 2/3 - 2 <P_S P_S'> must equal |a b' - a' b|^2 / 3
        params = ModelParams(delta=1.0, gamma=1.0)
        inv = 1.0 / math.sqrt(2.0)
        pairs = [
            (SpinState.normalized(inv, inv), SpinState.normalized(inv, -inv)),
            (LEFT, SpinState.normalized(inv, inv)),
            (LEFT, RIGHT),
            (SpinState.normalized(1, 1j), SpinState.normalized(2, 1j)),
        ]
        for state_a, state_b in pairs:
            cross = mixed_initial_moment(
                [(state_a, WellLabel.LEFT), (state_b, WellLabel.LEFT)], params
            )
            mean_sq_diff = 2.0 / 3.0 - 2.0 * cross
            det = (
                state_a.amp_left * state_b.amp_right - state_b.amp_left * state_a.amp_right
            )
            assert mean_sq_diff == pytest.approx(abs(det) ** 2 / 3.0, abs=1e-8)


class TestSpectrum:
    def test_pure_tunneling_eigenvalues(self):
        gen = build_generator(1, ModelParams(delta=1.0, gamma=0.0))
        eigvals = spectrum(gen)
        assert np.max(np.abs(eigvals.real)) < 1e-12
        assert np.allclose(np.sort(eigvals.imag), [-1.0, 0.0, 0.0, 1.0], atol=1e-12)

    def test_sorted_by_real_part(self):
        gen = build_generator(2, ModelParams(delta=1.0, gamma=1.0))
        eigvals = spectrum(gen)
        assert np.all(np.diff(eigvals.real) <= 1e-12)

    def test_strong_noise_two_timescales(self):
        gamma, delta = 100.0, 1.0
        gen = build_generator(1, ModelParams(delta=delta, gamma=gamma))
        rates = -spectrum(gen).real
        nonzero = np.sort(rates[rates > 1e-8])
        assert len(nonzero) == 3
        assert nonzero[0] == pytest.approx(delta**2 / gamma, rel=0.02)
        assert nonzero[1] == pytest.approx(gamma, rel=0.02)
        assert nonzero[2] == pytest.approx(gamma, rel=0.02)

    def test_two_replica_rate_clusters(self):
        gamma, delta = 100.0, 1.0
        gen = build_generator(2, ModelParams(delta=delta, gamma=gamma))
        rates = -spectrum(gen).real
        nonzero = rates[rates > 1e-8 * gamma]
        slow = nonzero[nonzero < delta]
        fast = nonzero[nonzero >= delta]
        slow_refs = (delta**2 / gamma, 3.0 * delta**2 / gamma)
        fast_refs = (gamma, 4.0 * gamma)
        assert all(min(abs(r - e) / e for e in slow_refs) < 0.05 for r in slow)
        assert all(min(abs(r - e) / e for e in fast_refs) < 0.05 for r in fast)
        for ref in slow_refs + fast_refs:
            assert any(abs(r - ref) / ref < 0.05 for r in nonzero)


class TestMomentDecayRates:
    def test_five_active_relaxation_rates(self):
        # moderate noise ratio keeps every mode's weight well above noise
        gamma, delta = 10.0, 1.0
        rates = moment_decay_rates(MomentSpec(LEFT, 2, 0), ModelParams(delta=delta, gamma=gamma))
        assert len(rates) == 5
        tau_fast_rate, tau_slow_rate = gamma, delta**2 / gamma
        expected = np.array(
            [tau_slow_rate, 3 * tau_slow_rate, tau_fast_rate, tau_fast_rate, 4 * tau_fast_rate]
        )
        assert np.allclose(rates, expected, rtol=0.05)

    def test_single_replica_two_rates(self):
        gamma, delta = 100.0, 1.0
        rates = moment_decay_rates(MomentSpec(LEFT, 1, 0), ModelParams(delta=delta, gamma=gamma))
        assert len(rates) == 2
        assert rates[0] == pytest.approx(delta**2 / gamma, rel=0.02)
        assert rates[1] == pytest.approx(gamma, rel=0.02)


class TestPermutationSymmetry:
    def test_trivial_orders(self):
        assert permutation_symmetry_defect(0, 0, ModelParams(delta=1.0, gamma=1.0)) == 0.0

    @pytest.mark.parametrize("gamma,delta", [(1.0, 1.0), (2.0, 0.7)])
    def test_equal_orders_hold_at_all_times(self, gamma, delta):
        params = ModelParams(delta=delta, gamma=gamma)
        for t in (0.0, 0.3, 1.7, 6.0):
            assert permutation_symmetry_defect(1, 1, params, t=t) < 1e-9

    def test_stationary_identity(self):
        params = ModelParams(delta=1.0, gamma=1.0)
        for n, m in [(1, 1), (2, 0), (2, 1), (3, 1)]:
            assert permutation_symmetry_defect(n, m, params) < 1e-9

    def test_unequal_orders_need_stationarity(self):
        # away from the stationary limit the identity genuinely fails for
        # n != m; this pins the behavior rather than papering over it
        params = ModelParams(delta=1.0, gamma=1.0)
        assert permutation_symmetry_defect(2, 0, params, t=1.0) > 1e-2
