import numpy as np
import pytest

from mixevo.chains import (
    DICTATOR_STATES,
    LocalTransitionMatrix,
    MarkovChain,
    build_chain,
    build_dictatorial_chain,
    build_metropolis_chain,
    build_pairwise_update_chain,
    build_single_bit_walk,
    build_toy_ga_chain,
    dictatorial_tensor,
    enumerate_states,
    lazy_transform,
    pairwise_dynamics,
    state_cap,
    toy_ga_dynamics,
)
from mixevo.errors import InfeasibleError, ParameterError
from mixevo.genotype import Fitness, Population, two_pow_i_squared
from mixevo.spectral import chain_structure, stationary_distribution, symmetrized_spectrum


def assert_stochastic(chain):
    assert np.all(chain.Q >= 0)
    np.testing.assert_allclose(chain.Q.sum(axis=1), 1.0, atol=1e-10)


class TestLocalTransitionMatrix:
    def test_dictatorial_blocks(self):
        B = dictatorial_tensor(0.1)
        np.testing.assert_allclose(B.b.sum(axis=(2, 3)), 1.0, atol=1e-15)
        assert B.b[0, 0, 0, 0] == pytest.approx(0.6)

    def test_rejects_bad_block(self):
        b = np.zeros((2,) * 4)
        b[:, :, 0, 0] = 1.0
        b[1, 1, 0, 0] = 0.9
        with pytest.raises(ParameterError, match=r"\(1, 1\)"):
            LocalTransitionMatrix(b)

    @pytest.mark.parametrize("eps", [0.0, -0.1, 0.2])
    def test_dictatorial_eps_range(self, eps):
        with pytest.raises(ParameterError):
            dictatorial_tensor(eps)


class TestEnumerateStates:
    def test_colex_two(self):
        assert [s.counts for s in enumerate_states(2, 2)] == [(2, 0), (1, 1), (0, 2)]

    def test_singletons(self):
        assert [s.counts for s in enumerate_states(1, 3)] == [(1, 0, 0), (0, 1, 0), (0, 0, 1)]

    def test_count(self):
        states = enumerate_states(3, 3)
        assert len(states) == 10 and len({s.counts for s in states}) == 10
        assert all(s.n == 3 for s in states)

    def test_cap(self):
        with pytest.raises(InfeasibleError):
            enumerate_states(2, 16, cap=100)

    def test_cap_from_environment(self, monkeypatch):
        monkeypatch.setenv("MIXEVO_STATE_CAP", "50")
        assert state_cap() == 50
        with pytest.raises(InfeasibleError):
            build_toy_ga_chain(4)


class TestPairwiseChain:
    def test_dictatorial_eighth(self):
        chain = build_pairwise_update_chain(pairwise_dynamics(dictatorial_tensor(0.125), 2))
        Q = chain.reorder(DICTATOR_STATES).Q
        np.testing.assert_allclose(Q, np.full((3, 3), 0.25) + 0.25 * np.eye(3), atol=1e-15)

    @pytest.mark.parametrize("eps", [0.01, 0.05, 0.125])
    def test_matches_closed_form_chain(self, eps):
        built = build_pairwise_update_chain(pairwise_dynamics(dictatorial_tensor(eps), 2))
        np.testing.assert_allclose(built.reorder(DICTATOR_STATES).Q, build_dictatorial_chain(eps).Q, atol=1e-12)

    def test_generic_row(self):
        eps = 0.03
        built = build_pairwise_update_chain(pairwise_dynamics(dictatorial_tensor(eps), 2))
        row = built.reorder(DICTATOR_STATES).Q[1]
        np.testing.assert_allclose(row, [2 * eps, 1 - 4 * eps, 2 * eps], atol=1e-15)

    def test_identity_tensor_n3(self):
        chain = build_pairwise_update_chain(pairwise_dynamics(LocalTransitionMatrix.identity(2), 3))
        np.testing.assert_array_equal(chain.Q, np.eye(chain.N))
        assert chain.labels["renormalized_states"] == 2

    def test_identity_tensor_without_replacement(self):
        dyn = pairwise_dynamics(LocalTransitionMatrix.identity(3), 2, replacement="without")
        np.testing.assert_array_equal(build_pairwise_update_chain(dyn).Q, np.eye(6))

    def test_identity_tensor_n2_resamples(self):
        # n = 2 with replacement: parents (0,0) can be drawn from {0,1}
        chain = build_pairwise_update_chain(pairwise_dynamics(LocalTransitionMatrix.identity(2), 2))
        i = chain.index_of(Population((1, 1)))
        assert chain.Q[i, i] == pytest.approx(0.5)

    def test_fitness_weighted(self):
        f = Fitness(np.array([1.0, 0.5]))
        chain = build_pairwise_update_chain(pairwise_dynamics(LocalTransitionMatrix.identity(2), 2, f))
        i = chain.index_of(Population((1, 1)))
        assert chain.Q[i, chain.index_of(Population((2, 0)))] == pytest.approx(4 / 9)
        assert chain.Q[i, i] == pytest.approx(4 / 9)

    @pytest.mark.parametrize("replacement", ["with", "without"])
    def test_stochastic_for_larger_n(self, replacement):
        chain = build_pairwise_update_chain(pairwise_dynamics(dictatorial_tensor(0.05), 4, replacement=replacement))
        assert chain.N == 5
        assert_stochastic(chain)


class TestDictatorialChain:
    def test_eighth_symmetric(self):
        Q = build_dictatorial_chain(0.125).Q
        np.testing.assert_array_equal(Q, Q.T)
        np.testing.assert_array_equal(np.diag(Q), 0.5)

    def test_first_row_eps_free(self):
        np.testing.assert_array_equal(build_dictatorial_chain(0.01).Q[0], [0.5, 0.25, 0.25])

    @pytest.mark.parametrize("eps", [1e-6, 0.01, 0.1, 0.125])
    def test_stochastic(self, eps):
        assert_stochastic(build_dictatorial_chain(eps))

    def test_state_labels(self):
        chain = build_dictatorial_chain(0.1)
        assert [chain.state_label(i) for i in range(3)] == ["{0,1}", "{0,0}", "{1,1}"]

    def test_rejects_eps(self):
        with pytest.raises(ParameterError):
            build_dictatorial_chain(0.2)


@pytest.fixture(scope="module")
def chain():
    return build_toy_ga_chain(4)


class TestToyGa:
    def test_size_and_self_loops(self, chain):
        assert chain.N == 136
        assert np.all(np.diag(chain.Q) >= 0.5 - 1e-15)
        assert_stochastic(chain)

    def test_ergodic(self, chain):
        st = chain_structure(chain)
        assert st.irreducible and st.period == 1

    def test_states_are_two_strings(self, chain):
        assert all(s.n == 2 and s.r == 16 for s in chain.states)
        assert chain.state_label(0) == "{0000,0000}"

    def test_always_flip_preserves_parity(self):
        chain = build_toy_ga_chain(4, "always")
        st = chain_structure(chain)
        assert not st.irreducible
        parity = np.array([sum(bin(m).count("1") for m in s.members()) % 2 for s in chain.states])
        i, j = np.nonzero(chain.Q)
        assert np.all(parity[i] == parity[j])

    def test_first_row(self, chain):
        # from {0000,0000}, in the active half: distinct slots stay put when
        # neither mutation flips (1/4); the same slot also when both flip the
        # same bit (1/4 + 4/64)
        row = chain.Q[0]
        assert row[0] == pytest.approx(0.5 + 0.5 * (0.5 * 0.25 + 0.5 * 5 / 16))
        one_flip = [chain.index_of(Population.from_members([0, 1 << k], 16)) for k in range(4)]
        assert sum(row[one_flip]) == pytest.approx(0.5 * 0.5)

    @pytest.mark.parametrize("l", [2, 6, 9, 3])
    def test_rejects_length(self, l):
        with pytest.raises(ParameterError):
            toy_ga_dynamics(l)

    def test_l16_infeasible(self):
        with pytest.raises(InfeasibleError):
            build_toy_ga_chain(16)


class TestWalks:
    def test_single_bit_l1(self):
        np.testing.assert_array_equal(build_single_bit_walk(1).Q, [[0.5, 0.5], [0.5, 0.5]])

    def test_single_bit_uniform(self):
        pi = stationary_distribution(build_single_bit_walk(5))
        np.testing.assert_allclose(pi, 1 / 32, atol=1e-12)

    def test_single_bit_spectrum(self):
        # eigenvalue 1 - k/l with multiplicity C(l, k)
        spec = symmetrized_spectrum(build_single_bit_walk(4))
        ks = np.array([bin(x).count("1") for x in range(16)])
        np.testing.assert_allclose(spec.eigenvalues, np.sort(1 - ks / 4)[::-1], atol=1e-12)

    def test_metropolis_constant(self):
        Q = build_metropolis_chain(Fitness.constant(8), 3).Q
        assert np.all(np.diag(Q) == 0)
        assert Q[0, 1] == pytest.approx(1 / 3)
        assert chain_structure(build_metropolis_chain(Fitness.constant(8), 3)).period == 2

    def test_metropolis_l2(self):
        chain = build_metropolis_chain(two_pow_i_squared(2), 2)
        assert chain.Q[0b11, 0b01] == pytest.approx(1 / 16)
        np.testing.assert_allclose(stationary_distribution(chain), np.array([1, 2, 2, 16]) / 21, atol=1e-12)

    def test_metropolis_ergodic(self):
        st = chain_structure(build_metropolis_chain(two_pow_i_squared(4), 4))
        assert st.irreducible and st.period == 1

    def test_metropolis_lazy(self):
        chain = build_metropolis_chain(Fitness.constant(4), 2, lazy=True)
        assert chain.labels["lazy"] is True
        np.testing.assert_allclose(stationary_distribution(chain), 0.25, atol=1e-12)


class TestLazyTransform:
    def test_identity(self):
        chain = MarkovChain([0, 1], np.eye(2))
        np.testing.assert_array_equal(lazy_transform(chain).Q, np.eye(2))

    def test_dictatorial(self):
        Q = lazy_transform(build_dictatorial_chain(0.125)).Q
        np.testing.assert_allclose(Q, np.full((3, 3), 0.125) + 0.625 * np.eye(3), atol=1e-15)

    def test_metadata(self):
        lazy = lazy_transform(build_dictatorial_chain(0.1))
        assert lazy.labels["transforms"] == ["lazy"]
        assert lazy.states == build_dictatorial_chain(0.1).states

    def test_spectrum(self):
        spec = symmetrized_spectrum(lazy_transform(build_dictatorial_chain(0.125)))
        np.testing.assert_allclose(spec.eigenvalues, [1, 0.625, 0.625], atol=1e-12)


class TestMarkovChain:
    def test_rejects_bad_row(self):
        with pytest.raises(ParameterError, match="row 1"):
            MarkovChain([0, 1], [[1.0, 0.0], [0.5, 0.6]])

    def test_rejects_negative(self):
        with pytest.raises(ParameterError):
            MarkovChain([0, 1], [[1.5, -0.5], [0.5, 0.5]])

    def test_reorder_roundtrip(self):
        chain = build_pairwise_update_chain(pairwise_dynamics(dictatorial_tensor(0.07), 2))
        back = chain.reorder(DICTATOR_STATES).reorder(chain.states)
        np.testing.assert_array_equal(back.Q, chain.Q)

    def test_build_chain_dispatch(self):
        dyn = toy_ga_dynamics(4)
        np.testing.assert_array_equal(build_chain(dyn).Q, build_toy_ga_chain(4).Q)

    def test_deterministic_construction(self):
        np.testing.assert_array_equal(build_toy_ga_chain(4).Q, build_toy_ga_chain(4).Q)
