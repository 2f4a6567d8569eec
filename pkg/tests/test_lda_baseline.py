import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from logistic_lda.encoders import Item, fixed_loglik_params, forward_logits
from logistic_lda.errors import ContractError, DomainError
from logistic_lda.lda_baseline import (
    CorpusTruth,
    GibbsState,
    check_counts,
    estimate_beta_theta,
    generate_corpus,
    gibbs_conditional,
    gibbs_init,
    gibbs_run,
    gibbs_sweep,
    item_groups,
    lda_item_topic_avg,
    special_case_conditional,
)
from logistic_lda.math_kernels import SeededRng, softmax
from logistic_lda.mean_field import flatten_groups

from oracles import lda_collapsed_pair_posterior


def disjoint_beta(K, V):
    # block-diagonal supports: topic k owns tokens [k*V//K, (k+1)*V//K)
    assert V % K == 0
    width = V // K
    beta = np.zeros((K, V))
    for k in range(K):
        beta[k, k * width : (k + 1) * width] = 1.0 / width
    return beta


class TestGenerateCorpus:
    def test_bad_beta_rejected(self):
        beta = np.ones((2, 3))  # rows sum to 3
        with pytest.raises(DomainError):
            generate_corpus(2, 3, 1, 1, np.ones(2), beta, SeededRng(0))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractError):
            generate_corpus(2, 4, 1, 1, np.ones(2), disjoint_beta(2, 6), SeededRng(0))

    def test_disjoint_supports_identify_topics(self):
        K, V = 3, 12
        groups, truth = generate_corpus(K, V, 20, 15, np.full(K, 0.5), disjoint_beta(K, V), SeededRng(3))
        flat = flatten_groups(groups)
        np.testing.assert_array_equal(flat.payload // (V // K), truth.z)

    def test_seed_reproducibility(self):
        K, V = 2, 6
        a, ta = generate_corpus(K, V, 5, 7, np.ones(K), disjoint_beta(K, V), SeededRng(11))
        b, tb = generate_corpus(K, V, 5, 7, np.ones(K), disjoint_beta(K, V), SeededRng(11))
        np.testing.assert_array_equal(flatten_groups(a).payload, flatten_groups(b).payload)
        np.testing.assert_array_equal(ta.z, tb.z)
        np.testing.assert_array_equal(ta.pi, tb.pi)

    def test_token_marginal_matches_mixture(self):
        # marginal token law is (alpha / sum alpha)' beta
        K, V = 3, 9
        rng = SeededRng(17)
        beta = rng.gen.dirichlet(np.ones(V), size=K)
        alpha = np.array([0.5, 1.5, 1.0])
        groups, _ = generate_corpus(K, V, 2000, 50, alpha, beta, rng)
        tokens = flatten_groups(groups).payload
        emp = np.bincount(tokens, minlength=V) / tokens.size
        want = (alpha / alpha.sum()) @ beta
        assert 0.5 * np.abs(emp - want).sum() <= 0.01

    def test_labeled_flag(self):
        K, V = 2, 4
        groups, truth = generate_corpus(K, V, 8, 5, np.ones(K), disjoint_beta(K, V), SeededRng(5), labeled=True)
        assert [g.label for g in groups] == truth.labels.tolist()
        groups2, _ = generate_corpus(K, V, 8, 5, np.ones(K), disjoint_beta(K, V), SeededRng(5))
        assert all(g.label is None for g in groups2)


class TestGibbsConditional:
    def empty_state(self, K, V, D=1, eta=0.1):
        return GibbsState(
            z=np.zeros(0, dtype=np.int64),
            n_dk=np.zeros((D, K)),
            n_kv=np.zeros((K, V)),
            n_k=np.zeros(K),
            eta=eta,
        )

    def test_zero_counts_uniform(self):
        st = self.empty_state(4, 7)
        np.testing.assert_allclose(gibbs_conditional(st, 0, 3, np.full(4, 0.8)), 0.25, atol=1e-15)

    def test_matches_direct_formula(self):
        rng = SeededRng(2)
        K, V = 3, 5
        n_kv = rng.gen.integers(0, 9, size=(K, V)).astype(float)
        st = GibbsState(
            z=np.zeros(0, dtype=np.int64),
            n_dk=rng.gen.integers(0, 6, size=(1, K)).astype(float),
            n_kv=n_kv,
            n_k=n_kv.sum(axis=1),
            eta=0.3,
        )
        alpha = rng.gen.uniform(0.2, 1.5, size=K)
        got = gibbs_conditional(st, 0, 2, alpha)
        want = (st.n_dk[0] + alpha) * (n_kv[:, 2] + 0.3) / (st.n_k + V * 0.3)
        want /= want.sum()
        np.testing.assert_allclose(got, want, atol=1e-15)
        assert got.sum() == pytest.approx(1.0, abs=1e-12)

    def test_huge_eta_washes_out_tokens(self):
        rng = SeededRng(4)
        K, V = 3, 4
        n_kv = rng.gen.integers(0, 20, size=(K, V)).astype(float)
        st = GibbsState(
            z=np.zeros(0, dtype=np.int64),
            n_dk=np.array([[4.0, 0.0, 2.0]]),
            n_kv=n_kv,
            n_k=n_kv.sum(axis=1),
            eta=1e9,
        )
        alpha = np.array([0.5, 0.5, 0.5])
        got = gibbs_conditional(st, 0, 1, alpha)
        want = st.n_dk[0] + alpha
        want /= want.sum()
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_negative_count_rejected(self):
        st = self.empty_state(2, 2)
        st.n_k[0] = -1.0
        with pytest.raises(ContractError):
            gibbs_conditional(st, 0, 0, np.ones(2))

    def test_label_bias_shifts_conditional(self):
        st = self.empty_state(2, 3)
        st.label_bias[0, 1] = 5.0
        got = gibbs_conditional(st, 0, 0, np.ones(2))
        want = np.array([1.0, 6.0]) / 7.0
        np.testing.assert_allclose(got, want, atol=1e-15)


def small_corpus(rng, K=3, V=12, D=10, N=8):
    groups, truth = generate_corpus(K, V, D, N, np.full(K, 0.5), disjoint_beta(K, V), rng)
    return flatten_groups(groups), truth


class TestGibbsSweep:
    def test_single_topic_identity(self):
        rng = SeededRng(6)
        flat, _ = small_corpus(rng, K=3)
        st = gibbs_init(flat, 1, 0.1, rng)
        z0 = st.z.copy()
        gibbs_sweep(st, flat, np.ones(1), rng)
        np.testing.assert_array_equal(st.z, z0)
        check_counts(st, flat)

    def test_counts_consistent_after_sweeps(self):
        rng = SeededRng(7)
        flat, _ = small_corpus(rng)
        st = gibbs_init(flat, 3, 0.1, rng)
        alpha = np.full(3, 0.5)
        for _ in range(100):
            gibbs_sweep(st, flat, alpha, rng)
        check_counts(st, flat)
        assert st.n_dk.sum(axis=1) == pytest.approx(flat.sizes())
        np.testing.assert_array_equal(st.n_kv.sum(axis=1), st.n_k)

    def test_deterministic_under_seed(self):
        runs = []
        for _ in range(2):
            rng = SeededRng(8)
            flat, _ = small_corpus(rng)
            st = gibbs_init(flat, 3, 0.1, rng)
            for _ in range(20):
                gibbs_sweep(st, flat, np.full(3, 0.5), rng)
            runs.append(st.z.copy())
        np.testing.assert_array_equal(runs[0], runs[1])

    def test_init_rejects_out_of_range_token(self):
        rng = SeededRng(9)
        flat, _ = small_corpus(rng, V=12)
        with pytest.raises(ContractError):
            gibbs_init(flat, 3, 0.1, rng, V=5)


@pytest.fixture(scope="module")
def recovery_run():
    rng = SeededRng(21)
    K, V = 3, 12
    groups, truth = generate_corpus(K, V, 60, 20, np.full(K, 0.3), disjoint_beta(K, V), rng)
    flat = flatten_groups(groups)
    state, item_post, beta_hat, pi_hat = gibbs_run(
        flat, K, np.full(K, 0.3), 0.1, rng, burn_in=200, n_samples=200
    )
    return K, V, truth, flat, state, item_post, beta_hat, pi_hat


def match_by_confusion(z_true, z_hat, K):
    C = np.zeros((K, K))
    np.add.at(C, (z_true, z_hat), 1.0)
    rows, cols = linear_sum_assignment(-C)
    perm = np.empty(K, dtype=np.int64)
    perm[cols] = rows
    return perm, C[rows, cols].sum() / C.sum()


class TestRecovery:
    def test_assignment_accuracy(self, recovery_run):
        K, _, truth, _, _, item_post, _, _ = recovery_run
        _, acc = match_by_confusion(truth.z, item_post.argmax(axis=1), K)
        assert acc >= 0.95

    def test_beta_recovery(self, recovery_run):
        K, V, truth, _, _, item_post, beta_hat, _ = recovery_run
        perm, _ = match_by_confusion(truth.z, item_post.argmax(axis=1), K)
        true_beta = disjoint_beta(K, V)
        for k in range(K):
            tv = 0.5 * np.abs(beta_hat[k] - true_beta[perm[k]]).sum()
            assert tv <= 0.05

    def test_estimates_on_simplex(self, recovery_run):
        _, _, _, _, state, _, beta_hat, pi_hat = recovery_run
        np.testing.assert_allclose(beta_hat.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(pi_hat.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(beta_hat >= 0) and np.all(pi_hat >= 0)


class TestEstimates:
    def test_zero_counts_give_prior_means(self):
        K, V = 3, 5
        st = GibbsState(
            z=np.zeros(0, dtype=np.int64),
            n_dk=np.zeros((2, K)),
            n_kv=np.zeros((K, V)),
            n_k=np.zeros(K),
            eta=0.7,
        )
        alpha = np.array([1.0, 2.0, 3.0])
        beta, pi = estimate_beta_theta(st, alpha)
        np.testing.assert_allclose(beta, 1.0 / V, atol=1e-15)
        np.testing.assert_allclose(pi, np.tile(alpha / alpha.sum(), (2, 1)), atol=1e-15)


class TestPairPosterior:
    def test_long_run_matches_enumeration(self):
        # D=1, N=2, K=2, V=2; compare Gibbs visit frequencies of the four
        # assignment pairs to the exact collapsed joint
        tokens = [0, 1]
        alpha = np.array([0.7, 1.3])
        eta = 0.4
        exact = lda_collapsed_pair_posterior(tokens, alpha, eta, 2, 2)
        from logistic_lda.mean_field import Group

        flat = flatten_groups([Group(id="d0", items=[Item(token=t) for t in tokens])])
        rng = SeededRng(33)
        st = gibbs_init(flat, 2, eta, rng, V=2)
        for _ in range(200):
            gibbs_sweep(st, flat, alpha, rng)
        counts = {z: 0 for z in exact}
        n_sweeps = 30_000
        for _ in range(n_sweeps):
            gibbs_sweep(st, flat, alpha, rng)
            counts[tuple(st.z)] += 1
        tv = 0.5 * sum(abs(counts[z] / n_sweeps - exact[z]) for z in exact)
        assert tv <= 0.02


class TestItemTopicAvg:
    def test_single_belief_identity(self):
        b = np.array([[0.2, 0.3, 0.5]])
        np.testing.assert_array_equal(lda_item_topic_avg(b), b[0])

    def test_opposite_onehots_uniform(self):
        b = np.array([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(lda_item_topic_avg(b), 0.5, atol=1e-15)

    def test_mean_is_simplex(self):
        rng = SeededRng(12)
        b = rng.gen.dirichlet(np.ones(4), size=6)
        avg = lda_item_topic_avg(b)
        assert avg.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(avg >= 0)

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            lda_item_topic_avg(np.zeros((0, 3)))


class TestSpecialCaseConditional:
    def test_direct_product(self):
        beta = np.array([[0.2, 0.8], [0.4, 0.6]])
        got = special_case_conditional(beta, 0, np.array([0.5, 0.5]))
        np.testing.assert_allclose(got, [1 / 3, 2 / 3], atol=1e-15)

    def test_onehot_pi(self):
        beta = np.array([[0.2, 0.8], [0.4, 0.6]])
        got = special_case_conditional(beta, 1, np.array([0.0, 1.0]))
        np.testing.assert_allclose(got, [0.0, 1.0], atol=1e-15)

    def test_uniform_pi_returns_normalized_column(self):
        rng = SeededRng(13)
        beta = rng.gen.dirichlet(np.ones(5), size=3)
        got = special_case_conditional(beta, 2, np.full(3, 1 / 3))
        want = beta[:, 2] / beta[:, 2].sum()
        np.testing.assert_allclose(got, want, atol=1e-14)

    def test_zero_column_degenerate(self):
        beta = np.array([[0.0, 1.0], [0.0, 1.0]])
        with pytest.raises(DomainError):
            special_case_conditional(beta, 0, np.array([0.3, 0.7]))

    def test_equivalence_with_loglik_encoder(self):
        # the model's item conditional with fixed per-topic token
        # log-likelihoods and log pi as the group bias must reproduce
        # normalize(pi * beta[:, v]) exactly
        rng = SeededRng(14)
        K, V = 4, 9
        for _ in range(100):
            beta = rng.gen.dirichlet(np.full(V, 0.5), size=K)
            pi = rng.gen.dirichlet(np.full(K, 0.5))
            v = int(rng.gen.integers(0, V))
            want = special_case_conditional(beta, v, pi)
            theta = fixed_loglik_params(beta)
            f = forward_logits(Item(token=v), theta)
            got = softmax(f + np.log(pi))
            np.testing.assert_allclose(got, want, atol=1e-12)


class TestLabelBiasRun:
    def test_labeled_groups_get_bias_rows(self):
        rng = SeededRng(15)
        K, V = 2, 6
        groups, truth = generate_corpus(K, V, 6, 5, np.ones(K), disjoint_beta(K, V), rng, labeled=True)
        groups[3].label = None
        flat = flatten_groups(groups)
        st = gibbs_init(flat, K, 0.1, rng, label_weight=2.5)
        for d, g in enumerate(groups):
            if g.label is None:
                np.testing.assert_array_equal(st.label_bias[d], 0.0)
            else:
                assert st.label_bias[d, g.label] == 2.5
                assert st.label_bias[d].sum() == 2.5

    def test_item_groups_layout(self):
        rng = SeededRng(16)
        flat, _ = small_corpus(rng, D=4, N=3)
        gid = item_groups(flat)
        np.testing.assert_array_equal(gid, np.repeat(np.arange(4), 3))
