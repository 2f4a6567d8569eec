"""Both kernel backends must agree: the compiled and vectorized paths are
interchangeable up to floating-point reassociation (different libm digamma
and summation orders allow ~1e-12 drift, never more), and the Gibbs kernel
consumes pre-drawn uniforms so its sample paths are identical exactly."""

import os
import subprocess
import sys

import numpy as np
import pytest

from logistic_lda.backend import HAS_NUMBA
from logistic_lda.encoders import forward_logits_batch, init_params
from logistic_lda.lda_baseline import (
    _gibbs_sweep_nb,
    _gibbs_sweep_nb_jit,
    gibbs_init,
    disjoint_topic_matrix,
    generate_corpus,
    item_groups,
)
from logistic_lda.math_kernels import SeededRng
from logistic_lda.mean_field import (
    HyperParams,
    _mean_field_batch_nb_jit,
    _mean_field_batch_np,
    flatten_groups,
)
from logistic_lda.training import (
    _unroll_bwd_nb_jit,
    _unroll_bwd_np,
    _unroll_fwd_nb_jit,
    _unroll_fwd_np,
)

needs_numba = pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")


def random_problem(seed, D=7, K=4, V=11):
    rng = SeededRng(seed)
    beta = rng.gen.dirichlet(np.full(V, 0.4), size=K)
    groups, _ = generate_corpus(K, V, D, int(rng.gen.integers(2, 9)),
                                np.full(K, 0.6), beta, rng, labeled=True)
    for g in groups[::3]:
        g.label = None
    flat = flatten_groups(groups)
    theta = init_params("table", (K, V), 1.0, rng)
    F = np.ascontiguousarray(forward_logits_batch(flat.payload, theta))
    hyper = HyperParams(alpha=rng.gen.uniform(0.2, 1.5, size=K),
                        lam=float(rng.gen.uniform(0.3, 3.0)), n_iter=4)
    return flat, F, hyper


@needs_numba
class TestMeanFieldParity:
    @pytest.mark.parametrize("seed", range(8))
    @pytest.mark.parametrize("clamp", [False, True])
    def test_batch_outputs_agree(self, seed, clamp):
        flat, F, hyper = random_problem(seed)
        D, K = flat.num_groups, hyper.num_topics
        AH0 = np.tile(hyper.alpha, (D, 1))
        PL0 = np.full((D, K), 1.0 / K)
        args = (F, flat.offsets, hyper.alpha, hyper.lam, flat.labels,
                clamp, 6, 0.0, AH0, PL0)
        P_nb, PL_nb, AH_nb, s_nb = _mean_field_batch_nb_jit(*args)
        P_np, PL_np, AH_np, s_np = _mean_field_batch_np(*args)
        np.testing.assert_allclose(P_nb, P_np, atol=1e-12)
        np.testing.assert_allclose(PL_nb, PL_np, atol=1e-12)
        np.testing.assert_allclose(AH_nb, AH_np, atol=1e-11)
        assert s_nb == s_np

    def test_convergence_sweep_counts_agree(self):
        flat, F, hyper = random_problem(99)
        D, K = flat.num_groups, hyper.num_topics
        args = (F, flat.offsets, hyper.alpha, hyper.lam, flat.labels,
                False, 200, 1e-6, np.tile(hyper.alpha, (D, 1)), np.full((D, K), 1.0 / K))
        _, _, AH_nb, s_nb = _mean_field_batch_nb_jit(*args)
        _, _, AH_np, s_np = _mean_field_batch_np(*args)
        assert s_nb == s_np
        np.testing.assert_allclose(AH_nb, AH_np, atol=1e-10)


@needs_numba
class TestUnrollParity:
    @pytest.mark.parametrize("seed", range(8))
    def test_forward_and_backward_agree(self, seed):
        flat, F, hyper = random_problem(seed)
        P_nb, A_nb, Q_nb = _unroll_fwd_nb_jit(F, flat.offsets, hyper.alpha,
                                              hyper.lam, hyper.n_iter)
        P_np, A_np, Q_np = _unroll_fwd_np(F, flat.offsets, hyper.alpha,
                                          hyper.lam, hyper.n_iter)
        np.testing.assert_allclose(P_nb, P_np, atol=1e-12)
        np.testing.assert_allclose(A_nb, A_np, atol=1e-11)
        np.testing.assert_allclose(Q_nb, Q_np, atol=1e-12)

        labels = np.where(flat.labels >= 0, flat.labels, 0).astype(np.int64)
        dF_nb, losses_nb, hits_nb = _unroll_bwd_nb_jit(
            flat.offsets, hyper.lam, P_nb, A_nb, Q_nb, labels, hyper.n_iter, 1e-30)
        dF_np, losses_np, hits_np = _unroll_bwd_np(
            flat.offsets, hyper.lam, P_np, A_np, Q_np, labels, hyper.n_iter, 1e-30)
        np.testing.assert_allclose(dF_nb, dF_np, atol=1e-12)
        np.testing.assert_allclose(losses_nb, losses_np, atol=1e-12)
        assert hits_nb == hits_np


@needs_numba
class TestGibbsParity:
    def test_identical_sample_paths(self):
        # same pre-drawn uniforms, same arithmetic order: the two kernels
        # must produce bit-identical assignment trajectories
        rng = SeededRng(5)
        K, V = 3, 9
        groups, _ = generate_corpus(K, V, 15, 10, np.full(K, 0.4),
                                    disjoint_topic_matrix(K, V), rng)
        flat = flatten_groups(groups)
        gid = item_groups(flat)
        alpha = np.full(K, 0.4)

        states = []
        for kernel in (_gibbs_sweep_nb_jit, _gibbs_sweep_nb):
            st = gibbs_init(flat, K, 0.1, SeededRng(77), V=V)
            u_rng = SeededRng(123)
            for _ in range(30):
                u = u_rng.gen.random(flat.num_items)
                kernel(st.z, st.n_dk, st.n_kv, st.n_k, flat.payload, gid,
                       alpha, st.label_bias, st.eta, u)
            states.append(st)
        np.testing.assert_array_equal(states[0].z, states[1].z)
        np.testing.assert_array_equal(states[0].n_dk, states[1].n_dk)
        np.testing.assert_array_equal(states[0].n_kv, states[1].n_kv)


class TestBackendFlag:
    @pytest.mark.parametrize("choice,expect", [("numpy", "numpy"), ("auto", None)])
    def test_env_selects_backend(self, choice, expect):
        env = dict(os.environ, LOGISTIC_LDA_BACKEND=choice)
        out = subprocess.run(
            [sys.executable, "-c", "from logistic_lda import backend; print(backend.BACKEND)"],
            capture_output=True, text=True, env=env, check=True,
        ).stdout.strip()
        if expect is None:
            expect = "numba" if HAS_NUMBA else "numpy"
        assert out == expect

    def test_bad_choice_rejected(self):
        env = dict(os.environ, LOGISTIC_LDA_BACKEND="zebra")
        proc = subprocess.run(
            [sys.executable, "-c", "import logistic_lda.backend"],
            capture_output=True, text=True, env=env,
        )
        assert proc.returncode != 0
        assert "LOGISTIC_LDA_BACKEND" in proc.stderr

    def test_numpy_backend_runs_pipeline(self, tmp_path):
        # end to end smoke on the fallback: the CLI must work without numba
        env = dict(os.environ, LOGISTIC_LDA_BACKEND="numpy")
        corpus = tmp_path / "c.jsonl"
        cmds = [
            ["gen", "--k", "2", "--v", "6", "--docs", "6", "--len", "5",
             "--seed", "2", "-o", str(corpus)],
            ["train", "--corpus", str(corpus), "-o", str(tmp_path / "m.ckpt"),
             "--epochs", "2", "--quiet"],
            ["eval", "--corpus", str(corpus), "--model", str(tmp_path / "m.ckpt"),
             "--truth", str(corpus) + ".truth"],
        ]
        for cmd in cmds:
            proc = subprocess.run(
                [sys.executable, "-m", "logistic_lda.cli"] + cmd,
                capture_output=True, text=True, env=env,
            )
            assert proc.returncode == 0, proc.stderr
