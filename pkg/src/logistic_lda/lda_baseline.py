"""Classical generative LDA: synthetic corpora, collapsed Gibbs sampling,
posterior-mean parameter estimates, and the special-case item conditional
shared with the discriminative model.

Count convention: n_dk[d, k] tokens of group d assigned to topic k,
n_kv[k, v] occurrences of token v assigned to topic k, n_k[k] the row sums
of n_kv.  Counts live in float64 (they stay integer-valued, exactly) so the
sampling kernel runs in one dtype.
"""

from dataclasses import dataclass, field

import numpy as np

from .backend import njit, pick
from .errors import ContractError, DomainError
from .math_kernels import check_positive_vector, check_simplex
from .mean_field import FlatGroups, Group
from .encoders import Item

__all__ = [
    "GibbsState",
    "CorpusTruth",
    "disjoint_topic_matrix",
    "generate_corpus",
    "gibbs_init",
    "gibbs_conditional",
    "gibbs_sweep",
    "gibbs_run",
    "estimate_beta_theta",
    "lda_item_topic_avg",
    "special_case_conditional",
    "check_counts",
    "item_groups",
]


@dataclass
class GibbsState:
    """Topic assignments plus the count caches the collapsed sampler needs.

    label_bias is added to alpha in the assignment conditional; it carries
    the optional label offset for supervised corpora and is zero otherwise.
    """

    z: np.ndarray
    n_dk: np.ndarray
    n_kv: np.ndarray
    n_k: np.ndarray
    eta: float
    label_bias: np.ndarray = field(default=None)

    def __post_init__(self):
        self.z = np.ascontiguousarray(self.z, dtype=np.int64)
        self.n_dk = np.ascontiguousarray(self.n_dk, dtype=np.float64)
        self.n_kv = np.ascontiguousarray(self.n_kv, dtype=np.float64)
        self.n_k = np.ascontiguousarray(self.n_k, dtype=np.float64)
        self.eta = float(self.eta)
        if self.eta <= 0.0:
            raise DomainError("eta must be > 0")
        if self.label_bias is None:
            self.label_bias = np.zeros_like(self.n_dk)
        self.label_bias = np.ascontiguousarray(self.label_bias, dtype=np.float64)
        if self.label_bias.shape != self.n_dk.shape:
            raise ContractError("label_bias must have the same shape as n_dk")

    @property
    def num_topics(self):
        return self.n_dk.shape[1]

    @property
    def vocab_size(self):
        return self.n_kv.shape[1]


@dataclass(frozen=True)
class CorpusTruth:
    """Generating latents kept alongside a synthetic corpus."""

    pi: np.ndarray      # (D, K) topic proportions per group
    z: np.ndarray       # (n_items,) true topic per item, group-major order
    labels: np.ndarray  # (D,) argmax of pi


def item_groups(flat: FlatGroups) -> np.ndarray:
    """Group index of each item, from the offsets."""
    return np.repeat(np.arange(flat.num_groups, dtype=np.int64), flat.sizes())


def _token_payload(flat: FlatGroups) -> np.ndarray:
    if flat.payload.ndim != 1:
        raise ContractError("Gibbs sampling needs a token corpus, got dense payloads")
    return flat.payload


def disjoint_topic_matrix(K, V):
    """Row-stochastic (K, V) matrix with disjoint uniform supports: topic k
    owns a contiguous token block, so the true topic of every token is
    identifiable from the token id alone."""
    if K < 1 or V < K:
        raise ContractError("need V >= K >= 1 for disjoint supports")
    edges = np.linspace(0, V, K + 1).astype(np.int64)
    beta = np.zeros((K, V))
    for k in range(K):
        beta[k, edges[k] : edges[k + 1]] = 1.0 / (edges[k + 1] - edges[k])
    return beta


def generate_corpus(K, V, D, N_per_doc, alpha, beta, rng, labeled=False):
    """Sample D groups of N_per_doc tokens each: pi_d ~ Dir(alpha), then
    per item k ~ Cat(pi_d) and token ~ Cat(beta_k).

    Returns (groups, CorpusTruth).  With labeled=True each group carries
    label argmax_k pi_dk.
    """
    alpha = check_positive_vector(alpha)
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (K, V):
        raise ContractError(f"beta must be {K}x{V}, got {beta.shape}")
    if alpha.shape != (K,):
        raise ContractError(f"alpha must have length {K}")
    for row in beta:
        check_simplex(row)
    if D < 1 or N_per_doc < 1:
        raise ContractError("need at least one group and one item per group")

    gammas = rng.gen.standard_gamma(np.broadcast_to(alpha, (D, K)))
    totals = gammas.sum(axis=1, keepdims=True)
    if np.any(totals <= 0.0):
        raise DomainError("Dirichlet draw underflowed; alpha too small for float64")
    pi = gammas / totals

    beta_cum = np.cumsum(beta, axis=1)
    groups = []
    z_all = np.empty(D * N_per_doc, dtype=np.int64)
    labels = pi.argmax(axis=1)
    for d in range(D):
        cum = np.cumsum(pi[d])
        z_d = np.searchsorted(cum, rng.gen.random(N_per_doc), side="right")
        np.clip(z_d, 0, K - 1, out=z_d)
        toks = np.empty(N_per_doc, dtype=np.int64)
        u = rng.gen.random(N_per_doc)
        for k in np.unique(z_d):
            mask = z_d == k
            toks[mask] = np.searchsorted(beta_cum[k], u[mask], side="right")
        np.clip(toks, 0, V - 1, out=toks)
        z_all[d * N_per_doc : (d + 1) * N_per_doc] = z_d
        groups.append(
            Group(
                id=f"d{d}",
                items=[Item(token=int(t)) for t in toks],
                label=int(labels[d]) if labeled else None,
            )
        )
    return groups, CorpusTruth(pi=pi, z=z_all, labels=labels)


def _counts_from_z(z, gid, tokens, D, K, V):
    n_dk = np.zeros((D, K))
    n_kv = np.zeros((K, V))
    np.add.at(n_dk, (gid, z), 1.0)
    np.add.at(n_kv, (z, tokens), 1.0)
    return n_dk, n_kv, n_kv.sum(axis=1)


def gibbs_init(flat, K, eta, rng, label_weight=0.0, V=None):
    """Uniform-random initial assignments with consistent counts.

    label_weight > 0 adds label_weight to the conditional's pseudo-count
    for each labeled group's observed topic (unlabeled groups get none).
    V defaults to the largest token id seen plus one.
    """
    tokens = _token_payload(flat)
    if K < 1:
        raise ContractError("K must be >= 1")
    V = int(tokens.max()) + 1 if V is None else int(V)
    if tokens.size and tokens.max() >= V:
        raise ContractError("token id out of vocabulary range")
    z = rng.gen.integers(0, K, size=tokens.shape[0], dtype=np.int64)
    gid = item_groups(flat)
    n_dk, n_kv, n_k = _counts_from_z(z, gid, tokens, flat.num_groups, K, V)
    bias = np.zeros((flat.num_groups, K))
    if label_weight != 0.0:
        if label_weight < 0.0:
            raise DomainError("label_weight must be >= 0")
        seen = flat.labels >= 0
        bias[np.flatnonzero(seen), flat.labels[seen]] = label_weight
    return GibbsState(z=z, n_dk=n_dk, n_kv=n_kv, n_k=n_k, eta=eta, label_bias=bias)


def check_counts(state: GibbsState, flat: FlatGroups) -> None:
    """Raise unless the count caches agree with z exactly."""
    tokens = _token_payload(flat)
    gid = item_groups(flat)
    n_dk, n_kv, n_k = _counts_from_z(
        state.z, gid, tokens, flat.num_groups, state.num_topics, state.vocab_size
    )
    if (
        not np.array_equal(n_dk, state.n_dk)
        or not np.array_equal(n_kv, state.n_kv)
        or not np.array_equal(n_k, state.n_k)
    ):
        raise ContractError("Gibbs counts are inconsistent with assignments")


def gibbs_conditional(state, d, token, alpha):
    """p(k) for one held-out item: (n_dk + alpha_k + bias_dk) *
    (n_kv + eta) / (n_k + V*eta), normalized.  Counts must already exclude
    the item being resampled."""
    alpha = check_positive_vector(alpha)
    if alpha.shape[0] != state.num_topics:
        raise ContractError("alpha length does not match topic count")
    if np.any(state.n_dk < 0) or np.any(state.n_kv < 0) or np.any(state.n_k < 0):
        raise ContractError("negative count; state does not exclude the item")
    V = state.vocab_size
    p = (
        (state.n_dk[d] + alpha + state.label_bias[d])
        * (state.n_kv[:, token] + state.eta)
        / (state.n_k + V * state.eta)
    )
    total = p.sum()
    if not total > 0.0:
        raise DomainError("degenerate assignment conditional")
    return p / total


def _gibbs_sweep_nb(z, n_dk, n_kv, n_k, tokens, gid, alpha, bias, eta, u):
    K = n_dk.shape[1]
    V = n_kv.shape[1]
    probs = np.empty(K)
    for i in range(z.shape[0]):
        d = gid[i]
        v = tokens[i]
        k = z[i]
        n_dk[d, k] -= 1.0
        n_kv[k, v] -= 1.0
        n_k[k] -= 1.0
        total = 0.0
        for kk in range(K):
            p = (
                (n_dk[d, kk] + alpha[kk] + bias[d, kk])
                * (n_kv[kk, v] + eta)
                / (n_k[kk] + V * eta)
            )
            probs[kk] = p
            total += p
        r = u[i] * total
        acc = 0.0
        knew = K - 1
        for kk in range(K):
            acc += probs[kk]
            if r < acc:
                knew = kk
                break
        z[i] = knew
        n_dk[d, knew] += 1.0
        n_kv[knew, v] += 1.0
        n_k[knew] += 1.0


_gibbs_sweep_nb_jit = njit(_gibbs_sweep_nb)
# fallback shares the jitted source; identical arithmetic order means both
# backends walk identical assignment trajectories from the same uniforms
_gibbs_sweep_kernel = pick(_gibbs_sweep_nb_jit, _gibbs_sweep_nb)


def gibbs_sweep(state, flat, alpha, rng, _gid=None):
    """Resample every assignment once, in corpus order, updating counts
    incrementally.  Mutates state; one uniform is consumed per item."""
    tokens = _token_payload(flat)
    alpha = check_positive_vector(alpha)
    gid = item_groups(flat) if _gid is None else _gid
    u = rng.gen.random(tokens.shape[0])
    _gibbs_sweep_kernel(
        state.z, state.n_dk, state.n_kv, state.n_k,
        tokens, gid, alpha, state.label_bias, state.eta, u,
    )
    return state


def estimate_beta_theta(state, alpha):
    """Posterior-mean estimates from the current counts:
    beta_kv = (n_kv + eta)/(n_k + V eta), pi_dk = (n_dk + a_dk)/(N_d + sum a_d)
    with a_d = alpha + label_bias_d."""
    alpha = check_positive_vector(alpha)
    beta = (state.n_kv + state.eta) / (state.n_k + state.vocab_size * state.eta)[:, None]
    a = alpha + state.label_bias
    pi = (state.n_dk + a) / (state.n_dk.sum(axis=1, keepdims=True) + a.sum(axis=1, keepdims=True))
    return beta, pi


def gibbs_run(flat, K, alpha, eta, rng, burn_in=500, n_samples=500, label_weight=0.0, V=None):
    """Initialize, burn in, then average over n_samples sampling sweeps.

    Returns (state, item_post, beta_hat, pi_hat) where item_post[i] is the
    fraction of sampling sweeps assigning item i to each topic and the
    parameter estimates are means of the per-sweep posterior means.
    """
    if burn_in < 0 or n_samples < 1:
        raise ContractError("burn_in must be >= 0 and n_samples >= 1")
    alpha = check_positive_vector(alpha)
    state = gibbs_init(flat, K, eta, rng, label_weight=label_weight, V=V)
    gid = item_groups(flat)
    for _ in range(burn_in):
        gibbs_sweep(state, flat, alpha, rng, _gid=gid)
    item_post = np.zeros((flat.num_items, K))
    beta_hat = np.zeros((K, state.vocab_size))
    pi_hat = np.zeros((flat.num_groups, K))
    rows = np.arange(flat.num_items)
    for _ in range(n_samples):
        gibbs_sweep(state, flat, alpha, rng, _gid=gid)
        item_post[rows, state.z] += 1.0
        b, p = estimate_beta_theta(state, alpha)
        beta_hat += b
        pi_hat += p
    item_post /= n_samples
    beta_hat /= n_samples
    pi_hat /= n_samples
    return state, item_post, beta_hat, pi_hat


def lda_item_topic_avg(beliefs):
    """Mean of per-token topic beliefs; the item-level belief used when a
    generative model scores multi-token items."""
    b = np.asarray(beliefs, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] < 1:
        raise ContractError("need a (M, K) array with M >= 1 token beliefs")
    for row in b:
        check_simplex(row)
    return b.mean(axis=0)


def special_case_conditional(beta, token, pi):
    """Item-topic conditional when the per-topic token distributions are
    known: normalize(pi_k * beta_kv).  Matches the discriminative model's
    conditional run with fixed per-topic log-likelihood logits."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 2:
        raise ContractError("beta must be K x V")
    for row in beta:
        check_simplex(row)
    pi = check_simplex(pi)
    if pi.shape[0] != beta.shape[0]:
        raise ContractError("pi length does not match beta rows")
    token = int(token)
    if not 0 <= token < beta.shape[1]:
        raise ContractError("token out of range")
    p = pi * beta[:, token]
    total = p.sum()
    if not total > 0.0:
        raise DomainError("token has zero probability under every weighted topic")
    return p / total
