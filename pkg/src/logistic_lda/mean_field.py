"""Mean-field variational state per group and its coordinate updates.

A group d carries items x_d1..x_dN and optionally a label c_d.  The
factorized posterior q(pi_d) q(c_d) prod_n q(k_dn) is parameterized by

    alpha_hat  Dirichlet parameter of q(pi_d)
    p_label    categorical beliefs of q(c_d), one-hot and frozen when the
               label is observed and clamping is requested
    p_items    categorical beliefs of q(k_dn), one row per item

The three coordinate updates (any order is valid):

    p_items[n] = softmax(f(x_dn, theta) + psi(alpha_hat))
    alpha_hat  = alpha + sum_n p_items[n] + lam * p_label
    p_label    = softmax(lam * psi(alpha_hat))        unless clamped

Each update maximizes the evidence lower bound in its own coordinate, so
`elbo` is non-decreasing along any update sequence with theta held fixed.

Single-group operations below are the readable reference path; the
flattened batch kernels at the bottom (numba or vectorized numpy, chosen
by the backend flag) do the same arithmetic for whole corpora and are
what training and inference call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import njit, pick
from .encoders import EncoderParams, Item, forward_logits_batch, log_softmax_g_batch
from .errors import ContractError, DomainError
from .math_kernels import (
    check_positive_vector,
    digamma,
    digamma_scalar_nb,
    expected_log_pi,
    ln_multivariate_beta,
    log_softmax,
    softmax,
)

DEFAULT_ORDER = ("items", "alpha", "label")


@dataclass
class Group:
    """One document/user/collection of items, optionally labeled."""

    id: str
    items: list
    label: int | None = None

    def __post_init__(self):
        if not self.items:
            raise ContractError(f"group {self.id!r} has no items")
        if self.label is not None:
            self.label = int(self.label)
            if self.label < 0:
                raise DomainError(f"group {self.id!r}: label must be a non-negative index")


@dataclass
class HyperParams:
    """Model hyperparameters.  `lam` is the label-coupling strength
    (lambda is a reserved word), `gamma` the topic-usage regularizer
    weight, `n_iter` the number of unrolled update iterations, `rho` the
    decay of the running topic-usage estimate."""

    alpha: np.ndarray
    lam: float = 1.0
    gamma: float = 0.0
    n_iter: int = 5
    rho: float = 0.99

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        check_positive_vector(self.alpha)
        if self.lam < 0:
            raise DomainError("lam must be >= 0")
        if self.gamma < 0:
            raise DomainError("gamma must be >= 0")
        if self.n_iter < 1:
            raise ContractError("n_iter must be a positive integer")
        if not 0.0 <= self.rho < 1.0:
            raise DomainError("rho must lie in [0, 1)")

    @property
    def num_topics(self) -> int:
        return self.alpha.size


@dataclass
class MeanFieldState:
    alpha_hat: np.ndarray
    p_label: np.ndarray
    p_items: np.ndarray  # (N, K)
    clamped: bool = False


def group_payload(group: Group):
    """Stack the group's item payloads into one array for the encoder."""
    first = group.items[0]
    if first.dense is not None:
        return np.stack([it.dense for it in group.items])
    return np.array([it.token for it in group.items], dtype=np.int64)


def init_state(group: Group, hyper: HyperParams, clamp_label: bool = False) -> MeanFieldState:
    """Uniform beliefs and alpha_hat = alpha; the label belief is the
    observed one-hot when clamping is requested and a label exists."""
    K = hyper.num_topics
    if group.label is not None and group.label >= K:
        raise DomainError(f"group {group.id!r}: label {group.label} outside [0, {K})")
    clamped = clamp_label and group.label is not None
    if clamped:
        p_label = np.zeros(K)
        p_label[group.label] = 1.0
    else:
        p_label = np.full(K, 1.0 / K)
    return MeanFieldState(
        alpha_hat=hyper.alpha.copy(),
        p_label=p_label,
        p_items=np.full((len(group.items), K), 1.0 / K),
        clamped=clamped,
    )


def update_item_beliefs(state: MeanFieldState, group: Group, theta: EncoderParams) -> np.ndarray:
    f = forward_logits_batch(group_payload(group), theta)
    state.p_items = softmax(f + digamma(state.alpha_hat), axis=-1)
    return state.p_items


def update_alpha(state: MeanFieldState, hyper: HyperParams) -> np.ndarray:
    state.alpha_hat = hyper.alpha + state.p_items.sum(axis=0) + hyper.lam * state.p_label
    return state.alpha_hat


def update_label_beliefs(state: MeanFieldState, hyper: HyperParams) -> np.ndarray:
    if not state.clamped:
        state.p_label = softmax(hyper.lam * digamma(state.alpha_hat))
    return state.p_label


def sweep(group, state, theta, hyper, order=DEFAULT_ORDER) -> MeanFieldState:
    """Apply the three coordinate updates once, in the given order."""
    for step in order:
        if step == "items":
            update_item_beliefs(state, group, theta)
        elif step == "alpha":
            update_alpha(state, hyper)
        elif step == "label":
            update_label_beliefs(state, hyper)
        else:
            raise ContractError(f"unknown update {step!r}")
    return state


def run_sweeps(
    group, state, theta, hyper, order=DEFAULT_ORDER, tol=1e-6, max_sweeps=100
):
    """Sweep until max |change in alpha_hat| < tol, or the cap is hit.
    Returns (state, sweeps_done)."""
    for s in range(max_sweeps):
        prev = state.alpha_hat
        sweep(group, state, theta, hyper, order)
        if np.max(np.abs(state.alpha_hat - prev)) < tol:
            return state, s + 1
    return state, max_sweeps


def elbo(group: Group, state: MeanFieldState, theta: EncoderParams, hyper: HyperParams) -> float:
    """Evidence lower bound up to an additive constant independent of the
    variational parameters (theta-only terms, including the topic-usage
    regularizer, are dropped).  Uses the 0 * (-inf) = 0 convention where a
    zero belief meets a -inf log-probability."""
    g = log_softmax_g_batch(group_payload(group), theta)
    a_hat = state.alpha_hat
    eln_pi = expected_log_pi(a_hat)
    P = state.p_items
    pl = state.p_label

    def dot0(x, y):
        # sum of x*y treating entries with x == 0 as exactly 0
        return float(np.sum(np.where(x > 0.0, x * y, 0.0)))

    with np.errstate(divide="ignore", invalid="ignore"):
        total = float((hyper.alpha - 1.0) @ eln_pi)
        total += dot0(P, g + eln_pi)
        total -= dot0(P, np.log(P))
        total += hyper.lam * float(pl @ eln_pi)
        total -= dot0(pl, np.log(pl))
        total += ln_multivariate_beta(a_hat) - float((a_hat - 1.0) @ eln_pi)
    return total


# ---------------------------------------------------------------------------
# flattened batch layer

@dataclass
class FlatGroups:
    """A corpus packed for the batch kernels: payload rows for all items in
    group order, offsets[d]:offsets[d+1] delimiting group d, labels with -1
    where absent."""

    payload: np.ndarray
    offsets: np.ndarray
    labels: np.ndarray
    ids: list = field(default_factory=list)

    @property
    def num_groups(self) -> int:
        return self.offsets.size - 1

    @property
    def num_items(self) -> int:
        return int(self.offsets[-1])

    def sizes(self):
        return np.diff(self.offsets)


def flatten_groups(groups) -> FlatGroups:
    if not groups:
        raise ContractError("need at least one group")
    payloads = [group_payload(g) for g in groups]
    offsets = np.zeros(len(groups) + 1, dtype=np.int64)
    np.cumsum([p.shape[0] for p in payloads], out=offsets[1:])
    labels = np.array([-1 if g.label is None else g.label for g in groups], dtype=np.int64)
    return FlatGroups(
        payload=np.concatenate(payloads),
        offsets=offsets,
        labels=labels,
        ids=[g.id for g in groups],
    )


def _mean_field_batch_nb(F, offsets, alpha, lam, labels, clamp, max_sweeps, tol, AH0, PL0):
    total, K = F.shape
    D = offsets.shape[0] - 1
    P = np.empty((total, K))
    PL = np.empty((D, K))
    AH = np.empty((D, K))
    for d in range(D):
        lab = labels[d]
        if clamp and lab >= 0:
            for k in range(K):
                PL[d, k] = 0.0
            PL[d, lab] = 1.0
        else:
            for k in range(K):
                PL[d, k] = PL0[d, k]
        for k in range(K):
            AH[d, k] = AH0[d, k]
    psi_a = np.empty(K)
    sweeps = 0
    for _ in range(max_sweeps):
        delta = 0.0
        for d in range(D):
            lo, hi = offsets[d], offsets[d + 1]
            for k in range(K):
                psi_a[k] = digamma_scalar_nb(AH[d, k])
            for n in range(lo, hi):
                m = -np.inf
                for k in range(K):
                    v = F[n, k] + psi_a[k]
                    P[n, k] = v
                    if v > m:
                        m = v
                s = 0.0
                for k in range(K):
                    e = np.exp(P[n, k] - m)
                    P[n, k] = e
                    s += e
                for k in range(K):
                    P[n, k] /= s
            for k in range(K):
                new = alpha[k] + lam * PL[d, k]
                for n in range(lo, hi):
                    new += P[n, k]
                diff = new - AH[d, k]
                if diff < 0.0:
                    diff = -diff
                if diff > delta:
                    delta = diff
                AH[d, k] = new
            if not (clamp and labels[d] >= 0):
                m = -np.inf
                for k in range(K):
                    v = lam * digamma_scalar_nb(AH[d, k])
                    PL[d, k] = v
                    if v > m:
                        m = v
                s = 0.0
                for k in range(K):
                    e = np.exp(PL[d, k] - m)
                    PL[d, k] = e
                    s += e
                for k in range(K):
                    PL[d, k] /= s
        sweeps += 1
        if tol > 0.0 and delta < tol:
            break
    return P, PL, AH, sweeps


_mean_field_batch_nb_jit = njit(_mean_field_batch_nb)


def _mean_field_batch_np(F, offsets, alpha, lam, labels, clamp, max_sweeps, tol, AH0, PL0):
    D = offsets.shape[0] - 1
    K = F.shape[1]
    sizes = np.diff(offsets)
    AH = AH0.copy()
    PL = PL0.copy()
    if clamp:
        observed = np.nonzero(labels >= 0)[0]
        PL[observed] = 0.0
        PL[observed, labels[observed]] = 1.0
    else:
        observed = np.empty(0, dtype=np.int64)
    P = np.empty_like(F)
    sweeps = 0
    for _ in range(max_sweeps):
        psi_a = digamma(AH)
        P = softmax(F + np.repeat(psi_a, sizes, axis=0), axis=-1)
        new_AH = alpha + np.add.reduceat(P, offsets[:-1], axis=0) + lam * PL
        delta = float(np.max(np.abs(new_AH - AH)))
        AH = new_AH
        new_PL = softmax(lam * digamma(AH), axis=-1)
        if clamp and observed.size:
            new_PL[observed] = PL[observed]
        PL = new_PL
        sweeps += 1
        if tol > 0.0 and delta < tol:
            break
    return P, PL, AH, sweeps


_mean_field_batch = pick(_mean_field_batch_nb_jit, _mean_field_batch_np)


def batch_mean_field(
    F,
    flat: FlatGroups,
    hyper: HyperParams,
    clamp_labels,
    max_sweeps,
    tol=0.0,
    alpha_hat0=None,
    p_label0=None,
):
    """Run coordinate sweeps for a whole corpus from cached logits F
    (num_items, K).  tol = 0 runs exactly max_sweeps sweeps (the unrolled
    regime); tol > 0 stops once max |change in alpha_hat| drops below it.
    alpha_hat0/p_label0 warm-start the per-group state (fresh alpha and
    uniform beliefs otherwise); clamped labels override p_label0.
    Returns (p_items, p_label, alpha_hat, sweeps_done)."""
    F = np.ascontiguousarray(F, dtype=np.float64)
    D, K = flat.num_groups, hyper.num_topics
    if F.shape != (flat.num_items, K):
        raise ContractError("logit array shape does not match corpus layout")
    if clamp_labels and flat.labels.max(initial=-1) >= K:
        raise DomainError("label outside [0, K)")
    if alpha_hat0 is None:
        alpha_hat0 = np.tile(hyper.alpha, (D, 1))
    if p_label0 is None:
        p_label0 = np.full((D, K), 1.0 / K)
    alpha_hat0 = np.ascontiguousarray(alpha_hat0, dtype=np.float64)
    p_label0 = np.ascontiguousarray(p_label0, dtype=np.float64)
    if alpha_hat0.shape != (D, K) or p_label0.shape != (D, K):
        raise ContractError("warm-start arrays must be (num_groups, K)")
    return _mean_field_batch(
        F,
        flat.offsets,
        hyper.alpha,
        float(hyper.lam),
        flat.labels,
        bool(clamp_labels),
        int(max_sweeps),
        float(tol),
        alpha_hat0,
        p_label0,
    )
