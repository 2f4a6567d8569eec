"""Per-item logit functions f(x, theta).

Three interchangeable kinds:

  mlp          feedforward net over dense embedding vectors
  table        free K x V logit table indexed by token id (trainable)
  fixed_loglik frozen K x V row-stochastic matrix; logits are ln beta[:, v],
               which reproduces the word term of collapsed generative LDA

All kinds expose forward logits, the normalized variant g = ln softmax f,
and exact reverse-mode gradients of <u, f(x, theta)> wrt theta.  Gradients
are computed per item (or per batch) and summed; the encoder itself holds
no optimizer state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError, UnsupportedOperationError
from .math_kernels import SIMPLEX_ATOL, SeededRng, log_softmax

KINDS = ("mlp", "table", "fixed_loglik")
ACTIVATIONS = ("tanh", "relu", "linear")


@dataclass(frozen=True)
class Item:
    """One observation: a dense embedding vector or a vocabulary token id."""

    dense: np.ndarray | None = None
    token: int | None = None

    def __post_init__(self):
        if (self.dense is None) == (self.token is None):
            raise ContractError("item must carry exactly one of: dense vector, token id")
        if self.dense is not None:
            arr = np.asarray(self.dense, dtype=np.float64)
            if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
                raise DomainError("dense payload must be a finite 1-d vector")
            object.__setattr__(self, "dense", arr)
        else:
            tok = int(self.token)
            if tok < 0:
                raise DomainError("token id must be non-negative")
            object.__setattr__(self, "token", tok)


@dataclass
class EncoderParams:
    """Parameters of f.  mlp uses weights/biases/activations; the other two
    kinds keep a single (K, V) matrix in `table` (logits, or beta rows)."""

    kind: str
    weights: tuple = ()
    biases: tuple = ()
    activations: tuple = ()
    table: np.ndarray | None = None

    @property
    def num_topics(self) -> int:
        if self.kind == "mlp":
            return self.weights[-1].shape[0]
        return self.table.shape[0]

    @property
    def vocab_size(self) -> int:
        if self.kind == "mlp":
            raise ContractError("mlp encoder has no vocabulary")
        return self.table.shape[1]


@dataclass
class EncoderGradient:
    """Same shapes as the matching EncoderParams (mlp and table kinds only)."""

    kind: str
    weights: tuple = ()
    biases: tuple = ()
    table: np.ndarray | None = None


def _check_tokens(tokens, vocab_size):
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab_size):
        raise ContractError("token id outside [0, vocab_size)")


def _mlp_forward(theta, X, keep_hidden=False):
    # hs[l] is the input to layer l; hs[-1] the final logits
    h = X
    hs = [h]
    for W, b, act in zip(theta.weights, theta.biases, theta.activations):
        a = h @ W.T + b
        if act == "tanh":
            h = np.tanh(a)
        elif act == "relu":
            h = np.maximum(a, 0.0)
        elif act == "linear":
            h = a
        else:
            raise ContractError(f"unknown activation {act!r}")
        hs.append(h)
    if keep_hidden:
        return h, hs
    return h


def _act_grad(name, h):
    # derivative of the activation expressed through its output h
    if name == "tanh":
        return 1.0 - h * h
    if name == "relu":
        return (h > 0.0).astype(np.float64)
    return None


def forward_logits_batch(payload, theta: EncoderParams) -> np.ndarray:
    """Logits for a whole batch: (N, E) dense rows or (N,) token ids -> (N, K)."""
    if theta.kind == "mlp":
        X = np.asarray(payload, dtype=np.float64)
        if X.ndim != 2:
            raise ContractError("mlp payload must be a (N, E) array")
        if X.shape[1] != theta.weights[0].shape[1]:
            raise ContractError(
                f"payload dim {X.shape[1]} != encoder input dim {theta.weights[0].shape[1]}"
            )
        return _mlp_forward(theta, X)
    tokens = np.asarray(payload)
    if tokens.dtype.kind not in "iu" or tokens.ndim != 1:
        raise ContractError("token payload must be a 1-d integer array")
    _check_tokens(tokens, theta.table.shape[1])
    if theta.kind == "table":
        return theta.table[:, tokens].T.copy()
    if theta.kind == "fixed_loglik":
        # beta entries may be exactly zero; ln 0 = -inf is the intended value
        with np.errstate(divide="ignore"):
            return np.log(theta.table[:, tokens].T)
    raise ContractError(f"unknown encoder kind {theta.kind!r}")


def forward_logits(item: Item, theta: EncoderParams) -> np.ndarray:
    """f(x, theta): K logits for one item."""
    if theta.kind == "mlp":
        if item.dense is None:
            raise ContractError("mlp encoder needs a dense payload")
        return forward_logits_batch(item.dense[None, :], theta)[0]
    if item.token is None:
        raise ContractError(f"{theta.kind} encoder needs a token payload")
    return forward_logits_batch(np.array([item.token]), theta)[0]


def log_softmax_g_batch(payload, theta: EncoderParams) -> np.ndarray:
    """g = ln softmax f for mlp/table; fixed_loglik logits pass through
    unnormalized (rows of beta are already probability distributions over
    tokens, and normalizing over topics would destroy that structure)."""
    f = forward_logits_batch(payload, theta)
    if theta.kind == "fixed_loglik":
        return f
    return log_softmax(f, axis=-1)


def log_softmax_g(item: Item, theta: EncoderParams) -> np.ndarray:
    f = forward_logits(item, theta)
    if theta.kind == "fixed_loglik":
        return f
    return log_softmax(f)


def backward_batch(payload, theta: EncoderParams, grad_wrt_logits) -> EncoderGradient:
    """Gradient of sum_n <grad_wrt_logits[n], f(x_n, theta)> wrt theta."""
    if theta.kind == "fixed_loglik":
        raise UnsupportedOperationError("fixed log-likelihood table has no trainable parameters")
    dF = np.asarray(grad_wrt_logits, dtype=np.float64)
    if dF.ndim != 2 or dF.shape[1] != theta.num_topics:
        raise ContractError("grad_wrt_logits must be (N, K)")

    if theta.kind == "table":
        tokens = np.asarray(payload)
        _check_tokens(tokens, theta.table.shape[1])
        G = np.zeros_like(theta.table)
        np.add.at(G.T, tokens, dF)
        return EncoderGradient(kind="table", table=G)

    X = np.asarray(payload, dtype=np.float64)
    _, hs = _mlp_forward(theta, X, keep_hidden=True)
    L = len(theta.weights)
    dWs = [None] * L
    dbs = [None] * L
    dh = dF
    for l in reversed(range(L)):
        g = _act_grad(theta.activations[l], hs[l + 1])
        da = dh if g is None else dh * g
        dWs[l] = da.T @ hs[l]
        dbs[l] = da.sum(axis=0)
        if l:
            dh = da @ theta.weights[l]
    return EncoderGradient(kind="mlp", weights=tuple(dWs), biases=tuple(dbs))


def backward(item: Item, theta: EncoderParams, grad_wrt_logits) -> EncoderGradient:
    """Exact reverse-mode gradient of <grad_wrt_logits, f(x, theta)>."""
    u = np.asarray(grad_wrt_logits, dtype=np.float64)
    if theta.kind == "mlp":
        return backward_batch(item.dense[None, :], theta, u[None, :])
    if theta.kind == "table":
        return backward_batch(np.array([item.token]), theta, u[None, :])
    raise UnsupportedOperationError("fixed log-likelihood table has no trainable parameters")


def init_params(kind, dims, scale, rng: SeededRng, activations=None) -> EncoderParams:
    """Fresh parameters.

    mlp:   dims = (E, hidden..., K); weights ~ N(0, scale^2 / fan_in),
           biases zero; default activations are tanh on hidden layers and
           linear on the output layer.
    table: dims = (K, V); entries ~ N(0, scale^2).  scale > 0 matters for
           unsupervised fitting: an all-zero table is an exact stationary
           point of the symmetric objective and gradient descent never
           leaves it.
    """
    dims = tuple(int(d) for d in dims)
    if any(d <= 0 for d in dims):
        raise ContractError("all dimensions must be positive")
    if kind == "mlp":
        if len(dims) < 2:
            raise ContractError("mlp needs at least (input_dim, K)")
        n_layers = len(dims) - 1
        if activations is None:
            activations = ("tanh",) * (n_layers - 1) + ("linear",)
        activations = tuple(activations)
        if len(activations) != n_layers or any(a not in ACTIVATIONS for a in activations):
            raise ContractError("one activation per layer, each in %r" % (ACTIVATIONS,))
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            std = float(scale) / np.sqrt(fan_in)
            weights.append(rng.gen.normal(0.0, std, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return EncoderParams(
            kind="mlp", weights=tuple(weights), biases=tuple(biases), activations=activations
        )
    if kind == "table":
        if len(dims) != 2:
            raise ContractError("table needs dims (K, V)")
        return EncoderParams(kind="table", table=rng.gen.normal(0.0, float(scale), size=dims))
    if kind == "fixed_loglik":
        raise ContractError("fixed_loglik params come from fixed_loglik_params(beta)")
    raise ContractError(f"unknown encoder kind {kind!r}")


def fixed_loglik_params(beta) -> EncoderParams:
    """Wrap a row-stochastic (K, V) matrix beta as a frozen encoder."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.ndim != 2:
        raise ContractError("beta must be a (K, V) matrix")
    if np.any(beta < 0) or not np.all(np.isfinite(beta)):
        raise DomainError("beta entries must be finite and non-negative")
    if np.any(np.abs(beta.sum(axis=1) - 1.0) > SIMPLEX_ATOL):
        raise DomainError("each beta row must sum to 1")
    return EncoderParams(kind="fixed_loglik", table=beta)


# ---------------------------------------------------------------------------
# flat views, for optimizers that work on a single parameter vector

def _arrays_of(p):
    if p.kind == "mlp":
        out = []
        for W, b in zip(p.weights, p.biases):
            out.extend((W, b))
        return out
    if p.kind == "table":
        return [p.table]
    return []


def num_params(theta: EncoderParams) -> int:
    return sum(a.size for a in _arrays_of(theta))


def params_to_flat(theta: EncoderParams) -> np.ndarray:
    arrs = _arrays_of(theta)
    if not arrs:
        return np.empty(0)
    return np.concatenate([a.ravel() for a in arrs])


grad_to_flat = params_to_flat  # gradients share the container layout


def flat_to_params(flat, template: EncoderParams) -> EncoderParams:
    """Rebuild params with the template's shapes from one flat vector."""
    flat = np.asarray(flat, dtype=np.float64)
    if flat.size != num_params(template):
        raise ContractError("flat vector length does not match parameter count")
    if template.kind == "fixed_loglik":
        return template
    pos = 0
    parts = []
    for a in _arrays_of(template):
        parts.append(flat[pos : pos + a.size].reshape(a.shape).copy())
        pos += a.size
    if template.kind == "table":
        return EncoderParams(kind="table", table=parts[0])
    weights = tuple(parts[0::2])
    biases = tuple(parts[1::2])
    return EncoderParams(
        kind="mlp", weights=weights, biases=biases, activations=template.activations
    )
