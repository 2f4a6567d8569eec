"""Corpus files, binary checkpoints, and prediction output.

Corpus format: UTF-8 lines, one JSON record per line.  The first line is a
header {"format": "corpus", "version": 1, "k": K, "payload": {"token": V}}
(or {"dense": E}), optionally with "vocab": [V strings].  Every following
line is one group {"id": ..., "label": ..., "items": [...]} where items are
token ids for token corpora and lists of E floats for dense ones.  Floats
travel as JSON decimal text, which round-trips float64 exactly.

Checkpoint format: magic "LLDA", little-endian uint32 version, uint32
section count, then sections of (uint32 name length, name bytes, uint64
payload length, payload bytes).  The "meta" section holds a JSON manifest;
every other section is one parameter array as little-endian float64 in C
order.  Length prefixes make truncation detectable.

All writers go through a temp file and rename, so partial output never
lands at the target path.
"""

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .encoders import ACTIVATIONS, EncoderParams, Item, KINDS
from .errors import (
    ContractError,
    CorpusFormatError,
    IntegrityError,
    UnsupportedVersionError,
)
from .mean_field import Group, HyperParams
from .regularizer import RegularizerState

__all__ = [
    "PayloadSpec",
    "Corpus",
    "Checkpoint",
    "corpus_from_groups",
    "save_corpus",
    "load_corpus",
    "save_truth",
    "load_truth",
    "save_checkpoint",
    "load_checkpoint",
    "write_predictions",
    "read_predictions",
    "CHECKPOINT_VERSION",
    "CORPUS_VERSION",
]

CORPUS_VERSION = 1
CHECKPOINT_VERSION = 1
_MAGIC = b"LLDA"


@dataclass(frozen=True)
class PayloadSpec:
    kind: str   # "token" or "dense"
    size: int   # vocabulary size V, or embedding dimension E

    def __post_init__(self):
        if self.kind not in ("token", "dense"):
            raise ContractError(f"payload kind must be token or dense, got {self.kind!r}")
        if self.size < 1:
            raise ContractError("payload size must be >= 1")


@dataclass
class Corpus:
    groups: list
    num_topics: int
    payload: PayloadSpec
    vocab: tuple = None

    def __post_init__(self):
        if not self.groups:
            raise ContractError("corpus must contain at least one group")
        if self.num_topics < 1:
            raise ContractError("num_topics must be >= 1")
        if self.vocab is not None:
            if self.payload.kind != "token":
                raise ContractError("vocab only applies to token corpora")
            self.vocab = tuple(str(w) for w in self.vocab)
            if len(self.vocab) != self.payload.size:
                raise ContractError("vocab length must equal vocabulary size")


def _payload_of_group(group) -> PayloadSpec:
    it = group.items[0]
    if it.token is not None:
        return PayloadSpec(kind="token", size=int(it.token) + 1)
    return PayloadSpec(kind="dense", size=it.dense.shape[0])


def corpus_from_groups(groups, num_topics, vocab=None, vocab_size=None):
    """Wrap in-memory groups as a Corpus, inferring the payload spec."""
    if not groups:
        raise ContractError("corpus must contain at least one group")
    kinds = set()
    max_token = -1
    dim = None
    for g in groups:
        for it in g.items:
            if it.token is not None:
                kinds.add("token")
                max_token = max(max_token, int(it.token))
            else:
                kinds.add("dense")
                dim = it.dense.shape[0]
    if len(kinds) != 1:
        raise ContractError("corpus mixes token and dense items")
    if kinds == {"token"}:
        size = int(vocab_size) if vocab_size is not None else max_token + 1
        spec = PayloadSpec(kind="token", size=size)
    else:
        spec = PayloadSpec(kind="dense", size=dim)
    return Corpus(groups=list(groups), num_topics=num_topics, payload=spec, vocab=vocab)


def _atomic_write(path, data: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _float_list(arr):
    return [float(x) for x in np.asarray(arr, dtype=np.float64).ravel()]


def save_corpus(path, corpus: Corpus):
    header = {
        "format": "corpus",
        "version": CORPUS_VERSION,
        "k": corpus.num_topics,
        "payload": {corpus.payload.kind: corpus.payload.size},
    }
    if corpus.vocab is not None:
        header["vocab"] = list(corpus.vocab)
    lines = [json.dumps(header, separators=(",", ":"))]
    for g in corpus.groups:
        if corpus.payload.kind == "token":
            items = [int(it.token) for it in g.items]
        else:
            items = [_float_list(it.dense) for it in g.items]
        rec = {"id": g.id, "items": items}
        if g.label is not None:
            rec["label"] = int(g.label)
        lines.append(json.dumps(rec, separators=(",", ":")))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _parse_json_line(raw, lineno):
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None


def _require(cond, lineno, msg):
    if not cond:
        raise CorpusFormatError(f"line {lineno}: {msg}")


def _read_header(lines, expect_format):
    _require(len(lines) >= 1 and lines[0].strip(), 1, "missing header record")
    header = _parse_json_line(lines[0], 1)
    _require(isinstance(header, dict), 1, "header must be an object")
    _require(header.get("format") == expect_format, 1,
             f"expected format {expect_format!r}, got {header.get('format')!r}")
    _require(header.get("version") == CORPUS_VERSION, 1,
             f"unsupported corpus version {header.get('version')!r}")
    return header


def load_corpus(path) -> Corpus:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = _read_header(lines, "corpus")
    k = header.get("k")
    _require(isinstance(k, int) and k >= 1, 1, "header k must be a positive integer")
    payload = header.get("payload")
    _require(
        isinstance(payload, dict) and len(payload) == 1
        and next(iter(payload)) in ("token", "dense"),
        1, "header payload must be {\"token\": V} or {\"dense\": E}",
    )
    kind, size = next(iter(payload.items()))
    _require(isinstance(size, int) and size >= 1, 1, "payload size must be a positive integer")
    vocab = header.get("vocab")
    if vocab is not None:
        _require(kind == "token", 1, "vocab only applies to token corpora")
        _require(isinstance(vocab, list) and len(vocab) == size, 1,
                 "vocab length must equal vocabulary size")

    groups = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            raise CorpusFormatError(f"line {lineno}: blank line")
        rec = _parse_json_line(raw, lineno)
        _require(isinstance(rec, dict), lineno, "group record must be an object")
        gid = rec.get("id")
        _require(isinstance(gid, str) and gid, lineno, "group id must be a non-empty string")
        items_raw = rec.get("items")
        _require(isinstance(items_raw, list) and items_raw, lineno,
                 "items must be a non-empty list")
        label = rec.get("label")
        if label is not None:
            _require(isinstance(label, int) and 0 <= label < k, lineno,
                     f"label {label!r} not in [0, {k})")
        items = []
        for j, entry in enumerate(items_raw):
            if kind == "token":
                _require(isinstance(entry, int) and not isinstance(entry, bool),
                         lineno, f"item {j}: token must be an integer")
                _require(0 <= entry < size, lineno,
                         f"item {j}: token {entry} not in [0, {size})")
                items.append(Item(token=entry))
            else:
                _require(isinstance(entry, list) and len(entry) == size, lineno,
                         f"item {j}: expected {size} floats")
                vec = np.asarray(entry, dtype=np.float64)
                _require(bool(np.all(np.isfinite(vec))), lineno,
                         f"item {j}: embedding has non-finite entries")
                items.append(Item(dense=vec))
        groups.append(Group(id=gid, items=items, label=label))
    if not groups:
        raise CorpusFormatError(f"line {len(lines) + 1}: corpus has no groups")
    return Corpus(groups=groups, num_topics=k,
                  payload=PayloadSpec(kind=kind, size=size), vocab=vocab)


def save_truth(path, corpus: Corpus, truth):
    """Ground-truth sidecar: per group the generating pi row and the true
    topic of each item, in corpus order."""
    if truth.pi.shape[0] != len(corpus.groups):
        raise ContractError("truth pi rows must match group count")
    header = {"format": "corpus-truth", "version": CORPUS_VERSION, "k": corpus.num_topics}
    lines = [json.dumps(header, separators=(",", ":"))]
    pos = 0
    for d, g in enumerate(corpus.groups):
        n = len(g.items)
        rec = {
            "id": g.id,
            "pi": _float_list(truth.pi[d]),
            "z": [int(t) for t in truth.z[pos : pos + n]],
        }
        pos += n
        lines.append(json.dumps(rec, separators=(",", ":")))
    if pos != truth.z.shape[0]:
        raise ContractError("truth z length must match total item count")
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def load_truth(path):
    """Returns (ids, pi (D, K), z flat, labels) from a sidecar file."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = _read_header(lines, "corpus-truth")
    k = header.get("k")
    _require(isinstance(k, int) and k >= 1, 1, "header k must be a positive integer")
    ids, pis, zs = [], [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        rec = _parse_json_line(raw, lineno)
        _require(isinstance(rec, dict), lineno, "truth record must be an object")
        _require(isinstance(rec.get("id"), str), lineno, "missing group id")
        pi = np.asarray(rec.get("pi"), dtype=np.float64)
        _require(pi.shape == (k,), lineno, f"pi must have length {k}")
        z = rec.get("z")
        _require(isinstance(z, list) and z, lineno, "z must be a non-empty list")
        _require(all(isinstance(t, int) and 0 <= t < k for t in z), lineno,
                 "z entries must be topics in range")
        ids.append(rec["id"])
        pis.append(pi)
        zs.extend(z)
    _require(len(ids) > 0, 2, "truth file has no groups")
    pi = np.array(pis)
    return ids, pi, np.asarray(zs, dtype=np.int64), pi.argmax(axis=1)


@dataclass
class Checkpoint:
    """Everything needed to resume or apply a trained model."""

    hyper: HyperParams
    params: EncoderParams
    reg_state: RegularizerState = None
    provenance: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def _array_bytes(arr):
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _checkpoint_manifest(cp: Checkpoint):
    arrays = [("alpha", cp.hyper.alpha)]
    enc = {"kind": cp.params.kind}
    if cp.params.kind == "mlp":
        enc["activations"] = list(cp.params.activations)
        for i, (w, b) in enumerate(zip(cp.params.weights, cp.params.biases)):
            arrays.append((f"weights_{i}", w))
            arrays.append((f"biases_{i}", b))
    else:
        arrays.append(("table", cp.params.table))
    reg = None
    if cp.reg_state is not None:
        reg = {"rho": cp.reg_state.rho, "items_seen": int(cp.reg_state.items_seen)}
        arrays.append(("reg_log_ema", cp.reg_state.log_ema_per_topic))
    meta = {
        "hyper": {
            "lam": cp.hyper.lam,
            "gamma": cp.hyper.gamma,
            "n_iter": cp.hyper.n_iter,
            "rho": cp.hyper.rho,
        },
        "encoder": enc,
        "regularizer": reg,
        "provenance": cp.provenance,
        "arrays": [[name, list(a.shape)] for name, a in arrays],
    }
    return meta, arrays


def save_checkpoint(path, cp: Checkpoint):
    meta, arrays = _checkpoint_manifest(cp)
    sections = [("meta", json.dumps(meta, separators=(",", ":")).encode("utf-8"))]
    sections += [(name, _array_bytes(a)) for name, a in arrays]
    out = [_MAGIC, struct.pack("<I", cp.version), struct.pack("<I", len(sections))]
    for name, payload in sections:
        nb = name.encode("utf-8")
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack("<Q", len(payload)))
        out.append(payload)
    _atomic_write(path, b"".join(out))


class _Cursor:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise IntegrityError(
                f"checkpoint truncated: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data)
    if cur.take(4) != _MAGIC:
        raise IntegrityError("bad magic bytes; not a checkpoint file")
    version = cur.u32()
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(
            f"checkpoint version {version}; this build reads {CHECKPOINT_VERSION}"
        )
    n_sections = cur.u32()
    sections = {}
    order = []
    for _ in range(n_sections):
        name = cur.take(cur.u32()).decode("utf-8")
        payload = bytes(cur.take(cur.u64()))
        if name in sections:
            raise IntegrityError(f"duplicate checkpoint section {name!r}")
        sections[name] = payload
        order.append(name)
    if cur.pos != len(data):
        raise IntegrityError(f"{len(data) - cur.pos} trailing bytes after last section")
    if "meta" not in sections:
        raise IntegrityError("checkpoint has no meta section")
    try:
        meta = json.loads(sections["meta"].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"unreadable meta section: {exc}") from None

    arrays = {}
    for name, shape in meta["arrays"]:
        if name not in sections:
            raise IntegrityError(f"manifest names missing section {name!r}")
        shape = tuple(int(s) for s in shape)
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = sections[name]
        if len(raw) != count * 8:
            raise IntegrityError(
                f"section {name!r} holds {len(raw)} bytes, manifest shape {shape} needs {count * 8}"
            )
        arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)

    enc = meta["encoder"]
    kind = enc.get("kind")
    if kind not in KINDS:
        raise IntegrityError(f"unknown encoder kind {kind!r}")
    if kind == "mlp":
        acts = tuple(enc.get("activations", ()))
        if any(a not in ACTIVATIONS for a in acts):
            raise IntegrityError(f"unknown activation in {acts!r}")
        n_layers = len(acts)
        weights, biases = [], []
        for i in range(n_layers):
            if f"weights_{i}" not in arrays or f"biases_{i}" not in arrays:
                raise IntegrityError(f"missing layer {i} arrays")
            weights.append(arrays[f"weights_{i}"])
            biases.append(arrays[f"biases_{i}"])
        params = EncoderParams(kind="mlp", weights=tuple(weights), biases=tuple(biases),
                               activations=acts)
    else:
        if "table" not in arrays:
            raise IntegrityError("missing table array")
        params = EncoderParams(kind=kind, table=arrays["table"])

    h = meta["hyper"]
    hyper = HyperParams(alpha=arrays["alpha"], lam=float(h["lam"]), gamma=float(h["gamma"]),
                        n_iter=int(h["n_iter"]), rho=float(h["rho"]))
    reg_state = None
    if meta.get("regularizer") is not None:
        r = meta["regularizer"]
        reg_state = RegularizerState(rho=float(r["rho"]),
                                     log_ema_per_topic=arrays["reg_log_ema"],
                                     items_seen=int(r["items_seen"]))
    return Checkpoint(hyper=hyper, params=params, reg_state=reg_state,
                      provenance=meta.get("provenance", {}), version=version)


def _fmt_row(row):
    return "[" + ",".join(f"{x:.6f}" for x in row) + "]"


def write_predictions(path, ids, labels, p_label, p_items, offsets):
    """One record per group, probabilities fixed to 6 decimal places.

    Output is line-delimited JSON: a header, then
    {"id", "label", "p_label": [...], "p_items": [[...], ...]} per group.
    """
    p_label = np.asarray(p_label, dtype=np.float64)
    p_items = np.asarray(p_items, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.int64)
    D = len(ids)
    if not (len(labels) == D and p_label.shape[0] == D and offsets.shape[0] == D + 1):
        raise ContractError("ids, labels, p_label and offsets must agree on group count")
    if offsets[-1] != p_items.shape[0]:
        raise ContractError("offsets do not cover p_items")
    k = p_label.shape[1] if D else 0
    lines = [json.dumps({"format": "predictions", "version": 1, "k": k},
                        separators=(",", ":"))]
    for d, gid in enumerate(ids):
        rows = ",".join(_fmt_row(r) for r in p_items[offsets[d] : offsets[d + 1]])
        lines.append(
            f'{{"id":{json.dumps(str(gid))},"label":{int(labels[d])},'
            f'"p_label":{_fmt_row(p_label[d])},"p_items":[{rows}]}}'
        )
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_predictions(path):
    """Returns (ids, labels, p_label, p_items list of per-group arrays)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    _require(len(lines) >= 1, 1, "missing predictions header")
    header = _parse_json_line(lines[0], 1)
    _require(header.get("format") == "predictions", 1, "not a predictions file")
    ids, labels, p_label, p_items = [], [], [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        rec = _parse_json_line(raw, lineno)
        ids.append(rec["id"])
        labels.append(int(rec["label"]))
        p_label.append(rec["p_label"])
        p_items.append(np.asarray(rec["p_items"], dtype=np.float64))
    return ids, np.asarray(labels, dtype=np.int64), np.asarray(p_label, dtype=np.float64), p_items
