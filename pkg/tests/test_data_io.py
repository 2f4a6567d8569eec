import json

import numpy as np
import pytest

from logistic_lda.data_io import (
    Checkpoint,
    Corpus,
    PayloadSpec,
    corpus_from_groups,
    load_checkpoint,
    load_corpus,
    load_truth,
    read_predictions,
    save_checkpoint,
    save_corpus,
    save_truth,
    write_predictions,
)
from logistic_lda.encoders import EncoderParams, Item, init_params, params_to_flat
from logistic_lda.errors import (
    ContractError,
    CorpusFormatError,
    IntegrityError,
    UnsupportedVersionError,
)
from logistic_lda.lda_baseline import generate_corpus
from logistic_lda.math_kernels import SeededRng
from logistic_lda.mean_field import Group, HyperParams
from logistic_lda.regularizer import RegularizerState


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


HEADER = '{"format":"corpus","version":1,"k":3,"payload":{"token":5}}'


class TestCorpusLoad:
    def test_minimal_token_corpus(self, tmp_path):
        p = tmp_path / "c.jsonl"
        write_lines(p, [HEADER, '{"id":"g1","items":[2]}'])
        corpus = load_corpus(p)
        assert corpus.num_topics == 3
        assert corpus.payload == PayloadSpec(kind="token", size=5)
        assert len(corpus.groups) == 1
        assert corpus.groups[0].items[0].token == 2
        assert corpus.groups[0].label is None

    def test_token_out_of_range_names_line(self, tmp_path):
        p = tmp_path / "c.jsonl"
        write_lines(p, [HEADER, '{"id":"g1","items":[1]}', '{"id":"g2","items":[5]}'])
        with pytest.raises(CorpusFormatError, match="line 3"):
            load_corpus(p)

    def test_invalid_json_names_line(self, tmp_path):
        p = tmp_path / "c.jsonl"
        write_lines(p, [HEADER, '{"id":"g1","items":[1]', ])
        with pytest.raises(CorpusFormatError, match="line 2"):
            load_corpus(p)

    def test_label_out_of_range(self, tmp_path):
        p = tmp_path / "c.jsonl"
        write_lines(p, [HEADER, '{"id":"g1","label":3,"items":[0]}'])
        with pytest.raises(CorpusFormatError, match="line 2"):
            load_corpus(p)

    def test_mixed_payload_rejected(self, tmp_path):
        p = tmp_path / "c.jsonl"
        write_lines(p, [HEADER, '{"id":"g1","items":[[0.1,0.2]]}'])
        with pytest.raises(CorpusFormatError, match="token must be an integer"):
            load_corpus(p)

    def test_nan_embedding_rejected(self, tmp_path):
        p = tmp_path / "c.jsonl"
        write_lines(p, [
            '{"format":"corpus","version":1,"k":2,"payload":{"dense":2}}',
            '{"id":"g1","items":[[0.1,NaN]]}',
        ])
        with pytest.raises(CorpusFormatError, match="line 2"):
            load_corpus(p)

    def test_header_only_rejected(self, tmp_path):
        p = tmp_path / "c.jsonl"
        write_lines(p, [HEADER])
        with pytest.raises(CorpusFormatError, match="no groups"):
            load_corpus(p)

    def test_wrong_format_field(self, tmp_path):
        p = tmp_path / "c.jsonl"
        write_lines(p, ['{"format":"zebra","version":1}'])
        with pytest.raises(CorpusFormatError, match="line 1"):
            load_corpus(p)

    def test_missing_file_raises_oserror(self, tmp_path):
        with pytest.raises(OSError):
            load_corpus(tmp_path / "nope.jsonl")

    def test_vocab_roundtrip(self, tmp_path):
        groups = [Group(id="g", items=[Item(token=0), Item(token=1)])]
        corpus = corpus_from_groups(groups, 2, vocab=("aa", "bb"), vocab_size=2)
        p = tmp_path / "c.jsonl"
        save_corpus(p, corpus)
        back = load_corpus(p)
        assert back.vocab == ("aa", "bb")


class TestCorpusRoundtrip:
    def test_generated_token_corpus_value_identical(self, tmp_path):
        rng = SeededRng(1)
        beta = rng.gen.dirichlet(np.ones(7), size=3)
        groups, _ = generate_corpus(3, 7, 12, 6, np.full(3, 0.4), beta, rng, labeled=True)
        corpus = corpus_from_groups(groups, 3, vocab_size=7)
        p = tmp_path / "c.jsonl"
        save_corpus(p, corpus)
        back = load_corpus(p)
        assert back.num_topics == corpus.num_topics
        assert back.payload == corpus.payload
        for a, b in zip(corpus.groups, back.groups):
            assert a.id == b.id and a.label == b.label
            assert [i.token for i in a.items] == [i.token for i in b.items]

    def test_dense_corpus_value_identical(self, tmp_path):
        rng = SeededRng(2)
        groups = [
            Group(id=f"g{i}", items=[Item(dense=rng.gen.normal(size=4)) for _ in range(3)])
            for i in range(5)
        ]
        corpus = corpus_from_groups(groups, 2)
        p = tmp_path / "c.jsonl"
        save_corpus(p, corpus)
        back = load_corpus(p)
        for a, b in zip(corpus.groups, back.groups):
            for ia, ib in zip(a.items, b.items):
                np.testing.assert_array_equal(ia.dense, ib.dense)

    def test_mixed_groups_rejected_at_wrap(self):
        groups = [
            Group(id="a", items=[Item(token=0)]),
            Group(id="b", items=[Item(dense=np.zeros(2))]),
        ]
        with pytest.raises(ContractError):
            corpus_from_groups(groups, 2)


class TestTruthSidecar:
    def test_roundtrip(self, tmp_path):
        rng = SeededRng(3)
        beta = rng.gen.dirichlet(np.ones(6), size=2)
        groups, truth = generate_corpus(2, 6, 8, 4, np.ones(2), beta, rng)
        corpus = corpus_from_groups(groups, 2, vocab_size=6)
        p = tmp_path / "t.jsonl"
        save_truth(p, corpus, truth)
        ids, pi, z, labels = load_truth(p)
        assert ids == [g.id for g in groups]
        np.testing.assert_array_equal(z, truth.z)
        np.testing.assert_array_equal(labels, truth.labels)
        np.testing.assert_array_equal(pi, truth.pi)  # decimal text is exact


def make_checkpoint(kind="mlp", with_reg=True):
    rng = SeededRng(7)
    if kind == "mlp":
        params = init_params("mlp", (4, 5, 3), 0.8, rng)
    else:
        params = init_params("table", (3, 6), 0.8, rng)
    hyper = HyperParams(alpha=rng.gen.uniform(0.2, 1.0, size=3), lam=1.5, gamma=0.01,
                        n_iter=4, rho=0.95)
    reg = None
    if with_reg:
        reg = RegularizerState(rho=0.9, log_ema_per_topic=rng.gen.normal(size=3),
                               items_seen=128)
    return Checkpoint(hyper=hyper, params=params, reg_state=reg,
                      provenance={"seed": 7, "epochs": 20})


class TestCheckpoint:
    @pytest.mark.parametrize("kind", ["mlp", "table"])
    @pytest.mark.parametrize("with_reg", [True, False])
    def test_roundtrip_bit_identical(self, tmp_path, kind, with_reg):
        cp = make_checkpoint(kind, with_reg)
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, cp)
        back = load_checkpoint(p)
        assert back.params.kind == cp.params.kind
        assert params_to_flat(back.params).tobytes() == params_to_flat(cp.params).tobytes()
        assert back.hyper.alpha.tobytes() == cp.hyper.alpha.tobytes()
        assert back.hyper.lam == cp.hyper.lam
        assert back.hyper.n_iter == cp.hyper.n_iter
        assert back.provenance == cp.provenance
        if with_reg:
            assert (back.reg_state.log_ema_per_topic.tobytes()
                    == cp.reg_state.log_ema_per_topic.tobytes())
            assert back.reg_state.items_seen == cp.reg_state.items_seen
        else:
            assert back.reg_state is None

    def test_save_is_deterministic(self, tmp_path):
        cp = make_checkpoint()
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, cp)
        save_checkpoint(b, cp)
        assert a.read_bytes() == b.read_bytes()

    def test_corrupt_magic(self, tmp_path):
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, make_checkpoint())
        data = bytearray(p.read_bytes())
        data[0] ^= 0xFF
        p.write_bytes(bytes(data))
        with pytest.raises(IntegrityError):
            load_checkpoint(p)

    def test_version_bump(self, tmp_path):
        p = tmp_path / "m.ckpt"
        cp = make_checkpoint()
        cp.version += 1
        save_checkpoint(p, cp)
        with pytest.raises(UnsupportedVersionError):
            load_checkpoint(p)

    def test_truncated_file(self, tmp_path):
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, make_checkpoint())
        data = p.read_bytes()
        p.write_bytes(data[: len(data) - 16])
        with pytest.raises(IntegrityError):
            load_checkpoint(p)

    def test_trailing_garbage(self, tmp_path):
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, make_checkpoint())
        p.write_bytes(p.read_bytes() + b"xx")
        with pytest.raises(IntegrityError):
            load_checkpoint(p)

    def test_activations_preserved(self, tmp_path):
        rng = SeededRng(9)
        params = init_params("mlp", (3, 4, 4, 2), 0.5, rng, activations=("relu", "tanh", "linear"))
        cp = Checkpoint(hyper=HyperParams(alpha=np.ones(2)), params=params)
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, cp)
        assert load_checkpoint(p).params.activations == ("relu", "tanh", "linear")


class TestPredictions:
    def test_empty_corpus_header_only(self, tmp_path):
        p = tmp_path / "pred.jsonl"
        write_predictions(p, [], np.zeros(0, dtype=int), np.zeros((0, 2)),
                          np.zeros((0, 2)), np.zeros(1, dtype=int))
        lines = p.read_text().strip().splitlines()
        assert len(lines) == 1
        assert json.loads(lines[0])["format"] == "predictions"

    def test_six_decimal_places_and_near_simplex(self, tmp_path):
        p = tmp_path / "pred.jsonl"
        p_label = np.array([[1 / 3, 1 / 3, 1 / 3], [0.7310586, 0.1, 0.1689414]])
        p_items = np.array([[0.25, 0.5, 0.25], [1 / 3, 1 / 3, 1 / 3], [0.9, 0.05, 0.05]])
        write_predictions(p, ["a", "b"], [2, 0], p_label, p_items, [0, 1, 3])
        lines = p.read_text().strip().splitlines()
        assert len(lines) == 3
        for raw in lines[1:]:
            rec = json.loads(raw)
            for row in [rec["p_label"]] + rec["p_items"]:
                assert abs(sum(row) - 1.0) <= 5e-6
        assert '"p_label":[0.333333,0.333333,0.333333]' in lines[1]
        assert '0.731059' in lines[2]

    def test_deterministic_bytes(self, tmp_path):
        rng = SeededRng(11)
        p_label = rng.gen.dirichlet(np.ones(3), size=4)
        p_items = rng.gen.dirichlet(np.ones(3), size=9)
        offsets = np.array([0, 2, 4, 7, 9])
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for path in (a, b):
            write_predictions(path, list("wxyz"), [0, 1, 2, 0], p_label, p_items, offsets)
        assert a.read_bytes() == b.read_bytes()

    def test_roundtrip(self, tmp_path):
        p = tmp_path / "pred.jsonl"
        p_label = np.array([[0.25, 0.75]])
        p_items = np.array([[0.5, 0.5], [0.125, 0.875]])
        write_predictions(p, ["g0"], [1], p_label, p_items, [0, 2])
        ids, labels, pl, pi = read_predictions(p)
        assert ids == ["g0"]
        np.testing.assert_array_equal(labels, [1])
        np.testing.assert_allclose(pl, p_label, atol=5e-7)
        np.testing.assert_allclose(pi[0], p_items, atol=5e-7)

    def test_offsets_mismatch_rejected(self, tmp_path):
        with pytest.raises(ContractError):
            write_predictions(tmp_path / "x", ["a"], [0], np.ones((1, 2)),
                              np.ones((3, 2)), [0, 2])

    def test_no_tmp_file_left_behind(self, tmp_path):
        p = tmp_path / "pred.jsonl"
        write_predictions(p, ["a"], [0], np.ones((1, 1)), np.ones((1, 1)), [0, 1])
        assert [f.name for f in tmp_path.iterdir()] == ["pred.jsonl"]
