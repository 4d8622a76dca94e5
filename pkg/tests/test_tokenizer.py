"""Vocabulary mechanics: encoding, decoding, scores, files, embeddings."""

import string

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tasc.corpus import count_ngrams
from tasc.tokenizer import (
    AddedToken,
    BPETokenizer,
    ByteTokenizer,
    EmbeddingMatrix,
    UnencodableError,
    Vocabulary,
    WhitespaceTokenizer,
    byte_vocabulary,
    compression_report,
    escape_bytes,
    init_embeddings,
    load_embeddings,
    load_vocabulary,
    merge_reward,
    prefix_collision_score,
    save_embeddings,
    save_vocabulary,
    unescape_bytes,
)

from conftest import make_corpus


def ids(text: str) -> list[int]:
    return [ord(c) for c in text]


class TestEscaping:
    def test_printable_passthrough(self):
        assert escape_bytes(b"hello world!") == "hello world!"

    def test_non_printables_hexed(self):
        assert escape_bytes(b"\x00a\xff\\") == "\\x00a\\xff\\x5c"

    @given(st.binary(max_size=64))
    def test_round_trip(self, data):
        assert unescape_bytes(escape_bytes(data)) == data


class TestEncodeDecode:
    def test_no_added_tokens_is_base_encoding(self):
        vocab = byte_vocabulary()
        assert vocab.encode("abc") == ids("abc")

    def test_direct_merge_from_bpe_base(self, tmp_path):
        # base with tokens "in" and " the"; added token merges them
        vocab_file = tmp_path / "vocab.txt"
        vocab_file.write_text("\n".join(["i", "n", " ", "t", "h", "e",
                                         "in", "th", "the", " the"]) + "\n")
        merges_file = tmp_path / "merges.txt"
        merges_file.write_text("#version: test\ni n\nt h\nth e\n\\x20 the\n")
        base = BPETokenizer.from_files(vocab_file, merges_file)
        vocab = Vocabulary(base)
        assert [vocab.token_string(t) for t in vocab.encode("in the")] == [b"in", b" the"]
        merged = vocab.add_ngram((vocab.encode("in the")[0], vocab.encode("in the")[1]))
        out = merged.encode("in the")
        assert out == [vocab.size]
        assert merged.decode(out) == b"in the"

    def test_overlapping_candidates_left_to_right_greedy(self):
        # X = (a, b), Y = (b, c): greedy takes X first and leaves bare c.
        # Oracle: enumerate every segmentation of [a, b, c] and confirm the
        # greedy pick is the leftmost-longest one.
        base = byte_vocabulary()
        vocab = base.add_ngram((ord("a"), ord("b"))).add_ngram((ord("b"), ord("c")))
        x_id, y_id = 256, 257

        def segmentations(seq):
            if not seq:
                return [[]]
            out = []
            for tok, exp in [(x_id, [ord("a"), ord("b")]),
                             (y_id, [ord("b"), ord("c")]),
                             (seq[0], [seq[0]])]:
                if seq[: len(exp)] == exp:
                    out.extend([tok] + rest for rest in segmentations(seq[len(exp):]))
            return out

        all_segs = segmentations(ids("abc"))
        assert sorted(all_segs) == sorted([[x_id, ord("c")],
                                           [ord("a"), y_id],
                                           ids("abc")])
        assert vocab.encode("abc") == [x_id, ord("c")]

    def test_longest_match_preferred(self):
        vocab = (byte_vocabulary()
                 .add_ngram((ord("a"), ord("b")))
                 .add_ngram((256, ord("c"))))  # (a b) c, expands to a b c
        assert vocab.encode("abc") == [257]
        assert vocab.encode("abx") == [256, ord("x")]

    def test_equal_expansion_tie_goes_to_lower_id(self):
        base = byte_vocabulary()
        ab = (ord("a"), ord("b"))
        vocab = base.add_ngram(ab).add_ngram(ab)  # duplicate spelling
        assert vocab.encode("ab") == [256]

    def test_decode_empty(self):
        assert byte_vocabulary().decode([]) == b""

    def test_decode_added_token_concatenates(self):
        vocab = byte_vocabulary().add_ngram((ord("x"), ord("y")))
        assert vocab.decode([256]) == b"xy"

    def test_decode_unknown_id(self):
        with pytest.raises(KeyError):
            byte_vocabulary().decode([9999])

    def test_round_trip_100_random_texts(self, rng):
        vocab = (byte_vocabulary()
                 .add_ngram(ids("th")).add_ngram(ids("er")).add_ngram((256, ord("e"))))
        alphabet = string.ascii_letters + " .,\n\t"
        for _ in range(100):
            text = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 80)))
            assert vocab.decode_text(vocab.encode(text)) == text

    @given(st.text(max_size=60))
    def test_round_trip_property(self, text):
        vocab = byte_vocabulary().add_ngram(ids("ab")).add_ngram(ids("ba"))
        assert vocab.decode_text(vocab.encode(text)) == text

    def test_encode_deterministic(self):
        vocab = byte_vocabulary().add_ngram(ids("ab"))
        runs = {tuple(vocab.encode("abab")) for _ in range(20)}
        assert len(runs) == 1


class TestWhitespaceTokenizer:
    def test_runs_round_trip(self):
        tok = WhitespaceTokenizer.from_texts(["in the  end", "the in"])
        vocab = Vocabulary(tok)
        text = "the in  the"
        assert vocab.decode_text(vocab.encode(text)) == text

    def test_unknown_run_unencodable(self):
        vocab = Vocabulary(WhitespaceTokenizer.from_texts(["known words"]))
        with pytest.raises(UnencodableError):
            vocab.encode("unknown")

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(ValueError):
            WhitespaceTokenizer([b"a", b"a"])


class TestBPETokenizer:
    def test_merge_order_respected(self, tmp_path):
        tok = BPETokenizer([b"a", b"b", b"ab", b"abb"],
                           [(b"a", b"b"), (b"ab", b"b")])
        assert tok.encode_bytes(b"abb") == [3]
        assert tok.encode_bytes(b"ab") == [2]
        assert tok.encode_bytes(b"ba") == [1, 0]

    def test_missing_byte_unencodable(self):
        tok = BPETokenizer([b"a"], [])
        with pytest.raises(UnencodableError):
            tok.encode_bytes(b"az")

    def test_merge_result_must_exist(self):
        with pytest.raises(ValueError, match="merge result"):
            BPETokenizer([b"a", b"b"], [(b"a", b"b")])


class TestVocabularyInvariants:
    def test_added_ids_must_be_contiguous(self):
        with pytest.raises(ValueError, match="out of order"):
            Vocabulary(ByteTokenizer(),
                       [AddedToken(id=300, constituents=(97, 98), string=b"ab")])

    def test_added_string_must_match_constituents(self):
        with pytest.raises(ValueError, match="constituent concat"):
            Vocabulary(ByteTokenizer(),
                       [AddedToken(id=256, constituents=(97, 98), string=b"xy")])

    def test_constituents_must_precede(self):
        with pytest.raises(ValueError, match="undefined constituent"):
            Vocabulary(ByteTokenizer(),
                       [AddedToken(id=256, constituents=(97, 257), string=b"a?")])

    def test_at_least_two_constituents(self):
        with pytest.raises(ValueError):
            AddedToken(id=256, constituents=(97,), string=b"a")

    def test_prefix_returns_earlier_snapshot(self):
        vocab = byte_vocabulary().add_ngram(ids("ab")).add_ngram(ids("cd"))
        snap = vocab.prefix(1)
        assert snap.size == 257
        assert snap.token_string(256) == b"ab"


class TestMergeReward:
    def test_formula(self):
        counts = count_ngrams([[1, 2, 3] * 10], 3)
        assert counts.table[(1, 2, 3)] == 10
        assert merge_reward((1, 2, 3), counts) == 20

    def test_unigram_gives_zero(self):
        counts = count_ngrams([[5, 5]], 1)
        assert merge_reward((5,), counts) == 0

    def test_absent_ngram_gives_zero(self):
        counts = count_ngrams([[1, 2]], 2)
        assert merge_reward((9, 9), counts) == 0

    def test_arity_mismatch(self):
        counts = count_ngrams([[1, 2]], 2)
        with pytest.raises(ValueError):
            merge_reward((1, 2, 3), counts)

    def test_overlapping_occurrences_hand_recount(self):
        counts = count_ngrams([[1, 2, 1, 2, 1, 2]], 2)
        assert counts.table[(1, 2)] == 3
        assert merge_reward((1, 2), counts) == 3


class TestPrefixCollisionScore:
    def _unigrams(self, vocab, texts):
        return count_ngrams([vocab.encode(t) for t in texts], 1)

    def test_no_collision(self):
        vocab = Vocabulary(WhitespaceTokenizer([b"the", b" "]))
        uni = self._unigrams(vocab, ["the the the"])
        assert prefix_collision_score((0,), vocab, uni) == 0.0

    def test_even_split(self):
        vocab = Vocabulary(WhitespaceTokenizer([b"the", b"therapy", b" "]))
        uni = self._unigrams(vocab, ["the therapy the therapy"])
        assert prefix_collision_score((1, 0), vocab, uni) == 0.5

    def test_final_token_absent_from_corpus(self):
        vocab = Vocabulary(WhitespaceTokenizer([b"the", b"unused", b" "]))
        uni = self._unigrams(vocab, ["the the"])
        assert prefix_collision_score((1,), vocab, uni) == 0.0

    def test_weighted_by_frequency(self):
        vocab = Vocabulary(WhitespaceTokenizer([b"the", b"therapy", b"theorem", b" "]))
        uni = self._unigrams(vocab, ["the the the therapy theorem theorem"])
        # 3x the, 1x therapy, 2x theorem -> 3 extending / 6 covering
        assert prefix_collision_score((0,), vocab, uni) == 0.5

    def test_requires_unigram_counts(self):
        vocab = byte_vocabulary()
        with pytest.raises(ValueError):
            prefix_collision_score((97,), vocab, count_ngrams([[97, 98]], 2))


class TestVocabularyFile:
    def test_byte_vocab_round_trip(self, tmp_path):
        vocab = byte_vocabulary().add_ngram(ids("ab")).add_ngram((256, ord("\x00")))
        path = tmp_path / "v.json"
        save_vocabulary(vocab, path)
        again = load_vocabulary(path)
        assert again.size == vocab.size
        assert [t.string for t in again.added_tokens] == [b"ab", b"ab\x00"]
        assert again.encode("abab") == vocab.encode("abab")
        # bit-exact: saving the loaded vocabulary reproduces the file
        path2 = tmp_path / "v2.json"
        save_vocabulary(again, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_whitespace_vocab_round_trip(self, tmp_path):
        vocab = Vocabulary(WhitespaceTokenizer([b"yes", b"no", b" ", b"\xf0\x9f\x99\x82"]))
        vocab = vocab.add_ngram((0, 2, 1))
        path = tmp_path / "v.json"
        save_vocabulary(vocab, path)
        again = load_vocabulary(path)
        assert again.base.base_tokens == vocab.base.base_tokens
        assert again.encode("yes no") == vocab.encode("yes no")

    def test_bpe_vocab_round_trip(self, tmp_path):
        base = BPETokenizer([b"a", b"b", b"ab"], [(b"a", b"b")])
        vocab = Vocabulary(base).add_ngram((2, 2))
        path = tmp_path / "v.json"
        save_vocabulary(vocab, path)
        again = load_vocabulary(path)
        assert again.encode("abab") == vocab.encode("abab") == [3]

    def test_reject_foreign_file(self, tmp_path):
        path = tmp_path / "v.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError, match="tasc-vocab.v1"):
            load_vocabulary(path)


class TestEmbeddings:
    def test_mean_of_two_rows(self):
        vocab = byte_vocabulary().add_ngram((0, 1))
        rows = np.zeros((256, 2))
        rows[0] = [1.0, 1.0]
        rows[1] = [3.0, 3.0]
        out = init_embeddings(EmbeddingMatrix(rows), vocab)
        assert out.rows.shape == (257, 2)
        np.testing.assert_array_equal(out.rows[256], [2.0, 2.0])
        np.testing.assert_array_equal(out.rows[:256], rows)

    def test_identical_constituents_idempotent(self):
        vocab = byte_vocabulary().add_ngram((7, 7))
        rows = np.arange(512, dtype=float).reshape(256, 2)
        out = init_embeddings(EmbeddingMatrix(rows), vocab)
        np.testing.assert_array_equal(out.rows[256], rows[7])

    def test_nested_token_resolved_in_order(self, rng):
        # Y = (X, c) with X = (a, b): row(Y) == mean(mean(a, b), c)
        a, b, c = 10, 20, 30
        vocab = byte_vocabulary().add_ngram((a, b))
        vocab = vocab.add_ngram((256, c))
        rows = np.array([[rng.uniform(-1, 1) for _ in range(4)] for _ in range(256)])
        out = init_embeddings(EmbeddingMatrix(rows), vocab)
        expected_x = (rows[a] + rows[b]) / 2.0
        expected_y = (expected_x + rows[c]) / 2.0
        assert np.max(np.abs(out.rows[256] - expected_x)) < 1e-12
        assert np.max(np.abs(out.rows[257] - expected_y)) < 1e-12

    def test_missing_base_rows_rejected(self):
        vocab = byte_vocabulary()
        with pytest.raises(ValueError, match="rows"):
            init_embeddings(EmbeddingMatrix(np.zeros((10, 3))), vocab)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            EmbeddingMatrix(np.array([[1.0, float("nan")]]))

    def test_file_round_trip(self, tmp_path, rng):
        rows = np.array([[rng.uniform(-5, 5) for _ in range(3)] for _ in range(17)])
        path = tmp_path / "emb.bin"
        save_embeddings(EmbeddingMatrix(rows), path)
        blob = path.read_bytes()
        assert blob[:8] == b"TASCEMB1"
        assert len(blob) == 16 + 17 * 3 * 8
        again = load_embeddings(path)
        np.testing.assert_array_equal(again.rows, rows)


class TestCompressionReport:
    def test_identity_when_vocabs_equal(self):
        corpus = make_corpus(["hello", "world"])
        vocab = byte_vocabulary()
        report = compression_report(corpus, vocab, vocab)
        assert report.compression_ratio == 1.0
        assert report.avg_len_before == report.avg_len_after

    def test_abab_halves(self):
        corpus = make_corpus(["abab"] * 10)
        before = byte_vocabulary()
        after = before.add_ngram(ids("ab"))
        report = compression_report(corpus, before, after)
        assert report.avg_len_before == 4.0
        assert report.avg_len_after == 2.0
        assert report.compression_ratio == 2.0
        assert report.bytes_per_token_before == 1.0
        assert report.bytes_per_token_after == 2.0
