import numpy as np
import pytest

from libsuggest.corpus import PAD_ID, TokenSequence, Vocabulary
from libsuggest.embeddings import (
    EmbeddingFormatError,
    EmbeddingTable,
    embed_sequence,
    load_embeddings,
    save_embeddings,
    vocab_matrix,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadEmbeddings:
    def test_parse_two_words(self, tmp_path):
        path = write(tmp_path / "e.txt", "2 3\ncat 1 0 0\ndog 0 1 0\n")
        table = load_embeddings(path)
        assert table.dimension == 3
        assert len(table) == 2
        np.testing.assert_array_equal(table.vector("cat"), [1.0, 0.0, 0.0])

    def test_short_line_names_line(self, tmp_path):
        path = write(tmp_path / "e.txt", "2 3\ncat 1 0 0\ndog 0 1\n")
        with pytest.raises(EmbeddingFormatError, match="line 3"):
            load_embeddings(path)

    def test_non_numeric_component(self, tmp_path):
        path = write(tmp_path / "e.txt", "1 2\ncat 1 zebra\n")
        with pytest.raises(EmbeddingFormatError, match="line 2.*numeric"):
            load_embeddings(path)

    def test_empty_file(self, tmp_path):
        path = write(tmp_path / "e.txt", "")
        with pytest.raises(EmbeddingFormatError, match="empty"):
            load_embeddings(path)

    def test_count_mismatch(self, tmp_path):
        path = write(tmp_path / "e.txt", "3 2\ncat 1 0\n")
        with pytest.raises(EmbeddingFormatError, match="declares 3"):
            load_embeddings(path)

    def test_non_finite_component_rejected(self, tmp_path):
        path = write(tmp_path / "e.txt", "1 2\ncat 1 nan\n")
        with pytest.raises(EmbeddingFormatError, match="line 2"):
            load_embeddings(path)

    def test_absent_word_falls_back_to_unk(self, tmp_path):
        path = write(tmp_path / "e.txt", "2 2\ncat 2 0\ndog 0 4\n")
        table = load_embeddings(path)
        np.testing.assert_array_equal(table.vector("missing"), [1.0, 2.0])

    def test_duplicate_last_wins_and_counted(self, tmp_path):
        path = write(tmp_path / "e.txt", "3 2\ncat 1 0\ncat 5 5\ndog 0 1\n")
        table = load_embeddings(path)
        assert table.duplicates == 1
        np.testing.assert_array_equal(table.vector("cat"), [5.0, 5.0])


class TestRoundTrip:
    def test_save_load_bit_exact_randomized(self, tmp_path):
        rng = np.random.default_rng(13)
        for trial in range(25):
            dim = int(rng.integers(1, 6))
            n = int(rng.integers(1, 9))
            vectors = {
                f"w{i}": rng.normal(size=dim) * 10.0 ** rng.integers(-3, 4) for i in range(n)
            }
            table = EmbeddingTable(dim, vectors)
            path = tmp_path / f"t{trial}.txt"
            save_embeddings(table, path)
            loaded = load_embeddings(path)
            assert loaded.dimension == table.dimension
            assert set(loaded.vectors) == set(table.vectors)
            for word, vec in table.vectors.items():
                assert loaded.vectors[word].tobytes() == vec.astype(np.float64).tobytes()
            assert loaded.unk_vector.tobytes() == table.unk_vector.tobytes()

    def test_unk_vector_independent_of_file_order(self, tmp_path):
        a = write(tmp_path / "a.txt", "2 1\nx 1\ny 2\n")
        b = write(tmp_path / "b.txt", "2 1\ny 2\nx 1\n")
        assert load_embeddings(a).unk_vector.tobytes() == load_embeddings(b).unk_vector.tobytes()


class TestEmbedSequence:
    def setup_method(self):
        self.vocab = Vocabulary(["cat", "dog"])
        self.table = EmbeddingTable(
            2, {"cat": np.array([1.0, 2.0]), "dog": np.array([3.0, 4.0])}
        )

    def test_all_pad_is_zero_matrix(self):
        seq = TokenSequence((PAD_ID, PAD_ID, PAD_ID), 0)
        out = embed_sequence(seq, self.vocab, self.table)
        assert out.shape == (3, 2)
        assert np.all(out == 0.0)

    def test_known_token_row(self):
        seq = TokenSequence((self.vocab.id("cat"), PAD_ID), 1)
        out = embed_sequence(seq, self.vocab, self.table)
        np.testing.assert_array_equal(out[0], [1.0, 2.0])

    def test_unk_row_uses_unk_vector(self):
        seq = TokenSequence((self.vocab.id("cat"), 1), 2)
        out = embed_sequence(seq, self.vocab, self.table)
        np.testing.assert_array_equal(out[1], self.table.unk_vector)

    def test_pad_rows_have_exactly_zero_norm(self):
        seq = TokenSequence((self.vocab.id("dog"), PAD_ID, PAD_ID), 1)
        out = embed_sequence(seq, self.vocab, self.table)
        assert np.linalg.norm(out[1]) == 0.0
        assert np.linalg.norm(out[2]) == 0.0

    def test_finite_output_for_finite_table(self):
        rng = np.random.default_rng(3)
        table = EmbeddingTable(4, {f"w{i}": rng.normal(size=4) for i in range(5)})
        vocab = Vocabulary(sorted(table.vectors))
        ids = tuple(vocab.id(f"w{i}") for i in range(5)) + (1, PAD_ID)
        seq = TokenSequence(ids, 6)
        assert np.isfinite(embed_sequence(seq, vocab, table)).all()

    def test_vocab_matrix_gather_matches_embed_sequence(self):
        seq = TokenSequence((self.vocab.id("dog"), 1, PAD_ID), 2)
        matrix = vocab_matrix(self.vocab, self.table)
        gathered = matrix[np.array(seq.ids)]
        np.testing.assert_array_equal(gathered, embed_sequence(seq, self.vocab, self.table))
