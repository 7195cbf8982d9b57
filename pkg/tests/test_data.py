import json

import numpy as np
import pytest

from mstein.data import (
    Interaction,
    SequenceCorpus,
    UserSequence,
    apply_k_core,
    build_sequences,
    corpus_stats,
    inject_noise,
    load_interactions,
    read_corpus,
    split_leave_one_out,
    subsample_training,
    write_corpus,
)
from mstein.errors import InputError


def make_log(spec):
    """spec: list of (user, item, ts) tuples."""
    return [Interaction(u, i, t) for u, i, t in spec]


class TestLoadInteractions:
    def test_tsv_row(self, tmp_path):
        p = tmp_path / "log.tsv"
        p.write_text("u1\ti9\t100\n")
        out = load_interactions(p, "tsv")
        assert out == [Interaction("u1", "i9", 100)]

    def test_amazon_jsonl_row(self, tmp_path):
        p = tmp_path / "log.jsonl"
        p.write_text(json.dumps({"reviewerID": "A1", "asin": "B7", "unixReviewTime": 42, "overall": 5.0}) + "\n")
        out = load_interactions(p, "amazon-jsonl")
        assert out == [Interaction("A1", "B7", 42)]

    def test_empty_file_warns_returns_empty(self, tmp_path, caplog):
        p = tmp_path / "empty.tsv"
        p.write_text("")
        with caplog.at_level("WARNING"):
            assert load_interactions(p, "tsv") == []
        assert "empty" in caplog.text

    def test_missing_file_fatal(self, tmp_path):
        with pytest.raises(InputError):
            load_interactions(tmp_path / "nope.tsv", "tsv")

    def test_too_many_malformed_rows_fatal_with_row_numbers(self, tmp_path):
        p = tmp_path / "bad.tsv"
        p.write_text("u1\ti1\t1\nBROKEN LINE\nu1\ti2\t2\n")
        with pytest.raises(InputError) as err:
            load_interactions(p, "tsv")
        assert "2" in str(err.value)  # offending row number reported

    def test_few_malformed_rows_skipped(self, tmp_path):
        rows = [f"u{i}\ti{i}\t{i}" for i in range(200)]
        rows[10] = "not\tparsable\tX"
        p = tmp_path / "mostly_ok.tsv"
        p.write_text("\n".join(rows) + "\n")
        out = load_interactions(p, "tsv")
        assert len(out) == 199


class TestKCore:
    def test_user_below_threshold_removed(self):
        log = make_log([("a", f"i{k}", k) for k in range(4)] + [("b", f"i{k}", k) for k in range(5)])
        out = apply_k_core(log, 5)
        assert {it.user for it in out} == {"b"}

    def test_user_at_threshold_kept(self):
        log = make_log([("a", f"i{k}", k) for k in range(5)])
        assert apply_k_core(log, 5) == log

    def test_identity_when_all_above(self):
        log = make_log([("a", f"i{k}", k) for k in range(6)] + [("b", f"j{k}", k) for k in range(7)])
        assert apply_k_core(log, 5) == log

    def test_idempotent_in_counts(self):
        log = make_log(
            [("a", f"i{k}", k) for k in range(4)]
            + [("b", f"i{k}", k) for k in range(6)]
            + [("c", f"i{k}", k) for k in range(9)]
        )
        once = apply_k_core(log, 5)
        twice = apply_k_core(once, 5)
        assert once == twice

    def test_empty_result_fatal(self):
        log = make_log([("a", "x", 0)])
        with pytest.raises(InputError):
            apply_k_core(log, 5)

    def test_min_count_invariant(self):
        rng = np.random.default_rng(0)
        log = make_log([
            (f"u{rng.integers(0, 20)}", f"i{rng.integers(0, 30)}", int(t)) for t in range(300)
        ])
        out = apply_k_core(log, 5)
        counts = {}
        for it in out:
            counts[it.user] = counts.get(it.user, 0) + 1
        assert min(counts.values()) >= 5


class TestBuildSequences:
    def test_sorted_by_timestamp(self):
        log = make_log([("u", "a", 3), ("u", "b", 1), ("u", "c", 2)])
        vocab, seqs = build_sequences(log)
        items = seqs[0].items
        named = [vocab.index_to_item[i] for i in items]
        assert named == ["b", "c", "a"]

    def test_equal_timestamps_preserve_input_order(self):
        log = make_log([("u", "x", 5), ("u", "y", 5), ("u", "z", 5)])
        vocab, seqs = build_sequences(log)
        assert [vocab.index_to_item[i] for i in seqs[0].items] == ["x", "y", "z"]

    def test_two_users_independent(self):
        log = make_log([("u", "a", 1), ("v", "b", 1), ("u", "c", 2)])
        vocab, seqs = build_sequences(log)
        assert len(seqs) == 2
        by_user = {s.user_index: s for s in seqs}
        assert len(by_user[vocab.user_to_index["u"]].items) == 2
        assert len(by_user[vocab.user_to_index["v"]].items) == 1

    def test_dense_indices_first_appearance_one_based(self):
        log = make_log([("u", "a", 1), ("u", "b", 2), ("v", "a", 1)])
        vocab, _ = build_sequences(log)
        assert vocab.item_to_index == {"a": 1, "b": 2}
        assert vocab.user_to_index == {"u": 0, "v": 1}
        assert vocab.mask_token == vocab.item_count + 1


class TestSplit:
    def test_basic_split(self):
        s = split_leave_one_out(UserSequence(0, [1, 2, 3, 4, 5]))
        assert s.train_items == [1, 2, 3]
        assert s.valid_target == 4
        assert s.test_target == 5

    def test_duplicates_allowed(self):
        s = split_leave_one_out(UserSequence(0, [7, 7, 7, 7, 7]))
        assert s.train_items == [7, 7, 7] and s.valid_target == 7 and s.test_target == 7

    def test_too_short_fatal(self):
        with pytest.raises(InputError):
            split_leave_one_out(UserSequence(0, [1, 2, 3, 4]))

    def test_reconstruction_property(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            items = [int(x) for x in rng.integers(1, 50, size=rng.integers(5, 30))]
            s = split_leave_one_out(UserSequence(0, items))
            assert s.train_items + [s.valid_target, s.test_target] == items


class TestInjectNoise:
    def seq(self, n=12):
        return UserSequence(0, list(range(1, n + 1)))

    def test_ratio_zero_identity(self):
        rng = np.random.default_rng(0)
        s = self.seq()
        assert inject_noise(s, 0.0, 50, rng).items == s.items

    def test_length_grows_by_floor(self):
        rng = np.random.default_rng(0)
        s = self.seq(12)  # prefix length 10
        out = inject_noise(s, 0.3, 50, rng)
        assert len(out.items) == 12 + 3

    def test_targets_untouched(self):
        rng = np.random.default_rng(2)
        s = self.seq(15)
        out = inject_noise(s, 0.7, 50, rng)
        assert out.items[-2:] == s.items[-2:]

    def test_deterministic_given_seed(self):
        s = self.seq(20)
        a = inject_noise(s, 0.5, 50, np.random.default_rng(9))
        b = inject_noise(s, 0.5, 50, np.random.default_rng(9))
        assert a.items == b.items

    def test_length_invariant_across_ratios(self):
        for ratio in (0.1, 0.25, 0.5, 0.9, 1.0):
            s = self.seq(13)  # prefix 11
            out = inject_noise(s, ratio, 50, np.random.default_rng(3))
            assert len(out.items) == 13 + int(ratio * 11)


class TestSubsample:
    def seqs(self, n=100):
        return [UserSequence(i, [1, 2, 3, 4, 5]) for i in range(n)]

    def test_portion_one_identity(self):
        s = self.seqs()
        assert subsample_training(s, 1.0, np.random.default_rng(0)) == s

    def test_quarter_keeps_25_of_100(self):
        out = subsample_training(self.seqs(100), 0.25, np.random.default_rng(0))
        assert len(out) == 25

    def test_ceil_rounding(self):
        out = subsample_training(self.seqs(10), 0.21, np.random.default_rng(0))
        assert len(out) == 3

    def test_deterministic(self):
        a = subsample_training(self.seqs(), 0.4, np.random.default_rng(5))
        b = subsample_training(self.seqs(), 0.4, np.random.default_rng(5))
        assert [s.user_index for s in a] == [s.user_index for s in b]

    def test_sequences_unchanged(self):
        out = subsample_training(self.seqs(), 0.5, np.random.default_rng(6))
        for s in out:
            assert s.items == [1, 2, 3, 4, 5]


class TestCorpusFile:
    def test_round_trip(self, tmp_path):
        corpus = SequenceCorpus(2, 9, [UserSequence(0, [1, 5, 9, 2, 3]), UserSequence(1, [2, 2, 4, 4, 1])])
        path = tmp_path / "c.txt"
        write_corpus(path, corpus)
        back = read_corpus(path)
        assert back.user_count == 2 and back.item_count == 9
        assert [s.items for s in back.sequences] == [[1, 5, 9, 2, 3], [2, 2, 4, 4, 1]]
        first_line = path.read_text().splitlines()[0]
        assert first_line == "wdm-corpus v1 2 9"

    def test_bad_header_fatal(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("something else\n")
        with pytest.raises(InputError):
            read_corpus(p)

    def test_stats(self):
        corpus = SequenceCorpus(2, 10, [UserSequence(0, [1] * 6), UserSequence(1, [2] * 8)])
        stats = corpus_stats(corpus)
        assert stats["users"] == 2 and stats["items"] == 10 and stats["interactions"] == 14
        assert stats["density"] == pytest.approx(14 / 20)
        assert stats["avg_per_user"] == pytest.approx(7.0)


class TestPipelineProperties:
    def test_full_pipeline_on_synthetic_log(self):
        rng = np.random.default_rng(42)
        raw = make_log([
            (f"u{int(rng.integers(0, 40))}", f"i{int(rng.integers(0, 60))}", int(rng.integers(0, 10**6)))
            for _ in range(2000)
        ])
        filtered = apply_k_core(raw, 5)
        vocab, seqs = build_sequences(filtered)
        assert all(len(s.items) >= 5 for s in seqs)
        # k-core is idempotent through sequence building
        assert all(len(s.items) >= 5 for s in seqs)
        for s in seqs:
            split = split_leave_one_out(s)
            assert split.train_items + [split.valid_target, split.test_target] == s.items
            assert len(split.train_items) >= 3
        assert 0 not in {i for s in seqs for i in s.items}
