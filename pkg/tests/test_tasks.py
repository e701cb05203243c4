import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icrag.tasks import (
    DatasetError,
    load_dataset,
    load_folds,
    make_folds,
    normalize_answer,
    save_folds,
)


def write_jsonl(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def record(i, gold="1", kind="numeric"):
    return {"id": f"q{i}", "text": f"question {i}", "gold": gold, "answer_kind": kind}


class TestLoadDataset:
    def test_loads_all_records(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [record(i) for i in range(3)])
        dataset = load_dataset(path)
        assert len(dataset) == 3
        assert dataset.ids() == ["q0", "q1", "q2"]

    def test_duplicate_id_rejected_by_name(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [record(1), record(1)])
        with pytest.raises(DatasetError, match="q1"):
            load_dataset(path)

    def test_numeric_gold_normalized_identity(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [record(0, gold="100")])
        dataset = load_dataset(path)
        assert dataset.tasks[0].gold.canonical == "100"

    def test_malformed_record_reports_line_number(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "a", "text": "t", "gold": "1"}\n{broken\n')
        with pytest.raises(DatasetError, match="line 2"):
            load_dataset(path)

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"id": "a", "text": "t"}\n')
        with pytest.raises(DatasetError, match="gold"):
            load_dataset(path)

    def test_empty_text_rejected(self, tmp_path):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [{"id": "a", "text": "  ", "gold": "1", "answer_kind": "numeric"}])
        with pytest.raises(DatasetError, match="empty text"):
            load_dataset(path)


class TestMakeFolds:
    def _dataset(self, tmp_path, n):
        path = tmp_path / "d.jsonl"
        write_jsonl(path, [record(i) for i in range(n)])
        return load_dataset(path)

    def test_even_split_sizes(self, tmp_path):
        dataset = self._dataset(tmp_path, 100)
        folds = make_folds(dataset, 5, seed=7)
        assert len(folds) == 5
        for fold in folds:
            assert len(fold.eval_ids) == 20
            assert len(fold.pool_ids) == 80
            assert not fold.eval_ids & fold.pool_ids
            assert fold.eval_ids | fold.pool_ids == set(dataset.ids())

    def test_uneven_split_sizes(self, tmp_path):
        dataset = self._dataset(tmp_path, 101)
        folds = make_folds(dataset, 5, seed=3)
        sizes = sorted(len(f.eval_ids) for f in folds)
        assert set(sizes) <= {20, 21}
        covered = set()
        for fold in folds:
            assert not covered & fold.eval_ids
            covered |= fold.eval_ids
        assert covered == set(dataset.ids())

    def test_same_seed_byte_identical_files(self, tmp_path):
        dataset = self._dataset(tmp_path, 30)
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_folds(make_folds(dataset, 5, seed=7), a)
        save_folds(make_folds(dataset, 5, seed=7), b)
        assert a.read_bytes() == b.read_bytes()

    def test_different_seed_differs(self, tmp_path):
        dataset = self._dataset(tmp_path, 30)
        assert make_folds(dataset, 5, seed=1) != make_folds(dataset, 5, seed=2)

    def test_fold_file_round_trip(self, tmp_path):
        dataset = self._dataset(tmp_path, 23)
        folds = make_folds(dataset, 5, seed=11)
        path = tmp_path / "folds.json"
        save_folds(folds, path)
        payload = json.loads(path.read_text())
        assert set(payload) == {"k", "seed", "folds"}
        assert load_folds(path) == folds

    def test_record_order_does_not_leak_into_folds(self, tmp_path):
        forward = tmp_path / "f.jsonl"
        backward = tmp_path / "b.jsonl"
        records = [record(i) for i in range(20)]
        write_jsonl(forward, records)
        write_jsonl(backward, list(reversed(records)))
        assert make_folds(load_dataset(forward), 4, seed=3) == make_folds(
            load_dataset(backward), 4, seed=3
        )

    def test_k_larger_than_dataset_rejected(self, tmp_path):
        dataset = self._dataset(tmp_path, 3)
        with pytest.raises(ValueError):
            make_folds(dataset, 5, seed=0)

    def test_k_below_two_rejected(self, tmp_path):
        dataset = self._dataset(tmp_path, 5)
        with pytest.raises(ValueError):
            make_folds(dataset, 1, seed=0)

    @given(n=st.integers(5, 60), k=st.integers(2, 5), seed=st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_partition_property(self, n, k, seed, tmp_path_factory):
        tmp_path = tmp_path_factory.mktemp("folds")
        dataset = self._dataset(tmp_path, n)
        if k > n:
            return
        folds = make_folds(dataset, k, seed)
        all_ids = set(dataset.ids())
        seen = set()
        for fold in folds:
            assert not fold.eval_ids & fold.pool_ids
            assert fold.eval_ids | fold.pool_ids == all_ids
            assert len(fold.eval_ids) in {n // k, n // k + 1}
            seen |= fold.eval_ids
        assert seen == all_ids


class TestNormalizeAnswer:
    def test_numeric_strips_prefix_and_commas(self):
        assert normalize_answer("Answer: 1,000", "numeric").canonical == "1000"

    def test_numeric_currency_and_units(self):
        assert normalize_answer("$3,250 dollars", "numeric").canonical == "3250"

    def test_numeric_float_kept(self):
        assert normalize_answer("2.5", "numeric").canonical == "2.5"

    def test_numeric_unparsable_flags_failure(self):
        value = normalize_answer("no idea", "numeric")
        assert value.failed
        assert not value.matches(normalize_answer("1", "numeric"))

    def test_binary_case_and_punctuation_fold(self):
        assert normalize_answer("Yes.", "binary").canonical == "yes"

    def test_binary_custom_label_map(self):
        labels = {"violation": ("violation", "breach"), "no violation": ("no violation",)}
        assert normalize_answer("Breach", "binary", labels).canonical == "violation"

    def test_binary_unmapped_passthrough_folds_case(self):
        assert normalize_answer("Violation", "binary").canonical == "violation"

    def test_multiclass_option_letter(self):
        # mirrors the documented clinical multiple-choice example
        assert normalize_answer("(D) NSAIDs", "multiclass").canonical == "D"

    def test_multiclass_bare_letter(self):
        assert normalize_answer("c", "multiclass").canonical == "C"

    def test_freeform_whitespace_collapse(self):
        assert normalize_answer("  The   Amazon River. ", "freeform").canonical == "the amazon river"

    kinds = st.sampled_from(["numeric", "binary", "multiclass", "freeform", "proof"])

    @given(raw=st.text(min_size=0, max_size=40), kind=kinds)
    @settings(max_examples=300, deadline=None)
    def test_idempotence(self, raw, kind):
        first = normalize_answer(raw, kind)
        if first.failed:
            return
        again = normalize_answer(first.canonical, kind)
        assert again.canonical == first.canonical
