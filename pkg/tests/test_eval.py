import itertools
from functools import lru_cache

import numpy as np
import pytest

from linerec.evaluation import EditCounts, accuracy_rate, align, edit_distance, evaluate_corpus


@lru_cache(maxsize=None)
def _alignment_counts(ref: str, hyp: str) -> frozenset:
    """All achievable (ns, ni, nd) triples, enumerated exhaustively."""
    if not ref and not hyp:
        return frozenset({(0, 0, 0)})
    out = set()
    if ref and hyp:
        bump = 0 if ref[0] == hyp[0] else 1
        for ns, ni, nd in _alignment_counts(ref[1:], hyp[1:]):
            out.add((ns + bump, ni, nd))
    if ref:
        for ns, ni, nd in _alignment_counts(ref[1:], hyp):
            out.add((ns, ni, nd + 1))
    if hyp:
        for ns, ni, nd in _alignment_counts(ref, hyp[1:]):
            out.add((ns, ni + 1, nd))
    return frozenset(out)


def oracle_counts(ref: str, hyp: str) -> tuple[int, int, int]:
    """Minimal cost, then most substitutions, over every alignment."""
    candidates = _alignment_counts(ref, hyp)
    best_cost = min(sum(c) for c in candidates)
    return max((c for c in candidates if sum(c) == best_cost), key=lambda c: c[0])


def counts_tuple(c: EditCounts):
    return (c.substitutions, c.insertions, c.deletions)


def test_identical_strings():
    assert counts_tuple(edit_distance("abc", "abc")) == (0, 0, 0)


def test_single_deletion():
    assert counts_tuple(edit_distance("ab", "b")) == (0, 0, 1)


def test_single_substitution():
    assert counts_tuple(edit_distance("abc", "axc")) == (1, 0, 0)


def test_substitution_preferred_over_insert_delete():
    # "ab" vs "ba" has a cost-2 alignment with two subs and another with
    # one del + one ins; the substitution pair must win
    assert counts_tuple(edit_distance("ab", "ba")) == (2, 0, 0)


def test_empty_cases():
    assert counts_tuple(edit_distance("", "")) == (0, 0, 0)
    assert counts_tuple(edit_distance("abc", "")) == (0, 0, 3)
    assert counts_tuple(edit_distance("", "ab")) == (0, 2, 0)


def test_alignment_ops_consistent_with_counts():
    counts, ops = align("kitten", "sitting")
    assert counts.total == 3
    assert sum(1 for op, *_ in ops if op == "sub") == counts.substitutions
    recovered_ref = "".join(r for op, r, _ in ops if op in ("match", "sub", "del"))
    recovered_hyp = "".join(h for op, _, h in ops if op in ("match", "sub", "ins"))
    assert recovered_ref == "kitten" and recovered_hyp == "sitting"


def test_matches_exhaustive_oracle_on_random_pairs():
    rng = np.random.default_rng(0)
    alphabet = "abc"
    for _ in range(300):
        ref = "".join(rng.choice(list(alphabet), size=rng.integers(0, 6)))
        hyp = "".join(rng.choice(list(alphabet), size=rng.integers(0, 6)))
        assert counts_tuple(edit_distance(ref, hyp)) == oracle_counts(ref, hyp), (ref, hyp)


def test_distance_to_self_is_zero_property():
    rng = np.random.default_rng(1)
    for _ in range(50):
        s = "".join(rng.choice(list("abcd"), size=rng.integers(0, 8)))
        assert counts_tuple(edit_distance(s, s)) == (0, 0, 0)


def test_symmetry_swaps_insertions_and_deletions():
    rng = np.random.default_rng(2)
    for _ in range(200):
        a = "".join(rng.choice(list("abc"), size=rng.integers(0, 6)))
        b = "".join(rng.choice(list("abc"), size=rng.integers(0, 6)))
        ca = edit_distance(a, b)
        cb = edit_distance(b, a)
        assert ca.total == cb.total
        assert (ca.substitutions, ca.insertions, ca.deletions) == (
            cb.substitutions, cb.deletions, cb.insertions)


def test_triangle_inequality_on_totals():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a, b, c = ("".join(rng.choice(list("abc"), size=rng.integers(0, 6)))
                   for _ in range(3))
        ab = edit_distance(a, b).total
        bc = edit_distance(b, c).total
        ac = edit_distance(a, c).total
        assert ac <= ab + bc


def test_accuracy_rate_arithmetic():
    assert accuracy_rate(100, EditCounts(3, 1, 2)) == pytest.approx(0.94)


def test_accuracy_rate_perfect():
    assert accuracy_rate(10, EditCounts()) == 1.0


def test_accuracy_rate_can_go_negative():
    assert accuracy_rate(2, EditCounts(1, 2, 0)) == pytest.approx(-0.5)


def test_accuracy_rate_rejects_empty_reference():
    with pytest.raises(ValueError):
        accuracy_rate(0, EditCounts())


class StubDataset:
    """Fixed (label, decode-result) pairs via a rigged bundle stand-in."""

    def __init__(self, pairs):
        from linerec.dataio import Sample

        self.samples = [Sample(image=np.full((4, 4), i), label=ref, sample_id=f"s{i}")
                        for i, (ref, _) in enumerate(pairs)]
        self.lookup = {f"s{i}": hyp for i, (_, hyp) in enumerate(pairs)}


def test_evaluate_corpus_hand_aggregation(monkeypatch, tmp_path):
    from linerec import evaluation
    from linerec.ctc import LabelSequence

    pairs = [("abc", "abc"), ("ab", "b"), ("abc", "axc"), ("a", "ab"), ("ba", "ba")]
    ds = StubDataset(pairs)

    def fake_infer(image, bundle):
        return LabelSequence(ids=[], text=ds.lookup[f"s{int(image[0, 0])}"])

    monkeypatch.setattr("linerec.model.forward_infer", fake_infer)
    report = evaluation.evaluate_corpus(None, ds, csv_path=tmp_path / "report.csv")
    # by hand: 0 + 1del + 1sub + 1ins + 0 = 3 errors over 11 reference chars
    assert report.total_chars == 11
    assert counts_tuple(report.counts) == (1, 1, 1)
    assert report.accuracy_rate == pytest.approx(1 - 3 / 11)
    assert report.confusions[("b", "x")] == 1
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "sample_id,reference,hypothesis,ns,ni,nd"
    assert len(lines) == 6


def test_evaluate_corpus_order_invariant(monkeypatch):
    from linerec import evaluation
    from linerec.ctc import LabelSequence

    pairs = [("abc", "ab"), ("xy", "xy"), ("q", "z")]
    forward = StubDataset(pairs)
    backward = StubDataset(pairs)
    backward.samples = backward.samples[::-1]

    def fake_infer_fwd(image, bundle):
        return LabelSequence(ids=[], text=forward.lookup[f"s{int(image[0, 0])}"])

    monkeypatch.setattr("linerec.model.forward_infer", fake_infer_fwd)
    a = evaluation.evaluate_corpus(None, forward).accuracy_rate
    b = evaluation.evaluate_corpus(None, backward).accuracy_rate
    assert a == b


def test_evaluate_corpus_records_failures(monkeypatch):
    from linerec import evaluation
    from linerec.ctc import LabelSequence

    ds = StubDataset([("ab", "ab"), ("cd", "cd")])

    def flaky_infer(image, bundle):
        if int(image[0, 0]) == 0:
            raise ValueError("too narrow")
        return LabelSequence(ids=[], text="cd")

    monkeypatch.setattr("linerec.model.forward_infer", flaky_infer)
    report = evaluation.evaluate_corpus(None, ds)
    assert len(report.failures) == 1
    assert report.total_chars == 2  # failed sample excluded from N
    assert report.accuracy_rate == 1.0
