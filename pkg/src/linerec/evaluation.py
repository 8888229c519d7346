"""Character-level edit-distance alignment and corpus accuracy reporting.

Alignment uses unit costs; among minimal-cost alignments the one with the
most substitutions is chosen (a substitution beats an insert+delete pair),
with deletions preferred over insertions when both remain. Because the
length difference pins Ni - Nd and the total pins Ns + Ni + Nd, the counts
are fully determined once substitutions are maximized.

The corpus metric is 1 - (Ns + Ni + Nd) / N with N the reference character
count; it can go negative and is reported unclamped.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field

@dataclass
class EditCounts:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0

    @property
    def total(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(self.substitutions + other.substitutions,
                          self.insertions + other.insertions,
                          self.deletions + other.deletions)


def align(reference, hypothesis) -> tuple[EditCounts, list[tuple[str, object, object]]]:
    """Minimal-cost alignment with the fixed tie-break; returns the counts
    and the op list (op, ref_symbol, hyp_symbol) with op in
    {match, sub, del, ins}."""
    ref = list(reference)
    hyp = list(hypothesis)
    n, m = len(ref), len(hyp)
    # cell value: (cost, -substitutions), minimized lexicographically
    table = [[(0, 0)] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        table[i][0] = (i, 0)
    for j in range(1, m + 1):
        table[0][j] = (j, 0)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            dc, ds = table[i - 1][j - 1]
            if ref[i - 1] == hyp[j - 1]:
                diag = (dc, ds)
            else:
                diag = (dc + 1, ds - 1)
            dele = (table[i - 1][j][0] + 1, table[i - 1][j][1])
            ins = (table[i][j - 1][0] + 1, table[i][j - 1][1])
            table[i][j] = min(diag, dele, ins)
    # backtrace with preference: diagonal, then delete, then insert
    ops: list[tuple[str, object, object]] = []
    i, j = n, m
    while i > 0 or j > 0:
        here = table[i][j]
        if i > 0 and j > 0:
            dc, ds = table[i - 1][j - 1]
            same = ref[i - 1] == hyp[j - 1]
            diag = (dc, ds) if same else (dc + 1, ds - 1)
            if diag == here:
                ops.append(("match" if same else "sub", ref[i - 1], hyp[j - 1]))
                i, j = i - 1, j - 1
                continue
        if i > 0 and (table[i - 1][j][0] + 1, table[i - 1][j][1]) == here:
            ops.append(("del", ref[i - 1], None))
            i -= 1
            continue
        ops.append(("ins", None, hyp[j - 1]))
        j -= 1
    ops.reverse()
    counts = EditCounts(
        substitutions=sum(1 for op, *_ in ops if op == "sub"),
        insertions=sum(1 for op, *_ in ops if op == "ins"),
        deletions=sum(1 for op, *_ in ops if op == "del"),
    )
    return counts, ops


def edit_distance(reference, hypothesis) -> EditCounts:
    """Substitution / insertion / deletion counts of the preferred minimal
    alignment. Accepts strings or symbol lists."""
    counts, _ = align(reference, hypothesis)
    return counts


def accuracy_rate(total_chars: int, counts: EditCounts) -> float:
    """1 - (Ns + Ni + Nd) / N over the reference character count N."""
    if total_chars < 1:
        raise ValueError(f"reference character count must be >= 1, got {total_chars}")
    return 1.0 - counts.total / total_chars


@dataclass
class SampleResult:
    sample_id: str
    reference: str
    hypothesis: str
    counts: EditCounts


@dataclass
class EvalReport:
    accuracy_rate: float
    total_chars: int
    counts: EditCounts
    rows: list[SampleResult] = field(default_factory=list)
    confusions: Counter = field(default_factory=Counter)
    failures: list[tuple[str, str]] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["sample_id", "reference", "hypothesis", "ns", "ni", "nd"])
            for r in self.rows:
                w.writerow([r.sample_id, r.reference, r.hypothesis,
                            r.counts.substitutions, r.counts.insertions,
                            r.counts.deletions])

    def top_confusions(self, k: int = 10) -> list[tuple[tuple[str, str], int]]:
        return self.confusions.most_common(k)


def evaluate_corpus(bundle, dataset, csv_path=None) -> EvalReport:
    """Decode every sample with the inference path and aggregate edit counts
    over the whole corpus. Samples that fail to decode are recorded as
    failures and excluded from N."""
    from linerec.model import forward_infer

    total = EditCounts()
    n_chars = 0
    rows: list[SampleResult] = []
    confusions: Counter = Counter()
    failures: list[tuple[str, str]] = []
    for sample in dataset.samples:
        try:
            hyp = forward_infer(sample.image, bundle)
        except Exception as e:  # unreadable / undecodable sample
            failures.append((sample.sample_id, str(e)))
            continue
        counts, ops = align(sample.label, hyp.text)
        for op, ref_sym, hyp_sym in ops:
            if op == "sub":
                confusions[(ref_sym, hyp_sym)] += 1
        total = total + counts
        n_chars += len(sample.label)
        rows.append(SampleResult(sample_id=sample.sample_id, reference=sample.label,
                                 hypothesis=hyp.text, counts=counts))
    ar = accuracy_rate(n_chars, total) if n_chars else float("nan")
    report = EvalReport(accuracy_rate=ar, total_chars=n_chars, counts=total,
                        rows=rows, confusions=confusions, failures=failures)
    if csv_path:
        report.write_csv(csv_path)
    return report
