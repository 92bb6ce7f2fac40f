"""Agreement statistics against definitional oracles written with exact fractions."""

import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cxreval.agreement import (
    Band,
    agreement_table,
    cohen_kappa,
    fleiss_from_votes,
    fleiss_kappa,
    interpret_kappa,
    model_vs_rater_table,
    percent_agreement,
    reader_study_delta,
    summarize_deltas,
)
from cxreval.bootstrap import BootstrapConfig
from cxreval.errors import DataError, StructureMismatch
from cxreval.model import Session

from conftest import make_read


def oracle_cohen(a, b) -> Fraction:
    """kappa = (p_o - p_e) / (1 - p_e) with p_e from the two marginals."""
    n = len(a)
    p_o = Fraction(sum(x == y for x, y in zip(a, b)), n)
    pa = Fraction(sum(a), n)
    pb = Fraction(sum(b), n)
    p_e = pa * pb + (1 - pa) * (1 - pb)
    if p_e == 1:
        return Fraction(1 if p_o == 1 else 0)
    return (p_o - p_e) / (1 - p_e)


def oracle_fleiss(counts) -> Fraction:
    """Mean per-unit pairwise agreement against squared category proportions."""
    N = len(counts)
    n = sum(counts[0])
    P_i = []
    for row in counts:
        # agreeing ordered rater pairs within the unit, over all ordered pairs
        P_i.append(Fraction(sum(c * (c - 1) for c in row), n * (n - 1)))
    P_bar = sum(P_i) / N
    k = len(counts[0])
    p_j = [Fraction(sum(row[j] for row in counts), N * n) for j in range(k)]
    P_e = sum(p * p for p in p_j)
    if P_e == 1:
        return Fraction(1 if P_bar == 1 else 0)
    return (P_bar - P_e) / (1 - P_e)


class TestPercentAgreement:
    def test_identical(self):
        assert percent_agreement([1, 0, 1], [1, 0, 1]) == 1.0

    def test_complementary(self):
        assert percent_agreement([1, 0, 1], [0, 1, 0]) == 0.0

    def test_seven_of_ten(self):
        a = [1] * 10
        b = [1] * 7 + [0] * 3
        assert percent_agreement(a, b) == 0.7

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            percent_agreement([1, 0], [1])


class TestCohen:
    def test_hand_table(self):
        # both+ 4, A+B- 1, A-B+ 2, both- 3
        a = [1] * 4 + [1] + [0] * 2 + [0] * 3
        b = [1] * 4 + [0] + [1] * 2 + [0] * 3
        k = cohen_kappa(a, b)
        assert k.p_o == 0.7 and k.p_e == 0.5
        assert k.kappa == 0.4
        assert k.band is Band.FAIR

    def test_identical_vectors(self):
        assert cohen_kappa([1, 0, 1, 0], [1, 0, 1, 0]).kappa == 1.0

    def test_chance_level(self):
        # p_o = 0.5 and p_e = 0.5
        k = cohen_kappa([1, 1, 0, 0], [1, 0, 1, 0])
        assert k.kappa == 0.0 and not k.degenerate

    def test_degenerate_constant(self):
        k = cohen_kappa([0, 0, 0], [0, 0, 0])
        assert k.degenerate and k.kappa == 1.0

    def test_constant_negative_vs_mixed(self):
        k = cohen_kappa([0, 0, 0, 0], [1, 0, 1, 0])
        assert k.kappa == 0.0 and not k.degenerate

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=20))
    def test_symmetric_and_label_swap(self, pairs):
        a = [x for x, _ in pairs]
        b = [y for _, y in pairs]
        k = cohen_kappa(a, b).kappa
        assert cohen_kappa(b, a).kappa == k
        assert cohen_kappa([not x for x in a], [not y for y in b]).kappa == k
        assert -1.0 <= k <= 1.0
        res = cohen_kappa(a, b)
        if not res.degenerate:
            assert (k == 1.0) == (res.p_o == 1.0)
            assert k == pytest.approx((res.p_o - res.p_e) / (1 - res.p_e), abs=1e-12)


class TestFleiss:
    def test_hand_instance(self):
        # unit 1 all positive; unit 2 two positive one negative
        k = fleiss_kappa([[3, 0], [2, 1]])
        assert k.p_o == pytest.approx(2 / 3, abs=1e-15)
        assert k.p_e == pytest.approx(13 / 18, abs=1e-15)
        assert k.kappa == -0.2

    def test_perfect_agreement(self):
        assert fleiss_kappa([[3, 0], [0, 3], [3, 0]]).kappa == 1.0

    def test_even_split_negative(self):
        # four units each split 1-1 between two raters: P_bar = 0, P_e = 1/2
        k = fleiss_kappa([[1, 1]] * 4)
        assert k.kappa == -1.0

    def test_two_raters_is_scotts_pi(self):
        # N = 4: ratings (+,+) (+,-) (-,-) (+,-). p_o = 1/2; pooled p+ = 4/8, so P_e = 1/2 -> pi = 0
        votes = np.array([[1, 1], [1, 0], [0, 0], [1, 0]], dtype=bool)
        assert fleiss_from_votes(votes).kappa == 0.0
        # Cohen differs because the marginals differ (3/4 vs 1/4): p_e = 3/16 + 3/16 = 3/8
        assert cohen_kappa(votes[:, 0], votes[:, 1]).kappa == pytest.approx(
            float((Fraction(1, 2) - Fraction(3, 8)) / (1 - Fraction(3, 8))), abs=0
        )

    def test_ragged_rows_name_unit(self):
        with pytest.raises(ValueError, match="unit 1"):
            fleiss_kappa([[2, 1], [1, 1]])

    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_unit_and_rater_permutation(self, data):
        N = data.draw(st.integers(1, 12))
        n = data.draw(st.integers(2, 5))
        votes = np.array(data.draw(st.lists(st.lists(st.booleans(), min_size=n, max_size=n), min_size=N, max_size=N)))
        k = fleiss_from_votes(votes).kappa
        perm_u = data.draw(st.permutations(range(N)))
        perm_r = data.draw(st.permutations(range(n)))
        assert fleiss_from_votes(votes[list(perm_u)][:, list(perm_r)]).kappa == k
        # swapping the two categories everywhere leaves kappa unchanged
        assert fleiss_from_votes(~votes).kappa == k


def random_instances(seed, count):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        N = int(rng.integers(1, 21))
        n = int(rng.integers(2, 6))
        p = rng.random()
        yield (rng.random((N, n)) < p)


def test_oracle_equivalence_1000():
    for votes in random_instances(7, 1000):
        for a, b in itertools.combinations(range(votes.shape[1]), 2):
            assert abs(cohen_kappa(votes[:, a], votes[:, b]).kappa - float(oracle_cohen(votes[:, a], votes[:, b]))) <= 1e-12
        pos = votes.sum(axis=1)
        counts = [[int(p), votes.shape[1] - int(p)] for p in pos]
        assert abs(fleiss_from_votes(votes).kappa - float(oracle_fleiss(counts))) <= 1e-12


class TestInterpret:
    @pytest.mark.parametrize(
        "value,band",
        [
            (0.529, Band.MODERATE),
            (1.0, Band.ALMOST_PERFECT),
            (-0.1, Band.POOR),
            (0.0, Band.NONE_TO_SLIGHT),
            (0.20, Band.NONE_TO_SLIGHT),
            (0.204, Band.NONE_TO_SLIGHT),
            (0.205, Band.FAIR),
            (0.21, Band.FAIR),
            (0.40, Band.FAIR),
            (0.41, Band.MODERATE),
            (0.60, Band.MODERATE),
            (0.61, Band.SUBSTANTIAL),
            (0.80, Band.SUBSTANTIAL),
            (0.81, Band.ALMOST_PERFECT),
        ],
    )
    def test_bands(self, value, band):
        assert interpret_kappa(value) is band

    @pytest.mark.parametrize("bad", [1.01, -1.5, float("nan")])
    def test_out_of_range(self, bad):
        with pytest.raises(ValueError):
            interpret_kappa(bad)

    @given(st.floats(-1, 1), st.floats(-1, 1))
    def test_monotone(self, x, y):
        lo, hi = sorted((x, y))
        assert interpret_kappa(lo).rank <= interpret_kappa(hi).rank


CFG = BootstrapConfig(replications=50, seed=3)
LABELS = ("Pneumonia", "Tuberculosis", "No Finding")


def _reads(marks, session=Session.UNASSISTED, site="S"):
    """``marks`` maps rater -> list over images of label lists."""
    out = []
    for rater, per_image in marks.items():
        for i, labels in enumerate(per_image):
            out.append(make_read(f"img{i}", rater, labels or ["No Finding"], session=session, site=site))
    return out


class TestTables:
    def test_identical_raters(self):
        per_image = [["Pneumonia"], [], ["Tuberculosis"], ["Pneumonia", "Tuberculosis"], []]
        t = agreement_table(_reads({r: per_image for r in ("A", "B", "C")}), LABELS, CFG)
        assert t.pair_keys == ["A vs B", "A vs C", "B vs C"]
        for lab in LABELS:
            row = t.rows[lab]
            assert row.fleiss.kappa == 1.0
            for cell in row.pairs.values():
                assert cell.kappa.kappa == 1.0 and cell.agreement.point == 1.0

    def test_mean_row_is_mean_of_rows(self):
        rng = np.random.default_rng(0)
        choices = [[], ["Pneumonia"], ["Tuberculosis"], ["Pneumonia", "Tuberculosis"]]
        marks = {r: [choices[int(rng.integers(0, 4))] for _ in range(30)] for r in ("A", "B", "C")}
        t = agreement_table(_reads(marks), LABELS, CFG)
        for pk in t.pair_keys:
            assert t.mean.kappa[pk].point == sum(t.rows[l].pairs[pk].kappa.kappa for l in LABELS) / len(LABELS)
        assert t.mean.fleiss.point == sum(t.rows[l].fleiss.kappa for l in LABELS) / len(LABELS)
        for lab in LABELS:
            for pk, cell in t.rows[lab].pairs.items():
                a, b = pk.split(" vs ")
                va = [lab in (m or ["No Finding"]) for m in marks[a]]
                vb = [lab in (m or ["No Finding"]) for m in marks[b]]
                assert cell.kappa.kappa == float(oracle_cohen(va, vb))
                assert cell.kappa.ci.lo <= cell.kappa.ci.hi

    def test_coverage_mismatch_lists_pairs(self):
        reads = _reads({"A": [["Pneumonia"], []], "B": [["Pneumonia"]]})
        with pytest.raises(DataError, match=r"\('B', 'img1'\)"):
            agreement_table(reads, LABELS, CFG)

    def test_model_identical_to_rater(self):
        per_image = [["Pneumonia"], [], ["Tuberculosis"], []]
        raters = _reads({"A": per_image, "B": [[], [], ["Tuberculosis"], ["Pneumonia"]]})
        model = _reads({"AI": per_image}, session=Session.MODEL)
        t = model_vs_rater_table(model, raters, LABELS, CFG)
        assert t.pair_keys == ["A vs AI", "B vs AI"]
        assert all(t.rows[l].fleiss is None for l in LABELS)
        assert t.rows["Pneumonia"].pairs["A vs AI"].kappa.kappa == 1.0

    def test_model_constant_negative(self):
        raters = _reads({"A": [["Pneumonia"], [], ["Pneumonia"], []]})
        model = _reads({"AI": [[], [], [], []]}, session=Session.MODEL)
        k = model_vs_rater_table(model, raters, ("Pneumonia",), CFG).rows["Pneumonia"].pairs["A vs AI"].kappa
        assert k.kappa == 0.0 and not k.degenerate


class TestDeltas:
    def _table(self, seed):
        rng = np.random.default_rng(seed)
        choices = [[], ["Pneumonia"], ["Tuberculosis"]]
        marks = {r: [choices[int(rng.integers(0, 3))] for _ in range(20)] for r in ("A", "B", "C")}
        return agreement_table(_reads(marks), LABELS, CFG)

    def test_zero_delta(self):
        t = self._table(1)
        d = reader_study_delta(t, t)
        assert d.mean_fleiss == 0.0
        assert all(v == 0.0 for row in d.rows.values() for v in row.values())

    def test_delta_is_after_minus_before(self):
        b, a = self._table(1), self._table(2)
        d = reader_study_delta(b, a)
        for lab in LABELS:
            assert d.fleiss[lab] == pytest.approx(100 * (a.rows[lab].fleiss.kappa - b.rows[lab].fleiss.kappa))

    def test_structure_mismatch(self):
        t = self._table(1)
        other = agreement_table(_reads({"A": [[]] * 3, "B": [[]] * 3}), LABELS, CFG)
        with pytest.raises(StructureMismatch):
            reader_study_delta(t, other)

    def test_summary_by_site_and_by_cell(self):
        from cxreval.agreement import TableDelta

        deltas = {
            "X": TableDelta("model_vs_rater", {}, {}, {"p1": 1.0, "p2": 3.0}, None),
            "Y": TableDelta("model_vs_rater", {}, {}, {"p3": 6.0}, None),
        }
        s = summarize_deltas(deltas)
        assert s.cohen_by_site == 4.0  # (2 + 6) / 2
        assert s.cohen_by_cell == pytest.approx(10 / 3)
        assert s.fleiss_mean is None
