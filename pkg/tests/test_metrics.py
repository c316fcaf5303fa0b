import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import pair_count_auroc
from sinf.errors import InvalidDataError
from sinf.flow import Flow
from sinf.metrics import OodReport, auroc, ood_report

scores = st.lists(st.integers(-5, 5).map(float), min_size=1, max_size=10)


class TestAuroc:
    def test_all_ties(self):
        assert auroc([2.0, 2.0, 2.0], [2.0, 2.0]) == 0.5

    def test_perfect_separation(self):
        assert auroc([5, 6, 7], [1, 2]) == 1.0
        assert auroc([1, 2], [5, 6, 7]) == 0.0

    def test_interleaved(self):
        assert auroc([1, 3], [2, 4]) == 0.25
        assert pair_count_auroc([1, 3], [2, 4]) == 0.25

    def test_empty(self):
        with pytest.raises(InvalidDataError):
            auroc([], [1.0])
        with pytest.raises(InvalidDataError):
            auroc([1.0], [])

    def test_nan(self):
        with pytest.raises(InvalidDataError):
            auroc([np.nan], [1.0])

    def test_infinite_scores_rank(self):
        assert auroc([0.0], [-np.inf]) == 1.0

    @given(scores, scores)
    def test_matches_pair_counting(self, a, b):
        assert abs(auroc(a, b) - pair_count_auroc(a, b)) <= 1e-12

    @given(scores, scores)
    def test_swap_complement(self, a, b):
        assert auroc(a, b) + auroc(b, a) == pytest.approx(1.0, abs=1e-12)


class TestOodReport:
    def test_range_checked(self):
        with pytest.raises(InvalidDataError):
            OodReport(1.5, 1, 1)

    def test_from_flow(self):
        rng = np.random.default_rng(0)
        rep = ood_report(Flow(2), rng.normal(size=(200, 2)), rng.normal(size=(100, 2)) + [6, 0])
        assert rep.auroc > 0.99 and rep.n_in == 200 and rep.n_out == 100
        assert rep.to_dict()["score_kind"] == "log_density"
