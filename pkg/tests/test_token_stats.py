import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bsqcodec import token_stats as ts
from bsqcodec.errors import DomainError, FormatError
from bsqcodec.grid import TokenGrid
from conftest import fixture_path
from oracles import shannon_entropy_bits


def grid(values, bits=16, shape=None):
    arr = np.asarray(values, dtype=np.uint64)
    return TokenGrid(arr.reshape(shape or (1, arr.size)), bits)


class TestComputeStats:
    def test_single_token(self):
        r = ts.compute_stats(grid([7] * 12))
        assert r.entropy_bits == 0.0
        assert r.unique_tokens == 1 and r.total_tokens == 12
        assert r.mean_token_value == 7.0

    def test_uniform_64(self):
        r = ts.compute_stats(grid(np.arange(64), shape=(8, 8)))
        assert r.entropy_bits == pytest.approx(6.0, abs=1e-12)
        assert r.sparsity == 64 / 2**16
        assert r.utilization == 1.0

    @given(st.lists(st.integers(0, 255), min_size=1, max_size=300))
    def test_invariants(self, values):
        r = ts.compute_stats(grid(values, bits=8))
        assert r.entropy_bits == pytest.approx(shannon_entropy_bits(values), abs=1e-9)
        assert r.entropy_bits <= math.log2(r.unique_tokens) + 1e-12
        assert r.unique_tokens <= min(r.total_tokens, 256)
        assert r.sparsity == r.unique_tokens / 256
        assert sum(r.histogram.values()) == len(values)

    @pytest.mark.parametrize("k", [1, 2, 3, 10, 100, 1000])
    def test_uniform_over_k(self, k):
        r = ts.compute_stats(grid(np.repeat(np.arange(k), 3)))
        assert r.entropy_bits == pytest.approx(math.log2(k), abs=1e-9)

    def test_large_tokens(self):
        r = ts.compute_stats(grid([2**63 + 1, 2**63 + 3], bits=64))
        assert r.mean_token_value == float(2**63 + 2)


class TestCorpus:
    def test_six_thousand_token_corpus(self):
        rng = np.random.default_rng(0)
        distinct = rng.choice(2**16, size=6142, replace=False)
        grids = [grid(chunk) for chunk in np.array_split(rng.permutation(np.tile(distinct, 2)), 12)]
        u = ts.corpus_utilization(grids)
        assert u == 6142 / 65536
        assert round(100 * u, 2) == 9.37

    def test_single_token(self):
        assert ts.corpus_utilization([grid([3, 3])], 16) == 1 / 2**16

    def test_full_coverage(self):
        assert ts.corpus_utilization([grid(np.arange(128), 8), grid(np.arange(128, 256), 8)]) == 1.0

    def test_sub_corpus_monotone(self, rng):
        grids = [grid(rng.integers(0, 500, size=50), 10) for _ in range(6)]
        assert ts.corpus_utilization(grids[:3]) <= ts.corpus_utilization(grids)

    def test_errors(self):
        with pytest.raises(DomainError):
            ts.corpus_utilization([grid([1], 8), grid([1], 9)])
        with pytest.raises(DomainError):
            ts.corpus_utilization([grid([1], 8)], 9)
        with pytest.raises(DomainError):
            ts.corpus_utilization([])


class TestCorrelation:
    def family(self, n=30, seed=0):
        rng = np.random.default_rng(seed)
        reports = []
        for _ in range(n):
            k = int(rng.integers(2, 200))
            values = rng.choice(2**16, size=k, replace=False)
            reports.append(ts.compute_stats(grid(np.tile(values, 2))))
        return reports

    def test_matrix_shape_and_symmetry(self):
        c = ts.correlation_matrix(self.family())
        v = np.array(c.values, dtype=float)
        assert c.columns == ("entropy_bits", "sparsity", "unique_tokens", "mean_token_value")
        assert np.allclose(v, v.T)
        assert np.allclose(np.diag(v), 1.0)
        assert np.all(np.abs(v) <= 1.0)

    def test_matches_numpy(self):
        reports = self.family()
        data = np.array([[r.entropy_bits, r.sparsity, r.unique_tokens, r.mean_token_value] for r in reports])
        assert np.allclose(np.array(ts.correlation_matrix(reports).values, dtype=float), np.corrcoef(data.T))

    def test_unique_count_drives_entropy_and_sparsity(self):
        v = ts.correlation_matrix(self.family()).values
        assert v[0][1] > 0.8

    def test_noise_column_uncorrelated(self):
        rng = np.random.default_rng(42)
        reports = []
        for _ in range(100):
            k = int(rng.integers(2, 64))
            offset = int(rng.integers(0, 2**15))
            # token values are placed at a random offset, so their mean is noise
            reports.append(ts.compute_stats(grid(np.arange(k) + offset)))
        v = ts.correlation_matrix(reports).values
        assert abs(v[0][3]) < 0.2

    def test_zero_variance_is_null(self):
        reports = [ts.compute_stats(grid([1, 2, 3 + i])) for i in range(3)]
        v = ts.correlation_matrix(reports).values
        assert v[0][1] is None and v[0][0] is None
        assert v[3][3] == 1.0

    def test_needs_three(self):
        with pytest.raises(DomainError):
            ts.correlation_matrix(self.family(2))


class TestReportFile:
    def test_round_trip(self, tmp_path):
        reports = [ts.compute_stats(grid(v)) for v in ([1, 2, 2, 9], [5], [0, 65535])]
        path = tmp_path / "r.csv"
        ts.export_report(reports, path)
        assert ts.read_report(path) == reports

    def test_summary_block_skipped(self):
        reports = [ts.compute_stats(grid([4, 4, 1]))]
        text = ts.format_report(reports, {"corpus_utilization": 0.5, "corr_a_b": None})
        assert "corpus_utilization,0.5" in text
        assert ts.parse_report(text) == reports

    def test_empty(self, tmp_path):
        path = tmp_path / "e.csv"
        ts.export_report([], path)
        lines = path.read_text().splitlines()
        assert lines[1] == ",".join(ts.COLUMNS)
        assert ts.read_report(path) == []

    def test_golden(self):
        corpus = [TokenGrid(np.arange(16).reshape(4, 4) % k, 8) for k in (1, 2, 5, 16)]
        reports = [ts.compute_stats(g) for g in corpus]
        with open(fixture_path("golden_report.csv"), encoding="utf-8") as fh:
            text = fh.read()
        assert ts.format_report(reports) == text
        assert ts.parse_report(text) == reports

    def test_malformed(self):
        with pytest.raises(FormatError):
            ts.parse_report("nope")
        good = ts.format_report([ts.compute_stats(grid([1]))])
        with pytest.raises(FormatError):
            ts.parse_report(good.replace(ts.HISTOGRAM_MARKER, "# something"))
        with pytest.raises(FormatError):
            ts.parse_report(good.replace("\n0,16,", "\n0,x,", 1))

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError, match="missing"):
            ts.export_report([], tmp_path / "missing" / "r.csv")
