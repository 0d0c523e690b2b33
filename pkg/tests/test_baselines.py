import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gaitssc.baselines import (
    BaselineKind,
    baseline_features,
    correlation_features,
    pca_features,
    statistical_features,
)
from gaitssc.errors import DegenerateChannelError, DomainError
from gaitssc.ingest import preprocess_cycle, RawCycle


def _jacobi_eigvals(a, sweeps=50):
    # cyclic Jacobi rotations, independent of LAPACK
    a = np.array(a, dtype=float)
    n = a.shape[0]
    for _ in range(sweeps):
        off = np.sqrt(np.sum(a**2) - np.sum(np.diag(a) ** 2))
        if off < 1e-14:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta**2 + 1)) if theta != 0 else 1.0
                c = 1 / np.sqrt(t**2 + 1)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q], rot[q, p] = s, -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))[::-1]


class TestStatistical:
    def test_hand_computed(self):
        fv = statistical_features(np.array([[1.0, 3.0], [0.0, 0.0]]), use_pre_zscore=False)
        np.testing.assert_allclose(fv.values, [2.0, 0.0, 2.0, 0.0])
        assert fv.schema == ("mean[1]", "mean[2]", "var[1]", "var[2]")

    def test_moment_oracle(self, rng):
        y = rng.normal(size=(5, 40))
        fv = statistical_features(y)
        means = [sum(r) / len(r) for r in y]
        varis = [sum((v - m) ** 2 for v in r) / (len(r) - 1) for r, m in zip(y, means)]
        np.testing.assert_allclose(fv.values, means + varis, atol=1e-12)

    def test_zscored_degenerate(self, small_data):
        _, cycles, _ = small_data
        fv = statistical_features(cycles[0], use_pre_zscore=False)
        n = cycles[0].n_channels
        assert np.abs(fv.values[:n]).max() < 1e-9
        assert np.abs(fv.values[n:] - 1).max() < 1e-9

    def test_uses_detrended(self, small_data):
        _, cycles, _ = small_data
        fv = statistical_features(cycles[0])
        np.testing.assert_allclose(fv.values[18:], cycles[0].detrended.var(axis=1, ddof=1))


class TestCorrelation:
    def test_count(self, rng):
        assert len(correlation_features(rng.normal(size=(18, 84)))) == 153

    def test_self_copy(self, rng):
        y = rng.normal(size=(3, 20))
        y[2] = y[0]
        fv = correlation_features(y)
        assert fv.values[fv.schema.index("r[1,3]")] == pytest.approx(1.0, abs=1e-12)

    def test_covariance_oracle(self, rng):
        y = rng.normal(size=(6, 30))
        cov = np.cov(y)
        sd = np.sqrt(np.diag(cov))
        expected = [cov[i, j] / (sd[i] * sd[j]) for i in range(6) for j in range(i + 1, 6)]
        np.testing.assert_allclose(correlation_features(y).values, expected, atol=1e-10)

    def test_flat_channel(self, rng):
        y = rng.normal(size=(3, 10))
        y[1] = 4.0
        with pytest.raises(DegenerateChannelError) as err:
            correlation_features(y)
        assert err.value.channel == 2

    @given(st.integers(0, 1000))
    def test_affine_invariance(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.normal(size=(5, 25))
        scale = rng.uniform(0.1, 10, size=(5, 1))
        shift = rng.normal(size=(5, 1)) * 5
        a = correlation_features(y).values
        b = correlation_features(scale * y + shift).values
        np.testing.assert_allclose(a, b, atol=1e-10)
        assert np.all(np.abs(a) <= 1)


class TestPca:
    def test_dimension(self, rng):
        fv, ratios = pca_features(rng.normal(size=(18, 84)), 3)
        assert len(fv) == 6 and len(ratios) == 3

    def test_rank_one(self, rng):
        direction = rng.normal(size=(6, 1))
        y = direction @ rng.normal(size=(1, 50))
        _, ratios = pca_features(y, 1)
        assert ratios[0] == pytest.approx(1.0, abs=1e-12)
        with pytest.raises(DomainError):
            pca_features(y, 2)

    def test_eigen_oracle(self, rng):
        y = rng.normal(size=(6, 40))
        fv, _ = pca_features(y, 6)
        np.testing.assert_allclose(fv.values[6:], _jacobi_eigvals(np.cov(y)), atol=1e-8)
        np.testing.assert_allclose(fv.values[:6], 0, atol=1e-12)

    def test_scores_uncorrelated_and_ratios_sum(self, rng):
        from gaitssc.baselines import principal_components

        y = rng.normal(size=(5, 60))
        evals, evecs, rank = principal_components(y)
        scores = evecs.T @ (y - y.mean(axis=1, keepdims=True))
        r = np.corrcoef(scores)
        assert np.abs(r - np.diag(np.diag(r))).max() <= 1e-8
        assert rank == 5
        _, ratios = pca_features(y, 5)
        assert ratios.sum() == pytest.approx(1.0, abs=1e-9)

    def test_sign_convention(self, rng):
        from gaitssc.baselines import principal_components

        _, evecs, _ = principal_components(rng.normal(size=(5, 30)))
        pivots = evecs[np.argmax(np.abs(evecs), axis=0), np.arange(5)]
        assert (pivots > 0).all()

    def test_too_many_components(self, rng):
        with pytest.raises(DomainError):
            pca_features(rng.normal(size=(4, 30)), 5)

    def test_bit_stable(self, rng):
        y = rng.normal(size=(18, 84))
        assert pca_features(y)[0].values.tobytes() == pca_features(y.copy())[0].values.tobytes()


def test_kind_validation():
    with pytest.raises(DomainError):
        BaselineKind("wavelet")
    with pytest.raises(DomainError):
        BaselineKind("pca", 0)


def test_dispatch(rng):
    raw = RawCycle("S01", 0, "case", rng.normal(size=(4, 30)))
    cyc = preprocess_cycle(raw, 30)
    assert baseline_features(cyc, "statistical").source == "statistical"
    assert len(baseline_features(cyc, "correlation")) == 6
    assert len(baseline_features(cyc, BaselineKind("pca", 2))) == 4
