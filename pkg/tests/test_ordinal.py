import numpy as np
import numpy.testing as npt
import pytest

from evigrade.ordinal import (
    ClassDistribution,
    OrdinalTargets,
    decode,
    encode_hard,
    encode_soft,
    isotonic_nonincreasing,
    predict_grade,
    threshold_count_grade,
)


# ---- oracles ----

def pav_oracle(x):
    """Repeated full scans: average any adjacent increasing pair until none."""
    blocks = [[float(v)] for v in x]
    changed = True
    while changed:
        changed = False
        for i in range(len(blocks) - 1):
            m0 = sum(blocks[i]) / len(blocks[i])
            m1 = sum(blocks[i + 1]) / len(blocks[i + 1])
            if m0 < m1:
                blocks[i] = blocks[i] + blocks[i + 1]
                del blocks[i + 1]
                changed = True
                break
    out = []
    for b in blocks:
        out.extend([sum(b) / len(b)] * len(b))
    return np.array(out)


# ---- encoding ----

class TestEncode:
    def test_hard_examples(self):
        npt.assert_array_equal(encode_hard(0, 5).t, [0, 0, 0, 0])
        npt.assert_array_equal(encode_hard(2, 5).t, [1, 1, 0, 0])
        npt.assert_array_equal(encode_hard(4, 5).t, [1, 1, 1, 1])

    def test_hard_out_of_range(self):
        with pytest.raises(ValueError):
            encode_hard(5, 5)
        with pytest.raises(ValueError):
            encode_hard(-1, 5)

    def test_soft_tail_sums(self):
        p = np.array([0.1, 0.2, 0.3, 0.25, 0.15])
        t = encode_soft(p).t
        expect = [p[1:].sum(), p[2:].sum(), p[3:].sum(), p[4:].sum()]
        npt.assert_allclose(t, expect)

    def test_soft_of_onehot_matches_hard(self):
        for y in range(5):
            npt.assert_allclose(encode_soft(np.eye(5)[y]).t, encode_hard(y, 5).t)

    def test_soft_nonincreasing_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = rng.dirichlet(np.ones(6))
            t = encode_soft(p).t
            assert (np.diff(t) <= 1e-12).all()
            assert (t >= 0).all() and (t <= 1).all()

    def test_targets_validate_monotonicity(self):
        with pytest.raises(ValueError):
            OrdinalTargets(np.array([0.2, 0.5, 0.1, 0.0]), 5)


# ---- isotonic projection ----

class TestIsotonic:
    def test_already_sorted_identity(self):
        x = np.array([0.9, 0.6, 0.3, 0.1])
        npt.assert_array_equal(isotonic_nonincreasing(x), x)

    def test_single_violation_pools_to_mean(self):
        npt.assert_allclose(isotonic_nonincreasing(np.array([0.2, 0.8])), [0.5, 0.5])

    def test_increasing_input_pools_to_global_mean(self):
        x = np.arange(5, dtype=float)
        npt.assert_allclose(isotonic_nonincreasing(x), np.full(5, 2.0))

    def test_matches_scan_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            x = rng.uniform(0, 1, rng.integers(1, 9))
            npt.assert_allclose(isotonic_nonincreasing(x), pav_oracle(x),
                                atol=1e-12)

    def test_projection_properties(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            x = rng.uniform(0, 1, 6)
            y = isotonic_nonincreasing(x)
            assert (np.diff(y) <= 1e-12).all()
            npt.assert_allclose(y.sum(), x.sum())  # block means conserve mass


# ---- decoding ----

class TestDecode:
    def test_frozen_example(self):
        d = decode(np.array([0.9, 0.5, 0.2, 0.05]))
        npt.assert_allclose(d.p, [0.1, 0.4, 0.3, 0.15, 0.05])

    def test_degenerate_endpoints(self):
        npt.assert_allclose(decode(np.zeros(4)).p, [1, 0, 0, 0, 0])
        npt.assert_allclose(decode(np.ones(4)).p, [0, 0, 0, 0, 1])

    def test_non_monotone_input_is_projected(self):
        d = decode(np.array([0.4, 0.6]))  # pooled to [0.5, 0.5]
        npt.assert_allclose(d.p, [0.5, 0.0, 0.5])

    def test_random_valid_distribution(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            pi = rng.uniform(0, 1, 4)
            d = decode(pi)
            assert (d.p >= 0).all()
            npt.assert_allclose(d.p.sum(), 1.0)

    def test_roundtrip_with_encode(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            p = rng.dirichlet(np.ones(5))
            npt.assert_allclose(decode(encode_soft(p).t).p, p, atol=1e-12)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            decode(np.array([1.2, 0.5]))


# ---- readout ----

class TestReadout:
    def test_argmax(self):
        assert predict_grade(ClassDistribution(np.array([0.1, 0.5, 0.4]))) == 1

    def test_tie_breaks_low(self):
        assert predict_grade(np.array([0.4, 0.4, 0.2])) == 0

    def test_threshold_count(self):
        assert threshold_count_grade(np.array([0.9, 0.8, 0.4, 0.1])) == 2
        assert threshold_count_grade(np.zeros(4)) == 0
        assert threshold_count_grade(np.ones(4)) == 4

    def test_threshold_count_agrees_on_confident(self):
        # a sharply peaked distribution gives the same answer both ways
        for y in range(5):
            t = encode_hard(y, 5).t
            pi = np.clip(t, 0.02, 0.98)
            assert threshold_count_grade(pi) == y
            assert predict_grade(decode(pi)) == y
