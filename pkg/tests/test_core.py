import numpy as np
import pytest

from senscal.core import (
    CoefficientVector,
    DataError,
    DesignScaler,
    ObservedData,
    SensitivityLevel,
    check_loss,
    inverse_weight,
    propensity,
    tilde_y_minus,
    tilde_y_plus,
)


class TestSensitivityLevel:
    def test_derived_quantities(self):
        lvl = SensitivityLevel(2.0)
        assert lvl.tau == 2.0 / 3.0
        assert lvl.span == 2.0 - 0.5

    def test_unit_level_degenerates(self):
        lvl = SensitivityLevel(1.0)
        assert lvl.tau == 0.5
        assert lvl.span == 0.0

    @pytest.mark.parametrize("bad", [0.5, 0.0, -1.0, np.inf, np.nan])
    def test_rejects_bad_values(self, bad):
        with pytest.raises(DataError):
            SensitivityLevel(bad)


class TestCheckLoss:
    def test_zero_at_fit_point(self):
        for y in (-3.0, 0.0, 2.5):
            for tau in (0.1, 0.5, 0.9):
                assert check_loss(y, y, tau) == 0.0

    def test_hand_values(self):
        assert check_loss(2.0, 1.0, 0.6) == pytest.approx(0.6)
        assert check_loss(0.0, 1.0, 0.6) == pytest.approx(0.4)

    def test_rejects_bad_tau(self):
        with pytest.raises(DataError):
            check_loss(1.0, 0.0, 0.0)
        with pytest.raises(DataError):
            check_loss(1.0, 0.0, 1.0)

    def test_convexity_in_u(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            y, u1, u2 = rng.normal(size=3) * 3
            tau = rng.uniform(0.05, 0.95)
            theta = rng.random()
            mid = check_loss(y, theta * u1 + (1 - theta) * u2, tau)
            hull = theta * check_loss(y, u1, tau) + (1 - theta) * check_loss(y, u2, tau)
            assert mid <= hull + 1e-12

    def test_lipschitz_in_u(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            y, u1, u2 = rng.normal(size=3) * 4
            tau = rng.uniform(0.05, 0.95)
            lhs = abs(check_loss(y, u1, tau) - check_loss(y, u2, tau))
            assert lhs <= max(tau, 1 - tau) * abs(u1 - u2) + 1e-12

    def test_vectorized(self):
        y = np.array([1.0, 2.0, 3.0])
        out = check_loss(y, 2.0, 0.5)
        assert out.shape == (3,)
        assert out[1] == 0.0


class TestTransformedOutcomes:
    def test_identity_at_unit_level(self):
        lvl = SensitivityLevel(1.0)
        assert tilde_y_plus(3.7, -1.0, lvl) == 3.7
        assert tilde_y_minus(3.7, -1.0, lvl) == 3.7

    def test_hand_values_at_two(self):
        lvl = SensitivityLevel(2.0)
        # tau = 2/3, span = 1.5
        assert tilde_y_plus(3.0, 1.0, lvl) == pytest.approx(5.0)
        assert tilde_y_plus(0.0, 1.0, lvl) == pytest.approx(0.5)
        assert tilde_y_minus(3.0, 1.0, lvl) == pytest.approx(2.0)
        assert tilde_y_minus(0.0, 1.0, lvl) == pytest.approx(-1.0)

    def test_ordering(self):
        rng = np.random.default_rng(7)
        for lam in (1.0, 1.3, 2.5, 10.0):
            lvl = SensitivityLevel(lam)
            y = rng.normal(size=50) * 3
            q = rng.normal(size=50) * 3
            up = tilde_y_plus(y, q, lvl)
            dn = tilde_y_minus(y, q, lvl)
            assert np.all(up >= y - 1e-12)
            assert np.all(dn <= y + 1e-12)


class TestPropensity:
    def test_intercept_only_zero(self):
        gamma = CoefficientVector.standard(np.zeros(3))
        assert propensity(np.array([1.0, 0.0, 0.0]), gamma) == 0.5

    def test_unit_linear_predictor(self):
        gamma = CoefficientVector.standard(np.array([1.0, 0.0]))
        val = propensity(np.array([1.0, 5.0]), gamma)
        assert val == pytest.approx(0.7310585786, abs=1e-9)

    def test_inverse_weight_relationship(self):
        rng = np.random.default_rng(8)
        gamma = CoefficientVector.standard(rng.normal(size=4))
        rows = np.hstack([np.ones((20, 1)), rng.normal(size=(20, 3))])
        pi = propensity(rows, gamma)
        w = inverse_weight(rows, gamma)
        assert np.allclose((1 - pi) / pi, w, rtol=1e-12)
        # pi = 0.2 corresponds to weight 4
        assert (1 - 0.2) / 0.2 == pytest.approx(4.0)

    def test_clamping_keeps_finite(self):
        gamma = CoefficientVector.standard(np.array([100.0, 0.0]))
        val = propensity(np.array([1.0, 0.0]), gamma)
        assert 0.0 < val < 1.0
        assert np.isfinite(inverse_weight(np.array([1.0, 0.0]), gamma))


class TestObservedData:
    def _mats(self, n=10):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(n, 2))
        d = np.hstack([np.ones((n, 1)), X])
        y = rng.normal(size=n)
        t = (np.arange(n) % 2).astype(float)
        return y, t, d

    def test_valid_roundtrip(self):
        y, t, d = self._mats()
        data = ObservedData(y, t, d, d)
        assert data.n == 10
        assert data.n_treated == 5

    def test_arrays_immutable(self):
        y, t, d = self._mats()
        data = ObservedData(y, t, d, d)
        with pytest.raises(ValueError):
            data.y[0] = 99.0

    def test_requires_intercept_column(self):
        y, t, d = self._mats()
        bad = d.copy()
        bad[0, 0] = 2.0
        with pytest.raises(DataError):
            ObservedData(y, t, bad, d)

    def test_requires_both_arms(self):
        y, t, d = self._mats()
        with pytest.raises(DataError):
            ObservedData(y, np.ones_like(t), d, d)

    def test_rejects_nonbinary_treatment(self):
        y, t, d = self._mats()
        t2 = t.copy()
        t2[0] = 0.5
        with pytest.raises(DataError):
            ObservedData(y, t2, d, d)

    def test_rejects_missing(self):
        y, t, d = self._mats()
        y2 = y.copy()
        y2[3] = np.nan
        with pytest.raises(DataError):
            ObservedData(y2, t, d, d)

    def test_flip_involution(self):
        y, t, d = self._mats()
        data = ObservedData(y, t, d, d)
        back = data.flip_treatment().flip_treatment()
        assert np.array_equal(back.t, data.t)


class TestCoefficientVector:
    def test_intercept_never_penalized(self):
        with pytest.raises(DataError):
            CoefficientVector(np.array([1.0, 2.0]), np.array([True, True]))

    def test_standard_mask(self):
        coef = CoefficientVector.standard(np.array([1.0, -2.0, 3.0]))
        assert not coef.penalized_mask[0]
        assert coef.penalized_mask[1:].all()
        assert coef.penalty_norm() == pytest.approx(5.0)


class TestDesignScaler:
    def test_standardizes_non_intercept(self):
        rng = np.random.default_rng(2)
        d = np.hstack([np.ones((200, 1)), rng.normal(2.0, 3.0, size=(200, 3))])
        scaler = DesignScaler.fit(d)
        out = scaler.transform(d)
        assert np.allclose(out[:, 0], 1.0)
        assert np.allclose(out[:, 1:].mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(out[:, 1:].std(axis=0), 1.0, atol=1e-12)

    def test_coefficient_mapping_preserves_predictions(self):
        rng = np.random.default_rng(3)
        d = np.hstack([np.ones((50, 1)), rng.normal(1.0, 2.0, size=(50, 2))])
        scaler = DesignScaler.fit(d)
        coef_std = CoefficientVector.standard(rng.normal(size=3))
        coef_raw = scaler.unscale_coefficients(coef_std)
        pred_std = scaler.transform(d) @ coef_std.values
        pred_raw = d @ coef_raw.values
        assert np.allclose(pred_std, pred_raw, atol=1e-12)

    def test_constant_column_passthrough(self):
        d = np.hstack([np.ones((10, 1)), np.full((10, 1), 4.0)])
        scaler = DesignScaler.fit(d)
        out = scaler.transform(d)
        assert np.allclose(out[:, 1], 0.0)  # centered, unscaled
