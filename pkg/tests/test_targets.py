import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gipolab.targets import gae, one_step_targets, step_discounts, vtrace
from target_oracles import gae_direct, random_segment, vtrace_direct


class TestGae:
    def test_two_step_example(self):
        out = gae([-1.0, -1.0], [0.0, 0.0, 0.0], 0.99, 0.95)
        assert out.advantages[0] == pytest.approx(-1.9405, abs=1e-12)
        assert out.advantages[1] == pytest.approx(-1.0, abs=1e-15)

    def test_single_step(self):
        out = gae([0.5], [2.0, 3.0], 0.9, 0.95)
        assert out.advantages[0] == pytest.approx(0.5 + 0.9 * 3.0 - 2.0)
        assert out.value_targets[0] == pytest.approx(0.5 + 0.9 * 3.0)

    def test_lambda_zero_is_td(self):
        rng = np.random.default_rng(0)
        r, v = rng.normal(size=6), rng.normal(size=7)
        out = gae(r, v, 0.97, 0.0)
        np.testing.assert_allclose(out.advantages, r + 0.97 * v[1:] - v[:-1], atol=1e-15)

    def test_terminal_cuts_bootstrap(self):
        out = gae([1.0, 1.0], [0.0, 0.0, 100.0], 0.99, 0.95, dones=[False, True])
        assert out.advantages[1] == 1.0
        assert out.advantages[0] == pytest.approx(1.0 + 0.99 * 0.95)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            gae([1.0, 1.0], [0.0, 0.0])
        with pytest.raises(ValueError):
            gae([], [0.0])

    def test_direct_sum_random(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            r, v, _, d = random_segment(rng)
            lam = float(rng.uniform())
            adv, tgt = gae_direct(r, v, 0.99, lam, d)
            out = gae(r, v, 0.99, lam, d)
            assert np.max(np.abs(out.advantages - adv)) < 1e-12
            assert np.max(np.abs(out.value_targets - tgt)) < 1e-12


class TestVtrace:
    def test_on_policy_single_step(self):
        out = vtrace([-1.0], [0.3, 0.7], [0.0], 0.99)
        assert out.value_targets[0] == pytest.approx(-1.0 + 0.99 * 0.7, abs=1e-15)

    def test_zero_ratios(self):
        v = np.array([0.1, -0.4, 2.0, 0.5])
        out = vtrace([1.0, 2.0, 3.0], v, np.full(3, -np.inf), 0.9)
        np.testing.assert_array_equal(out.value_targets, v[:3])

    def test_mixed_ratio_example(self):
        r, v = [-1.0, 0.5, 2.0], [0.2, -0.3, 1.1, 0.4]
        lr = np.log([0.5, 2.0, 1.0])
        adv, vs = vtrace_direct(r, v, lr, 0.99, 1.0, 1.0)
        out = vtrace(r, v, lr, 0.99)
        np.testing.assert_allclose(out.value_targets, vs, atol=1e-12)
        np.testing.assert_allclose(out.advantages, adv, atol=1e-12)

    def test_direct_sum_random(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            r, v, lr, d = random_segment(rng)
            cb = float(rng.uniform(0.3, 1.5))
            rb = cb + float(rng.uniform(0, 1))
            adv, vs = vtrace_direct(r, v, lr, 0.95, rb, cb, d)
            out = vtrace(r, v, lr, 0.95, rb, cb, d)
            assert np.max(np.abs(out.value_targets - vs)) < 1e-12
            assert np.max(np.abs(out.advantages - adv)) < 1e-12

    def test_untruncated_is_per_decision_importance_return(self):
        # G_s = V_s + rho_s (r_s + gamma G_{s+1} - V_s), with G_T = V_T
        rng = np.random.default_rng(3)
        for _ in range(100):
            T = int(rng.integers(1, 6))
            r, v, lr = rng.normal(size=T), rng.normal(size=T + 1), rng.normal(0, 0.5, T)
            g = v[T]
            expect = np.zeros(T)
            for s in range(T - 1, -1, -1):
                g = v[s] + np.exp(lr[s]) * (r[s] + 0.9 * g - v[s])
                expect[s] = g
            out = vtrace(r, v, lr, 0.9, np.inf, np.inf)
            np.testing.assert_allclose(out.value_targets, expect, rtol=1e-12, atol=1e-12)

    def test_unit_ratios_give_n_step_return(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            T = int(rng.integers(1, 6))
            r, v = rng.normal(size=T), rng.normal(size=T + 1)
            out = vtrace(r, v, np.zeros(T), 0.95)
            for s in range(T):
                n_step = sum(0.95 ** (t - s) * r[t] for t in range(s, T)) + 0.95 ** (T - s) * v[T]
                assert out.value_targets[s] == pytest.approx(n_step, abs=1e-12)

    def test_weight_pg_flag(self):
        r, v, lr = [1.0, -0.5], [0.0, 0.3, 0.1], np.log([3.0, 0.4])
        a = vtrace(r, v, lr, 0.9, weight_pg=True)
        b = vtrace(r, v, lr, 0.9, weight_pg=False)
        np.testing.assert_allclose(a.advantages, np.minimum(1.0, np.exp(lr)) * b.advantages)
        np.testing.assert_array_equal(a.value_targets, b.value_targets)

    @pytest.mark.parametrize("rb,cb", [(0.5, 1.0), (1.0, 0.0), (1.0, -1.0)])
    def test_truncation_validation(self, rb, cb):
        with pytest.raises(ValueError):
            vtrace([1.0], [0.0, 0.0], [0.0], 0.99, rb, cb)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            vtrace([1.0, 2.0], [0.0, 0.0, 0.0], [0.0], 0.99)


class TestOneStep:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 30), st.integers(0, 2**32 - 1))
    def test_matches_per_row_calls(self, n, seed):
        rng = np.random.default_rng(seed)
        r, v, nv = rng.normal(size=n), rng.normal(size=n), rng.normal(size=n)
        done = rng.random(n) < 0.3
        disc = step_discounts(0.99, done)
        lr = rng.normal(size=n)
        g = one_step_targets(r, v, nv, disc, "gae")
        vt = one_step_targets(r, v, nv, disc, "vtrace", lr, 1.0, 1.0)
        for i in range(n):
            a = gae([r[i]], [v[i], nv[i]], 0.99, 0.95, [done[i]])
            b = vtrace([r[i]], [v[i], nv[i]], [lr[i]], 0.99, 1.0, 1.0, [done[i]], weight_pg=False)
            assert g.advantages[i] == pytest.approx(a.advantages[0], abs=1e-12)
            assert g.value_targets[i] == pytest.approx(a.value_targets[0], abs=1e-12)
            assert vt.advantages[i] == pytest.approx(b.advantages[0], abs=1e-12)
            assert vt.value_targets[i] == pytest.approx(b.value_targets[0], abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            one_step_targets([1.0], [0.0], [0.0], [0.99], "vtrace")
        with pytest.raises(ValueError):
            one_step_targets([1.0], [0.0], [0.0], [0.99], "retrace")
