import numpy as np
import pytest

from ebpolicy.ingest import PolicyRecord
from ebpolicy.linalg2 import sqrtm_psd2
from ebpolicy.moments import (
    MomentsConfig,
    build_location_scale,
    destandardize,
    estimate_location,
    estimate_scale,
    psd_repair,
    standardize,
)


def rec(pid, y, sigma, t=0):
    return PolicyRecord(pid, t, np.asarray(y, float), np.asarray(sigma, float))


class TestLocation:
    def test_single_record(self):
        alpha = estimate_location([rec("a", [2, 1], np.eye(2))], 1)
        assert alpha[0] == pytest.approx([2.0, 1.0])

    def test_two_records(self):
        records = [rec("a", [0, 0], np.eye(2)), rec("b", [2, 2], np.eye(2))]
        assert estimate_location(records, 1)[0] == pytest.approx([1.0, 1.0])

    def test_empty_type_rejected(self):
        with pytest.raises(ValueError, match="no records"):
            estimate_location([rec("a", [0, 0], np.eye(2))], 2)

    def test_monte_carlo_consistency(self):
        # J=10000 draws around alpha=(2,2); sup error < 0.1 w.h.p.
        rng = np.random.default_rng(7)
        y = 2.0 + rng.standard_normal((10000, 2)) * np.sqrt(2.0)
        records = [rec(str(i), y[i], np.eye(2)) for i in range(len(y))]
        alpha = estimate_location(records, 1)
        assert np.abs(alpha[0] - 2.0).max() < 0.1


class TestScale:
    def test_omega_zero_when_sigma_matches_cov(self):
        rng = np.random.default_rng(0)
        y = rng.standard_normal((200, 2))
        alpha = y.mean(axis=0)
        cov = (y - alpha).T @ (y - alpha) / len(y)
        records = [rec(str(i), y[i], cov) for i in range(len(y))]
        omega = estimate_scale(records, alpha[None, :])
        assert np.abs(omega[0]).max() < 1e-12

    def test_omega_is_cov_when_sigma_zero(self):
        rng = np.random.default_rng(1)
        y = rng.standard_normal((50, 2))
        alpha = y.mean(axis=0)
        cov = (y - alpha).T @ (y - alpha) / len(y)
        records = [rec(str(i), y[i], np.zeros((2, 2))) for i in range(len(y))]
        assert estimate_scale(records, alpha[None, :])[0] == pytest.approx(cov)

    def test_unbiased_denominator_option(self):
        rng = np.random.default_rng(2)
        y = rng.standard_normal((10, 2))
        alpha = y.mean(axis=0)
        records = [rec(str(i), y[i], np.zeros((2, 2))) for i in range(len(y))]
        o_j = estimate_scale(records, alpha[None, :], "j")
        o_j1 = estimate_scale(records, alpha[None, :], "j-1")
        assert o_j1[0] == pytest.approx(o_j[0] * 10 / 9)

    def test_needs_two_records(self):
        with pytest.raises(ValueError, match="estimate_scale"):
            estimate_scale([rec("a", [0, 0], np.eye(2))], np.zeros((1, 2)))

    def test_monte_carlo_recovery(self):
        # true model: theta ~ corners, y = theta + noise(Sigma=I), Omega=I
        rng = np.random.default_rng(3)
        J = 20000
        tau = rng.choice([-1.0, 1.0], size=(J, 2))
        y = tau + rng.standard_normal((J, 2))
        records = [rec(str(i), y[i], np.eye(2)) for i in range(J)]
        alpha = estimate_location(records, 1)
        omega = estimate_scale(records, alpha)
        assert np.abs(np.linalg.eigvalsh(omega[0] - np.eye(2))).max() < 0.1


class TestPsdRepair:
    def test_clamps_negative_eigenvalue(self):
        repaired, pre = psd_repair(np.diag([-0.5, 2.0]), 0.01)
        assert repaired == pytest.approx(np.diag([0.01, 2.0]))
        assert pre == pytest.approx([-0.5, 2.0])

    def test_identity_untouched(self):
        repaired, _ = psd_repair(np.eye(2), 0.01)
        assert repaired == pytest.approx(np.eye(2))

    def test_preserves_eigenvectors(self):
        # [[1,2],[2,1]] has eigenvalues (-1, 3); repair keeps the eigenbasis
        m = np.array([[1.0, 2.0], [2.0, 1.0]])
        repaired, pre = psd_repair(m, 0.01)
        assert sorted(pre) == pytest.approx([-1.0, 3.0])
        vals, vecs = np.linalg.eigh(repaired)
        assert vals == pytest.approx([0.01, 3.0])
        expected = np.array([[1, 1], [-1, 1]]) / np.sqrt(2)
        overlap = np.abs(vecs.T @ expected)
        assert np.diag(overlap) == pytest.approx([1.0, 1.0], abs=1e-12)

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            a = rng.normal(size=(2, 2))
            m = 0.5 * (a + a.T)
            once, _ = psd_repair(m, 0.01)
            twice, _ = psd_repair(once, 0.01)
            assert twice == pytest.approx(once, abs=1e-12)

    def test_zero_floor_allowed(self):
        repaired, _ = psd_repair(np.diag([-0.5, 2.0]), 0.0)
        assert repaired == pytest.approx(np.diag([0.0, 2.0]))


class TestStandardize:
    def ls_for(self, records, **kwargs):
        return build_location_scale(records, 1, MomentsConfig(**kwargs))

    def test_identity_moments(self):
        samples_in = [
            rec("a", [0.3, -0.2], 0.5 * np.eye(2)),
            rec("b", [-0.3, 0.2], 0.5 * np.eye(2)),
        ]
        from ebpolicy.moments import LocationScale
        ls = LocationScale(
            alpha=np.zeros((1, 2)),
            omega_raw=np.eye(2)[None],
            omega=np.eye(2)[None],
            omega_sqrt=np.eye(2)[None],
            omega_inv_sqrt=np.eye(2)[None],
            eigenvalues_before_repair=np.ones((1, 2)),
        )
        out = standardize(samples_in, ls)
        for r, s in zip(samples_in, out):
            assert s.z_hat == pytest.approx(r.y)
            assert s.psi_hat == pytest.approx(r.sigma)

    def test_hand_worked_example(self):
        # alpha=(1,1), omega=diag(4,4), y=(3,1), sigma=I -> z=(1,0), psi=I/4
        from ebpolicy.moments import LocationScale
        ls = LocationScale(
            alpha=np.array([[1.0, 1.0]]),
            omega_raw=np.diag([4.0, 4.0])[None],
            omega=np.diag([4.0, 4.0])[None],
            omega_sqrt=np.diag([2.0, 2.0])[None],
            omega_inv_sqrt=np.diag([0.5, 0.5])[None],
            eigenvalues_before_repair=np.array([[4.0, 4.0]]),
        )
        out = standardize([rec("a", [3, 1], np.eye(2))], ls)
        assert out[0].z_hat == pytest.approx([1.0, 0.0])
        assert out[0].psi_hat == pytest.approx(0.25 * np.eye(2))

    def test_round_trip(self):
        rng = np.random.default_rng(5)
        records = [
            rec(str(i), rng.normal(size=2) * 3, np.diag(rng.uniform(0.1, 1, 2)))
            for i in range(40)
        ]
        ls = self.ls_for(records)
        samples = standardize(records, ls)
        for r, s in zip(records, samples):
            back = destandardize(s.z_hat, s.type_index, ls)
            assert back == pytest.approx(r.y, abs=1e-10)

    def test_sqrt_consistency_invariant(self):
        rng = np.random.default_rng(6)
        records = [
            rec(str(i), rng.normal(size=2) * 2, 0.2 * np.eye(2)) for i in range(30)
        ]
        ls = self.ls_for(records)
        for t in range(ls.n_types):
            assert ls.omega_sqrt[t] @ ls.omega_sqrt[t] == pytest.approx(
                ls.omega[t], abs=1e-10
            )


def test_estimation_error_shrinks_with_sample_size():
    # errors at J and 4J: median ratio over 50 replications >= 1.3,
    # consistent with a sqrt(log J / J) rate
    J = 500
    ratios_a, ratios_o = [], []
    true_sqrt = sqrtm_psd2(np.eye(2))
    for seed in range(50):
        errs = {}
        for n in (J, 4 * J):
            rng = np.random.default_rng((seed, n))
            tau = rng.choice([-1.0, 1.0], size=(n, 2))
            y = tau + rng.standard_normal((n, 2))
            records = [rec(str(i), y[i], np.eye(2)) for i in range(n)]
            ls = build_location_scale(records, 1)
            errs[n] = (
                np.abs(ls.alpha[0]).max(),
                np.abs(np.linalg.eigvalsh(sqrtm_psd2(ls.omega[0]) - true_sqrt)).max(),
            )
        ratios_a.append(errs[J][0] / max(errs[4 * J][0], 1e-12))
        ratios_o.append(errs[J][1] / max(errs[4 * J][1], 1e-12))
    assert np.median(ratios_a) >= 1.3
    assert np.median(ratios_o) >= 1.3
