import json

import numpy as np
import pytest

from pscforge.errors import DomainError, NoValidAlpha
from pscforge.familypipe import block_rotation
from pscforge.morsefold import (
    FoldMap,
    Monomial,
    MorsePair,
    alpha_bound,
    canonical_background,
    compat_check,
    correction_gradient_constant,
    critical_set,
    cubic_constant,
    declared_cubic_constant,
    deform,
    load_fold,
    perturbed_fold,
    standard_fold,
    verify_deformation,
)

CUBIC = [Monomial((3, 0, 0), 0.3)]


def cubic(coef):
    return perturbed_fold(1, 2, 1, [Monomial((3, 0, 0), coef)])


class TestStandardFold:
    def test_value(self, rng):
        F = standard_fold(2, 3, 2, c=0.5)
        x = rng.uniform(-1, 1, (20, 4))
        expect = 0.5 - x[:, 0] ** 2 - x[:, 1] ** 2 + x[:, 2] ** 2 + x[:, 3] ** 2
        assert np.array_equal(F.value(x), expect)

    def test_gradient_origin(self):
        assert np.array_equal(standard_fold(1, 2, 1).grad(np.zeros(3))[0], np.zeros(3))

    def test_hessian_signature(self):
        H = standard_fold(1, 4, 2).hess(np.zeros(5))[0]
        w = np.linalg.eigvalsh(H)
        assert (w < 0).sum() == 2 and (w > 0).sum() == 3

    def test_gradient_formula(self, rng):
        F = standard_fold(1, 3, 1)
        x = rng.uniform(-1, 1, (10, 4))
        assert np.array_equal(F.grad(x), 2 * x * np.array([-1, 1, 1, 1]))

    def test_index_n_builds(self):
        assert standard_fold(1, 4, 4).index == 4

    @pytest.mark.parametrize("lam", [-1, 6])
    def test_index_range(self, lam):
        with pytest.raises(DomainError):
            standard_fold(1, 4, lam)


class TestDerivatives:
    def test_fd_gradient_and_hessian(self, rng):
        F = perturbed_fold(1, 2, 1, [Monomial((3, 0, 0), 0.4), Monomial((1, 1, 1), -0.2), Monomial((0, 2, 2), 0.1)])
        Ft = deform(F, 0.2, 0.6)
        x = rng.uniform(-0.4, 0.4, (20, 3))
        h = 1e-5
        eye = np.eye(3) * h
        g_fd = np.stack([(Ft.value(x + e) - Ft.value(x - e)) / (2 * h) for e in eye], axis=1)
        assert np.max(np.abs(g_fd - Ft.grad(x))) <= 1e-8
        H_fd = np.stack([(Ft.grad(x + e) - Ft.grad(x - e)) / (2 * h) for e in eye], axis=1)
        assert np.max(np.abs(H_fd - Ft.hess(x))) <= 1e-7

    def test_monomial_roundtrip(self):
        m = Monomial((1, 0, 2), -0.25)
        assert Monomial.from_dict(json.loads(json.dumps(m.to_dict()))) == m


class TestDeform:
    def test_t0_identity(self, rng):
        F = perturbed_fold(1, 2, 1, CUBIC)
        x = rng.uniform(-0.5, 0.5, (200, 3))
        assert np.array_equal(deform(F, 0.1, 0.0).value(x), F.value(x))

    def test_t1_standard_inside(self, rng):
        F = perturbed_fold(1, 2, 1, CUBIC)
        v = rng.standard_normal((100, 3))
        x = 0.05 * v / np.linalg.norm(v, axis=1)[:, None]
        assert np.array_equal(deform(F, 0.1, 1.0).value(x), F.standard.value(x))

    def test_outside_unchanged(self, rng):
        F = perturbed_fold(1, 2, 1, CUBIC)
        v = rng.standard_normal((100, 3))
        x = 0.3 * v / np.linalg.norm(v, axis=1)[:, None]
        for t in (0.0, 0.3, 1.0):
            assert np.array_equal(deform(F, 0.1, t).value(x), F.value(x))

    def test_bad_args(self):
        F = standard_fold(1, 2, 1)
        with pytest.raises(DomainError):
            deform(F, 0.0, 0.5)
        with pytest.raises(DomainError):
            deform(F, 0.1, 1.5)
        with pytest.raises(DomainError):
            deform(deform(F, 0.1, 0.5), 0.1, 0.5)


class TestCriticalSet:
    def test_standard(self):
        cs = critical_set(standard_fold(1, 2, 1))
        assert cs.is_origin_only()

    def test_two_criticals(self):
        cs = critical_set(cubic(10.0))
        pts = sorted(cs.points.tolist())
        assert len(pts) == 2
        assert np.allclose(pts[0], [0, 0, 0], atol=1e-12)
        assert np.allclose(pts[1], [1 / 15, 0, 0], atol=1e-12)
        assert np.all(cs.residuals <= 1e-10)

    def test_root_outside_box(self):
        assert critical_set(cubic(0.3)).is_origin_only()

    def test_grid_floor(self):
        with pytest.raises(DomainError):
            critical_set(standard_fold(1, 2, 1), per_axis=5)


class TestVerifyDeformation:
    def test_zero_perturbation(self):
        F = standard_fold(1, 2, 1)
        for alpha in (0.25, 0.1, 0.01):
            assert verify_deformation(F, alpha).passed

    def test_cubic03(self):
        res = verify_deformation(cubic(0.3), 0.1)
        assert all(res.flags.values())
        assert res.t_samples == (0.0, 0.25, 0.5, 0.75, 1.0)

    def test_cubic10_fails_at_t0(self):
        res = verify_deformation(cubic(10.0), 0.1)
        assert not res.flags["critical_set_preserved"]
        assert len(res.critical_sets[0]) == 2

    def test_alpha_out_of_box(self):
        with pytest.raises(DomainError):
            verify_deformation(cubic(0.3), 0.8)

    def test_json(self):
        doc = json.loads(json.dumps(verify_deformation(cubic(0.3), 0.1).to_dict()))
        assert doc["passed"] is True
        assert [c["t"] for c in doc["critical_sets"]] == [0.0, 0.25, 0.5, 0.75, 1.0]


class TestAlphaBound:
    def test_zero_perturbation(self):
        alpha, _ = alpha_bound(standard_fold(1, 2, 1))
        assert alpha == 0.25

    def test_cubic(self):
        alpha, res = alpha_bound(cubic(0.3))
        assert alpha > 0 and res.passed

    def test_quadratic(self):
        F = perturbed_fold(1, 2, 1, [Monomial((2, 0, 0), 0.5)], declared_cubic=True)
        with pytest.raises(NoValidAlpha) as exc:
            alpha_bound(F)
        assert exc.value.reason == "no_valid_alpha"


class TestConstants:
    def test_cubic_constant_declared(self):
        F = cubic(0.3)
        assert declared_cubic_constant(F) == pytest.approx(0.3)
        assert cubic_constant(F) <= 1.1 * declared_cubic_constant(F)

    def test_declared_none_for_quadratic(self):
        F = perturbed_fold(1, 2, 1, [Monomial((2, 0, 0), 0.5)])
        assert declared_cubic_constant(F) is None

    def test_gradient_quadratic_bound(self):
        F = perturbed_fold(1, 2, 1, [Monomial((3, 0, 0), 0.3), Monomial((1, 2, 0), -0.2)])
        C = declared_cubic_constant(F)
        for alpha in (0.25, 0.1, 0.05):
            for t in (0.25, 1.0):
                Cp = correction_gradient_constant(F, alpha, t)
                assert Cp <= C * (1 + 10 * 0.5 / alpha) * 3


class TestCompat:
    def test_canonical(self):
        F = standard_fold(1, 2, 1)
        assert compat_check(MorsePair(F, canonical_background(F)))

    def test_identity_scale(self):
        F = standard_fold(1, 2, 1)
        assert not compat_check(MorsePair(F, np.eye(3)))

    def test_block_rotation_keeps_compat(self):
        F = standard_fold(1, 3, 2)
        Q = block_rotation(1, 1, 0.4, 1.1)
        m = Q @ canonical_background(F) @ Q.T
        assert compat_check(MorsePair(F, m))

    def test_cross_coupling_breaks_compat(self):
        # conjugating 2I by any rotation returns 2I, so the mixing case uses a
        # background that couples a negative and a positive axis
        F = standard_fold(1, 2, 1)
        th = 0.3
        R = np.eye(3)
        R[0, 0], R[0, 1], R[1, 0], R[1, 1] = np.cos(th), -np.sin(th), np.sin(th), np.cos(th)
        m = R @ np.diag([2.0, 3.0, 2.0]) @ R.T
        assert not compat_check(MorsePair(F, m))
        assert not compat_check(MorsePair(F, np.diag([2.0, 3.0, 2.0])))

    def test_scaled_background(self):
        F = standard_fold(1, 2, 1)
        assert not compat_check(MorsePair(F, 3 * canonical_background(F)))


def test_load_fixture():
    from pscforge.cli import FIXTURE_DIR
    F = load_fold(FIXTURE_DIR / "cubic03.json")
    assert isinstance(F, FoldMap) and F.fiber_dim == 3 and F.index == 1
    assert F.perturbation[0].coefficient == 0.3
