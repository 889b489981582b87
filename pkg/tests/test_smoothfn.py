import json
import math

import numpy as np
import pytest

from pscforge.errors import DomainError, IncompatibleProfilesError
from pscforge.glsurgery import torpedo_profile
from pscforge.smoothfn import (
    SMOOTHSTEP_MAX_SLOPE,
    SmoothProfile,
    combine,
    constant_profile,
    convex_combine,
    cosine_profile,
    hermite_spline,
    make_cutoff,
    sine_profile,
    smoothstep,
)

from conftest import random_profile


class TestCutoff:
    def test_one_below_alpha(self):
        assert make_cutoff(0.5)(0.4) == 1.0

    def test_zero_above_two_alpha(self):
        assert make_cutoff(0.5)(1.1) == 0.0

    def test_dense_grid_slope(self):
        phi = make_cutoff(0.5)
        s = np.linspace(0.0, 1.5, 1_500_001)
        assert abs(np.max(np.abs(phi(s, 1))) - 3.75) <= 1e-6

    def test_monotone(self):
        phi = make_cutoff(0.3)
        v = phi(np.linspace(0.0, 1.0, 10001))
        assert np.all(np.diff(v) <= 0.0)

    def test_slope_bound_property(self):
        assert make_cutoff(2.0).slope_bound == SMOOTHSTEP_MAX_SLOPE / 2.0

    @pytest.mark.parametrize("alpha", [0.0, -1.0])
    def test_rejects_nonpositive(self, alpha):
        with pytest.raises(DomainError):
            make_cutoff(alpha)

    def test_smoothstep_endpoints(self):
        for order in (0, 1, 2):
            assert smoothstep(np.array(0.0), order) == 0.0
        assert smoothstep(np.array(1.0), 0) == 1.0
        assert smoothstep(np.array(1.0), 1) == 0.0
        assert smoothstep(np.array(1.0), 2) == 0.0


class TestEval:
    def test_sine_value(self):
        assert sine_profile(1.0).eval(math.pi / 4) == pytest.approx(0.7071067811865476, abs=1e-15)

    def test_constant_derivative(self):
        assert constant_profile(2.0, 3.0).eval(1.7, 1) == 0.0

    def test_out_of_domain(self):
        prof = sine_profile(1.0)
        with pytest.raises(DomainError):
            prof.eval(prof.domain_length + 0.1)
        with pytest.raises(DomainError):
            prof.eval(-0.1)

    def test_disk_closure(self):
        prof = sine_profile(0.7)
        assert prof.closure == "disk"
        assert prof.eval(0.0) == 0.0
        assert prof.eval(0.0, 1) == 1.0

    def test_cosine_profile(self):
        prof = cosine_profile(2.0)
        assert prof.eval(0.0) == 2.0
        assert prof.eval(1.0) == pytest.approx(2.0 * math.cos(0.5), rel=1e-15)


class TestJunctions:
    @pytest.mark.parametrize("delta", [1.0, 0.5, 0.1])
    @pytest.mark.parametrize("shape", [0.0, 0.5, 1.0])
    def test_torpedo_junctions(self, delta, shape):
        prof = torpedo_profile(delta, 0.2, shape)
        assert prof.is_c2()
        for b, piece_l, piece_r in zip(prof.breakpoints, prof.pieces, prof.pieces[1:]):
            for order in (0, 1, 2):
                left, right = piece_l.eval(b, order), piece_r.eval(b, order)
                scale = max(1.0, abs(left), abs(right))
                assert abs(left - right) <= 1e-10 * scale

    def test_spline_junctions(self, rng):
        for _ in range(20):
            assert random_profile(rng).is_c2()

    def test_truncated_sine_is_not_c2(self):
        delta = 1.0
        s = sine_profile(delta, delta * math.pi / 2)
        glued = s.shifted_concat(constant_profile(delta, 1.0))
        assert not glued.is_c2()


class TestCombine:
    def test_endpoints(self):
        p1 = torpedo_profile(1.0, 0.2, 0.0)
        p2 = torpedo_profile(1.0, 0.2, 1.0)
        assert convex_combine(p1, p2, 0.0) is p2
        assert convex_combine(p1, p2, 1.0) is p1

    def test_midpoint_pointwise(self):
        p1 = torpedo_profile(1.0, 0.2, 0.0)
        p2 = torpedo_profile(1.0, 0.2, 0.7)
        mid = convex_combine(p1, p2, 0.5)
        t = np.linspace(0.0, p1.domain_length, 1001)
        for order in (0, 1, 2):
            expect = 0.5 * p1.eval(t, order) + 0.5 * p2.eval(t, order)
            assert np.max(np.abs(mid.eval(t, order) - expect)) <= 1e-14

    def test_mismatched_delta(self):
        with pytest.raises(IncompatibleProfilesError):
            convex_combine(torpedo_profile(1.0), torpedo_profile(0.5), 0.5)

    def test_mismatched_layout(self):
        with pytest.raises(IncompatibleProfilesError):
            convex_combine(torpedo_profile(1.0, 0.2), torpedo_profile(1.0, 0.3), 0.5)

    def test_lambda_range(self):
        with pytest.raises(DomainError):
            convex_combine(torpedo_profile(1.0), torpedo_profile(1.0), 1.5)

    def test_combine_merges_nodes(self):
        a = hermite_spline([0.0, 0.5, 1.0], [1, 1.2, 1], [0, 0, 0], [0, 0, 0])
        b = hermite_spline([0.0, 0.3, 1.0], [1, 0.9, 1], [0, 0, 0], [0, 0, 0])
        c = combine([a, b], [0.25, 0.75])
        assert c.breakpoints == (0.3, 0.5)
        t = np.linspace(0, 1, 301)
        assert np.max(np.abs(c.eval(t) - (0.25 * a.eval(t) + 0.75 * b.eval(t)))) <= 1e-15


def test_json_roundtrip():
    prof = torpedo_profile(0.37, 0.15, 0.4)
    back = SmoothProfile.from_dict(json.loads(json.dumps(prof.to_dict())))
    t = np.linspace(0.0, prof.domain_length, 777)
    for order in (0, 1, 2):
        assert np.array_equal(back.eval(t, order), prof.eval(t, order))
