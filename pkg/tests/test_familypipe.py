import csv
import json

import numpy as np
import pytest

from pscforge.errors import AdmissibilityError, CompatibilityError, FrameError, GluingError
from pscforge.familypipe import (
    SCHEMA,
    BaseSampleSet,
    FiberFamily,
    Overlap,
    assemble_sphere_bundle,
    block_rotation,
    build_compatible_backgrounds,
    circle_family_spec,
    load_family,
    random_block_frame,
    run_family,
)
from pscforge.morsefold import MorsePair, canonical_background, compat_check


@pytest.fixture(scope="module")
def clutched():
    fam, base = load_family(circle_family_spec(count=4, clutch=True))
    return fam, base, run_family(fam, base, grid=256)


class TestFrames:
    def test_random_frames_valid(self, rng):
        for _ in range(20):
            Q = random_block_frame(1, 3, rng)
            assert np.max(np.abs(Q.T @ Q - np.eye(6))) <= 1e-12
            assert np.all(Q[:2, 2:] == 0) and np.all(Q[2:, :2] == 0)

    def test_non_block_rejected(self):
        Q = np.eye(6)
        c, s = np.cos(0.2), np.sin(0.2)
        Q[1, 1], Q[1, 2], Q[2, 1], Q[2, 2] = c, -s, s, c
        with pytest.raises(FrameError):
            BaseSampleSet(1, 3, {0: 0.0}, {"A": [0], "B": [0]}, [Overlap(0, ("A", "B"), Q)])

    def test_non_orthogonal_rejected(self):
        with pytest.raises(FrameError):
            BaseSampleSet(1, 3, {0: 0.0}, {"A": [0], "B": [0]}, [Overlap(0, ("A", "B"), 1.1 * np.eye(6))])

    def test_block_rotation_blocks(self):
        Q = block_rotation(2, 2, 0.3, 0.9)
        assert np.all(Q[:3, 3:] == 0)


class TestAdmissibility:
    def test_spec_rejects_high_index(self):
        spec = circle_family_spec(count=2)
        spec["samples"][0]["index"] = 4  # n = 5, n - 1 = 4
        with pytest.raises(AdmissibilityError):
            load_family(spec)

    def test_family_gate(self):
        from dataclasses import replace
        fam, base = load_family(circle_family_spec(count=2))
        bad = replace(fam.samples[0], fold=replace(fam.samples[0].fold, index=4))
        with pytest.raises(AdmissibilityError):
            run_family(FiberFamily(fam.p, fam.q, [bad, fam.samples[1]]), base)


class TestBackgrounds:
    def test_single_canonical(self):
        fam, _ = load_family(circle_family_spec(count=1))
        rep = build_compatible_backgrounds(fam)
        assert rep.compatible
        assert np.array_equal(rep.pairs[0].background, 2 * np.eye(6))

    def test_blend_of_compatible(self):
        fam, base = load_family(circle_family_spec(count=3))
        assert all(b["compatible"] for b in build_compatible_backgrounds(fam, base).blends)

    def test_scaled_blend_rejected(self):
        spec = circle_family_spec(count=2, clutch=False)
        spec["samples"][1]["background"] = (6 * np.eye(6)).tolist()
        fam, base = load_family(spec)
        rep = build_compatible_backgrounds(fam, base)
        F = fam.samples[0].fold
        blend = 0.5 * (canonical_background(F) + 3 * canonical_background(F))
        assert not compat_check(MorsePair(F, blend))
        assert not rep.compatible
        with pytest.raises(CompatibilityError):
            run_family(fam, base, grid=128)


class TestRunFamily:
    def test_constant_family_bitwise(self):
        fam, base = load_family(circle_family_spec(count=3, clutch=False))
        rep = run_family(fam, base, grid=256)
        assert len({f["digest"] for f in rep.fibers}) == 1
        assert len({f["min_scalar"] for f in rep.fibers}) == 1

    def test_clutched_overlaps(self, clutched):
        _, _, rep = clutched
        assert len(rep.overlap_residuals) == 2
        assert all(r["residual"] <= 1e-12 for r in rep.overlap_residuals)
        assert rep.passed

    def test_identity_frames_zero(self):
        fam, base = load_family(circle_family_spec(count=2, clutch=False))
        rep = run_family(fam, base, grid=128)
        assert all(r["residual"] == 0.0 for r in rep.overlap_residuals)

    def test_conclusions(self, clutched):
        _, _, rep = clutched
        for f in rep.fibers:
            assert f["conclusions"] == {"extends_g0": True, "product_near_boundaries": True, "psc": True}

    def test_varying_delta_lipschitz(self):
        fam, base = load_family(circle_family_spec(count=4, delta=(0.1, 0.2), clutch=False))
        rep = run_family(fam, base, grid=256)
        L = rep.continuity["lipschitz"]
        assert np.isfinite(L) and L > 0
        assert rep.continuity["finite"]

    def test_report_json_and_csv(self, clutched, tmp_path):
        _, _, rep = clutched
        doc = json.loads(rep.to_json())
        assert doc["schema"] == SCHEMA
        assert "_assemblies" not in doc
        rep.write_csv(tmp_path / "f.csv")
        rows = list(csv.reader(open(tmp_path / "f.csv")))
        assert rows[0] == ["sample_id", "z", "min_scalar", "overlap_residual"]
        assert len(rows) == 5

    def test_threads_identical(self):
        fam, base = load_family(circle_family_spec(count=3))
        a = run_family(fam, base, grid=128, threads=1).to_json()
        b = run_family(fam, base, grid=128, threads=4).to_json()
        assert a == b


@pytest.fixture(scope="module")
def bundle():
    fam, base = load_family(circle_family_spec(count=2))
    return fam, assemble_sphere_bundle(fam, base, 1.0, grid=256)


class TestSphereBundle:
    def test_passes(self, bundle):
        _, rep = bundle
        assert rep.passed
        assert rep.extra["checks"] == {"mirror_exact": True, "caps_matched": True}

    def test_cap_residual(self, bundle):
        _, rep = bundle
        assert all(f["cap_residual"] <= 1e-10 for f in rep.fibers)
        assert all(f["mirror_exact"] for f in rep.fibers)

    def test_cap_mismatch(self):
        fam, base = load_family(circle_family_spec(count=2))
        with pytest.raises(GluingError):
            assemble_sphere_bundle(fam, base, 0.5, grid=128)
