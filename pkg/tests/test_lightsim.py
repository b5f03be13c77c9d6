"""Tests for transport matrices, projection rendering and the classical solvers."""

import math
import os

import numpy as np
import pytest
from scipy import linalg

from src.nlosltm.errors import (
    ConfigurationError,
    DimensionError,
    IllConditionedError,
    IntegrityError,
    NumericError,
)
from src.nlosltm.lightsim import (
    CONDITION_CATALOG,
    MIXTURES,
    ConditionSpec,
    Occluder,
    SceneGeometry,
    TransportCache,
    TransportMatrix,
    build_transport_matrix,
    classical_reconstruct,
    condition_number,
    default_occluder,
    desk_conditions,
    read_transport,
    render_projection,
    write_transport,
)
from src.nlosltm.metrics import psnr
from src.nlosltm.procedural import procedural_images


def _centers(res, size, z):
    h, w = res
    pts = []
    for r in range(h):
        for c in range(w):
            x = (c + 0.5) * (size[1] / w) - size[1] / 2.0
            y = size[0] / 2.0 - (r + 0.5) * (size[0] / h)
            pts.append((x, y, z))
    return pts


class TestConditionSpec:
    def test_code_roundtrip(self):
        for code in CONDITION_CATALOG:
            assert ConditionSpec.from_code(code).code == code

    def test_alternative_separators(self):
        assert ConditionSpec.from_code("100_2_L_wb").code == "100;2;L;Wb"
        assert ConditionSpec.from_code("70-1-A-Wall").code == "70;1;A;Wall"

    def test_bad_code_raises(self):
        with pytest.raises(ConfigurationError):
            ConditionSpec.from_code("70;1;A")
        with pytest.raises(ConfigurationError):
            ConditionSpec.from_code("70;3;A;Wall")
        with pytest.raises(ConfigurationError):
            ConditionSpec.from_code("70;1;X;Wall")

    def test_nonpositive_distance_raises(self, noiseless_cond):
        with pytest.raises(ConfigurationError, match="distance_cm"):
            ConditionSpec(id=0, distance_cm=0.0, angle_id=1,
                          illumination=noiseless_cond.illumination, surface=noiseless_cond.surface)

    def test_zero_area_occluder_raises(self):
        with pytest.raises(ConfigurationError, match="area"):
            Occluder(center_cm=(0.0, 0.0), width_cm=0.0, height_cm=5.0, standoff_cm=10.0)

    def test_occluder_beyond_hidden_plane_raises(self):
        occ = Occluder(center_cm=(0.0, 0.0), width_cm=5.0, height_cm=5.0, standoff_cm=80.0)
        with pytest.raises(ConfigurationError):
            ConditionSpec.from_code("70;1;A;Wall", occluder=occ)

    def test_mixture_sizes(self):
        assert {k: len(v) for k, v in MIXTURES.items()} == {
            "all-mnist": 8, "all-supermodel": 8, "all-anime": 8, "four-anime": 4}
        for codes in MIXTURES.values():
            assert set(codes) <= set(CONDITION_CATALOG)

    def test_desk_conditions_ids_and_occluder(self):
        conds = desk_conditions("four-anime")
        assert [c.id for c in conds] == [0, 1, 2, 3]
        assert all(c.occluder == default_occluder(c.distance_cm) for c in conds)
        assert all(c.occluder is None for c in desk_conditions("four-anime", occluder=False))

    def test_desk_conditions_from_codes(self):
        conds = desk_conditions("70;1;A;Wall, 100;2;A;Wb")
        assert [c.code for c in conds] == ["70;1;A;Wall", "100;2;A;Wb"]

    def test_dict_roundtrip(self):
        cond = desk_conditions("four-anime")[2]
        assert ConditionSpec.from_dict(cond.to_dict()) == cond


class TestBuildTransportMatrix:
    def test_nonnegative_and_shape(self, small_geom, dark_wall_cond):
        A = build_transport_matrix(dark_wall_cond, small_geom)
        assert A.shape == (64, 16)
        assert np.all(A.entries >= 0)
        assert np.all(A.entries.max(axis=0) > 0)

    def test_brightest_row_sums_to_one(self, small_geom, dark_wall_cond):
        A = build_transport_matrix(dark_wall_cond, small_geom)
        assert A.entries.sum(axis=1).max() == pytest.approx(1.0, abs=1e-12)

    def test_head_on_entry(self, noiseless_cond):
        geom = SceneGeometry(hidden_res=(2, 2), wall_res=(2, 2),
                             hidden_plane_size_cm=(40.0, 40.0), wall_size_cm=(40.0, 40.0))
        A = build_transport_matrix(noiseless_cond, geom)
        for j in range(4):
            expected = 0.6 / 70.0 ** 2 * A.row_scale[j]
            assert A.entries[j, j] == pytest.approx(expected, rel=1e-12)

    def test_occluded_pairs_are_zero(self, small_geom, dark_wall_cond):
        occ = default_occluder(dark_wall_cond.distance_cm)
        cond = ConditionSpec.from_code("70;1;A;Wall", occluder=occ)
        A = build_transport_matrix(cond, small_geom)
        wall = _centers(small_geom.wall_res, small_geom.wall_size_cm, 0.0)
        hidden = _centers(small_geom.hidden_res, small_geom.hidden_plane_size_cm, 70.0)
        t = (70.0 - occ.standoff_cm) / 70.0
        blocked = 0
        for i, (wx, wy, _) in enumerate(wall):
            for j, (hx, hy, _) in enumerate(hidden):
                px = hx + t * (wx - hx)
                py = hy + t * (wy - hy)
                if abs(px - occ.center_cm[0]) <= occ.width_cm / 2 and abs(py - occ.center_cm[1]) <= occ.height_cm / 2:
                    assert A.entries[i, j] == 0.0
                    blocked += 1
                else:
                    assert A.entries[i, j] > 0.0
        assert blocked > 0

    def test_deterministic(self, small_geom):
        cond = desk_conditions("70;1;A;Wb")[0]
        a = build_transport_matrix(cond, small_geom)
        b = build_transport_matrix(cond, small_geom)
        assert a.entries.tobytes() == b.entries.tobytes()

    def test_whiteboard_differs_from_wall(self, small_geom):
        wall = build_transport_matrix(ConditionSpec.from_code("70;1;A;Wall"), small_geom)
        wb = build_transport_matrix(ConditionSpec.from_code("70;1;A;Wb"), small_geom)
        assert not np.allclose(wall.entries, wb.entries)

    def test_specular_entries_closed_form(self):
        geom = SceneGeometry(hidden_res=(2, 2), wall_res=(2, 2),
                             hidden_plane_size_cm=(40.0, 40.0), wall_size_cm=(40.0, 40.0))
        cond = ConditionSpec.from_code("70;1;A;Wb")
        A = build_transport_matrix(cond, geom)
        rho, s = cond.surface.albedo, cond.surface.specular
        tilt = math.radians(cond.tilt_deg)
        d = geom.camera_distance_cm
        camera = (d * math.sin(tilt), 0.0, d * math.cos(tilt))
        raw = np.zeros((4, 4))
        lobes = []
        for i, p in enumerate(_centers(geom.wall_res, geom.wall_size_cm, 0.0)):
            v = [c - q for c, q in zip(camera, p)]
            v = [t / math.sqrt(sum(u * u for u in v)) for t in v]
            for j, q in enumerate(_centers(geom.hidden_res, geom.hidden_plane_size_cm, 70.0)):
                w = [a - b for a, b in zip(q, p)]
                r = math.sqrt(sum(t * t for t in w))
                w = [t / r for t in w]
                mirror = (-w[0], -w[1], w[2])
                lobe = max(0.0, sum(a * b for a, b in zip(mirror, v))) ** 50
                lobes.append(lobe)
                raw[i, j] = rho * ((1 - s) * w[2] * w[2] / r ** 2 + s * lobe) * v[2]
        np.testing.assert_allclose(A.entries, raw / raw.sum(axis=1).max(), rtol=1e-10, atol=0)
        # no distance falloff on the lobe: it dwarfs the 1/r² diffuse part
        assert max(lobes) > 0.5
        assert s * max(lobes) > 1000 * (1 - s) / 70.0 ** 2

    @pytest.mark.parametrize("seed", [7, 8, 9])
    def test_occluder_lowers_condition_number(self, seed):
        geom = SceneGeometry(hidden_res=(4, 4), wall_res=(8, 8), geometry_seed=seed)
        with_occ = build_transport_matrix(desk_conditions("70;1;A;Wall")[0], geom)
        without = build_transport_matrix(desk_conditions("70;1;A;Wall", occluder=False)[0], geom)
        assert condition_number(with_occ) < condition_number(without)

    @pytest.mark.parametrize("seed", [7, 8, 9])
    def test_occluder_lowers_condition_number_16(self, seed):
        # at 16x16 the trailing singular values sit at round-off either way;
        # compare over the leading ones
        geom = SceneGeometry(hidden_res=(16, 16), wall_res=(16, 16), geometry_seed=seed)
        with_occ = build_transport_matrix(desk_conditions("70;1;A;Wall")[0], geom)
        without = build_transport_matrix(desk_conditions("70;1;A;Wall", occluder=False)[0], geom)
        assert condition_number(with_occ, rank=16) < condition_number(without, rank=16)


_FIXTURE_REG = 1e-8


class TestRecordedRegressions:
    """16x16 seed-7 desk geometry (wall, 70 cm, occluder) against recorded values."""

    @pytest.fixture(scope="class")
    def seed7(self):
        return build_transport_matrix(desk_conditions("70;1;A;Wall")[0],
                                      SceneGeometry(hidden_res=(16, 16), wall_res=(16, 16), geometry_seed=7))

    def test_condition_number(self, seed7, recorded):
        kappa = condition_number(seed7, reg=_FIXTURE_REG)
        sigma_max = np.linalg.norm(seed7.entries, 2)
        assert 1.0 < kappa <= math.sqrt(1.0 + sigma_max ** 2 / _FIXTURE_REG) * (1 + 1e-9)
        recorded.check("kappa_reg1e-8_seed7_16x16_70_wall", kappa, rel=1e-6)

    @pytest.mark.parametrize("family", ["digits", "shapes"])
    def test_tikhonov_psnr(self, seed7, recorded, family):
        x = procedural_images(1, (16, 16), family, seed=11)[0]
        y = (seed7.entries @ x.reshape(-1, 1)).reshape(16, 16, 1)
        got = psnr(classical_reconstruct(seed7, y, _FIXTURE_REG), x)
        M = seed7.entries
        oracle = np.linalg.solve(M.T @ M + _FIXTURE_REG * np.eye(256), M.T @ y.reshape(-1))
        assert got == pytest.approx(psnr(np.clip(oracle, 0, 1).reshape(16, 16, 1), x), abs=0.1)
        recorded.check(f"tikhonov_psnr_reg1e-8_seed7_16x16_{family}", got, abs=0.1)


class TestRenderProjection:
    def test_zero_image(self, small_geom, noiseless_cond):
        A = build_transport_matrix(noiseless_cond, small_geom)
        y = render_projection(A, np.zeros((4, 4)), noise_seed=0)
        assert y.shape == (8, 8, 1)
        assert np.all(y == 0.0)

    def test_unit_pixel_gives_column(self, small_geom, noiseless_cond):
        A = build_transport_matrix(noiseless_cond, small_geom)
        x = np.zeros((4, 4))
        x[1, 2] = 1.0
        y = render_projection(A, x, noise_seed=0)
        np.testing.assert_allclose(y.ravel(), np.clip(A.entries[:, 1 * 4 + 2], 0, 1), rtol=0, atol=1e-15)

    def test_matches_naive_multiply(self, noiseless_cond):
        geom = SceneGeometry(hidden_res=(8, 8), wall_res=(8, 8))
        A = build_transport_matrix(noiseless_cond, geom)
        x = np.random.default_rng(0).uniform(0, 1, size=(8, 8))
        y = render_projection(A, x, noise_seed=0)[:, :, 0]
        xv = x.ravel()
        for i in range(64):
            acc = 0.0
            for j in range(64):
                acc += A.entries[i, j] * xv[j]
            assert abs(y.ravel()[i] - acc) < 1e-12

    def test_superposition(self, small_geom, noiseless_cond):
        A = build_transport_matrix(noiseless_cond, small_geom)
        rng = np.random.default_rng(1)
        x1 = rng.uniform(0, 0.5, size=(4, 4))
        x2 = rng.uniform(0, 0.5, size=(4, 4))
        lhs = render_projection(A, x1 + x2, 0)
        rhs = render_projection(A, x1, 0) + render_projection(A, x2, 0)
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-10)

    def test_color_uses_same_matrix_per_channel(self, small_geom, noiseless_cond):
        A = build_transport_matrix(noiseless_cond, small_geom)
        gray = np.random.default_rng(2).uniform(0, 1, size=(4, 4))
        rgb = np.stack([gray, gray, gray], axis=2)
        y = render_projection(A, rgb, 0)
        assert y.shape == (8, 8, 3)
        np.testing.assert_array_equal(y[:, :, 0], y[:, :, 2])

    def test_noise_seeded(self, small_geom, dark_wall_cond):
        A = build_transport_matrix(dark_wall_cond, small_geom)
        x = np.full((4, 4), 0.5)
        assert np.array_equal(render_projection(A, x, 5), render_projection(A, x, 5))
        assert not np.array_equal(render_projection(A, x, 5), render_projection(A, x, 6))

    def test_ambient_floor(self, small_geom):
        A = build_transport_matrix(ConditionSpec.from_code("70;1;L;Wall"), small_geom)
        y = render_projection(A, np.zeros((4, 4)), 0)
        assert 0.05 < float(y.mean()) < 0.25

    def test_shape_mismatch(self, small_geom, noiseless_cond):
        A = build_transport_matrix(noiseless_cond, small_geom)
        with pytest.raises(DimensionError):
            render_projection(A, np.zeros((5, 4)), 0)


class TestClassicalReconstruct:
    def test_zero_projection(self, small_geom, noiseless_cond):
        A = build_transport_matrix(noiseless_cond, small_geom)
        for reg in (1e-8, 1.0):
            assert np.all(classical_reconstruct(A, np.zeros((8, 8)), reg) == 0.0)

    def test_huge_regularizer(self, small_geom, dark_wall_cond):
        A = build_transport_matrix(dark_wall_cond, small_geom)
        y = render_projection(A, np.full((4, 4), 0.7), 0)
        assert np.linalg.norm(classical_reconstruct(A, y, 1e12)) < 1e-6

    def test_matches_normal_equations(self, small_geom):
        cond = desk_conditions("70;1;A;Wall")[0]
        A = build_transport_matrix(cond, small_geom)
        x = np.random.default_rng(3).uniform(0, 1, size=(4, 4))
        y = (A.entries @ x.ravel()).reshape(8, 8)
        reg = 1e-6
        M = A.entries
        oracle = np.clip(np.linalg.solve(M.T @ M + reg * np.eye(16), M.T @ y.ravel()), 0, 1)
        got = classical_reconstruct(A, y, reg)
        np.testing.assert_allclose(got.ravel(), oracle, atol=1e-8)

    def test_small_regularizer_beats_large(self, small_geom):
        A = build_transport_matrix(desk_conditions("70;1;A;Wall")[0], small_geom)
        x = np.random.default_rng(4).uniform(0, 1, size=(4, 4, 1))
        y = (A.entries @ x.reshape(16, 1)).reshape(8, 8, 1)
        assert psnr(classical_reconstruct(A, y, 1e-10), x) > psnr(classical_reconstruct(A, y, 1.0), x)

    def test_subtract_ambient(self, small_geom):
        A = build_transport_matrix(ConditionSpec.from_code("70;1;L;Wall"), small_geom)
        y = np.full((8, 8), A.cond.illumination.ambient)
        assert np.all(classical_reconstruct(A, y, 1e-6, subtract_ambient=True) == 0.0)

    def test_singular_without_regularizer(self, small_geom, noiseless_cond):
        geom = SceneGeometry(hidden_res=(2, 2), wall_res=(2, 2))
        # duplicate columns 0/1 and an all-zero column 3
        entries = np.array([[0.5, 0.5, 0.1, 0.0],
                            [0.3, 0.3, 0.2, 0.0],
                            [0.1, 0.1, 0.4, 0.0],
                            [0.2, 0.2, 0.3, 0.0]])
        A = TransportMatrix(entries=entries, cond=noiseless_cond, geom=geom, row_scale=np.ones(4))
        with pytest.raises(IllConditionedError):
            classical_reconstruct(A, np.ones((2, 2)) * 0.1, 0.0)
        assert classical_reconstruct(A, np.ones((2, 2)) * 0.1, 1e-3).shape == (2, 2, 1)

    def test_dual_form_when_wall_is_coarser(self, monkeypatch):
        geom = SceneGeometry(hidden_res=(4, 4), wall_res=(3, 3))
        A = build_transport_matrix(desk_conditions("70;1;A;Wall")[0], geom)
        x = np.random.default_rng(5).uniform(0, 1, size=(4, 4))
        y = (A.entries @ x.ravel()).reshape(3, 3)
        reg = 1e-3
        M = A.entries
        oracle = np.clip(np.linalg.solve(M.T @ M + reg * np.eye(16), M.T @ y.ravel()), 0, 1)

        factored = []
        cho_factor = linalg.cho_factor
        monkeypatch.setattr(linalg, "cho_factor", lambda a, **kw: factored.append(a.shape) or cho_factor(a, **kw))
        got = classical_reconstruct(A, y, reg)
        assert factored == [(9, 9)]
        np.testing.assert_allclose(got.ravel(), oracle, atol=1e-8)

    def test_negative_reg_raises(self, small_geom, noiseless_cond):
        A = build_transport_matrix(noiseless_cond, small_geom)
        with pytest.raises(ValueError):
            classical_reconstruct(A, np.zeros((8, 8)), -1.0)

    def test_wrong_projection_shape(self, small_geom, noiseless_cond):
        A = build_transport_matrix(noiseless_cond, small_geom)
        with pytest.raises(DimensionError):
            classical_reconstruct(A, np.zeros((4, 4)), 1e-3)


class TestConditionNumber:
    def test_identity(self):
        assert condition_number(np.eye(5)) == pytest.approx(1.0)

    def test_diagonal(self):
        assert condition_number(np.diag([1.0, 2.0])) == pytest.approx(2.0)

    def test_singular_is_inf(self):
        assert condition_number(np.zeros((3, 3))) == math.inf

    def test_regularized(self):
        assert condition_number(np.diag([2.0, 0.0]), reg=1.0) == pytest.approx(math.sqrt(5.0))
        # wide matrices: missing singular values count as zero
        assert condition_number(np.array([[3.0, 0.0]]), reg=1.0) == pytest.approx(math.sqrt(10.0))
        assert condition_number(np.zeros((3, 3)), reg=1e-6) == pytest.approx(1.0)

    def test_leading_rank(self):
        assert condition_number(np.diag([8.0, 4.0, 0.0]), rank=2) == pytest.approx(2.0)
        with pytest.raises(DimensionError):
            condition_number(np.eye(3), rank=4)

    def test_negative_reg_raises(self):
        with pytest.raises(ValueError):
            condition_number(np.eye(2), reg=-1.0)

    def test_non_finite_raises(self):
        with pytest.raises(NumericError):
            condition_number(np.array([[1.0, np.nan], [0.0, 1.0]]))


class TestTransportStorage:
    def test_roundtrip(self, small_geom, tmp_path):
        A = build_transport_matrix(desk_conditions("four-anime")[1], small_geom)
        path = write_transport(A, str(tmp_path / "a.nltm"))
        B = read_transport(path)
        assert B.entries.tobytes() == A.entries.tobytes()
        assert B.row_scale.tobytes() == A.row_scale.tobytes()
        assert B.cond == A.cond
        assert B.geom == A.geom

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.nltm"
        path.write_bytes(b"NOTIT" + b"\0" * 64)
        with pytest.raises(IntegrityError):
            read_transport(str(path))

    def test_truncated(self, small_geom, noiseless_cond, tmp_path):
        A = build_transport_matrix(noiseless_cond, small_geom)
        path = write_transport(A, str(tmp_path / "a.nltm"))
        with open(path, "rb") as fh:
            data = fh.read()
        with open(path, "wb") as fh:
            fh.write(data[:-10])
        with pytest.raises(IntegrityError):
            read_transport(path)


class TestTransportCache:
    def test_get_or_build(self, small_geom, dark_wall_cond, tmp_path):
        cache = TransportCache(str(tmp_path / "cache"))
        assert cache.get(dark_wall_cond, small_geom) is None
        built = cache.get_or_build(dark_wall_cond, small_geom)
        assert cache.contains(dark_wall_cond, small_geom)
        again = cache.get(dark_wall_cond, small_geom)
        assert again.entries.tobytes() == built.entries.tobytes()

    def test_key_ignores_condition_id(self, small_geom, dark_wall_cond, tmp_path):
        cache = TransportCache(str(tmp_path))
        assert cache.path_for(dark_wall_cond, small_geom) == cache.path_for(dark_wall_cond.with_id(3), small_geom)
        cache.get_or_build(dark_wall_cond, small_geom)
        hit = cache.get(dark_wall_cond.with_id(3), small_geom)
        assert hit.cond.id == 3

    def test_key_depends_on_geometry(self, small_geom, dark_wall_cond, tmp_path):
        cache = TransportCache(str(tmp_path))
        other = SceneGeometry(hidden_res=(4, 4), wall_res=(8, 8), geometry_seed=8)
        assert cache.path_for(dark_wall_cond, small_geom) != cache.path_for(dark_wall_cond, other)
        assert os.path.dirname(cache.path_for(dark_wall_cond, other)) == str(tmp_path)
