import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlcapacity.commutative_models import (
    CellFormatError,
    CellSet,
    CoveringPartition,
    block_covering,
    build_cell_set,
    build_grid_model,
    certificate_check,
    commutator_singular_values,
    covering_projection,
    covering_value,
    greedy_covering,
    load_cells,
    parse_shape,
    scaling_study,
    serialize_cells,
    shape_dimension,
)
from nlcapacity.matrix_modulus import PreconditionError
from nlcapacity.symmetric_gauge import LorentzP1, Lp, evaluate_norm

CARPET_DIM = math.log(8) / math.log(3)


def partition(labels, e):
    """Covering built from explicit labels with bounding-box balls."""
    labels = np.asarray(labels)
    k = labels.max() + 1
    lo = np.array([(e.cells[labels == j] * e.side).min(axis=0) for j in range(k)])
    hi = np.array([((e.cells[labels == j] + 1) * e.side).max(axis=0) for j in range(k)])
    return CoveringPartition(labels, (lo + hi) / 2, 0.5 * np.linalg.norm(hi - lo, axis=1))


def dense_commutators(m, c):
    p = covering_projection(m, c)
    return [np.diag(m.coords[:, i]) @ p - p @ np.diag(m.coords[:, i]) for i in range(m.coords.shape[1])]


class TestShapes:
    def test_interval(self):
        e = build_cell_set("interval", 2)
        assert len(e) == 4 and e.side == 0.25
        assert np.allclose(e.weights, 0.25)

    def test_cantor(self):
        e = build_cell_set("cantor", 2)
        assert len(e) == 4
        assert np.allclose(e.cells[:, 0] * e.side, [0, 2 / 9, 6 / 9, 8 / 9])
        assert e.side == pytest.approx(1 / 9)

    def test_carpet(self):
        e = build_cell_set("carpet", 1)
        assert len(e) == 8 and e.side == pytest.approx(1 / 3)
        assert not np.any(np.all(e.cells == 1, axis=1))
        assert len(build_cell_set("carpet", 3)) == 512

    def test_cube(self):
        e = build_cell_set("cube:3", 2)
        assert len(e) == 64 and e.dim == 3
        assert e.total_mass == pytest.approx(1.0)

    def test_equal_weights(self):
        e = build_cell_set("cantor", 3, weights="equal")
        assert np.allclose(e.weights, 1 / 8)

    def test_errors(self):
        with pytest.raises(ValueError):
            build_cell_set("cube:2", 12)
        with pytest.raises(ValueError):
            build_cell_set("sphere", 1)
        with pytest.raises(ValueError):
            build_cell_set("interval", 1, weights="counting")
        with pytest.raises(ValueError):
            parse_shape("interval:3")
        with pytest.raises(ValueError):
            CellSet(1, 1, [[0], [0]], [1, 1])
        with pytest.raises(ValueError):
            CellSet(1, 1, [[2]], [1])
        with pytest.raises(ValueError):
            CellSet(1, 1, [[0]], [0.0])

    def test_dimensions(self):
        assert shape_dimension("cube:3") == 3
        assert shape_dimension("carpet") == pytest.approx(CARPET_DIM)
        assert shape_dimension("cantor") == pytest.approx(math.log(2) / math.log(3))


class TestSerialization:
    @pytest.mark.parametrize("shape,level,w", [("interval", 3, "lebesgue"), ("carpet", 2, "equal"),
                                               ("cube:3", 1, "lebesgue"), ("cantor", 4, "equal")])
    def test_round_trip(self, shape, level, w):
        e = build_cell_set(shape, level, weights=w)
        text = serialize_cells(e)
        assert load_cells(text) == e
        assert serialize_cells(load_cells(text)) == text

    def test_default_base_and_comments(self):
        e = load_cells("# two cells\ncells 1 1\nc 0 0.5\nc 1 0.5\n")
        assert e.base == 2 and len(e) == 2

    @pytest.mark.parametrize("text", ["", "cells 1\n", "cells a 1\n", "cells 1 1\nc 0\n",
                                      "cells 1 1\nx 0 1\n", "cells 1 1\nc 0 -1\n", "cells 1 1\nc 5 1\n"])
    def test_malformed(self, text):
        with pytest.raises(CellFormatError):
            load_cells(text)


class TestCovering:
    def test_interval_lp1(self):
        e = build_cell_set("interval", 10)
        for eps in (0.3, 0.1, 0.01, 0.001):
            assert covering_value(e, eps, Lp(1)).value == pytest.approx(0.5, rel=0.02)

    def test_cube_lorentz_band(self):
        e = build_cell_set("cube:2", 7)
        vals = [covering_value(e, eps, LorentzP1(2)).value for eps in (0.18, 0.09, 0.045, 0.0225)]
        assert max(vals) / min(vals) <= 1.25
        # partial sums of k^(-1/2) put the limit at sqrt(2)
        assert vals[-1] == pytest.approx(math.sqrt(2), rel=0.05)

    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_carpet_triadic(self, k):
        e = build_cell_set("carpet", k, weights="equal")
        val = evaluate_norm(LorentzP1(CARPET_DIM), block_covering(e, k).radii)
        assert val == pytest.approx(CARPET_DIM * math.sqrt(2) / 2, rel=0.25)

    def test_monotone_in_eps(self):
        e = build_cell_set("cube:2", 5)
        eps = [0.7, 0.4, 0.2, 0.1, 0.05, 0.03]
        vals = [covering_value(e, x, LorentzP1(2)).value for x in eps]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.booleans(), min_size=64, max_size=64), st.sampled_from([0.5, 0.2, 0.1]))
    def test_monotone_in_set(self, keep, eps):
        full = build_cell_set("cube:2", 3)
        mask = np.array(keep)
        if not mask.any():
            return
        sub = CellSet(2, 3, full.cells[mask], full.weights[mask])
        for phi in (Lp(1), LorentzP1(2)):
            assert covering_value(sub, eps, phi).value <= covering_value(full, eps, phi).value + 1e-15

    def test_radii_below_eps(self):
        e = build_cell_set("carpet", 3)
        for eps in (0.5, 0.2, 0.05):
            res = covering_value(e, eps, Lp(2))
            assert res.covering.radii.max() < eps
            res.covering.validate(e)

    def test_greedy(self):
        e = build_cell_set("cantor", 5)
        for eps in (0.2, 0.05, 0.01):
            res = covering_value(e, eps, Lp(1), strategy="greedy")
            res.covering.validate(e)
            assert res.covering.radii.max() < eps
            assert sorted(np.concatenate(res.covering.parts()).tolist()) == list(range(len(e)))

    def test_greedy_limits(self):
        with pytest.raises(ValueError):
            greedy_covering(build_cell_set("interval", 2), 0.1)
        with pytest.raises(ValueError):
            greedy_covering(build_cell_set("cube:2", 7), 0.1)

    def test_infeasible_eps(self):
        e = build_cell_set("interval", 2)
        with pytest.raises(ValueError):
            covering_value(e, 0.125, Lp(1))
        with pytest.raises(ValueError):
            covering_value(e, 0.3, Lp(1), strategy="random")

    def test_validate_rejects_small_ball(self):
        e = build_cell_set("interval", 2)
        bad = CoveringPartition([0, 0, 1, 1], [[0.25], [0.75]], [0.2, 0.25])
        with pytest.raises(ValueError):
            bad.validate(e)


class TestGridModel:
    def test_interval(self):
        m = build_grid_model(build_cell_set("interval", 2))
        assert np.allclose(m.coords[:, 0], [0.125, 0.375, 0.625, 0.875])
        assert np.allclose(m.xi, 0.5)

    def test_single_cell(self):
        m = build_grid_model(build_cell_set("cube:2", 0))
        assert m.dim == 1 and np.array_equal(m.xi, [1.0])

    def test_carpet(self):
        m = build_grid_model(build_cell_set("carpet", 1))
        tau = m.tau()
        assert len(tau) == 2 and tau.dim == 8
        a, b = tau.matrices
        assert not (a @ b - b @ a).any()
        assert np.linalg.norm(m.xi) == pytest.approx(1.0) and np.all(m.xi > 0)


class TestProjection:
    def test_singletons(self):
        e = build_cell_set("interval", 2)
        p = covering_projection(build_grid_model(e), block_covering(e, 2))
        assert np.allclose(p, np.eye(4))

    def test_single_part(self):
        e = build_cell_set("cantor", 2, weights="equal")
        m = build_grid_model(e)
        p = covering_projection(m, block_covering(e, 0))
        assert np.allclose(p, np.outer(m.xi, m.xi))

    def test_interval_pairs(self):
        e = build_cell_set("interval", 2)
        p = covering_projection(build_grid_model(e), partition([0, 0, 1, 1], e))
        half = np.full((2, 2), 0.5)
        assert np.allclose(p, np.block([[half, np.zeros((2, 2))], [np.zeros((2, 2)), half]]))

    @pytest.mark.parametrize("shape,level,blk", [("cube:2", 3, 1), ("carpet", 2, 1), ("cantor", 3, 2)])
    def test_properties(self, shape, level, blk, rng):
        e = build_cell_set(shape, level)
        e = CellSet(e.dim, e.level, e.cells, rng.random(len(e)) + 0.1, e.base)
        m = build_grid_model(e)
        c = block_covering(e, blk)
        p = covering_projection(m, c)
        assert np.abs(p @ p - p).max() <= 1e-12
        assert np.array_equal(p, p.T)
        assert np.abs(p @ m.xi - m.xi).max() <= 1e-12
        assert round(np.trace(p)) == c.n_parts


class TestCertificate:
    def test_interval_pairs(self):
        e = build_cell_set("interval", 2)
        m = build_grid_model(e)
        c = partition([0, 0, 1, 1], e)
        assert np.allclose(c.radii, 0.25)
        rep = certificate_check(m, c, Lp(1), 0.3)
        assert rep.lhs_ideal == pytest.approx(0.5)
        assert rep.rhs_ideal == pytest.approx(1.0)
        assert rep.ok
        assert np.allclose(commutator_singular_values(m, c, 0), 0.125)

    def test_singletons(self):
        e = build_cell_set("carpet", 1)
        rep = certificate_check(build_grid_model(e), block_covering(e, 1), Lp(2), 0.5)
        assert rep.lhs_ideal == 0 and rep.ok

    def test_cube_blocks(self):
        e = build_cell_set("cube:2", 3)
        rep = certificate_check(build_grid_model(e), block_covering(e, 2), LorentzP1(2), 0.2)
        assert rep.ok and 0 < rep.ratio <= 1

    def test_radius_precondition(self):
        e = build_cell_set("interval", 2)
        with pytest.raises(PreconditionError):
            certificate_check(build_grid_model(e), partition([0, 0, 1, 1], e), Lp(1), 0.25)

    @pytest.mark.parametrize("shape,level,blk", [("cube:2", 3, 1), ("carpet", 2, 1), ("cantor", 3, 1),
                                                 ("interval", 4, 2)])
    def test_closed_form_matches_svd(self, shape, level, blk, rng):
        e = build_cell_set(shape, level)
        e = CellSet(e.dim, e.level, e.cells, rng.random(len(e)) + 0.1, e.base)
        m = build_grid_model(e)
        c = block_covering(e, blk)
        for i, k in enumerate(dense_commutators(m, c)):
            s = np.linalg.svd(k, compute_uv=False)
            closed = np.sort(commutator_singular_values(m, c, i))[::-1]
            assert np.allclose(s[:closed.size], closed, atol=1e-12)
            assert np.all(s[closed.size:] <= 1e-12)

    def test_greedy_partition_certificate(self, rng):
        e = build_cell_set("cube:2", 4)
        m = build_grid_model(e)
        c = greedy_covering(e, 0.2)
        k = dense_commutators(m, c)[0]
        assert np.allclose(np.linalg.svd(k, compute_uv=False)[:2 * c.n_parts],
                           np.pad(np.sort(commutator_singular_values(m, c, 0))[::-1], (0, 2 * c.n_parts))[:2 * c.n_parts],
                           atol=1e-12)
        assert certificate_check(m, c, LorentzP1(2), 0.2).ok

    def test_support_structure(self):
        # parts that are single columns commute with the first coordinate
        e = build_cell_set("cube:2", 2)
        m = build_grid_model(e)
        c = partition(e.cells[:, 0], e)
        k0, k1 = dense_commutators(m, c)
        assert np.abs(k0).max() <= 1e-15
        assert np.abs(k1).max() > 0


class TestScaling:
    def test_cube_band(self):
        s = scaling_study("cube:2", 2, [2, 3, 4, 5])
        assert s.expected == "band" and s.trend_ok and s.band_ratio <= 1.35
        assert all(r.certificate_ok for r in s.rows)

    def test_cube_decreasing(self):
        s = scaling_study("cube:2", 3, [2, 3, 4, 5])
        vals = [r.covering_value for r in s.rows]
        assert s.expected == "decreasing" and all(b < a for a, b in zip(vals, vals[1:]))

    def test_cube_increasing(self):
        s = scaling_study("cube:2", 1.5, [2, 3, 4, 5])
        assert s.expected == "increasing" and s.trend_ok

    def test_interval_constant(self):
        s = scaling_study("interval", 1, [2, 3, 4, 5, 6], phi_kind="lp")
        for r in s.rows:
            assert r.covering_value == pytest.approx(0.5, rel=0.02)

    def test_carpet_band(self):
        s = scaling_study("carpet", CARPET_DIM, [2, 3, 4])
        assert s.expected == "band" and s.band_ratio <= 1.35

    def test_bad_levels(self):
        with pytest.raises(ValueError):
            scaling_study("cube:2", 2, [3, 2])
        with pytest.raises(ValueError):
            scaling_study("cube:2", 2, [2], phi_kind="weights")
