import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecsupg.mesh import build_mesh, cell_geometry, interior_facets


def test_two_by_two_torus_counts():
    m = build_mesh(2, 2, 1.0, 1.0, periodic_z=True)
    assert m.num_cells == 4
    assert len(interior_facets(m, "vertical")) == 4
    assert len(interior_facets(m, "horizontal")) == 4
    assert np.all(np.abs(interior_facets(m, "vertical").normal[:, 0]) == 1.0)


def test_slab_horizontal_facets_exclude_walls():
    m = build_mesh(2, 2, 1.0, 1.0, periodic_z=False)
    assert len(interior_facets(m, "horizontal")) == 2
    assert len(interior_facets(m, "boundary")) == 4


def test_straka_meshes():
    m = build_mesh(80, 16, 32000.0, 6400.0)
    assert m.num_cells == 1280 and m.dx == 400.0 and m.dz == 400.0
    assert cell_geometry(m, 5)[2] == pytest.approx(1.6e5)
    m100 = build_mesh(320, 64, 32000.0, 6400.0)
    assert cell_geometry(m100, 0)[2] == pytest.approx(1e4)


def test_unit_cell_geometry():
    m = build_mesh(2, 2, 2.0, 2.0)
    origin, jac, meas = cell_geometry(m, 3)
    assert meas == 1.0
    np.testing.assert_array_equal(jac, np.eye(2))
    np.testing.assert_array_equal(origin, [1.0, 1.0])


@pytest.mark.parametrize("nx,nz", [(1, 2), (2, 1), (0, 5)])
def test_rejects_small_meshes(nx, nz):
    with pytest.raises(ValueError):
        build_mesh(nx, nz, 1.0, 1.0)


def test_rejects_bad_extent_and_cell():
    with pytest.raises(ValueError):
        build_mesh(2, 2, -1.0, 1.0)
    with pytest.raises(IndexError):
        cell_geometry(build_mesh(2, 2, 1.0, 1.0), 4)


def test_unknown_orientation():
    with pytest.raises(ValueError):
        interior_facets(build_mesh(2, 2, 1.0, 1.0), "diagonal")


@given(
    nx=st.integers(2, 7),
    nz=st.integers(2, 7),
    Lx=st.floats(0.5, 50.0),
    Lz=st.floats(0.5, 50.0),
    periodic=st.booleans(),
)
def test_mesh_invariants(nx, nz, Lx, Lz, periodic):
    m = build_mesh(nx, nz, Lx, Lz, periodic_z=periodic)
    assert sum(cell_geometry(m, c)[2] for c in range(m.num_cells)) == pytest.approx(Lx * Lz, rel=1e-12)
    v, h = interior_facets(m, "vertical"), interior_facets(m, "horizontal")
    assert len(v) == nx * nz
    assert len(h) == (nx * nz if periodic else nx * (nz - 1))
    assert len(interior_facets(m, "all")) == len(v) + len(h)
    for fs in (v, h):
        assert np.allclose(np.linalg.norm(fs.normal, axis=1), 1.0)
        assert np.all(fs.plus_cell < fs.minus_cell)
    counts = np.bincount(np.concatenate([v.plus_cell, v.minus_cell]), minlength=m.num_cells)
    assert np.all(counts == 2)
