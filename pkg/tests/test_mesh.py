import numpy as np
import pytest

from nltomo.errors import ConfigurationError
from nltomo.mesh import (
    Inclusion,
    Mesh,
    Phantom,
    boundary_loop,
    generate_disk,
    generate_unit_square,
    rasterize_phantom,
    read_mesh,
    write_mesh,
)


@pytest.mark.parametrize(
    "n,nodes,elements,bedges",
    [(1, 4, 2, 4), (2, 9, 8, 8), (5, 36, 50, 20)],
)
def test_unit_square_counts(n, nodes, elements, bedges):
    mesh = generate_unit_square(n)
    assert mesh.n_nodes == nodes
    assert mesh.n_elements == elements
    assert len(mesh.boundary_edges) == bedges


def test_unit_square_area_exact():
    mesh = generate_unit_square(32)
    assert abs(mesh.element_areas.sum() - 1.0) <= 1e-12


def test_unit_square_deterministic():
    a = generate_unit_square(7)
    b = generate_unit_square(7)
    assert a.nodes.tobytes() == b.nodes.tobytes()
    assert a.elements.tobytes() == b.elements.tobytes()
    assert a.boundary_edges.tobytes() == b.boundary_edges.tobytes()


def test_invalid_n():
    with pytest.raises(ValueError):
        generate_unit_square(0)


def test_boundary_mass_reproduces_length(square16, disk6):
    for mesh in (square16, disk6):
        total = mesh.boundary_lengths.sum()
        assert abs(mesh.boundary_mass.sum() - total) <= 1e-12 * total


def test_boundary_normals_unit_and_outward(square8):
    norms = np.linalg.norm(square8.boundary_normals, axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-14)
    mids = 0.5 * (
        square8.nodes[square8.boundary_edges[:, 0]]
        + square8.nodes[square8.boundary_edges[:, 1]]
    )
    # outward on the unit square: normal points away from the center
    outward = np.einsum("ij,ij->i", square8.boundary_normals, mids - 0.5)
    assert np.all(outward > 0)


def test_boundary_forms_closed_loop(square8, disk6):
    for mesh in (square8, disk6):
        counts = np.bincount(mesh.boundary_edges.ravel(), minlength=mesh.n_nodes)
        assert np.all(counts[mesh.boundary_nodes] == 2)
        order, arclen, total = boundary_loop(mesh)
        assert len(order) == len(mesh.boundary_nodes)
        assert abs(total - mesh.boundary_lengths.sum()) <= 1e-12 * total


def test_disk_area_and_deficit_scaling():
    # inscribed-polygon oracle: deficit ~ C / refinement^2
    a4 = generate_disk(1.0, 4).element_areas.sum()
    a8 = generate_disk(1.0, 8).element_areas.sum()
    assert abs(a4 - np.pi) / np.pi < 0.02
    ratio = (np.pi - a4) / (np.pi - a8)
    assert 3.5 < ratio < 4.5


def test_disk_boundary_length():
    mesh = generate_disk(0.5, 4)
    assert abs(mesh.boundary_lengths.sum() - np.pi) / np.pi < 0.02


def test_disk_boundary_nodes_on_circle():
    radius = 2.5
    mesh = generate_disk(radius, 5)
    r = np.linalg.norm(mesh.nodes[mesh.boundary_nodes], axis=1)
    np.testing.assert_allclose(r, radius, atol=1e-12 * radius)


def test_disk_invalid_args():
    with pytest.raises(ValueError):
        generate_disk(-1.0, 4)
    with pytest.raises(ValueError):
        generate_disk(1.0, 0)


def test_from_arrays_rejects_bad_connectivity():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        Mesh.from_arrays(nodes, [[0, 1, 5]])
    with pytest.raises(ValueError):
        Mesh.from_arrays(nodes, [[0, 1, 1]])  # zero area


def test_from_arrays_fixes_orientation():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    mesh = Mesh.from_arrays(nodes, [[0, 2, 1]])  # clockwise input
    assert mesh.element_areas[0] > 0


def test_rasterize_empty_and_full(square8):
    phantom = Phantom("bg")
    labels = rasterize_phantom(square8, phantom)
    assert set(labels) == {"bg"}

    covering = Phantom(
        "bg", (Inclusion("disk", "inc", center=(0.5, 0.5), radius=2.0),)
    )
    labels = rasterize_phantom(square8, covering)
    assert set(labels) == {"inc"}


def test_rasterize_disk_area(square64):
    phantom = Phantom(
        "bg", (Inclusion("disk", "inc", center=(0.3, 0.3), radius=0.15),)
    )
    labels = rasterize_phantom(square64, phantom)
    area = square64.element_areas[labels == "inc"].sum()
    exact = np.pi * 0.15**2
    assert abs(area - exact) / exact < 0.05


def test_rasterize_override_order(square16):
    # later inclusions win where regions overlap
    phantom = Phantom(
        "bg",
        (
            Inclusion("disk", "a", center=(0.5, 0.5), radius=0.3),
            Inclusion("disk", "b", center=(0.5, 0.5), radius=0.15),
        ),
    )
    labels = rasterize_phantom(square16, phantom)
    cents = square16.centroids()
    inner = (cents[:, 0] - 0.5) ** 2 + (cents[:, 1] - 0.5) ** 2 <= 0.15**2
    assert set(labels[inner]) == {"b"}
    assert "a" in set(labels)


def test_rasterize_rectangle_and_polygon(square16):
    phantom = Phantom(
        "bg",
        (
            Inclusion("rectangle", "r", bounds=(0.0, 0.0, 0.5, 0.5)),
            Inclusion(
                "polygon", "p", vertices=((0.6, 0.6), (0.9, 0.6), (0.9, 0.9), (0.6, 0.9))
            ),
        ),
    )
    labels = rasterize_phantom(square16, phantom)
    cents = square16.centroids()
    assert set(labels[(cents[:, 0] < 0.5) & (cents[:, 1] < 0.5)]) == {"r"}
    in_poly = (
        (cents[:, 0] > 0.6) & (cents[:, 0] < 0.9) & (cents[:, 1] > 0.6) & (cents[:, 1] < 0.9)
    )
    assert set(labels[in_poly]) == {"p"}


def test_rasterize_unknown_model(square8):
    phantom = Phantom("bg", (Inclusion("disk", "mystery", center=(0.5, 0.5), radius=0.1),))
    with pytest.raises(ConfigurationError):
        rasterize_phantom(square8, phantom, known_models={"bg"})


def test_rasterize_inclusion_outside_mesh(square8):
    phantom = Phantom("bg", (Inclusion("disk", "inc", center=(5.0, 5.0), radius=0.1),))
    with pytest.raises(ConfigurationError):
        rasterize_phantom(square8, phantom)


def test_inclusion_validation():
    with pytest.raises(ValueError):
        Inclusion("disk", "m", center=(0, 0), radius=-1.0)
    with pytest.raises(ValueError):
        Inclusion("rectangle", "m", bounds=(1, 0, 0, 1))
    with pytest.raises(ValueError):
        Inclusion("polygon", "m", vertices=((0, 0), (1, 1)))
    with pytest.raises(ValueError):
        Inclusion("blob", "m")


def test_mesh_file_roundtrip(tmp_path, disk6):
    path = tmp_path / "mesh.txt"
    write_mesh(disk6, path, header="test")
    again = read_mesh(path)
    np.testing.assert_array_equal(again.elements, disk6.elements)
    np.testing.assert_allclose(again.nodes, disk6.nodes, rtol=0, atol=0)
    np.testing.assert_array_equal(again.boundary_edges, disk6.boundary_edges)


def test_mesh_file_boundary_mismatch(tmp_path):
    mesh = generate_unit_square(2)
    path = tmp_path / "mesh.txt"
    write_mesh(mesh, path)
    text = path.read_text().splitlines()
    # tamper with one boundary edge
    idx = text.index("boundary") + 1
    text[idx] = "0 0 4"
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(ValueError):
        read_mesh(path)


def test_mesh_immutable(square8):
    with pytest.raises(ValueError):
        square8.nodes[0, 0] = 5.0
