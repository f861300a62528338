import math

import numpy as np
import pytest

from errwlab.lattice import (Cone, LatticeBox, build_diamond, count_trees, cube_region,
                             patch_distance, read_points, split_diamond, subcube_tree, write_points)


def test_box_shape():
    box = LatticeBox(3, 2)
    assert len(box) == 125
    assert box.points[box.root].tolist() == [0, 0, 0]
    assert box.boundary_mask.sum() == 125 - 27
    assert box.graph.n_edges == 3 * 5 * 5 * 4


def test_points_round_trip(tmp_path):
    box = LatticeBox(2, 1)
    write_points(tmp_path / "p.txt", box.points)
    assert np.array_equal(read_points(tmp_path / "p.txt"), box.points)


def test_cone_membership():
    c = Cone(np.zeros(2, int), np.array([1, 0]), math.pi / 4)
    assert c.contains([2, 2]) and not c.contains([1, 2]) and c.contains([0, 0])
    with pytest.raises(ValueError):
        Cone(np.zeros(2, int), np.array([1, 0]), 0.3)


def test_exact_diamond_is_connected_and_symmetric():
    dia = build_diamond((0, 0, 0), (6, 0, 0), "exact")
    assert dia.is_connected()
    assert tuple(dia.x) in dia and tuple(dia.y) in dia
    mirrored = {(6 - p[0], p[1], p[2]) for p in dia.members.tolist()}
    assert mirrored == {tuple(p) for p in dia.members.tolist()}


@pytest.mark.parametrize("L", [10, 20])
def test_deformed_diamond_straight(L):
    dia = build_diamond((0, 0, 0), (L, 0, 0), "deformed")
    assert dia.is_connected()
    assert patch_distance(dia) <= L / 2


def test_deformed_diamond_rejects_outside_apex():
    with pytest.raises(ValueError):
        build_diamond((0, 0), (4, 4), "deformed", l=(1, 0))


def test_split_covers_and_validates():
    dia = build_diamond((0, 0, 0), (10, 0, 0), "deformed")
    rx, ry = split_diamond(dia, 0.6, 0.6)
    covered = {tuple(p) for p in rx.tolist()} | {tuple(p) for p in ry.tolist()}
    assert covered == {tuple(p) for p in dia.members.tolist()}
    with pytest.raises(ValueError):
        split_diamond(dia, 0.5, 0.5)


def test_tree_counts_and_sums():
    assert count_trees(1, 3) == 2
    assert count_trees(2, 3) == 257
    tree = subcube_tree((0, 0), 2)
    vals = {w: 0.1 * (1 + len(w)) for w in tree.nodes}
    assert tree.tree_sum(vals) == pytest.approx(tree.tree_sum_enumerated(vals), rel=1e-12)
    assert len(tree.enumerate_leaf_sets()) == count_trees(2, 2)


def test_subcube_children_partition_corners():
    tree = subcube_tree((0, 0, 0), 1)
    root = tree.root
    assert root.side == 4 and root.lower == (-2, -2, -2)
    kids = tree.children(())
    assert len(kids) == 8 and all(k.side == 1 for k in kids)
    corners = {k.lower for k in kids}
    assert corners == {tuple(-2 + 3 * b for b in bits) for bits in np.ndindex(2, 2, 2)}


def test_cube_region():
    reg = cube_region((-8, -8, -8), 16)
    assert len(reg) == 16 ** 3
