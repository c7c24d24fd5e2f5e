"""Core data model: PLY round trips, tiling partition, exact KNN."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxport.errors import (
    CorruptFileError,
    InvalidArgumentError,
    OutOfBoundsError,
    ParseError,
    UnsupportedFormatError,
)
from voxport.frames import PointCloudFrame, grays_of, rgb_to_gray
from voxport.knn import KnnIndex, knn
from voxport.ply import load_ply, save_ply
from voxport.tiling import BBox, SequenceManifest, tile_frame


def random_frame(n, seed, frame_index=0):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-1, 1, size=(n, 3)).astype(np.float32).astype(np.float64)
    col = rng.integers(0, 256, size=(n, 3), dtype=np.uint8)
    return PointCloudFrame(frame_index, pos, col)


# ---------------------------------------------------------------------------
# rgb_to_gray
# ---------------------------------------------------------------------------


def test_gray_white_is_255():
    assert rgb_to_gray((255, 255, 255)) == pytest.approx(255.0)


def test_gray_black_is_zero():
    assert rgb_to_gray((0, 0, 0)) == 0.0


def test_gray_pure_red():
    assert rgb_to_gray((255, 0, 0)) == pytest.approx(76.245)


@given(
    st.tuples(
        st.integers(0, 255), st.integers(0, 255), st.integers(0, 255)
    ),
    st.integers(0, 2),
)
def test_gray_monotone_per_channel(color, channel):
    bumped = list(color)
    if bumped[channel] == 255:
        return
    bumped[channel] += 1
    lo, hi = rgb_to_gray(color), rgb_to_gray(tuple(bumped))
    assert lo < hi
    assert 0.0 <= lo <= 255.0 and 0.0 <= hi <= 255.0


def test_grays_of_matches_scalar():
    frame = random_frame(50, 3)
    expect = [rgb_to_gray(c) for c in frame.colors]
    assert np.allclose(grays_of(frame.colors), expect, atol=1e-12)


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

ASCII_3PT = """ply
format ascii 1.0
element vertex 3
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
end_header
0.0 0.0 0.0 255 0 0
1.0 0.5 -2.0 0 255 0
-1.25 3.0 0.125 0 0 255
"""


def test_ascii_fixture_parses_bit_equal(tmp_path):
    p = tmp_path / "three.ply"
    p.write_text(ASCII_3PT)
    frame = load_ply(p)
    assert len(frame) == 3
    assert np.array_equal(
        frame.positions,
        np.array([[0, 0, 0], [1, 0.5, -2], [-1.25, 3, 0.125]], dtype=np.float64),
    )
    assert np.array_equal(
        frame.colors, np.array([[255, 0, 0], [0, 255, 0], [0, 0, 255]], dtype=np.uint8)
    )


def test_binary_round_trip_identity(tmp_path):
    frame = random_frame(1000, 11, frame_index=4)
    p = tmp_path / "rt.ply"
    save_ply(frame, p, binary=True)
    back = load_ply(p, frame_index=4)
    assert back == frame


def test_ascii_round_trip_identity(tmp_path):
    frame = random_frame(100, 12)
    p = tmp_path / "rt_ascii.ply"
    save_ply(frame, p, binary=False)
    assert load_ply(p) == frame


def test_truncated_body_is_corrupt(tmp_path):
    frame = random_frame(10, 13)
    p = tmp_path / "trunc.ply"
    save_ply(frame, p, binary=True)
    data = p.read_bytes()
    p.write_bytes(data[: len(data) - 3 * 15])  # drop 3 points
    with pytest.raises(CorruptFileError):
        load_ply(p)


def test_truncated_ascii_is_corrupt(tmp_path):
    p = tmp_path / "trunc.ply"
    p.write_text(ASCII_3PT.replace("element vertex 3", "element vertex 10"))
    with pytest.raises(CorruptFileError):
        load_ply(p)


def test_malformed_header_names_line(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_text(ASCII_3PT.replace("element vertex 3", "element vertex three"))
    with pytest.raises(ParseError, match="three"):
        load_ply(p)


def test_unsupported_property_layout(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_text(ASCII_3PT.replace("property uchar red", "property float nx"))
    with pytest.raises(UnsupportedFormatError):
        load_ply(p)


def test_big_endian_rejected(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_text(ASCII_3PT.replace("format ascii 1.0", "format binary_big_endian 1.0"))
    with pytest.raises(UnsupportedFormatError):
        load_ply(p)


# ---------------------------------------------------------------------------
# Tiling
# ---------------------------------------------------------------------------


def test_corner_points_one_per_cell():
    corners = np.array(
        [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=np.float64
    )
    frame = PointCloudFrame(0, corners, np.zeros((8, 3), dtype=np.uint8))
    tiled = tile_frame(frame, (2, 2, 2), BBox((0, 0, 0), (1, 1, 1)))
    sizes = sorted(len(t) for t in tiled.tiles)
    assert sizes == [1] * 8


def test_single_cell_grid_holds_everything():
    frame = random_frame(200, 5)
    tiled = tile_frame(frame, (1, 1, 1), BBox.of_points(frame.positions))
    assert len(tiled.tiles) == 1
    assert np.array_equal(np.sort(tiled.tiles[0]), np.arange(200))


def test_tiling_deterministic_across_identical_frames():
    a = random_frame(500, 6, frame_index=0)
    b = PointCloudFrame(1, a.positions.copy(), a.colors.copy())
    bbox = BBox.of_points(a.positions)
    ta = tile_frame(a, (2, 3, 2), bbox)
    tb = tile_frame(b, (2, 3, 2), bbox)
    for x, y in zip(ta.tiles, tb.tiles):
        assert np.array_equal(x, y)


@given(st.integers(0, 10_000), st.integers(2, 4), st.integers(1, 3), st.integers(1, 4))
@settings(max_examples=30, deadline=None)
def test_tiling_partition_property(seed, gx, gy, gz):
    frame = random_frame(157, seed)
    tiled = tile_frame(frame, (gx, gy, gz), BBox.of_points(frame.positions))
    assert len(tiled.tiles) == gx * gy * gz
    allidx = np.concatenate([t for t in tiled.tiles])
    assert np.array_equal(np.sort(allidx), np.arange(157))


def test_point_outside_bbox_raises():
    frame = random_frame(10, 8)
    with pytest.raises(OutOfBoundsError):
        tile_frame(frame, (2, 2, 2), BBox((0, 0, 0), (0.5, 0.5, 0.5)))


def test_grid_component_below_one_rejected():
    frame = random_frame(10, 8)
    with pytest.raises(InvalidArgumentError):
        tile_frame(frame, (0, 2, 2), BBox.of_points(frame.positions))


def test_manifest_round_trip(tmp_path):
    m = SequenceManifest(
        ["frames/f0.ply", "frames/f1.ply"],
        BBox((0.0, -1.0, 0.25), (2.0, 1.0, 3.5)),
        (2, 3, 2),
    )
    p = tmp_path / "seq.manifest"
    m.save(p)
    back = SequenceManifest.load(p)
    assert back == m


# ---------------------------------------------------------------------------
# KNN
# ---------------------------------------------------------------------------


def brute_force_knn(positions, query, k):
    d2 = ((positions - query) ** 2).sum(axis=1)
    return np.lexsort((np.arange(len(positions)), d2))[:k]


def test_query_on_indexed_point_returns_it():
    frame = random_frame(300, 21)
    idx = KnnIndex(frame.positions)
    assert knn(idx, frame.positions[137], 1)[0] == 137


def test_collinear_ordering():
    pos = np.array([[3, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=np.float64)
    idx = KnnIndex(pos)
    assert knn(idx, np.zeros(3), 2).tolist() == [1, 2]


def test_k_too_large_raises():
    idx = KnnIndex(np.zeros((5, 3)))
    with pytest.raises(InvalidArgumentError):
        idx.query(np.zeros(3), 6)


def test_matches_brute_force_on_100_random_sets():
    rng = np.random.default_rng(99)
    for case in range(100):
        n = int(rng.integers(5, 1000))
        pos = rng.uniform(-5, 5, size=(n, 3))
        if case % 7 == 0:
            pos = np.round(pos, 1)  # force distance ties
        index = KnnIndex(pos)
        k = int(rng.integers(1, min(n, 16) + 1))
        q = rng.uniform(-6, 6, size=3)
        assert np.array_equal(index.query(q, k), brute_force_knn(pos, q, k)), (
            f"case {case} mismatched brute force"
        )


def test_query_many_matches_single_queries():
    rng = np.random.default_rng(7)
    pos = rng.uniform(0, 1, size=(500, 3))
    index = KnnIndex(pos)
    queries = rng.uniform(0, 1, size=(40, 3))
    batched = index.query_many(queries, 16)
    for row, q in zip(batched, queries):
        assert np.array_equal(row, index.query(q, 16))


@given(st.integers(0, 100_000))
@settings(max_examples=25, deadline=None)
def test_knn_oracle_property(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 200))
    pos = np.round(rng.uniform(-1, 1, size=(n, 3)), 1)
    index = KnnIndex(pos)
    q = np.round(rng.uniform(-1, 1, size=3), 1)
    k = int(rng.integers(1, n + 1))
    assert np.array_equal(index.query(q, k), brute_force_knn(pos, q, k))
