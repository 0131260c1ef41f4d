import numpy as np
import pytest

from trajsynth.core import BBox, TrajectoryDataset
from trajsynth.io import (
    TrajectoryFormatError,
    format_trajectories,
    parse_trajectories,
    read_trajectories,
    write_trajectories,
)


def test_parse_basic_format():
    text = ["# comment", "", "0.12,0.98 0.15,0.95", "1,2"]
    ds = parse_trajectories(text)
    assert len(ds) == 2
    assert ds.trajectories[0].tolist() == [[0.12, 0.98], [0.15, 0.95]]
    assert tuple(ds.bbox) == (0.12, 0.95, 1.0, 2.0)


def test_bbox_comment_is_honoured():
    ds = parse_trajectories(["# bbox 0 0 10 10", "1,1 2,2"])
    assert tuple(ds.bbox) == (0, 0, 10, 10)


def test_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    ds = TrajectoryDataset(tuple(rng.random((n, 2)) for n in (1, 3, 7)), BBox(0, 0, 1, 1))
    p = tmp_path / "d.txt"
    write_trajectories(ds, p)
    back = read_trajectories(p)
    assert back.bbox == ds.bbox
    assert all(np.array_equal(a, b) for a, b in zip(ds, back))
    assert format_trajectories(back) == p.read_text()


@pytest.mark.parametrize("line", ["1,2 3", "a,b", "1,2,3", "nan,1"])
def test_malformed_lines_are_rejected(line):
    with pytest.raises(TrajectoryFormatError):
        parse_trajectories([line])


def test_empty_file_is_rejected():
    with pytest.raises(TrajectoryFormatError):
        parse_trajectories(["# only a comment"])


def test_points_outside_declared_bbox_are_rejected():
    with pytest.raises(TrajectoryFormatError):
        parse_trajectories(["# bbox 0 0 1 1", "2,2"])
