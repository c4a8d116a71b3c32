import numpy as np
import pytest

from hgkt.heg import Heg, build_heg, read_heg_json, write_heg_json
from hgkt.schema_cluster import AssignmentMatrix
from hgkt.support_graph import DirectSupportGraph


def sample_heg():
    a = np.zeros((4, 4), dtype=np.uint8)
    a[0, 1] = a[1, 0] = a[2, 3] = 1
    w = np.zeros((4, 4))
    w[0, 1] = 0.5
    w[1, 0] = 0.25
    w[2, 3] = 1.5
    graph = DirectSupportGraph(n=4, adjacency=a, weights=w, method="support",
                               omega=0.1)
    assignment = AssignmentMatrix(assign=np.array([0, 0, 1, 1]), schema_count=2,
                                  threshold=2.0)
    return build_heg(graph, assignment, ["a", "b", "c", "d"], lambda_p=0.01,
                     schema_descriptions=["first", "second"])


def test_roundtrip(tmp_path):
    heg = sample_heg()
    path = str(tmp_path / "heg.json")
    write_heg_json(path, heg)
    back = read_heg_json(path)
    np.testing.assert_array_equal(back.adjacency, heg.adjacency)
    np.testing.assert_array_equal(back.assign, heg.assign)
    assert back.schema_count == 2
    assert back.node_ids == ["a", "b", "c", "d"]
    assert back.method == "support"
    assert back.omega == 0.1
    assert back.threshold == 2.0
    assert back.schema_descriptions == ["first", "second"]
    assert back.edge_weights[0, 1] == pytest.approx(0.5)
    assert back.edge_weights[2, 3] == pytest.approx(1.5)


def test_rejects_diagonal():
    a = np.eye(2, dtype=np.uint8)
    with pytest.raises(ValueError, match="diagonal"):
        Heg(adjacency=a, assign=np.zeros(2, dtype=np.int64), schema_count=1,
            node_ids=["a", "b"])


def test_rejects_empty_schema():
    a = np.zeros((2, 2), dtype=np.uint8)
    with pytest.raises(ValueError, match="at least one member"):
        Heg(adjacency=a, assign=np.zeros(2, dtype=np.int64), schema_count=2,
            node_ids=["a", "b"])


def test_rejects_out_of_range_assignment():
    a = np.zeros((2, 2), dtype=np.uint8)
    with pytest.raises(ValueError, match="out of range"):
        Heg(adjacency=a, assign=np.array([0, 5]), schema_count=2,
            node_ids=["a", "b"])


def test_read_missing_keys(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"method": "support"}')
    with pytest.raises(ValueError, match="missing keys"):
        read_heg_json(str(path))


def test_features_and_one_hot():
    heg = sample_heg()
    np.testing.assert_array_equal(heg.features(), np.eye(4))
    one_hot = heg.assignment_one_hot()
    np.testing.assert_array_equal(one_hot.sum(axis=1), np.ones(4))
    np.testing.assert_array_equal(one_hot[:, 0], [1, 1, 0, 0])
