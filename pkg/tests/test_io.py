import json
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsebo.autodiff.rng import RngStream
from gsebo.dataio import (
    Z_REPORT_HEADER,
    export_z_report,
    load_bundle,
    load_model,
    save_bundle,
    save_model,
)
from gsebo.exceptions import BundleFormatError
from gsebo.graph import generate_sbm
from gsebo.models import BackboneConfig, init_model, structure_for


@pytest.fixture
def bundle():
    return generate_sbm(30, 3, 0.3, 0.05, feature_dim=5, rng=RngStream(1), name="sbm30")


def test_round_trip_is_identity(bundle, tmp_path):
    save_bundle(bundle, tmp_path)
    back = load_bundle(tmp_path)
    assert np.array_equal(back.graph.edges(), bundle.graph.edges())
    assert np.array_equal(back.features, bundle.features)
    assert np.array_equal(back.labels, bundle.labels)
    for k in ("train", "val", "test"):
        assert np.array_equal(getattr(back.split, k), getattr(bundle.split, k))
    assert (back.name, back.num_classes) == ("sbm30", 3)


def test_save_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    save_bundle(generate_sbm(40, 2, 0.2, 0.05, rng=RngStream(1)), a)
    save_bundle(generate_sbm(40, 2, 0.2, 0.05, rng=RngStream(1)), b)
    for name in ("meta.json", "edges.tsv", "features.tsv", "labels.tsv", "split.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_saved_files_follow_format(bundle, tmp_path):
    save_bundle(bundle, tmp_path)
    lines = (tmp_path / "edges.tsv").read_text().splitlines()
    pairs = [tuple(map(int, ln.split("\t"))) for ln in lines]
    assert all(u < v for u, v in pairs)
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["num_edges"] == len(pairs) == bundle.graph.num_edges
    assert meta["n"] == bundle.n and meta["feature_dim"] == 5


def _corrupt(bundle, tmp_path, name, text):
    save_bundle(bundle, tmp_path)
    (tmp_path / name).write_text(text)
    with pytest.raises(BundleFormatError) as info:
        load_bundle(tmp_path)
    return str(info.value)


def test_rejects_self_loop_edge(bundle, tmp_path):
    msg = _corrupt(bundle, tmp_path, "edges.tsv", "3\t3\n")
    assert "edges.tsv:1" in msg and "self loop" in msg


@pytest.mark.parametrize(
    "text,needle",
    [
        ("2\t1\n", "u < v"),
        ("0\t1\n0\t1\n", "duplicate"),
        ("0\t99\n", "out of range"),
        ("0 1\n", "columns"),
        ("a\tb\n", "non-integer"),
    ],
)
def test_rejects_malformed_edges(bundle, tmp_path, text, needle):
    assert needle in _corrupt(bundle, tmp_path, "edges.tsv", text)


def test_rejects_count_mismatch(bundle, tmp_path):
    save_bundle(bundle, tmp_path)
    lines = (tmp_path / "edges.tsv").read_text().splitlines()
    (tmp_path / "edges.tsv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(BundleFormatError, match="declares"):
        load_bundle(tmp_path)


def test_rejects_bad_features_and_labels(bundle, tmp_path):
    save_bundle(bundle, tmp_path)
    rows = (tmp_path / "features.tsv").read_text().splitlines()
    rows[4] = "\t".join(["nan"] * 5)
    (tmp_path / "features.tsv").write_text("\n".join(rows) + "\n")
    with pytest.raises(BundleFormatError, match="features.tsv:5"):
        load_bundle(tmp_path)

    save_bundle(bundle, tmp_path)
    labels = (tmp_path / "labels.tsv").read_text().splitlines()
    labels[0] = "7"
    (tmp_path / "labels.tsv").write_text("\n".join(labels) + "\n")
    with pytest.raises(BundleFormatError, match="labels.tsv:1"):
        load_bundle(tmp_path)


def test_rejects_bad_split(bundle, tmp_path):
    save_bundle(bundle, tmp_path)
    split = json.loads((tmp_path / "split.json").read_text())
    split["val"].append(split["train"][0])
    (tmp_path / "split.json").write_text(json.dumps(split))
    with pytest.raises(BundleFormatError, match="overlap"):
        load_bundle(tmp_path)


def test_missing_file(bundle, tmp_path):
    save_bundle(bundle, tmp_path)
    (tmp_path / "labels.tsv").unlink()
    with pytest.raises(BundleFormatError, match="missing"):
        load_bundle(tmp_path)


@pytest.mark.parametrize("backbone,heads", [("gcn", 1), ("sage", 1), ("gat", 2)])
def test_untrained_z_report(bundle, tmp_path, backbone, heads):
    state = init_model(bundle, BackboneConfig(backbone, heads=heads), RngStream(0))
    path = tmp_path / "z.tsv"
    export_z_report(state, bundle, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "\t".join(Z_REPORT_HEADER)
    rows = [ln.split("\t") for ln in lines[1:]]
    assert len(rows) == heads * structure_for(bundle, state.config).nnz
    assert all(r[2] == r[4] for r in rows)
    assert {r[5] for r in rows} <= {"0", "1"}


def test_model_snapshot_round_trip(bundle, tmp_path):
    state = init_model(bundle, BackboneConfig("jknet", layers=3), RngStream(5))
    state.z = state.z - 0.3
    save_model(state, tmp_path / "m.npz")
    back = load_model(tmp_path / "m.npz")
    assert back.config == state.config and back.rng == state.rng
    assert np.array_equal(back.z, state.z)
    assert all(np.array_equal(a, b) for a, b in zip(back.weights, state.weights))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-300, 1e300), st.integers(6, 25))
def test_round_trip_keeps_all_bits(seed, scale, n):
    b = generate_sbm(n, 2, 0.4, 0.1, feature_noise=scale, rng=RngStream(seed))
    with tempfile.TemporaryDirectory() as tmp:
        save_bundle(b, tmp)
        back = load_bundle(tmp)
    assert np.array_equal(back.features, b.features)
    assert np.array_equal(back.graph.edges(), b.graph.edges())
