"""Plain-text dataset bundles, model snapshots and strength reports.

A bundle directory holds::

    meta.json      {"n", "num_edges", "num_classes", "feature_dim", "name"}
    edges.tsv      one undirected edge "u<TAB>v" per line, 0-based, u < v
    features.tsv   n lines of feature_dim tab-separated reals
    labels.tsv     n lines, one integer class each
    split.json     {"train": [...], "val": [...], "test": [...]}
"""
import json
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .autodiff.rng import RngStream
from .exceptions import BundleFormatError, ContractError
from .graph import DataSplit, DatasetBundle, Graph

BUNDLE_FILES = ("meta.json", "edges.tsv", "features.tsv", "labels.tsv", "split.json")
Z_REPORT_HEADER = ("src", "dst", "init_weight", "raw_z", "strength", "same_class")


def _read_lines(path):
    if not path.is_file():
        raise BundleFormatError(path, "missing file")
    text = path.read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _read_json(path):
    if not path.is_file():
        raise BundleFormatError(path, "missing file")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise BundleFormatError(path, f"invalid JSON: {exc.msg}", exc.lineno) from None


def _parse_edges(path, n):
    edges, seen = [], set()
    for lineno, line in enumerate(_read_lines(path), start=1):
        parts = line.split("\t")
        if len(parts) != 2:
            raise BundleFormatError(path, f"expected 2 columns, found {len(parts)}", lineno)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise BundleFormatError(path, f"non-integer endpoint in {line!r}", lineno) from None
        if u == v:
            raise BundleFormatError(path, f"self loop {u}-{v} not allowed", lineno)
        if u > v:
            raise BundleFormatError(path, f"edge {u}-{v} violates u < v", lineno)
        if u < 0 or v >= n:
            raise BundleFormatError(path, f"endpoint out of range [0, {n})", lineno)
        if (u, v) in seen:
            raise BundleFormatError(path, f"duplicate edge {u}-{v}", lineno)
        seen.add((u, v))
        edges.append((u, v))
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def _parse_features(path, n, dim):
    lines = _read_lines(path)
    if len(lines) != n:
        raise BundleFormatError(path, f"expected {n} rows, found {len(lines)}")
    out = np.empty((n, dim))
    for lineno, line in enumerate(lines, start=1):
        parts = line.split("\t") if dim else []
        if len(parts) != dim:
            raise BundleFormatError(path, f"expected {dim} columns, found {len(parts)}", lineno)
        try:
            row = [float(x) for x in parts]
        except ValueError:
            raise BundleFormatError(path, "non-numeric feature value", lineno) from None
        if not all(math.isfinite(x) for x in row):
            raise BundleFormatError(path, "non-finite feature value", lineno)
        out[lineno - 1] = row
    return out


def _parse_labels(path, n, num_classes):
    lines = _read_lines(path)
    if len(lines) != n:
        raise BundleFormatError(path, f"expected {n} labels, found {len(lines)}")
    labels = np.empty(n, dtype=np.int64)
    for lineno, line in enumerate(lines, start=1):
        try:
            y = int(line.strip())
        except ValueError:
            raise BundleFormatError(path, f"non-integer label {line!r}", lineno) from None
        if not 0 <= y < num_classes:
            raise BundleFormatError(path, f"label {y} outside [0, {num_classes})", lineno)
        labels[lineno - 1] = y
    return labels


def load_bundle(path):
    """Load and validate a bundle directory; any inconsistency raises."""
    root = Path(path)
    if not root.is_dir():
        raise BundleFormatError(root, "bundle directory does not exist")
    meta_path = root / "meta.json"
    meta = _read_json(meta_path)
    for key in ("n", "num_edges", "num_classes", "feature_dim"):
        if not isinstance(meta.get(key), int) or meta[key] < 0:
            raise BundleFormatError(meta_path, f"field {key!r} must be a non-negative integer")
    n = meta["n"]

    edges = _parse_edges(root / "edges.tsv", n)
    if edges.shape[0] != meta["num_edges"]:
        raise BundleFormatError(
            root / "edges.tsv", f"meta declares {meta['num_edges']} edges, file has {edges.shape[0]}"
        )
    features = _parse_features(root / "features.tsv", n, meta["feature_dim"])
    labels = _parse_labels(root / "labels.tsv", n, meta["num_classes"])

    split_path = root / "split.json"
    raw = _read_json(split_path)
    parts = {}
    for key in ("train", "val", "test"):
        idx = raw.get(key)
        if not isinstance(idx, list) or not all(isinstance(i, int) for i in idx):
            raise BundleFormatError(split_path, f"{key!r} must be a list of integers")
        if any(i < 0 or i >= n for i in idx):
            raise BundleFormatError(split_path, f"{key!r} has an index outside [0, {n})")
        parts[key] = idx
    try:
        split = DataSplit(parts["train"], parts["val"], parts["test"])
        return DatasetBundle(
            Graph.from_edges(n, edges),
            features,
            labels,
            split,
            name=str(meta.get("name", root.name)),
            num_classes=meta["num_classes"],
        )
    except ContractError as exc:
        raise BundleFormatError(root, str(exc)) from None


def _format_real(x):
    return format(float(x), ".17g")


def save_bundle(bundle, path):
    """Canonical serialization: sorted edges, 17 significant digits."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    edges = bundle.graph.edges()
    meta = {
        "n": int(bundle.n),
        "num_edges": int(edges.shape[0]),
        "num_classes": int(bundle.num_classes),
        "feature_dim": int(bundle.feature_dim),
        "name": bundle.name,
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (root / "edges.tsv").write_text("".join(f"{u}\t{v}\n" for u, v in edges.tolist()))
    (root / "features.tsv").write_text(
        "".join("\t".join(_format_real(x) for x in row) + "\n" for row in bundle.features)
    )
    (root / "labels.tsv").write_text("".join(f"{y}\n" for y in bundle.labels.tolist()))
    split = {k: getattr(bundle.split, k).tolist() for k in ("train", "val", "test")}
    (root / "split.json").write_text(json.dumps(split, sort_keys=True) + "\n")


def z_report_rows(state, bundle):
    from .models import structure_for

    st = structure_for(bundle, state.config)
    p = st.pattern
    labels = bundle.labels
    same = (labels[p.rows] == labels[p.col_indices]).astype(int)
    z = np.asarray(state.z).reshape(st.heads, p.nnz)
    init = st.init_values.reshape(st.heads, p.nnz)
    rows = []
    for head in range(st.heads):
        for k in range(p.nnz):
            raw = z[head, k]
            rows.append(
                (
                    int(p.rows[k]),
                    int(p.col_indices[k]),
                    float(init[head, k]),
                    float(raw),
                    min(max(float(raw), 0.0), 1.0),
                    int(same[k]),
                )
            )
    return rows


def export_z_report(state, bundle, path):
    """One TSV row per stored entry of the propagation pattern (per head for GAT)."""
    lines = ["\t".join(Z_REPORT_HEADER)]
    for src, dst, init, raw, strength, same in z_report_rows(state, bundle):
        lines.append(
            f"{src}\t{dst}\t{_format_real(init)}\t{_format_real(raw)}\t{_format_real(strength)}\t{same}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def save_model(state, path):
    arrays = {f"w{i}": w for i, w in enumerate(state.weights)}
    meta = {
        "config": asdict(state.config),
        "num_weights": len(state.weights),
        "rng": [state.rng.seed, state.rng.counter],
    }
    with open(path, "wb") as fh:
        np.savez(fh, z=state.z, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_model(path):
    from .models import BackboneConfig, ModelState

    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        weights = [data[f"w{i}"].copy() for i in range(meta["num_weights"])]
        z = data["z"].copy()
    seed, counter = meta["rng"]
    return ModelState(BackboneConfig(**meta["config"]), weights, z, RngStream(seed, counter))
