"""Dataset loading, format conversion, and persistence of patches,
models and evaluation reports.

On-disk dataset layout (all UTF-8 text):

* nodes.tsv    -- one node per line: ``<id>\t<label>\t<train|test|other>``
* edges.tsv    -- one undirected edge per line: ``<id>\t<id>``
* features.txt -- one line of space-separated reals per node; may be
  absent, in which case features default to the identity matrix.

Patch artifacts, models and reports are versioned structured text
(``guap-artifact v1`` / ``guap-model v1`` / ``guap-report v1``). Floats
are written with repr so every round trip is bit exact.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .config import AttackHyper, TrainConfig
from .errors import FormatError, ParseError, ValidationError
from .features import FeatureStats
from .gcn import GcnParams
from .graph import SPLIT_CODES, SPLIT_NAMES, SPLIT_TRAIN, SPLIT_TEST, SPLIT_OTHER, Graph, largest_connected_component

ARTIFACT_HEADER = "guap-artifact v1"
MODEL_HEADER = "guap-model v1"
REPORT_HEADER = "guap-report v1"


@dataclass
class DatasetDescriptor:
    """Where a dataset lives plus optional expectations to validate."""

    name: str
    root: Path
    has_binary_features: bool | None = None
    expected_nodes: int | None = None
    expected_edges: int | None = None
    expected_classes: int | None = None


#: Benchmark expectations (counts are for the largest connected component).
BUILTIN_EXPECTATIONS = {
    "cora": dict(has_binary_features=True, expected_nodes=2708,
                 expected_edges=5278, expected_classes=7),
    "citeseer": dict(has_binary_features=True, expected_nodes=3327,
                     expected_edges=4676, expected_classes=6),
    "polblogs": dict(has_binary_features=None, expected_nodes=1222,
                     expected_edges=16714, expected_classes=2),
}


def descriptor_for(name: str, root) -> DatasetDescriptor:
    """Descriptor with builtin expectations when the name is a benchmark."""
    return DatasetDescriptor(name=name, root=Path(root),
                             **BUILTIN_EXPECTATIONS.get(name, {}))


def load_dataset(desc: DatasetDescriptor) -> Graph:
    """Read the tsv triple, reduce to the largest component, validate."""
    root = Path(desc.root)
    ids, labels, split = _read_nodes(root / "nodes.tsv")
    index = {node_id: i for i, node_id in enumerate(ids)}
    if len(index) != len(ids):
        raise ValidationError(f"duplicate node ids in {root / 'nodes.tsv'}")
    adjacency = _read_edges(root / "edges.tsv", index)
    features = _read_features(root / "features.txt", len(ids))

    n = len(ids)
    num_classes = int(labels.max()) + 1 if n else 0
    g = Graph(
        adjacency=adjacency,
        features=features if features is not None else np.zeros((n, 0)),
        labels=labels,
        num_classes=num_classes,
        split=split,
    )
    g = largest_connected_component(g)
    if g.d == 0:
        g = Graph(adjacency=g.adjacency, features=np.eye(g.n), labels=g.labels,
                  num_classes=g.num_classes, split=g.split)
    _validate_expectations(desc, g)
    return g


def _read_nodes(path: Path):
    ids, labels, split = [], [], []
    for lineno, parts in _tsv_lines(path):
        if len(parts) != 3:
            raise ParseError(f"{path}:{lineno}: expected <id>\\t<label>\\t<split>")
        node_id, label, tag = parts
        if not label.lstrip("-").isdigit():
            raise ParseError(f"{path}:{lineno}: label {label!r} is not an integer")
        if tag not in SPLIT_CODES:
            raise ParseError(f"{path}:{lineno}: unknown split tag {tag!r}")
        ids.append(node_id)
        labels.append(int(label))
        split.append(SPLIT_CODES[tag])
    if not ids:
        raise ParseError(f"{path}: no nodes")
    return ids, np.array(labels), np.array(split, dtype=np.int8)


def _read_edges(path: Path, index: dict) -> sp.csr_matrix:
    rows, cols = [], []
    for lineno, parts in _tsv_lines(path):
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected <id>\\t<id>")
        try:
            a, b = index[parts[0]], index[parts[1]]
        except KeyError as missing:
            raise ValidationError(
                f"{path}:{lineno}: referential integrity violation, "
                f"edge endpoint {missing.args[0]!r} is not in nodes.tsv"
            ) from None
        if a == b:
            continue  # self loops are dropped, like duplicates
        rows.extend((a, b))
        cols.extend((b, a))
    n = len(index)
    adj = sp.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(n, n))
    adj.sum_duplicates()
    adj.data[:] = 1.0  # duplicate input edges collapse
    return adj


def _read_features(path: Path, n: int) -> np.ndarray | None:
    if not path.exists():
        return None
    matrix = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        if not raw.strip():
            continue
        try:
            matrix.append([float(v) for v in raw.split()])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric feature value") from None
    if len(matrix) != n:
        raise ParseError(f"{path}: {len(matrix)} feature rows for {n} nodes")
    widths = {len(row) for row in matrix}
    if len(widths) > 1:
        raise ParseError(f"{path}: inconsistent feature dimensions {sorted(widths)}")
    return np.array(matrix)


def _tsv_lines(path: Path):
    if not path.exists():
        raise ParseError(f"{path}: file not found")
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        if raw.strip():
            yield lineno, raw.rstrip("\n").split("\t")


def _validate_expectations(desc: DatasetDescriptor, g: Graph):
    checks = [
        ("nodes", desc.expected_nodes, g.n),
        ("edges", desc.expected_edges, g.undirected_edge_count()),
        ("classes", desc.expected_classes, g.num_classes),
    ]
    for what, expected, got in checks:
        if expected is not None and expected != got:
            raise ValidationError(
                f"dataset {desc.name}: expected {expected} {what}, loaded {got}")
    if desc.has_binary_features and not np.isin(g.features, (0.0, 1.0)).all():
        raise ValidationError(f"dataset {desc.name}: features are not binary")


# ---------------------------------------------------------------------------
# patch artifacts


@dataclass
class PatchArtifact:
    """Finalized patch: binarized blocks, features, stats, run metadata."""

    x_patch: np.ndarray
    border: np.ndarray
    patch_block: np.ndarray
    stats: FeatureStats
    hyper: AttackHyper
    asr_trace: list[float]
    best_epoch: int
    seed: int
    dataset: str = ""
    igp_calls: int = 0
    runtime_seconds: float = 0.0

    def __post_init__(self):
        m = self.x_patch.shape[0]
        if self.border.shape[1] != m or self.patch_block.shape != (m, m):
            raise ValidationError(
                f"inconsistent patch shapes: X {self.x_patch.shape}, "
                f"C {self.border.shape}, B {self.patch_block.shape}")
        for name, block in (("border", self.border), ("patch_block", self.patch_block)):
            if block.size and not np.isin(block, (0.0, 1.0)).all():
                raise ValidationError(f"{name} must be binary in a finalized artifact")
        if not np.array_equal(self.patch_block, self.patch_block.T):
            raise ValidationError("patch block must be symmetric")
        if self.patch_block.size and np.diag(self.patch_block).any():
            raise ValidationError("patch block must have a zero diagonal")

    @property
    def m(self) -> int:
        return self.x_patch.shape[0]

    @property
    def n(self) -> int:
        return self.border.shape[0]


def save_patch(artifact: PatchArtifact, path) -> None:
    lines = [ARTIFACT_HEADER]
    lines.append(f"dataset {artifact.dataset}")
    lines.append(f"seed {artifact.seed}")
    lines.append(f"best_epoch {artifact.best_epoch}")
    lines.append(f"igp_calls {artifact.igp_calls}")
    lines.append(f"runtime_seconds {artifact.runtime_seconds!r}")
    for key, value in artifact.hyper.to_dict().items():
        lines.append(f"hyper.{key} {_scalar_repr(value)}")
    lines.append("asr_trace " + " ".join(repr(v) for v in artifact.asr_trace))
    lines.append(f"stats.binary {int(artifact.stats.binary)}")
    _matrix_lines(lines, "stats.mean", artifact.stats.mean[None, :])
    _matrix_lines(lines, "stats.var", artifact.stats.var[None, :])
    _matrix_lines(lines, "x_patch", artifact.x_patch)
    _matrix_lines(lines, "border", artifact.border)
    _matrix_lines(lines, "patch_block", artifact.patch_block)
    Path(path).write_text("\n".join(lines) + "\n")


def load_patch(path) -> PatchArtifact:
    scalars, matrices = _read_structured(path, ARTIFACT_HEADER)
    try:
        hyper = AttackHyper(
            max_epoch=int(scalars["hyper.max_epoch"]),
            max_iter=int(scalars["hyper.max_iter"]),
            radius=float(scalars["hyper.radius"]),
            overshoot=float(scalars["hyper.overshoot"]),
            step=float(scalars["hyper.step"]),
            sample_rate=float(scalars["hyper.sample_rate"]),
            binarize_threshold=float(scalars["hyper.binarize_threshold"]),
            patch_fraction=_opt_float(scalars["hyper.patch_fraction"]),
            m=_opt_int(scalars["hyper.m"]),
            clip=bool(int(scalars["hyper.clip"])),
        )
        trace_text = scalars["asr_trace"]
        return PatchArtifact(
            x_patch=matrices["x_patch"],
            border=matrices["border"],
            patch_block=matrices["patch_block"],
            stats=FeatureStats(
                mean=matrices["stats.mean"].ravel(),
                var=matrices["stats.var"].ravel(),
                binary=bool(int(scalars["stats.binary"])),
            ),
            hyper=hyper,
            asr_trace=[float(v) for v in trace_text.split()] if trace_text else [],
            best_epoch=int(scalars["best_epoch"]),
            seed=int(scalars["seed"]),
            dataset=scalars["dataset"],
            igp_calls=int(scalars["igp_calls"]),
            runtime_seconds=float(scalars["runtime_seconds"]),
        )
    except KeyError as missing:
        raise ParseError(f"{path}: missing field {missing.args[0]!r}") from None


# ---------------------------------------------------------------------------
# models


def save_model(params: GcnParams, path, train_config: TrainConfig | None = None) -> None:
    lines = [MODEL_HEADER]
    if train_config is not None:
        for key, value in train_config.to_dict().items():
            lines.append(f"train.{key} {_scalar_repr(value)}")
    _matrix_lines(lines, "w0", params.w0)
    _matrix_lines(lines, "w1", params.w1)
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> GcnParams:
    _, matrices = _read_structured(path, MODEL_HEADER)
    try:
        return GcnParams(w0=matrices["w0"], w1=matrices["w1"])
    except KeyError as missing:
        raise ParseError(f"{path}: missing matrix {missing.args[0]!r}") from None


# ---------------------------------------------------------------------------
# evaluation reports


@dataclass
class EvalReport:
    """Attack quality plus the accuracy cost of carrying the patch."""

    asr_train: float
    asr_test: float
    acc_clean: float
    acc_patched: float
    delta_acc: float
    outcomes: list[tuple[int, int, int]]  # (node, clean pred, attacked pred)
    runtime_seconds: float
    config: dict
    seed: int

    def __post_init__(self):
        if self.delta_acc != self.acc_patched - self.acc_clean:
            raise ValidationError("delta_acc must equal acc_patched - acc_clean")


def write_report(report: EvalReport, path) -> None:
    lines = [REPORT_HEADER]
    lines.append(f"seed {report.seed}")
    for key in ("asr_train", "asr_test", "acc_clean", "acc_patched",
                "delta_acc", "runtime_seconds"):
        lines.append(f"{key} {getattr(report, key)!r}")
    for key, value in sorted(_flatten("config", report.config).items()):
        lines.append(f"{key} {value}")
    lines.append(f"outcomes {len(report.outcomes)}")
    for node, clean, attacked in report.outcomes:
        lines.append(f"{node} {clean} {attacked} {int(clean != attacked)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_sweep_csv(path, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _flatten(prefix: str, mapping: dict) -> dict:
    flat = {}
    for key, value in mapping.items():
        name = f"{prefix}.{key}"
        if isinstance(value, dict):
            flat.update(_flatten(name, value))
        else:
            flat[name] = repr(value) if isinstance(value, float) else str(value)
    return flat


# ---------------------------------------------------------------------------
# structured-text plumbing


def _scalar_repr(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _opt_int(text: str):
    return None if text == "-" else int(text)


def _opt_float(text: str):
    return None if text == "-" else float(text)


def _matrix_lines(lines: list[str], name: str, matrix: np.ndarray) -> None:
    rows, cols = matrix.shape
    lines.append(f"matrix {name} {rows} {cols}")
    for row in matrix:
        lines.append(" ".join(repr(float(v)) for v in row))


def _read_structured(path, expected_header: str):
    path = Path(path)
    if not path.exists():
        raise ParseError(f"{path}: file not found")
    lines = path.read_text().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")
    if lines[0] != expected_header:
        raise FormatError(
            f"{path}: unsupported format {lines[0]!r}, expected {expected_header!r}")
    scalars: dict[str, str] = {}
    matrices: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        if line.startswith("matrix "):
            try:
                _, name, rows_s, cols_s = line.split()
                rows, cols = int(rows_s), int(cols_s)
            except ValueError:
                raise ParseError(f"{path}:{i + 1}: malformed matrix header") from None
            block = lines[i + 1:i + 1 + rows]
            if len(block) != rows:
                raise ParseError(f"{path}: truncated matrix {name!r}")
            data = np.empty((rows, cols))
            for r, text in enumerate(block):
                values = text.split()
                if len(values) != cols:
                    raise ParseError(
                        f"{path}:{i + 2 + r}: matrix {name!r} row has "
                        f"{len(values)} values, expected {cols}")
                data[r] = [float(v) for v in values]
            matrices[name] = data
            i += 1 + rows
        else:
            key, _, value = line.partition(" ")
            scalars[key] = value
            i += 1
    return scalars, matrices


# ---------------------------------------------------------------------------
# public-distribution converters


def convert_dataset(kind: str, src, dst, split_seed: int = 0) -> Graph:
    """Convert a public distribution into the tsv triple under ``dst``.

    ``kind`` selects the layout: ``cora``/``citeseer`` read the
    ``<name>.content`` + ``<name>.cites`` pair, ``polblogs`` reads a GML
    file. Splits are generated deterministically inside the largest
    connected component (20 nodes per class for the citation graphs with
    1000 test nodes; 121 train / 1101 test for polblogs).
    """
    src, dst = Path(src), Path(dst)
    if kind in ("cora", "citeseer"):
        g, ids = _read_content_pair(src, kind)
        train_per_class, train_total, test_total = 20, None, 1000
    elif kind == "polblogs":
        g, ids = _read_gml(src)
        train_per_class, train_total, test_total = None, 121, 1101
    else:
        raise FormatError(f"unrecognized dataset layout {kind!r}")
    g, ids = _lcc_with_ids(g, ids)
    split = _generate_split(g, split_seed, train_per_class, train_total, test_total)
    g = Graph(adjacency=g.adjacency, features=g.features, labels=g.labels,
              num_classes=g.num_classes, split=split)
    _write_dataset(g, ids, dst)
    return g


def _read_content_pair(src: Path, name: str):
    content = src / f"{name}.content"
    cites = src / f"{name}.cites"
    if not content.exists() or not cites.exists():
        raise FormatError(
            f"{src}: expected {name}.content and {name}.cites")
    ids, rows, label_names = [], [], []
    for lineno, raw in enumerate(content.read_text().splitlines(), 1):
        parts = raw.split()
        if not parts:
            continue
        if len(parts) < 3:
            raise ParseError(f"{content}:{lineno}: expected <id> <features...> <label>")
        ids.append(parts[0])
        rows.append([float(v) for v in parts[1:-1]])
        label_names.append(parts[-1])
    classes = sorted(set(label_names))
    class_index = {c: k for k, c in enumerate(classes)}
    labels = np.array([class_index[c] for c in label_names])
    index = {node_id: i for i, node_id in enumerate(ids)}
    n = len(ids)
    pairs = []
    for lineno, raw in enumerate(cites.read_text().splitlines(), 1):
        parts = raw.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise ParseError(f"{cites}:{lineno}: expected <id> <id>")
        a, b = index.get(parts[0]), index.get(parts[1])
        if a is None or b is None or a == b:
            continue  # citations to papers outside the content file
        pairs.append((a, b))
    adj = _pairs_to_adjacency(pairs, n)
    g = Graph(adjacency=adj, features=np.array(rows), labels=labels,
              num_classes=len(classes),
              split=np.full(n, SPLIT_OTHER, dtype=np.int8))
    return g, ids


_GML_NODE = re.compile(r"node\s*\[(.*?)\]", re.S)
_GML_EDGE = re.compile(r"edge\s*\[(.*?)\]", re.S)
_GML_FIELD = re.compile(r"(\w+)\s+(\"[^\"]*\"|\S+)")


def _read_gml(src: Path):
    path = src if src.is_file() else src / "polblogs.gml"
    if not path.exists():
        raise FormatError(f"{path}: GML file not found")
    text = path.read_text()
    ids, labels = [], []
    gml_index = {}
    for block in _GML_NODE.finditer(text):
        fields = dict(_GML_FIELD.findall(block.group(1)))
        if "id" not in fields or "value" not in fields:
            raise ParseError(f"{path}: node block without id/value")
        gml_index[fields["id"]] = len(ids)
        ids.append(fields["id"])
        labels.append(int(fields["value"]))
    pairs = []
    for block in _GML_EDGE.finditer(text):
        fields = dict(_GML_FIELD.findall(block.group(1)))
        a, b = gml_index.get(fields.get("source")), gml_index.get(fields.get("target"))
        if a is None or b is None:
            raise ParseError(f"{path}: edge references unknown node")
        if a != b:
            pairs.append((a, b))
    n = len(ids)
    g = Graph(adjacency=_pairs_to_adjacency(pairs, n),
              features=np.zeros((n, 0)), labels=np.array(labels),
              num_classes=int(max(labels)) + 1,
              split=np.full(n, SPLIT_OTHER, dtype=np.int8))
    return g, ids


def _pairs_to_adjacency(pairs, n) -> sp.csr_matrix:
    if not pairs:
        return sp.csr_matrix((n, n))
    arr = np.array(pairs)
    rows = np.concatenate([arr[:, 0], arr[:, 1]])
    cols = np.concatenate([arr[:, 1], arr[:, 0]])
    adj = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    adj.sum_duplicates()
    adj.data[:] = 1.0
    return adj


def _lcc_with_ids(g: Graph, ids: list[str]):
    marker = Graph(adjacency=g.adjacency,
                   features=np.arange(g.n, dtype=float)[:, None],
                   labels=g.labels, num_classes=g.num_classes, split=g.split)
    reduced = largest_connected_component(marker)
    keep = reduced.features.ravel().astype(int)
    kept_ids = [ids[i] for i in keep]
    features = g.features[keep] if g.d else np.zeros((keep.size, 0))
    out = Graph(adjacency=reduced.adjacency, features=features,
                labels=reduced.labels, num_classes=g.num_classes,
                split=reduced.split)
    return out, kept_ids


def _generate_split(g: Graph, seed: int, train_per_class, train_total, test_total):
    rng = np.random.Generator(np.random.Philox(key=[seed]))
    order = rng.permutation(g.n)
    split = np.full(g.n, SPLIT_OTHER, dtype=np.int8)
    if train_per_class is not None:
        taken = []
        for c in range(g.num_classes):
            members = [i for i in order if g.labels[i] == c][:train_per_class]
            taken.extend(members)
        train = np.array(taken)
    else:
        train = order[:train_total]
    split[train] = SPLIT_TRAIN
    remaining = np.array([i for i in order if split[i] != SPLIT_TRAIN])
    split[remaining[:test_total]] = SPLIT_TEST
    return split


def _write_dataset(g: Graph, ids: list[str], dst: Path) -> None:
    dst.mkdir(parents=True, exist_ok=True)
    node_lines = [
        f"{ids[i]}\t{g.labels[i]}\t{SPLIT_NAMES[int(g.split[i])]}" for i in range(g.n)
    ]
    (dst / "nodes.tsv").write_text("\n".join(node_lines) + "\n")
    coo = sp.triu(g.adjacency, k=1).tocoo()
    edge_lines = [f"{ids[r]}\t{ids[c]}" for r, c in zip(coo.row, coo.col)]
    (dst / "edges.tsv").write_text("\n".join(edge_lines) + "\n")
    if g.d:
        feature_lines = [" ".join(_feature_repr(v) for v in row) for row in g.features]
        (dst / "features.txt").write_text("\n".join(feature_lines) + "\n")


def _feature_repr(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))
