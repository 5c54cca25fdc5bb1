"""File formats: dataset JSON Lines, dot-bracket listings, and CSV tables.

Dataset file layout::

    {"n": 9, "meta_name": "energy"}
    {"id": 0, "edges": [[0, 1], [1, 2], ...], "meta": -1.2}
    ...

Floats are written with ``repr`` so a save/load round trip is exact.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import IoFailure, NonUniformLength, SchemaViolation, ScatterfoldError
from .graphs import Graph, GraphDataset, parse_dot_bracket


def save_dataset(dataset: GraphDataset, path) -> None:
    path = Path(path)
    meta = dataset.meta
    try:
        with path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps({"n": dataset.n, "meta_name": dataset.meta_name}) + "\n")
            for k, g in enumerate(dataset.graphs):
                rec = {
                    "id": k,
                    "edges": [list(e) for e in g.sorted_edges()],
                    "meta": None if meta is None else meta[k],
                }
                fh.write(json.dumps(rec) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _require(rec: dict, key: str, lineno: int):
    if key not in rec:
        raise SchemaViolation(lineno, key, "missing")
    return rec[key]


def load_dataset(path) -> GraphDataset:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise SchemaViolation(1, "n", "empty file")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaViolation(1, "header", str(exc)) from exc
    n = _require(header, "n", 1)
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise SchemaViolation(1, "n", "must be a positive integer")
    meta_name = header.get("meta_name")
    if meta_name is not None and not isinstance(meta_name, str):
        raise SchemaViolation(1, "meta_name", "must be a string or null")

    graphs: list[Graph] = []
    metas: list[float | None] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(lineno, "record", str(exc)) from exc
        if not isinstance(rec, dict):
            raise SchemaViolation(lineno, "record", "not an object")
        rid = _require(rec, "id", lineno)
        if rid != len(graphs):
            raise SchemaViolation(lineno, "id", f"expected {len(graphs)}, got {rid}")
        edges = _require(rec, "edges", lineno)
        if not isinstance(edges, list):
            raise SchemaViolation(lineno, "edges", "must be a list")
        canon = set()
        for e in edges:
            if not (isinstance(e, list) and len(e) == 2 and all(isinstance(v, int) for v in e)):
                raise SchemaViolation(lineno, "edges", f"bad edge {e!r}")
            i, j = e
            if i == j:
                raise SchemaViolation(lineno, "edges", f"self-loop {e!r}")
            if not (0 <= i < n and 0 <= j < n):
                raise SchemaViolation(lineno, "edges", f"node index out of range in {e!r}")
            if i > j:
                raise SchemaViolation(lineno, "edges", f"edge {e!r} not ordered i < j")
            if (i, j) in canon:
                raise SchemaViolation(lineno, "edges", f"duplicate edge {e!r}")
            canon.add((i, j))
        meta = rec.get("meta")
        if meta is not None and (isinstance(meta, bool) or not isinstance(meta, (int, float))):
            raise SchemaViolation(lineno, "meta", "must be a number or null")
        graphs.append(Graph(n, frozenset(canon)))
        metas.append(None if meta is None else float(meta))

    if all(m is None for m in metas):
        meta_values = None
    elif any(m is None for m in metas):
        first = next(k for k, m in enumerate(metas) if m is None)
        raise SchemaViolation(first + 2, "meta", "meta must be present on all records or none")
    else:
        meta_values = tuple(metas)
    return GraphDataset(n, tuple(graphs), meta_values, meta_name)


def is_sequence_line(tokens: list[str]) -> bool:
    return bool(tokens) and all(ch in "ACGUTacgut" for ch in tokens[0])


def read_dot_bracket_file(path) -> GraphDataset:
    """Parse one structure per line with an optional trailing energy.

    A leading sequence line (as printed by RNAsubopt) is skipped.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    graphs: list[Graph] = []
    energies: list[float] = []
    n = None
    for lineno, raw in enumerate(lines, start=1):
        tokens = raw.split()
        if not tokens:
            continue
        if not graphs and n is None and is_sequence_line(tokens):
            continue
        structure = tokens[0]
        try:
            g = parse_dot_bracket(structure)
        except ScatterfoldError as exc:
            raise SchemaViolation(lineno, "structure", str(exc)) from exc
        if n is None:
            n = g.n
        elif g.n != n:
            raise NonUniformLength(
                f"line {lineno}: structure length {g.n} differs from first structure length {n}"
            )
        if len(tokens) > 2:
            col = raw.index(tokens[2]) + 1
            raise SchemaViolation(lineno, "energy", f"unexpected token {tokens[2]!r} at column {col}")
        if len(tokens) == 2:
            col = raw.index(tokens[1], len(structure)) + 1
            try:
                energy = float(tokens[1])
            except ValueError:
                raise SchemaViolation(
                    lineno, "energy", f"malformed energy {tokens[1]!r} at column {col}"
                ) from None
            if not math.isfinite(energy):
                raise SchemaViolation(lineno, "energy", f"non-finite energy at column {col}")
            energies.append(energy)
        elif energies:
            raise SchemaViolation(lineno, "energy", "missing energy; earlier lines carry one")
        graphs.append(g)
        if energies and len(energies) != len(graphs):
            raise SchemaViolation(lineno, "energy", "energy present on some lines only")

    if not graphs:
        raise SchemaViolation(1, "structure", "no structures found")
    if energies:
        return GraphDataset(n, tuple(graphs), tuple(energies), "energy")
    return GraphDataset(n, tuple(graphs), None, None)


def fmt(x) -> str:
    """Exact, platform-stable text for a float (shortest round-trip repr)."""
    if x is None:
        return "n/a"
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def write_matrix_csv(path, matrix: np.ndarray, prefix: str, ids: Sequence[int] | None = None,
                     extra: dict[str, Sequence] | None = None) -> None:
    matrix = np.asarray(matrix)
    rows = matrix.shape[0]
    ids = range(rows) if ids is None else ids
    extra = extra or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["graph_id"] + [f"{prefix}{c}" for c in range(matrix.shape[1])] + list(extra))
        for r, gid in enumerate(ids):
            w.writerow([int(gid)] + [fmt(v) for v in matrix[r]] + [fmt(col[r]) for col in extra.values()])


def read_matrix_csv(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Returns ``(ids, values, header)``; non-numeric ``n/a`` entries become NaN."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    ids = np.array([int(r[0]) for r in rows[1:]], dtype=int)
    values = np.array(
        [[float("nan") if v == "n/a" else float(v) for v in r[1:]] for r in rows[1:]], dtype=float
    ).reshape(len(rows) - 1, len(header) - 1)
    return ids, values, header


def write_rows_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, float) or v is None else v for v in row])


def write_json(path, obj) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        with Path(path).open(encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
