"""Immutable CSR graph storage, synthetic generators, and on-disk formats.

Node ids are dense integers in ``[0, num_nodes)``. Graphs are undirected:
input edges are symmetrized, self-loops and parallel edges are dropped, and
neighbor lists are kept sorted ascending so membership tests are a binary
search away.

File formats
------------
Edge-list text: one edge per line, two whitespace-separated decimal node
ids; lines starting with ``#`` are ignored.

Binary graph file, little-endian, field order normative:

    magic           4 bytes   b"GNSG"
    version         u16       1
    num_nodes       u64
    num_edges       u64       number of directed edge entries, len(indices)
    feature_dim     u32       0 when features are absent
    has_labels      u8
    has_masks       u8
    indptr          i64[num_nodes + 1]
    indices         i64[num_edges]
    features        f32[num_nodes * feature_dim], row-major
    labels          i32[num_nodes]                 (only if has_labels)
    masks           u8[num_nodes] * 3              (train, val, test)

Feature/label CSV: rows of ``node_id, label, f_0, ..., f_{d-1}``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

MAGIC = b"GNSG"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHQQIBB")


class GraphFormatError(ValueError):
    """Malformed edge-list, CSV, or binary graph file."""


class InvariantError(RuntimeError):
    """A structural invariant was violated at runtime."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph in CSR form with optional node data.

    Arrays are marked read-only after construction; a Graph is safe for
    unsynchronized concurrent reads.
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    train_mask: np.ndarray | None = None
    val_mask: np.ndarray | None = None
    test_mask: np.ndarray | None = None
    degrees: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "degrees", np.diff(self.indptr))
        for arr in (self.indptr, self.indices, self.features, self.labels,
                    self.train_mask, self.val_mask, self.test_mask, self.degrees):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def num_edges(self) -> int:
        """Number of directed edge entries (2x the undirected edge count)."""
        return int(self.indices.shape[0])

    @property
    def feature_dim(self) -> int:
        return 0 if self.features is None else int(self.features.shape[1])

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        row = self.neighbors(u)
        i = np.searchsorted(row, v)
        return i < len(row) and row[i] == v

    def replace(self, **kwargs) -> "Graph":
        """Copy of this graph with some node data swapped out."""
        fields = dict(num_nodes=self.num_nodes, indptr=self.indptr,
                      indices=self.indices, features=self.features,
                      labels=self.labels, train_mask=self.train_mask,
                      val_mask=self.val_mask, test_mask=self.test_mask)
        fields.update(kwargs)
        return Graph(**fields)


@dataclass(frozen=True, eq=False)
class NodeSet:
    """Sorted unique node ids plus an O(1) membership mask."""

    ids: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.ids.setflags(write=False)
        self.mask.setflags(write=False)

    @classmethod
    def from_ids(cls, ids, num_nodes: int) -> "NodeSet":
        ids = np.unique(np.asarray(ids, dtype=np.int64))
        if len(ids) and (ids[0] < 0 or ids[-1] >= num_nodes):
            raise ValueError(f"node id out of range [0, {num_nodes})")
        mask = np.zeros(num_nodes, dtype=bool)
        mask[ids] = True
        return cls(ids=ids, mask=mask)

    @classmethod
    def from_mask(cls, mask) -> "NodeSet":
        mask = np.asarray(mask, dtype=bool)
        return cls(ids=np.flatnonzero(mask).astype(np.int64), mask=mask.copy())

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def __contains__(self, v) -> bool:
        return bool(self.mask[int(v)])

    def contains(self, nodes) -> np.ndarray:
        return self.mask[np.asarray(nodes, dtype=np.int64)]


def build_csr(edge_list, num_nodes: int) -> Graph:
    """Build a Graph from (u, v) pairs.

    The input is symmetrized (both directions inserted); self-loops and
    duplicate edges are removed. Raises ValueError naming the first
    offending pair if an endpoint is out of range.
    """
    edges = np.asarray(edge_list, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        bad = (edges < 0) | (edges >= num_nodes)
        if bad.any():
            i = int(np.flatnonzero(bad.any(axis=1))[0])
            u, v = int(edges[i, 0]), int(edges[i, 1])
            raise ValueError(
                f"edge ({u}, {v}) out of range for num_nodes={num_nodes}")
        edges = edges[edges[:, 0] != edges[:, 1]]
    if edges.size:
        both = np.concatenate([edges, edges[:, ::-1]])
        # encode pairs as scalar keys; unique() both dedups and sorts, which
        # leaves each neighbor list sorted ascending
        keys = np.unique(both[:, 0] * num_nodes + both[:, 1])
        src = keys // num_nodes
        dst = keys % num_nodes
    else:
        src = dst = np.empty(0, dtype=np.int64)
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=num_nodes), out=indptr[1:])
    return Graph(num_nodes=num_nodes, indptr=indptr, indices=dst)


def generate_powerlaw(n: int, attach: int, seed: int) -> Graph:
    """Preferential-attachment (Barabási–Albert style) graph.

    Each new node attaches to ``attach`` distinct existing nodes chosen
    proportionally to their current degree. The result is connected and
    deterministic for a fixed seed.
    """
    if attach < 1:
        raise ValueError("attach must be >= 1")
    if n <= attach:
        raise ValueError(f"need n > attach, got n={n}, attach={attach}")
    rng = np.random.default_rng(seed)
    m = attach
    num_new = n - m
    src = np.empty(num_new * m, dtype=np.int64)
    dst = np.empty(num_new * m, dtype=np.int64)
    # endpoints of every edge so far, repeated; sampling an index uniformly
    # from this array is degree-proportional sampling
    repeated = np.empty(2 * num_new * m, dtype=np.int64)
    fill = 0
    targets = np.arange(m, dtype=np.int64)
    pos = 0
    for source in range(m, n):
        src[pos:pos + m] = source
        dst[pos:pos + m] = targets
        pos += m
        repeated[fill:fill + m] = targets
        repeated[fill + m:fill + 2 * m] = source
        fill += 2 * m
        chosen: set[int] = set()
        while len(chosen) < m:
            chosen.add(int(repeated[rng.integers(fill)]))
        targets = np.fromiter(chosen, dtype=np.int64, count=m)
    return build_csr(np.column_stack([src, dst]), n)


def generate_sbm(n: int, num_blocks: int, p_in: float, p_out: float,
                 seed: int, feature_dim: int = 16,
                 feature_noise: float = 3.0) -> Graph:
    """Stochastic block model with block-id labels and 0.5/0.25/0.25 masks.

    Nodes carry Gaussian features centered on a per-block mean so the block
    label is learnable from features plus structure; ``feature_noise`` is
    the per-dimension noise sigma (larger = harder task). Pass
    ``feature_dim=0`` for a structure-only graph.
    """
    if not (0.0 <= p_out < p_in <= 1.0):
        raise ValueError(
            f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if num_blocks < 1 or n < num_blocks:
        raise ValueError("need n >= num_blocks >= 1")
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) * num_blocks // n).astype(np.int32)
    block_ids = [np.flatnonzero(labels == b) for b in range(num_blocks)]
    chunks = []
    for a in range(num_blocks):
        for b in range(a, num_blocks):
            rows, cols = block_ids[a], block_ids[b]
            p = p_in if a == b else p_out
            hits = rng.random((len(rows), len(cols))) < p
            if a == b:
                hits = np.triu(hits, k=1)
            i, j = np.nonzero(hits)
            if len(i):
                chunks.append(np.column_stack([rows[i], cols[j]]))
    edges = np.concatenate(chunks) if chunks else np.empty((0, 2), np.int64)
    g = build_csr(edges, n)

    perm = rng.permutation(n)
    train_mask = np.zeros(n, dtype=bool)
    val_mask = np.zeros(n, dtype=bool)
    test_mask = np.zeros(n, dtype=bool)
    train_mask[perm[:n // 2]] = True
    val_mask[perm[n // 2:(3 * n) // 4]] = True
    test_mask[perm[(3 * n) // 4:]] = True

    features = None
    if feature_dim > 0:
        means = rng.normal(size=(num_blocks, feature_dim))
        features = (means[labels]
                    + feature_noise * rng.normal(size=(n, feature_dim)))
        features = features.astype(np.float32)
    return g.replace(features=features, labels=labels, train_mask=train_mask,
                     val_mask=val_mask, test_mask=test_mask)


def load_edgelist(path, num_nodes: int | None = None) -> Graph:
    """Parse an edge-list text file (see module docstring for the format)."""
    edges = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(
                    f"{path}:{lineno}: expected two node ids, got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(
                    f"{path}:{lineno}: non-integer node id in {line!r}") from None
            if u < 0 or v < 0:
                raise GraphFormatError(f"{path}:{lineno}: negative node id")
            edges.append((u, v))
    if num_nodes is None:
        num_nodes = 1 + max((max(u, v) for u, v in edges), default=-1)
    return build_csr(edges, num_nodes)


def save_binary(g: Graph, path) -> None:
    """Write the binary graph format described in the module docstring."""
    has_masks = g.train_mask is not None
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, g.num_nodes, g.num_edges,
                          g.feature_dim, int(g.labels is not None),
                          int(has_masks))
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(g.indptr, dtype=np.int64).tobytes())
        f.write(np.ascontiguousarray(g.indices, dtype=np.int64).tobytes())
        if g.features is not None:
            f.write(np.ascontiguousarray(g.features, dtype=np.float32).tobytes())
        if g.labels is not None:
            f.write(np.ascontiguousarray(g.labels, dtype=np.int32).tobytes())
        if has_masks:
            for mask in (g.train_mask, g.val_mask, g.test_mask):
                f.write(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())


def load_binary(path) -> Graph:
    """Read the binary graph format; errors name expected vs actual sizes."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise GraphFormatError(
            f"{path}: truncated header, expected {_HEADER.size} bytes, "
            f"got {len(raw)}")
    magic, version, n, num_edges, fdim, has_labels, has_masks = \
        _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise GraphFormatError(
            f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise GraphFormatError(f"{path}: unsupported version {version}")
    expected = (8 * (n + 1) + 8 * num_edges + 4 * n * fdim
                + (4 * n if has_labels else 0)
                + (3 * n if has_masks else 0))
    body = raw[_HEADER.size:]
    if len(body) != expected:
        raise GraphFormatError(
            f"{path}: truncated graph data, expected {expected} bytes "
            f"after header, got {len(body)}")

    off = 0

    def take(count, dtype):
        nonlocal off
        nbytes = count * np.dtype(dtype).itemsize
        arr = np.frombuffer(body, dtype=dtype, count=count, offset=off).copy()
        off += nbytes
        return arr

    indptr = take(n + 1, np.int64)
    indices = take(num_edges, np.int64)
    features = take(n * fdim, np.float32).reshape(n, fdim) if fdim else None
    labels = take(n, np.int32) if has_labels else None
    masks = [take(n, np.uint8).astype(bool) for _ in range(3)] \
        if has_masks else [None, None, None]
    return Graph(num_nodes=int(n), indptr=indptr, indices=indices,
                 features=features, labels=labels, train_mask=masks[0],
                 val_mask=masks[1], test_mask=masks[2])


def load_feature_csv(g: Graph, path) -> Graph:
    """Attach features and labels from a ``node_id,label,f_0..`` CSV."""
    try:
        table = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise GraphFormatError(f"{path}: {exc}") from None
    if table.shape[1] < 2:
        raise GraphFormatError(f"{path}: need node_id,label,... columns")
    ids = table[:, 0].astype(np.int64)
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= g.num_nodes:
        raise GraphFormatError(f"{path}: node id out of range")
    labels = np.zeros(g.num_nodes, dtype=np.int32)
    labels[ids] = table[:, 1].astype(np.int32)
    features = None
    if table.shape[1] > 2:
        features = np.zeros((g.num_nodes, table.shape[1] - 2), dtype=np.float32)
        features[ids] = table[:, 2:].astype(np.float32)
    return g.replace(features=features, labels=labels)


def validate_graph(g: Graph) -> None:
    """Check every CSR invariant; raises InvariantError on the first failure."""
    n = g.num_nodes
    if g.indptr.shape != (n + 1,) or g.indptr[0] != 0:
        raise InvariantError("indptr must have length n+1 and start at 0")
    if g.indptr[-1] != len(g.indices):
        raise InvariantError("indptr[-1] must equal len(indices)")
    if np.any(np.diff(g.indptr) < 0):
        raise InvariantError("indptr must be non-decreasing")
    if len(g.indices) and (g.indices.min() < 0 or g.indices.max() >= n):
        raise InvariantError("neighbor id out of range")
    rows = np.repeat(np.arange(n), g.degrees)
    if np.any(rows == g.indices):
        raise InvariantError("self-loop present")
    # sorted + deduplicated within each row: consecutive entries of the same
    # row must be strictly increasing
    same_row = rows[1:] == rows[:-1]
    if np.any(same_row & (np.diff(g.indices) <= 0)):
        raise InvariantError("neighbor lists must be sorted and deduplicated")
    # symmetry: the multiset of reversed edges equals the edge set
    keys = rows * n + g.indices
    rev = np.sort(g.indices * n + rows)
    if not np.array_equal(keys, rev):
        raise InvariantError("adjacency is not symmetric")


def adjacency(g: Graph, dtype=np.float64) -> sp.csr_matrix:
    """Unweighted adjacency as a scipy CSR matrix sharing the graph's arrays."""
    data = np.ones(g.num_edges, dtype=dtype)
    return sp.csr_matrix((data, g.indices, g.indptr),
                         shape=(g.num_nodes, g.num_nodes))


def gather_rows(indptr: np.ndarray, indices: np.ndarray, rows: np.ndarray):
    """Concatenate the CSR rows ``rows``.

    Returns ``(values, counts, positions)`` where ``values`` is the
    concatenation of the neighbor lists, ``counts`` the per-row lengths,
    and ``positions`` the global offsets of each value inside ``indices``.
    """
    rows = np.asarray(rows, dtype=np.int64)
    counts = indptr[rows + 1] - indptr[rows]
    total = int(counts.sum())
    if total == 0:
        return (np.empty(0, dtype=indices.dtype), counts,
                np.empty(0, dtype=np.int64))
    block_starts = np.cumsum(counts) - counts
    offsets = np.arange(total, dtype=np.int64) - np.repeat(block_starts, counts)
    positions = np.repeat(indptr[rows], counts) + offsets
    return indices[positions], counts, positions


def train_set(g: Graph) -> NodeSet:
    """Training nodes as a NodeSet; every node when no mask is present."""
    if g.train_mask is None:
        return NodeSet.from_ids(np.arange(g.num_nodes), g.num_nodes)
    return NodeSet.from_mask(g.train_mask)
