"""Directed networks with dyadic covariates, degree diagnostics and trimming."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

ZERO_OUT = "zero-out"
ZERO_IN = "zero-in"
FULL_OUT = "full-out"
FULL_IN = "full-in"


class NetworkError(ValueError):
    """Invalid network or covariate input."""


@dataclass(frozen=True)
class Network:
    """Binary adjacency matrix with zero diagonal.

    ``adjacency[i, j] == 1`` means a link from ``i`` to ``j``.
    """

    adjacency: np.ndarray
    node_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        a = np.asarray(self.adjacency)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise NetworkError(f"adjacency must be square, got shape {a.shape}")
        if not np.all((a == 0) | (a == 1)):
            raise NetworkError("adjacency entries must be 0 or 1")
        if np.any(np.diag(a) != 0):
            raise NetworkError("self-loops are not allowed (g_ii must be 0)")
        a = a.astype(np.int8)
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        if self.node_labels is not None:
            labels = tuple(str(s) for s in self.node_labels)
            if len(labels) != a.shape[0]:
                raise NetworkError("node_labels length differs from node count")
            object.__setattr__(self, "node_labels", labels)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum())

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.adjacency, self.adjacency.T))

    def subnetwork(self, nodes: Sequence[int]) -> "Network":
        idx = np.asarray(list(nodes), dtype=int)
        labels = None
        if self.node_labels is not None:
            labels = tuple(self.node_labels[i] for i in idx)
        return Network(self.adjacency[np.ix_(idx, idx)], labels)

    def edges(self) -> list[tuple[int, int]]:
        src, dst = np.nonzero(self.adjacency)
        return list(zip(src.tolist(), dst.tolist()))


@dataclass(frozen=True)
class Covariates:
    """Dyadic covariates stored as dense ``(n, n, k)`` arrays.

    ``X[i, j]`` is the directed-utility vector of the ordered pair ``(i, j)``.
    ``Z[i, j]`` is the mutual-utility vector of the unordered pair and is kept
    symmetric.  Diagonal entries are zero and never read.
    """

    X: np.ndarray
    Z: np.ndarray
    x_names: tuple[str, ...] = ()
    z_names: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Z = np.asarray(self.Z, dtype=float)
        if X.ndim != 3 or Z.ndim != 3:
            raise NetworkError("X and Z must be (n, n, k) arrays")
        n = X.shape[0]
        if X.shape[:2] != (n, n) or Z.shape[:2] != (n, n):
            raise NetworkError("covariate arrays disagree on node count")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Z))):
            raise NetworkError("covariate values must be finite")
        if not np.array_equal(Z, Z.transpose(1, 0, 2)):
            raise NetworkError("Z must be symmetric: Z_ij == Z_ji")
        X = X.copy()
        Z = Z.copy()
        d = np.arange(n)
        X[d, d, :] = 0.0
        Z[d, d, :] = 0.0
        X.setflags(write=False)
        Z.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)
        xn = tuple(self.x_names) or tuple(f"x{k}" for k in range(X.shape[2]))
        zn = tuple(self.z_names) or tuple(f"z{k}" for k in range(Z.shape[2]))
        if len(xn) != X.shape[2] or len(zn) != Z.shape[2]:
            raise NetworkError("covariate names do not match column counts")
        object.__setattr__(self, "x_names", xn)
        object.__setattr__(self, "z_names", zn)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim_beta(self) -> int:
        return self.X.shape[2]

    @property
    def dim_rho(self) -> int:
        return self.Z.shape[2]

    def subset(self, nodes: Sequence[int]) -> "Covariates":
        idx = np.asarray(list(nodes), dtype=int)
        return Covariates(self.X[np.ix_(idx, idx)], self.Z[np.ix_(idx, idx)],
                          self.x_names, self.z_names)

    @classmethod
    def empty(cls, n: int) -> "Covariates":
        return cls(np.zeros((n, n, 0)), np.zeros((n, n, 0)))


@dataclass(frozen=True)
class DegreeSequences:
    d: np.ndarray  # out-degrees
    b: np.ndarray  # in-degrees


@dataclass
class TrimTrace:
    rounds: list[tuple[tuple[int, ...], dict[int, tuple[str, ...]]]] = field(default_factory=list)
    surviving: tuple[int, ...] = ()

    @property
    def removed(self) -> tuple[int, ...]:
        return tuple(i for ids, _ in self.rounds for i in ids)

    def cohort_sizes(self) -> list[int]:
        return [len(ids) for ids, _ in self.rounds]


def _table_from_rows(n, rows, k, ordered, what):
    # rows: mapping (i, j) -> vector
    out = np.zeros((n, n, k))
    seen = np.zeros((n, n), dtype=bool)
    for (i, j), vec in rows.items():
        i, j = int(i), int(j)
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise NetworkError(f"{what}: invalid dyad ({i}, {j})")
        v = np.asarray(vec, dtype=float).reshape(-1)
        if v.size != k:
            raise NetworkError(f"{what}: dyad ({i}, {j}) has {v.size} values, expected {k}")
        if ordered:
            out[i, j] = v
            seen[i, j] = True
        else:
            if seen[i, j] and not np.array_equal(out[i, j], v):
                raise NetworkError(f"{what}: Z_{i}{j} != Z_{j}{i}")
            out[i, j] = v
            out[j, i] = v
            seen[i, j] = seen[j, i] = True
    missing = ~seen
    np.fill_diagonal(missing, False)
    if missing.any():
        i, j = np.argwhere(missing)[0]
        raise NetworkError(f"{what}: missing covariate row for dyad ({i}, {j})")
    return out


def build_network(
    n: int,
    edges: Iterable[tuple[int, int]],
    X: Mapping | np.ndarray | None = None,
    Z: Mapping | np.ndarray | None = None,
    node_labels: Sequence[str] | None = None,
    x_names: Sequence[str] = (),
    z_names: Sequence[str] = (),
) -> tuple[Network, Covariates]:
    """Build a validated network and covariate tables.

    ``X`` and ``Z`` may be dense ``(n, n, k)`` arrays or mappings from dyads to
    vectors.  A ``Z`` mapping may list unordered pairs once or both orders; both
    orders must then agree exactly.
    """
    if n < 1:
        raise NetworkError("n must be positive")
    adj = np.zeros((n, n), dtype=np.int8)
    for src, dst in edges:
        src, dst = int(src), int(dst)
        if not (0 <= src < n and 0 <= dst < n):
            raise NetworkError(f"edge ({src}, {dst}) out of range for n={n}")
        if src == dst:
            raise NetworkError(f"self-loop edge ({src}, {dst})")
        if adj[src, dst]:
            raise NetworkError(f"duplicate edge ({src}, {dst})")
        adj[src, dst] = 1
    net = Network(adj, None if node_labels is None else tuple(node_labels))

    def _coerce(tab, ordered, what):
        if tab is None:
            return np.zeros((n, n, 0))
        if isinstance(tab, Mapping):
            if not tab:
                return np.zeros((n, n, 0))
            k = np.asarray(next(iter(tab.values())), dtype=float).reshape(-1).size
            return _table_from_rows(n, tab, k, ordered, what)
        arr = np.asarray(tab, dtype=float)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        return arr

    Xa = _coerce(X, True, "X")
    Za = _coerce(Z, False, "Z")
    return net, Covariates(Xa, Za, tuple(x_names), tuple(z_names))


def degrees(net: Network) -> DegreeSequences:
    a = net.adjacency.astype(np.int64)
    return DegreeSequences(d=a.sum(axis=1), b=a.sum(axis=0))


def boundary_nodes(net: Network) -> set[tuple[int, str]]:
    """Nodes whose out- or in-degree sits at 0 or n-1, with every reason."""
    ds = degrees(net)
    full = net.n - 1
    out = set()
    for i in range(net.n):
        if ds.d[i] == 0:
            out.add((i, ZERO_OUT))
        if ds.b[i] == 0:
            out.add((i, ZERO_IN))
        if ds.d[i] == full:
            out.add((i, FULL_OUT))
        if ds.b[i] == full:
            out.add((i, FULL_IN))
    return out


def trim_iteratively(net: Network) -> tuple[Network, TrimTrace]:
    """Remove boundary nodes in cohorts until none remain.

    All boundary nodes of the current subnetwork are dropped together in one
    round.  Node ids in the trace refer to the input network.
    """
    alive = list(range(net.n))
    trace = TrimTrace()
    while alive:
        sub = net.subnetwork(alive)
        flagged = boundary_nodes(sub)
        if not flagged:
            break
        reasons: dict[int, list[str]] = {}
        for local, why in flagged:
            reasons.setdefault(alive[local], []).append(why)
        ids = tuple(sorted(reasons))
        trace.rounds.append((ids, {i: tuple(sorted(reasons[i])) for i in ids}))
        gone = set(ids)
        alive = [i for i in alive if i not in gone]
    trace.surviving = tuple(alive)
    return net.subnetwork(alive), trace


def network_stats(net: Network) -> dict[str, float | None]:
    """Density, share of mutual dyads and directed global transitivity.

    Transitivity counts directed two-paths ``i -> j -> k`` (``i != k``) and the
    fraction closed by a link ``i -> k``; ``None`` when there are no two-paths.
    """
    n = net.n
    if n < 2:
        raise NetworkError("network statistics need n >= 2")
    a = net.adjacency.astype(float)
    density = a.sum() / (n * (n - 1))
    mutual = np.triu(a * a.T, 1).sum()
    recip = mutual / (n * (n - 1) / 2)
    two = a @ a
    np.fill_diagonal(two, 0.0)
    open_ = two.sum()
    trans = None if open_ == 0 else float((two * a).sum() / open_)
    return {"density": float(density), "reciprocity_share": float(recip),
            "transitivity": trans}


# ---------------------------------------------------------------------------
# file ingestion / export


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise NetworkError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    return header, rows


def read_edges(path: str | Path) -> list[tuple[int, int]]:
    header, rows = _read_rows(path)
    if header[:2] != ["src", "dst"]:
        raise NetworkError(f"{path}: expected header 'src,dst', got {header}")
    try:
        return [(int(r[0]), int(r[1])) for r in rows]
    except (ValueError, IndexError) as exc:
        raise NetworkError(f"{path}: malformed edge row ({exc})") from None


def read_dyadic_table(path: str | Path) -> tuple[list[str], dict[tuple[int, int], np.ndarray]]:
    header, rows = _read_rows(path)
    if header[:2] != ["i", "j"] or len(header) < 3:
        raise NetworkError(f"{path}: expected header 'i,j,<name>,...', got {header}")
    names = header[2:]
    table = {}
    for r in rows:
        if len(r) != len(header):
            raise NetworkError(f"{path}: row {r} has {len(r)} fields, expected {len(header)}")
        try:
            key = (int(r[0]), int(r[1]))
            vals = np.array([float(v) for v in r[2:]])
        except ValueError as exc:
            raise NetworkError(f"{path}: malformed row {r} ({exc})") from None
        if key in table:
            raise NetworkError(f"{path}: duplicate dyad {key}")
        table[key] = vals
    return names, table


def read_labels(path: str | Path, n: int | None = None) -> tuple[str, ...]:
    """Node labels from an ``id,label`` file; ``n`` defaults to the largest id plus one."""
    header, rows = _read_rows(path)
    if header[:2] != ["id", "label"]:
        raise NetworkError(f"{path}: expected header 'id,label'")
    try:
        ids = [int(r[0]) for r in rows]
    except (ValueError, IndexError):
        raise NetworkError(f"{path}: label ids must be integers") from None
    if n is None:
        n = max(ids, default=-1) + 1
    labels = [str(i) for i in range(n)]
    for i, r in zip(ids, rows):
        if not 0 <= i < n:
            raise NetworkError(f"{path}: label id {i} out of range")
        labels[i] = r[1]
    return tuple(labels)


def load_network(edges_path, x_path=None, z_path=None, labels_path=None,
                 n: int | None = None) -> tuple[Network, Covariates]:
    """Read an edge list plus optional covariate and label files.

    The node count is taken from ``n``, else inferred from the largest id seen
    in any of the files, so a labels file can declare isolated nodes.
    """
    edges = read_edges(edges_path)
    xnames, xtab = read_dyadic_table(x_path) if x_path else ([], None)
    znames, ztab = read_dyadic_table(z_path) if z_path else ([], None)
    if n is None:
        ids = [v for e in edges for v in e]
        for tab in (xtab, ztab):
            if tab:
                ids.extend(v for key in tab for v in key)
        n = max(ids) + 1 if ids else 0
        if labels_path:
            n = max(n, len(read_labels(labels_path)))
    if ztab:
        for (i, j) in ztab:
            if i >= j:
                raise NetworkError(f"{z_path}: Z rows must list unordered pairs with i<j, got ({i}, {j})")
    labels = read_labels(labels_path, n) if labels_path else None
    return build_network(n, edges, xtab, ztab, labels, xnames, znames)


def write_edges(net: Network, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst"])
        w.writerows(net.edges())


def write_covariates(cov: Covariates, x_path: str | Path | None, z_path: str | Path | None) -> None:
    n = cov.n
    if x_path is not None:
        with open(x_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", *cov.x_names])
            for i in range(n):
                for j in range(n):
                    if i != j:
                        w.writerow([i, j, *(repr(float(v)) for v in cov.X[i, j])])
    if z_path is not None:
        with open(z_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", *cov.z_names])
            for i in range(n):
                for j in range(i + 1, n):
                    w.writerow([i, j, *(repr(float(v)) for v in cov.Z[i, j])])
