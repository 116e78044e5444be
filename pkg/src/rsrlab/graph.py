"""Areal graphs, graph Laplacians and ICAR draws.

A graph is stored as a dense binary adjacency matrix. The graphs handled
here have at most a few hundred vertices, so dense symmetric
eigendecompositions are both exact enough and fast.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.sparse import csgraph, csr_matrix

from .errors import DataFormatError, DisconnectedGraph, InvalidEdge, InvalidParameter, NumericalFailure

# relative tolerance used to call a Laplacian eigenvalue zero
ZERO_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class AdjacencyGraph:
    """Undirected binary adjacency structure.

    Attributes
    ----------
    n : int
        Number of vertices.
    A : ndarray of int8, shape (n, n)
        Symmetric 0/1 matrix with zero diagonal.
    names : tuple of str, optional
        Vertex labels, if known.
    """

    n: int
    A: np.ndarray
    names: tuple = field(default=())

    def __post_init__(self):
        self.A.setflags(write=False)

    @property
    def degrees(self) -> np.ndarray:
        return self.A.sum(axis=1).astype(np.int64)

    @property
    def edges(self) -> np.ndarray:
        """Edge array of shape (m, 2) with i < j, lexicographically sorted."""
        i, j = np.nonzero(np.triu(self.A, 1))
        return np.column_stack([i, j])

    def laplacian(self) -> np.ndarray:
        # integer arithmetic first so that Q @ 1 is exactly zero
        A = self.A.astype(np.int64)
        Q = np.diag(A.sum(axis=1)) - A
        return Q.astype(float)


def load_graph(edges, n: int, names=None) -> AdjacencyGraph:
    """Build a graph from vertex pairs.

    Parameters
    ----------
    edges : iterable of (int, int)
        Undirected edges, either orientation. Duplicates collapse.
    n : int
        Number of vertices; indices must lie in ``[0, n)``.
    names : sequence of str, optional

    Raises
    ------
    InvalidEdge
        On a self-loop or an out-of-range index.
    """
    if n < 1:
        raise InvalidParameter(f"vertex count must be positive, got {n}")
    A = np.zeros((n, n), dtype=np.int8)
    for k, pair in enumerate(edges):
        i, j = (int(v) for v in pair)
        if not (0 <= i < n and 0 <= j < n):
            raise InvalidEdge(f"edge {k} ({i}, {j}) has an index outside [0, {n})")
        if i == j:
            raise InvalidEdge(f"edge {k} is a self-loop on vertex {i}")
        A[i, j] = A[j, i] = 1
    if names is not None:
        names = tuple(str(s) for s in names)
        if len(names) != n:
            raise InvalidParameter(f"{len(names)} names given for {n} vertices")
    return AdjacencyGraph(n=n, A=A, names=names or ())


def read_edge_list(path, n: int | None = None, names=None) -> AdjacencyGraph:
    """Read a whitespace separated ``i j`` edge list.

    Lines starting with ``#`` and blank lines are skipped, except a
    ``# n <count>`` line which fixes the vertex count. When `n` is
    omitted and no such line exists, it is one more than the largest
    index seen.
    """
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        s = line.strip()
        if s.startswith("#"):
            head = s[1:].split()
            if n is None and len(head) == 2 and head[0] == "n" and head[1].isdigit():
                n = int(head[1])
            continue
        if not s:
            continue
        parts = s.split()
        if len(parts) != 2:
            raise DataFormatError(f"{path}:{lineno}: expected two vertex indices, got {s!r}")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-integer vertex index in {s!r}") from None
    if n is None:
        if not pairs:
            raise DataFormatError(f"{path}: no edges found")
        n = 1 + max(max(p) for p in pairs)
    try:
        return load_graph(pairs, n, names=names)
    except InvalidEdge as exc:
        raise InvalidEdge(f"{path}: {exc}") from None


def write_edge_list(g: AdjacencyGraph, path, header: str = "") -> None:
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    lines += [f"{i} {j}" for i, j in g.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so the first non-negligible entry of each is positive."""
    V = np.array(V, dtype=float, copy=True)
    for k in range(V.shape[1]):
        col = V[:, k]
        big = np.abs(col) > 1e-10 * max(np.abs(col).max(), 1e-300)
        if big.any() and col[np.argmax(big)] < 0:
            V[:, k] = -col
    return V


def sorted_eigh(S: np.ndarray):
    """Symmetric eigendecomposition with eigenvalues in descending order.

    Ties keep the solver's original order (a stable sort on the negated
    eigenvalues) and eigenvector signs follow :func:`fix_signs`.
    """
    try:
        w, V = linalg.eigh(S)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailure(f"symmetric eigensolver failed: {exc}") from None
    order = np.argsort(-w, kind="stable")
    return w[order], fix_signs(V[:, order])


@dataclass(frozen=True, eq=False)
class LaplacianEigen:
    """Graph Laplacian with its descending eigendecomposition.

    Attributes
    ----------
    Q : ndarray, shape (n, n)
    V : ndarray, shape (n, n)
        Orthonormal eigenvectors, column k pairs with ``lam[k]``.
    lam : ndarray, shape (n,)
        Eigenvalues, largest first. On a connected graph the last is 0.
    """

    Q: np.ndarray
    V: np.ndarray
    lam: np.ndarray

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def zero_mask(self) -> np.ndarray:
        return np.abs(self.lam) <= ZERO_TOL * max(self.lam[0], 1.0)

    @property
    def kernel_dim(self) -> int:
        return int(self.zero_mask.sum())


def laplacian_eigen(g: AdjacencyGraph) -> LaplacianEigen:
    """Eigendecompose ``Q = diag(A 1) - A``.

    Eigenvalues are returned in descending order. Exact zeros are not
    forced; eigenvalues with ``|lam| <= 1e-8 * lam[0]`` count as kernel.
    """
    Q = g.laplacian()
    lam, V = sorted_eigh(Q)
    return LaplacianEigen(Q=Q, V=V, lam=lam)


def connected_components(g: AdjacencyGraph) -> list[np.ndarray]:
    """Vertex sets of the connected components, ordered by smallest member."""
    count, labels = csgraph.connected_components(csr_matrix(g.A), directed=False)
    comps = [np.flatnonzero(labels == c) for c in range(count)]
    comps.sort(key=lambda c: c[0])
    return comps


def require_connected(g: AdjacencyGraph) -> None:
    comps = connected_components(g)
    if len(comps) != 1:
        raise DisconnectedGraph(
            f"graph has {len(comps)} connected components; spatial models need a connected graph"
        )


def sample_icar(eig: LaplacianEigen, tau_s: float, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw from the intrinsic CAR prior with precision ``tau_s * Q``.

    Uses the spectral form ``sum_{i<n} v_i z_i / sqrt(tau_s lam_i)``, which
    puts zero mass on the constant direction, so each draw sums to zero.

    Parameters
    ----------
    eig : LaplacianEigen
        Decomposition of a connected graph.
    tau_s : float
        Precision, must be positive.
    rng : numpy.random.Generator
    size : int, optional
        Number of draws. With ``None`` a single vector is returned.
    """
    if not tau_s > 0:
        raise InvalidParameter(f"tau_s must be positive, got {tau_s}")
    if eig.kernel_dim != 1:
        raise DisconnectedGraph(f"ICAR draws need a connected graph (kernel dimension {eig.kernel_dim})")
    m = eig.n - 1
    shape = (m,) if size is None else (size, m)
    z = rng.standard_normal(shape)
    return (z / np.sqrt(tau_s * eig.lam[:m])) @ eig.V[:, :m].T
