"""Benchmark problem construction.

Discrete diffusion operators (finite-difference and graph Laplacians),
semi-linear reaction terms, initial conditions, and file ingestion for
graph data. All operators produced here are symmetric positive
semi-definite.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .linalg import SparseOperator

BOUNDARY_CONDITIONS = ("dirichlet", "neumann", "periodic")

#: Floor applied to the inhibitor when evaluating the activator reaction;
#: trajectories of interest stay far above it.
GM_INHIBITOR_FLOOR = 1e-12


def _check_bc(bc: str) -> str:
    if bc not in BOUNDARY_CONDITIONS:
        raise ValueError(f"unknown boundary condition {bc!r}; expected one of {BOUNDARY_CONDITIONS}")
    return bc


@dataclass(frozen=True)
class Problem:
    """A stiff semi-linear system u' = -A u + g(t, u)."""

    name: str
    A: SparseOperator
    g: Callable[[float, np.ndarray], np.ndarray]
    u0: np.ndarray
    params: dict
    lam_max: float                      # upper bound on the spectrum of A
    coords: Optional[np.ndarray] = None  # per-dof coordinates, for exports

    @property
    def n(self) -> int:
        return self.A.n


# ---------------------------------------------------------------------------
# Finite-difference Laplacians.
# ---------------------------------------------------------------------------

def fd_laplacian_1d(nx: int, length: float, bc: str) -> SparseOperator:
    """1D second-difference operator (1/h^2) tridiag(-1, 2, -1) with boundary rows
    adjusted for the requested closure. h = length / nx.

    Neumann uses the mirror closure with first row (1, -1)/h^2, periodic wraps
    the corners; both leave the constant vector in the kernel.
    """
    _check_bc(bc)
    if nx < 3:
        raise ValueError("need at least 3 grid points")
    if length <= 0:
        raise ValueError("domain length must be positive")
    h = length / nx
    main = np.full(nx, 2.0)
    off = np.full(nx - 1, -1.0)
    mat = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if bc == "neumann":
        mat[0, 0] = 1.0
        mat[nx - 1, nx - 1] = 1.0
    elif bc == "periodic":
        mat[0, nx - 1] = -1.0
        mat[nx - 1, 0] = -1.0
    op = SparseOperator(sp.csr_matrix(mat) / h**2, symmetric=True)
    return op


def fd_laplacian_2d(nx: int, length: float, bc: str) -> SparseOperator:
    """2D Laplacian as the Kronecker sum T (x) I + I (x) T of the 1D operator."""
    t = fd_laplacian_1d(nx, length, bc).tocsr()
    eye = sp.identity(nx, format="csr")
    a = sp.kron(t, eye, format="csr") + sp.kron(eye, t, format="csr")
    return SparseOperator(a, symmetric=True)


def fd_grid_1d(nx: int, length: float, bc: str, origin: float = 0.0) -> np.ndarray:
    """Grid coordinates matching the discretization convention.

    Periodic and Dirichlet use vertex points starting at the origin; the
    Neumann mirror closure corresponds to cell centers.
    """
    _check_bc(bc)
    h = length / nx
    if bc == "neumann":
        return origin + (np.arange(nx) + 0.5) * h
    return origin + np.arange(nx) * h


def fd_grid_2d(nx: int, length: float, bc: str, origin: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Meshgrid (flattened, row-major) for the 2D operator; dof ordering matches
    the Kronecker assembly: index = ix * nx + iy."""
    x = fd_grid_1d(nx, length, bc, origin)
    xx, yy = np.meshgrid(x, x, indexing="ij")
    return xx.ravel(), yy.ravel()


# ---------------------------------------------------------------------------
# Graphs.
# ---------------------------------------------------------------------------

@dataclass
class Graph:
    """Undirected simple weighted graph.

    Edges are stored once with i < j and positive weights; construction
    canonicalizes arbitrary edge lists by dropping self-loops and summing
    duplicates.
    """

    n: int
    edges: list  # list of (i, j, w) with i < j
    coords: Optional[np.ndarray] = None
    original_ids: Optional[np.ndarray] = None

    @classmethod
    def from_edge_list(cls, n: int, raw_edges: Sequence[tuple], coords=None) -> "Graph":
        acc: dict[tuple[int, int], float] = {}
        max_node = n - 1
        for e in raw_edges:
            if len(e) == 2:
                i, j = e
                w = 1.0
            else:
                i, j, w = e
            i, j = int(i), int(j)
            w = float(w)
            if w < 0:
                raise ValueError(f"negative edge weight {w} on edge ({i}, {j})")
            if i == j or w == 0.0:
                continue
            if i > j:
                i, j = j, i
            max_node = max(max_node, j)
            if i < 0:
                raise ValueError(f"negative node index {i}")
            acc[(i, j)] = acc.get((i, j), 0.0) + w
        n = max(n, max_node + 1)
        edges = [(i, j, w) for (i, j), w in sorted(acc.items())]
        return cls(n=n, edges=edges, coords=coords)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> sp.csr_matrix:
        if not self.edges:
            return sp.csr_matrix((self.n, self.n))
        rows = np.fromiter((e[0] for e in self.edges), dtype=np.int64, count=len(self.edges))
        cols = np.fromiter((e[1] for e in self.edges), dtype=np.int64, count=len(self.edges))
        vals = np.fromiter((e[2] for e in self.edges), dtype=np.float64, count=len(self.edges))
        w = sp.coo_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        w = w + w.T
        return w.tocsr()

    def max_degree(self) -> float:
        return float(self.adjacency().sum(axis=1).max()) if self.edges else 0.0


def graph_laplacian(g: Graph) -> SparseOperator:
    """Unnormalized graph Laplacian L = D - W."""
    w = g.adjacency()
    if w.nnz and w.data.min() < 0:
        raise ValueError("adjacency contains a negative weight")
    degrees = np.asarray(w.sum(axis=1)).ravel()
    lap = sp.diags(degrees) - w
    return SparseOperator(sp.csr_matrix(lap), symmetric=True)


def largest_connected_component(g: Graph) -> Graph:
    """Node-induced subgraph on the largest component, relabeled contiguously.

    The returned graph keeps the original node ids in ``original_ids``.
    """
    if g.n == 0:
        raise ValueError("empty graph")
    adj = g.adjacency()
    ncomp, labels = csgraph.connected_components(adj, directed=False)
    sizes = np.bincount(labels, minlength=ncomp)
    keep = int(np.argmax(sizes))
    nodes = np.flatnonzero(labels == keep)
    remap = -np.ones(g.n, dtype=np.int64)
    remap[nodes] = np.arange(nodes.size)
    edges = [(int(remap[i]), int(remap[j]), w) for i, j, w in g.edges
             if remap[i] >= 0 and remap[j] >= 0]
    coords = g.coords[nodes] if g.coords is not None else None
    out = Graph(n=int(nodes.size), edges=edges, coords=coords, original_ids=nodes)
    return out


# ---------------------------------------------------------------------------
# Graph file ingestion.
# ---------------------------------------------------------------------------

def load_edge_list(path, one_based: bool = False) -> Graph:
    """Read a whitespace-separated edge list: ``i j [w]`` per line, ``#`` comments."""
    raw = []
    max_id = -1
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise ValueError(f"{path}:{lineno}: expected 'i j [w]', got {line!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            if one_based:
                i, j = i - 1, j - 1
            if i < 0 or j < 0:
                raise ValueError(f"{path}:{lineno}: negative node index (forgot one_based?)")
            raw.append((i, j, w))
            max_id = max(max_id, i, j)
    return Graph.from_edge_list(max_id + 1, raw)


def load_matrix_market_adjacency(path) -> Graph:
    """Read an adjacency matrix in MatrixMarket coordinate format."""
    from scipy.io import mmread

    mat = mmread(path)
    mat = sp.coo_matrix(mat)
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{path}: adjacency matrix must be square, got {mat.shape}")
    raw = list(zip(mat.row.tolist(), mat.col.tolist(), mat.data.tolist()))
    g = Graph.from_edge_list(mat.shape[0], raw)
    # symmetric-general files store both triangles; halve the doubled weights
    if _stored_both_triangles(mat):
        g = Graph(n=g.n, edges=[(i, j, w / 2.0) for i, j, w in g.edges], coords=g.coords)
    return g


def _stored_both_triangles(mat: sp.coo_matrix) -> bool:
    upper = ((mat.row < mat.col) & (mat.data != 0)).sum()
    lower = ((mat.row > mat.col) & (mat.data != 0)).sum()
    return upper > 0 and lower > 0


def load_node_coordinates(path, n: int) -> np.ndarray:
    """Read ``id,x,y`` rows (optional header) into an (n, 2) array."""
    coords = np.full((n, 2), np.nan)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0].startswith("#"):
                continue
            try:
                idx = int(row[0])
            except ValueError:
                continue  # header line
            coords[idx] = (float(row[1]), float(row[2]))
    return coords


def builtin_graph(name: str = "road2600") -> Graph:
    """Load a packaged benchmark graph together with its node coordinates."""
    from importlib import resources

    base = resources.files("ratexpint").joinpath("data/graphs")
    edge_res = base.joinpath(f"{name}.edges")
    if not edge_res.is_file():
        raise FileNotFoundError(f"no packaged graph {name!r}")
    with resources.as_file(edge_res) as path:
        g = load_edge_list(path)
    coord_res = base.joinpath(f"{name}_coords.csv")
    if coord_res.is_file():
        with resources.as_file(coord_res) as path:
            g.coords = load_node_coordinates(path, g.n)
    return g


def save_edge_list(g: Graph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# nodes={g.n} edges={g.num_edges} base=0\n")
        for i, j, w in g.edges:
            if w == 1.0:
                fh.write(f"{i} {j}\n")
            else:
                fh.write(f"{i} {j} {w!r}\n")


# ---------------------------------------------------------------------------
# Reaction terms.
# ---------------------------------------------------------------------------

def reaction_allen_cahn(u: np.ndarray, eps: float, scaled: bool = False) -> np.ndarray:
    """Cubic double-well reaction u - u^3; the scaled network form divides by eps."""
    if eps <= 0:
        raise ValueError("interface parameter must be positive")
    g = u - u**3
    return g / eps if scaled else g


def reaction_gierer_meinhardt(a, h, p, mu, pprime, nu, floor: float = GM_INHIBITOR_FLOOR):
    """Activator/inhibitor kinetics (p a^2 / h - mu a, p' a^2 - nu h).

    The inhibitor is floored away from zero so the quotient stays finite.
    """
    a = np.asarray(a)
    h = np.asarray(h)
    h_safe = np.maximum(h, floor)
    g_a = p * a**2 / h_safe - mu * a
    g_h = pprime * a**2 - nu * h
    return g_a, g_h


# ---------------------------------------------------------------------------
# Initial conditions. Random data comes from numpy's PCG64 generator so runs
# are reproducible from the seed alone.
# ---------------------------------------------------------------------------

def initial_condition(kind: str, *, nx: int = 0, length: float = 2.0, bc: str = "neumann",
                      n: int = 0, seed: Optional[int] = None) -> np.ndarray:
    """Initial data for the benchmark problems.

    Kinds: ``ac2d`` (cosine bump 0.1 + 0.1 cos(2 pi x) cos(2 pi y) on the
    centered square), ``gm2d`` (activator uniform in [0.4, 0.6], inhibitor
    constant 0.2; returns the stacked vector), ``ac_graph`` (uniform in
    [-1, 1] per node).
    """
    if kind == "ac2d":
        x, y = fd_grid_2d(nx, length, bc, origin=-length / 2.0)
        return 0.1 + 0.1 * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y)
    if kind == "gm2d":
        if seed is None:
            raise ValueError("gm2d initial data is random; a seed is required")
        rng = np.random.Generator(np.random.PCG64(seed))
        a0 = rng.uniform(0.4, 0.6, size=nx * nx)
        h0 = np.full(nx * nx, 0.2)
        return np.concatenate([a0, h0])
    if kind == "ac_graph":
        if seed is None:
            raise ValueError("ac_graph initial data is random; a seed is required")
        rng = np.random.Generator(np.random.PCG64(seed))
        return rng.uniform(-1.0, 1.0, size=n)
    raise ValueError(f"unknown initial-condition kind {kind!r}")


# ---------------------------------------------------------------------------
# Assembled benchmark problems.
# ---------------------------------------------------------------------------

def allen_cahn_2d(nx: int, eps2: float = 0.1, length: float = 2.0,
                  bc: str = "neumann") -> Problem:
    """2D Allen-Cahn: u' = eps^2 Lap u + u - u^3 on the centered square."""
    lap = fd_laplacian_2d(nx, length, bc)
    a = lap.scaled(eps2)
    h = length / nx
    u0 = initial_condition("ac2d", nx=nx, length=length, bc=bc)
    x, y = fd_grid_2d(nx, length, bc, origin=-length / 2.0)

    def g(t, u):
        return reaction_allen_cahn(u, eps=np.sqrt(eps2), scaled=False)

    return Problem(
        name=f"ac2d-nx{nx}-{bc}",
        A=a, g=g, u0=u0,
        params={"eps2": eps2, "L": length, "nx": nx, "bc": bc},
        lam_max=eps2 * 8.0 / h**2,
        coords=np.column_stack([x, y]),
    )


def gierer_meinhardt_2d(nx: int, D_a: float = 0.01, D_h: float = 1.0,
                        p: float = 1.0, mu: float = 1.0, pprime: float = 1.0,
                        nu: float = 1.0, length: float = 1.0, bc: str = "periodic",
                        seed: int = 0) -> Problem:
    """2D Gierer-Meinhardt activator/inhibitor system.

    The operator is block-diagonal diag(D_a L, D_h L) on the stacked state
    (a; h).
    """
    lap = fd_laplacian_2d(nx, length, bc).tocsr()
    a_op = SparseOperator(sp.block_diag([D_a * lap, D_h * lap], format="csr"), symmetric=True)
    n = nx * nx
    u0 = initial_condition("gm2d", nx=nx, seed=seed)
    hx = length / nx

    def g(t, u):
        act, inh = u[:n], u[n:]
        g_a, g_h = reaction_gierer_meinhardt(act, inh, p, mu, pprime, nu)
        return np.concatenate([g_a, g_h])

    x, y = fd_grid_2d(nx, length, bc, origin=0.0)
    return Problem(
        name=f"gm2d-nx{nx}-{bc}",
        A=a_op, g=g, u0=u0,
        params={"D_a": D_a, "D_h": D_h, "p": p, "mu": mu, "pprime": pprime,
                "nu": nu, "L": length, "nx": nx, "bc": bc, "seed": seed},
        lam_max=max(D_a, D_h) * 8.0 / hx**2,
        coords=np.column_stack([np.tile(x, 2), np.tile(y, 2)]),
    )


def allen_cahn_graph(g: Graph, eps: float = 0.05, diffusion: float = 1.0,
                     seed: int = 0) -> Problem:
    """Scaled graph Allen-Cahn: u' = -eps D L u + (u - u^3)/eps."""
    lap = graph_laplacian(g)
    a = lap.scaled(eps * diffusion)

    def reaction(t, u):
        return reaction_allen_cahn(u, eps=eps, scaled=True)

    u0 = initial_condition("ac_graph", n=g.n, seed=seed)
    return Problem(
        name=f"acgraph-n{g.n}",
        A=a, g=reaction, u0=u0,
        params={"eps": eps, "D": diffusion, "seed": seed},
        lam_max=eps * diffusion * 2.0 * max(g.max_degree(), 1.0),
        coords=g.coords,
    )
