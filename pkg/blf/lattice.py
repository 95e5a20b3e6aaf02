"""
Image lattice graph, neighborhood sums and chromatic partition
"""

import logging
from typing import Optional

import numpy as np
from scipy import sparse

from .models import Coloring, LatticeGraph
from .utils import InvalidArgumentError, require

logger = logging.getLogger(__name__)

# Neighbor slot order; sums over neighbors always run in this order
NEIGHBOR_OFFSETS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)


class DegenerateVoxelError(ValueError):
    """Voxel without neighbors where a neighborhood is required"""


def build_lattice(height: int, width: int) -> LatticeGraph:
    """
    Build the 8-adjacency graph of a height x width grid

    Args:
        height: Number of rows
        width: Number of columns

    Returns:
        LatticeGraph over row-major voxel indices

    Raises:
        InvalidArgumentError: If a dimension is not positive
    """
    if int(height) < 1 or int(width) < 1:
        raise InvalidArgumentError(f"lattice dimensions must be positive, got {height}x{width}")
    height, width = int(height), int(width)
    n_voxels = height * width
    voxels = np.arange(n_voxels)
    rows, cols = np.divmod(voxels, width)

    neighbor_index = np.empty((n_voxels, len(NEIGHBOR_OFFSETS)), dtype=np.int64)
    neighbor_mask = np.zeros((n_voxels, len(NEIGHBOR_OFFSETS)), dtype=float)
    for slot, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
        nr, nc = rows + dr, cols + dc
        valid = (nr >= 0) & (nr < height) & (nc >= 0) & (nc < width)
        neighbor_index[:, slot] = np.where(valid, nr * width + nc, voxels)
        neighbor_mask[:, slot] = valid

    degree = neighbor_mask.sum(axis=1).astype(np.int64)
    return LatticeGraph(height, width, neighbor_index, neighbor_mask, degree)


def color_lattice(graph: LatticeGraph) -> Coloring:
    """Four-color the 8-adjacency grid with color(r, c) = 2(r mod 2) + (c mod 2)

    Unused colors are dropped, so a single row needs two classes.
    """
    rows, cols = np.divmod(np.arange(graph.n_voxels), graph.width)
    raw = 2 * (rows % 2) + (cols % 2)
    used, color = np.unique(raw, return_inverse=True)
    classes = [np.flatnonzero(color == k) for k in range(len(used))]
    return Coloring(color=color.astype(np.int64), classes=classes)


def validate_coloring(graph: LatticeGraph, coloring: Coloring) -> bool:
    """Check that no edge is monochromatic and the classes partition the voxels"""
    same = coloring.color[graph.neighbor_index] == coloring.color[:, None]
    if np.any(same & (graph.neighbor_mask > 0)):
        return False
    members = np.concatenate(coloring.classes) if coloring.classes else np.array([], dtype=int)
    return bool(np.array_equal(np.sort(members), np.arange(graph.n_voxels)))


def neighbor_sums(values: np.ndarray, graph: LatticeGraph, voxels: Optional[np.ndarray] = None) -> np.ndarray:
    """Sum of ``values`` over the neighbors of each voxel (or of ``voxels``)

    The accumulation order is fixed by NEIGHBOR_OFFSETS, so results are
    bitwise reproducible whatever subset of voxels is requested.
    """
    index = graph.neighbor_index if voxels is None else graph.neighbor_index[voxels]
    mask = graph.neighbor_mask if voxels is None else graph.neighbor_mask[voxels]
    total = np.zeros(index.shape[0])
    for slot in range(index.shape[1]):
        total += values[index[:, slot]] * mask[:, slot]
    return total


def neighbor_mean(values: np.ndarray, graph: LatticeGraph, v: int) -> float:
    """Mean of ``values`` over the neighbors of voxel ``v``

    Raises:
        DegenerateVoxelError: If ``v`` has no neighbors
    """
    require(0 <= v < graph.n_voxels, f"voxel {v} outside the lattice")
    if graph.degree[v] == 0:
        raise DegenerateVoxelError(f"voxel {v} has no neighbors")
    voxel = np.array([v])
    return float(neighbor_sums(np.asarray(values, dtype=float), graph, voxel)[0] / graph.degree[v])


def adjacency_matrix(graph: LatticeGraph) -> sparse.csr_matrix:
    """Binary adjacency matrix W"""
    rows = np.repeat(np.arange(graph.n_voxels), graph.neighbor_index.shape[1])
    cols = graph.neighbor_index.reshape(-1)
    keep = graph.neighbor_mask.reshape(-1) > 0
    data = np.ones(int(keep.sum()))
    return sparse.csr_matrix((data, (rows[keep], cols[keep])), shape=(graph.n_voxels, graph.n_voxels))


def car_precision(graph: LatticeGraph, rho: float, tau: float = 1.0) -> sparse.csr_matrix:
    """CAR precision tau (D - rho W)"""
    require(-1.0 < rho < 1.0, "rho must lie in (-1, 1)")
    degree = sparse.diags(graph.degree.astype(float))
    return (tau * (degree - rho * adjacency_matrix(graph))).tocsr()


def quadratic_form(values: np.ndarray, graph: LatticeGraph, rho: float) -> float:
    """x'(D - rho W)x without forming the matrix"""
    values = np.asarray(values, dtype=float)
    diagonal = float(np.dot(graph.degree * values, values))
    cross = float(np.dot(values, neighbor_sums(values, graph)))
    return diagonal - rho * cross
