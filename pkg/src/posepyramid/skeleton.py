"""Human skeleton graph: adjacency normalization, scaled Laplacian,
pyramid pooling group maps, and the left/right mirror used for flips.

The canonical 16- and 17-joint layouts ship as versioned JSON assets so the
joint ordering and pooling groups are pinned data, not code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import GraphError, NumericError, ParameterError


@dataclass(frozen=True)
class SkeletonGraph:
    name: str
    n_joints: int
    edges: tuple
    root: int
    mirror: tuple
    names: tuple
    rest_directions: dict

    def parents(self) -> list:
        """parent[j] for every joint, -1 at the root (edges must form a tree)."""
        parent = [-1] * self.n_joints
        seen = {self.root}
        pending = list(self.edges)
        while pending:
            progressed = False
            rest = []
            for i, j in pending:
                if i in seen and j not in seen:
                    parent[j] = i
                    seen.add(j)
                    progressed = True
                elif j in seen and i not in seen:
                    parent[i] = j
                    seen.add(i)
                    progressed = True
                elif i in seen and j in seen:
                    progressed = True
                else:
                    rest.append((i, j))
            pending = rest
            if not progressed and pending:
                raise GraphError("skeleton edges do not form a connected tree")
        if len(seen) != self.n_joints:
            raise GraphError("skeleton graph is not connected")
        return parent


class PoolingScheme:
    """Ordered coarsening levels; each level partitions the previous one."""

    def __init__(self, n_joints: int, levels):
        # levels: list of lists of (name, member-index list into previous level)
        self.n_joints = n_joints
        self.levels = []
        self.level_names = []
        prev = n_joints
        for groups in levels:
            assigned = sorted(m for _, members in groups for m in members)
            if assigned != list(range(prev)):
                raise GraphError("pooling level is not a partition of the finer level")
            if len(groups) >= prev:
                raise GraphError("pooling level sizes must strictly decrease")
            self.levels.append([list(members) for _, members in groups])
            self.level_names.append([name for name, _ in groups])
            prev = len(groups)

    @property
    def sizes(self):
        return [len(level) for level in self.levels]

    def fused_length(self) -> int:
        return self.n_joints + sum(self.sizes)

    def matrix(self, level: int) -> np.ndarray:
        """Averaging matrix (coarse x finer) for one level."""
        groups = self.levels[level]
        finer = self.n_joints if level == 0 else len(self.levels[level - 1])
        mat = np.zeros((len(groups), finer))
        for gi, members in enumerate(groups):
            mat[gi, members] = 1.0 / len(members)
        return mat

    def matrix_to_original(self, level: int) -> np.ndarray:
        """Averaging matrix from the original joint scale to the given level."""
        mat = self.matrix(0)
        for lv in range(1, level + 1):
            mat = self.matrix(lv) @ mat
        return mat


def load_skeleton(name: str):
    """Load a skeleton asset plus its pooling scheme, e.g. "skeleton16"."""
    path = resources.files("posepyramid.assets") / f"{name}.json"
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ParameterError(f"unknown skeleton asset {name!r}")
    graph = SkeletonGraph(
        name=raw["name"],
        n_joints=raw["n_joints"],
        edges=tuple(tuple(e) for e in raw["edges"]),
        root=raw["root"],
        mirror=tuple(raw["mirror"]),
        names=tuple(raw["names"]),
        rest_directions={k: tuple(v) for k, v in raw["rest_directions"].items()},
    )
    _validate(graph)
    scheme = PoolingScheme(
        graph.n_joints,
        [
            [(g["name"], list(g["members"])) for g in level["groups"]]
            for level in raw["levels"]
        ],
    )
    return graph, scheme


def _validate(g: SkeletonGraph) -> None:
    n = g.n_joints
    for i, j in g.edges:
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge ({i},{j}) references an invalid joint index")
        if i == j:
            raise GraphError("self-loops are not allowed")
    mirror = list(g.mirror)
    if sorted(mirror) != list(range(n)):
        raise GraphError("mirror map must be a permutation")
    for i in range(n):
        if mirror[mirror[i]] != i:
            raise GraphError("mirror map must be an involution")
    g.parents()  # raises if disconnected


def adjacency_matrix(g: SkeletonGraph) -> np.ndarray:
    a = np.zeros((g.n_joints, g.n_joints))
    for i, j in g.edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    return a


def normalize_adjacency(g: SkeletonGraph) -> np.ndarray:
    """Symmetric normalized form I - D^{-1/2} A D^{-1/2}."""
    a = adjacency_matrix(g)
    deg = a.sum(axis=1)
    if np.any(deg == 0):
        isolated = int(np.argmax(deg == 0))
        raise GraphError(f"joint {isolated} is isolated (degree 0)")
    dinv = 1.0 / np.sqrt(deg)
    return np.eye(g.n_joints) - (dinv[:, None] * a * dinv[None, :])


def scaled_laplacian(adjn: np.ndarray) -> np.ndarray:
    """Rescale so the spectrum lies in [-1, 1]: 2*A/lambda_max - I."""
    if not np.allclose(adjn, adjn.T):
        raise GraphError("scaled_laplacian expects a symmetric matrix")
    lam = float(np.linalg.eigvalsh(adjn)[-1])
    if lam <= 0:
        raise NumericError(f"maximum eigenvalue must be positive, got {lam}")
    return 2.0 * adjn / lam - np.eye(adjn.shape[0])


def flip_pose(pose: np.ndarray, g: SkeletonGraph) -> np.ndarray:
    """Mirror a pose across the sagittal plane.

    Negates the x coordinate and swaps left/right joints; an involution
    (flip twice gives back the input bitwise).
    """
    flipped = pose[list(g.mirror)].copy()
    flipped[:, 0] = -flipped[:, 0]
    return flipped
