"""Region composition graph and stacked graph-convolution reasoning.

Nodes are the H*W cells of a feature map, stacked in raster order into a
matrix X of shape (N, d). Edges carry learned similarities
s(x_i, x_j) = (A x_i) . (B x_j), softmax-normalized per row into a
row-stochastic adjacency S, and reasoning applies Z <- ReLU(S Z W) for a
stack of weight matrices starting from Z = X.

Reasoning runs in a content-canonical node order (nodes sorted
lexicographically by feature values, results scattered back), which makes
the floating-point output exactly invariant to how the caller ordered the
nodes: reductions inside the matmuls always see the same operand order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class NodeFeatures:
    """Node feature matrix plus the grid it was raveled from."""

    x: Tensor  # (B, N, d) or (N, d)
    height: int
    width: int


@dataclass
class RegionGraph:
    """Row-stochastic adjacency together with the raw similarities."""

    s: Tensor
    raw: Tensor


def fmap_to_nodes(fmap: Tensor) -> NodeFeatures:
    b, c, h, w = fmap.shape
    x = T.reshape(T.permute(fmap, (0, 2, 3, 1)), (b, h * w, c))
    return NodeFeatures(x=x, height=h, width=w)


def nodes_to_fmap(nodes: NodeFeatures) -> Tensor:
    b, n, c = nodes.x.shape
    if n != nodes.height * nodes.width:
        raise T.ShapeError(f"{n} nodes cannot fill a {nodes.height}x{nodes.width} grid")
    grid = T.reshape(nodes.x, (b, nodes.height, nodes.width, c))
    return T.permute(grid, (0, 3, 1, 2))


def similarity(x: Tensor, a: Tensor, b: Tensor) -> Tensor:
    """Pairwise inner products of linearly transformed node features.

    raw[i, j] = (A x_i)^T (B x_j) for x of shape (..., N, d).
    """
    if a.shape != b.shape or a.shape[-1] != x.shape[-1]:
        raise T.ShapeError(f"similarity extents disagree: x {x.shape}, A {a.shape}, B {b.shape}")
    lhs = T.matmul(x, T.transpose_last2(a))
    rhs = T.matmul(x, T.transpose_last2(b))
    return T.matmul(lhs, T.transpose_last2(rhs))


def normalize(raw: Tensor) -> RegionGraph:
    """Softmax each row of the raw similarities into edge weights."""
    return RegionGraph(s=T.softmax_rows(raw), raw=raw)


def canonical_node_order(x: np.ndarray) -> np.ndarray:
    """Content-based node permutation (lexicographic over feature values)."""
    if x.ndim == 2:
        return np.lexsort(x.T)
    return np.stack([np.lexsort(item.T) for item in x])


def export_similarity(x: np.ndarray) -> np.ndarray:
    """Cosine similarities between node feature rows (analysis path).

    Distinct from the learned similarity: used to inspect what the features
    encode at a given stage.
    """
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1)
    if np.any(norms == 0.0):
        raise ValueError("cosine similarity undefined for zero-norm feature rows")
    unit = x / norms[..., None]
    return unit @ np.swapaxes(unit, -1, -2)


class RegionGraphReasoner:
    """Three (by default) stacked graph-convolution layers over one adjacency."""

    def __init__(self, channels: int, rng: np.random.Generator,
                 blocks: int = 3, recompute_adjacency: bool = False):
        if blocks < 1:
            raise ValueError("need at least one graph convolution layer")
        self.channels = channels
        self.recompute_adjacency = recompute_adjacency
        # Similarity transforms start small so the initial edge weights stay
        # near uniform; He-scale products of wide features would saturate the
        # row softmax at init.
        sim_std = channels ** -0.75
        self.a = Tensor(rng.normal(0.0, sim_std, (channels, channels)), requires_grad=True)
        self.b = Tensor(rng.normal(0.0, sim_std, (channels, channels)), requires_grad=True)
        w_std = (2.0 / channels) ** 0.5
        self.ws = [Tensor(rng.normal(0.0, w_std, (channels, channels)), requires_grad=True)
                   for _ in range(blocks)]

    def reason_nodes(self, x: Tensor, adjacency: Tensor | None = None) -> Tensor:
        """Run the stack on (B, N, d) node features in the given node order.

        ``adjacency`` overrides the learned edge weights (diagnostics/tests).
        """
        if adjacency is None:
            adjacency = normalize(similarity(x, self.a, self.b)).s
        z = x
        for i, w in enumerate(self.ws):
            if i > 0 and self.recompute_adjacency:
                adjacency = normalize(similarity(z, self.a, self.b)).s
            z = T.relu(T.matmul(T.matmul(adjacency, z), w))
        return z

    def reason(self, x: Tensor) -> Tensor:
        """Order-canonicalized reasoning; commutes exactly with permutations."""
        perm = canonical_node_order(x.data)
        inverse = np.argsort(perm, axis=-1)
        z = self.reason_nodes(T.permute_rows(x, perm))
        return T.permute_rows(z, inverse)

    def forward(self, fmap: Tensor, mode: str = "eval") -> Tensor:
        nodes = fmap_to_nodes(fmap)
        out = self.reason(nodes.x)
        return nodes_to_fmap(NodeFeatures(out, nodes.height, nodes.width))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}/A": self.a, f"{prefix}/B": self.b}
        for i, w in enumerate(self.ws):
            out[f"{prefix}/W{i}"] = w
        return out

    def named_state(self, prefix: str) -> dict:
        return {}


def graph_reason(x: Tensor, reasoner: RegionGraphReasoner) -> Tensor:
    """Public reasoning op on (B, N, d) or (N, d) node features."""
    if x.ndim == 2:
        batched = T.reshape(x, (1,) + x.shape)
        return T.reshape(reasoner.reason(batched), x.shape)
    return reasoner.reason(x)
