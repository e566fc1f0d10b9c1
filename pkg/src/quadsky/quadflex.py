"""QuadFlex spatial blocking.

A quadtree over projected meters whose nodes split while they hold at least
two entities and are either wider (diagonal) than ``m`` meters or denser than
``d`` entities per 1000 m2. Children split the parent physically at the
midlines, but a point is routed to every child whose side of the 0.25/0.75
lines it falls on, so points near a split line land in two or four children.

Two builders produce the same tree:

* :class:`QuadFlex` inserts entities one at a time and redistributes the
  members of a leaf when it splits.
* :func:`build` constructs the tree level by level with numpy. Because a
  node's member set depends only on geometry, the result is independent of
  insertion order and identical to the incremental builder.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import CandidatePair, EntityCollection, EntityKey, QuadSkyError, canonicalize_pair
from .geo import Projection, project

MAX_DEPTH = 40
MIN_DIAGONAL = 0.01
# degenerate bounding-box sides are widened to this many meters
MIN_SIDE = 1.0


@dataclass(frozen=True)
class QuadNode:
    """Read-only view of one tree node.

    ``x0, y0`` is the south-west corner of the physical cell; ``logical`` is
    ``(x_min, y_min, x_max, y_max)`` of the region whose points are routed to
    this node.
    """

    path: str
    x0: float
    y0: float
    width: float
    height: float
    depth: int
    logical: tuple[float, float, float, float]
    m: float
    d: float
    children: Optional[tuple[int, int, int, int]] = None
    entities: tuple[int, ...] = ()

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def density(self) -> float:
        """Entities per 1000 m2 of physical cell area."""
        return len(self.entities) / (self.area / 1000.0)

    @property
    def is_leaf(self) -> bool:
        return self.children is None


@dataclass(frozen=True)
class Block:
    leaf_id: str
    members: tuple[int, ...]
    keys: tuple[EntityKey, ...]

    def __len__(self) -> int:
        return len(self.members)


def get_index(x0: float, y0: float, width: float, height: float, x: float, y: float,
              logical: Optional[tuple[float, float, float, float]] = None) -> set[int]:
    """Children (1 top-left, 2 top-right, 3 bottom-left, 4 bottom-right) that receive ``(x, y)``."""
    if logical is not None:
        lx0, ly0, lx1, ly1 = logical
        tol = 1e-9 * max(1.0, width, height)
        if not (lx0 - tol <= x <= lx1 + tol and ly0 - tol <= y <= ly1 + tol):
            raise QuadSkyError(f"point ({x}, {y}) outside node region")
    rx = x - x0
    ry = y - y0
    left = rx <= 0.75 * width
    right = rx >= 0.25 * width
    top = ry >= 0.25 * height
    bottom = ry <= 0.75 * height
    out = set()
    if left and top:
        out.add(1)
    if right and top:
        out.add(2)
    if left and bottom:
        out.add(3)
    if right and bottom:
        out.add(4)
    return out


def _route(rel_x, rel_y, w, h, reach):
    """Child masks (1..4) for points at ``rel_x, rel_y`` from a node origin.

    Works on scalars and arrays alike so both builders share the arithmetic.
    """
    left = rel_x <= 0.75 * w
    right = rel_x >= 0.25 * w
    top = rel_y >= 0.25 * h
    bottom = rel_y <= 0.75 * h
    if reach is not None:
        # a child only holds points within reach of its cell; the other
        # sides of that box are implied by membership in the parent
        left = left & (rel_x <= 0.5 * w + reach)
        right = right & (rel_x >= 0.5 * w - reach)
        top = top & (rel_y >= 0.5 * h - reach)
        bottom = bottom & (rel_y <= 0.5 * h + reach)
    return (left & top, right & top, left & bottom, right & bottom)


def _child_geometry(x0, y0, w, h, logical, c, reach=None):
    """Physical origin and logical bounds of child ``c`` (1..4)."""
    lx0, ly0, lx1, ly1 = logical
    hw, hh = w / 2, h / 2
    if c == 1:
        cx, cy, lg = x0, y0 + hh, (lx0, max(ly0, y0 + 0.25 * h), min(lx1, x0 + 0.75 * w), ly1)
    elif c == 2:
        cx, cy, lg = x0 + hw, y0 + hh, (max(lx0, x0 + 0.25 * w), max(ly0, y0 + 0.25 * h), lx1, ly1)
    elif c == 3:
        cx, cy, lg = x0, y0, (lx0, ly0, min(lx1, x0 + 0.75 * w), min(ly1, y0 + 0.75 * h))
    else:
        cx, cy, lg = x0 + hw, y0, (max(lx0, x0 + 0.25 * w), ly0, lx1, min(ly1, y0 + 0.75 * h))
    if reach is not None:
        lg = (max(lg[0], cx - reach), max(lg[1], cy - reach), min(lg[2], cx + hw + reach), min(lg[3], cy + hh + reach))
    return cx, cy, lg


def _root_box(points: np.ndarray) -> tuple[float, float, float, float]:
    xmin, ymin = points.min(axis=0)
    xmax, ymax = points.max(axis=0)
    w, h = xmax - xmin, ymax - ymin
    if w < MIN_SIDE:
        xmin -= (MIN_SIDE - w) / 2
        w = MIN_SIDE
    if h < MIN_SIDE:
        ymin -= (MIN_SIDE - h) / 2
        h = MIN_SIDE
    return float(xmin), float(ymin), float(w), float(h)


def _check_params(m: float, d: float) -> None:
    if not m > 0:
        raise QuadSkyError(f"diagonal cap m must be positive, got {m}")
    if not d > 0:
        raise QuadSkyError(f"density cap d must be positive, got {d}")


def _wants_split(count: int, w: float, h: float, depth: int, m: float, d: float) -> bool:
    if count < 2 or depth >= MAX_DEPTH:
        return False
    diag = math.hypot(w, h)
    if diag < MIN_DIAGONAL:
        return False
    return diag > m or count / (w * h / 1000.0) > d


class QuadFlexTree:
    """A finished QuadFlex tree stored as flat node arrays.

    Leaf membership is kept in CSR form: the entities of leaf ``j`` are
    ``leaf_members[leaf_ptr[j]:leaf_ptr[j + 1]]``, leaves in depth-first
    order (children 1 to 4). Only non-empty leaves are listed.
    """

    def __init__(self, collection, points, projection, m, d, reach, nodes, leaf_nodes, leaf_ptr, leaf_members):
        self.collection = collection
        self.points = points
        self.projection = projection
        self.m = m
        self.d = d
        self.reach = reach
        # columns: x0, y0, w, h, lx0, ly0, lx1, ly1
        self._geom = nodes["geom"]
        self._depth = nodes["depth"]
        self._first_child = nodes["first_child"]
        self._parent = nodes["parent"]
        self._count = nodes["count"]
        self.leaf_nodes = leaf_nodes
        self.leaf_ptr = leaf_ptr
        self.leaf_members = leaf_members
        self._leaf_rank = np.argsort(leaf_nodes)
        self._sorted_leaves = leaf_nodes[self._leaf_rank]

    @property
    def n_nodes(self) -> int:
        return len(self._depth)

    @property
    def depth(self) -> int:
        return int(self._depth.max())

    def path(self, i: int) -> str:
        digits = []
        while i > 0:
            p = int(self._parent[i])
            digits.append(str(i - int(self._first_child[p]) + 1))
            i = p
        return "".join(reversed(digits))

    def node(self, i: int = 0) -> QuadNode:
        x0, y0, w, h, lx0, ly0, lx1, ly1 = (float(v) for v in self._geom[i])
        fc = int(self._first_child[i])
        children = None if fc < 0 else (fc, fc + 1, fc + 2, fc + 3)
        ents: tuple[int, ...] = ()
        j = int(np.searchsorted(self._sorted_leaves, i))
        if j < len(self._sorted_leaves) and self._sorted_leaves[j] == i:
            j = int(self._leaf_rank[j])
            ents = tuple(int(v) for v in self.leaf_members[self.leaf_ptr[j]:self.leaf_ptr[j + 1]])
        return QuadNode(self.path(i), x0, y0, w, h, int(self._depth[i]), (lx0, ly0, lx1, ly1),
                        self.m, self.d, children, ents)

    @property
    def root(self) -> QuadNode:
        return self.node(0)

    def leaf_views(self) -> list[QuadNode]:
        """Non-empty leaves as :class:`QuadNode` views, depth-first."""
        return [self.node(int(n)) for n in self.leaf_nodes]

    def all_leaf_ids(self) -> np.ndarray:
        """Node ids of every leaf, empty ones included."""
        return np.flatnonzero(self._first_child < 0)

    def node_geometry(self) -> np.ndarray:
        return self._geom

    def leaves(self) -> list[Block]:
        keys = [e.key for e in self.collection]
        out = []
        for j, n in enumerate(self.leaf_nodes):
            mem = tuple(int(v) for v in self.leaf_members[self.leaf_ptr[j]:self.leaf_ptr[j + 1]])
            out.append(Block("R" + self.path(int(n)), mem, tuple(keys[i] for i in mem)))
        return out

    def leaf_sizes(self) -> np.ndarray:
        return np.diff(self.leaf_ptr)

    def replication(self) -> float:
        """Mean number of leaves each entity appears in."""
        return len(self.leaf_members) / len(self.collection)

    def pair_array(self) -> np.ndarray:
        """Deduplicated candidate pairs as an ``(k, 2)`` array of entity indices.

        Rows are in canonical ``(source, id)`` order, sorted.
        """
        return block_pair_array(self.leaf_ptr, self.leaf_members, self.collection.key_ranks())


def build(collection: EntityCollection, m: float = 100.0, d: float = math.inf,
          reach: Optional[float] = -1.0, points: Optional[np.ndarray] = None,
          projection: Optional[Projection] = None) -> QuadFlexTree:
    """Build the QuadFlex tree for ``collection``.

    ``m`` is the maximum leaf diagonal in meters and ``d`` the maximum leaf
    density in entities per 1000 m2. A node never holds a point lying more
    than ``reach`` meters outside its cell; the default ties ``reach`` to
    ``m`` and ``None`` disables the bound. ``points`` may carry precomputed
    projected coordinates.
    """
    _check_params(m, d)
    reach = _resolve_reach(reach, m)
    if len(collection) == 0:
        raise QuadSkyError("cannot block an empty collection")
    if points is None:
        points, projection = project(collection)
    points = np.asarray(points, dtype=float)
    xs, ys = points[:, 0], points[:, 1]

    rx0, ry0, rw, rh = _root_box(points)
    geoms = [np.array([[rx0, ry0, rw, rh, rx0, ry0, rx0 + rw, ry0 + rh]])]
    parents = [np.array([-1], dtype=np.int64)]
    # base-4 path digits, exact while the tree is at most 31 levels deep
    pkeys = [np.zeros(1, dtype=np.int64)]
    first_child_parts: list[np.ndarray] = []
    counts_parts: list[np.ndarray] = []
    leaf_groups: list[tuple[np.ndarray, np.ndarray]] = []

    mem_pt = np.arange(len(points), dtype=np.int64)
    mem_node = np.zeros(len(points), dtype=np.int64)
    offset = 0
    level = 0
    while True:
        g = geoms[level]
        n_level = len(g)
        counts = np.bincount(mem_node, minlength=n_level)
        counts_parts.append(counts)
        w, h = g[:, 2], g[:, 3]
        diag = np.hypot(w, h)
        density = counts / (w * h / 1000.0)
        split = (counts >= 2) & ((diag > m) | (density > d)) & (diag >= MIN_DIAGONAL)
        if level >= MAX_DEPTH:
            split[:] = False

        fc = np.full(n_level, -1, dtype=np.int64)
        split_idx = np.flatnonzero(split)
        next_offset = offset + n_level
        fc[split_idx] = next_offset + 4 * np.arange(len(split_idx))
        first_child_parts.append(fc)

        in_leaf = ~split[mem_node]
        if in_leaf.any():
            leaf_groups.append((mem_node[in_leaf] + offset, mem_pt[in_leaf]))
        if len(split_idx) == 0:
            break

        pg = g[split_idx]
        x0, y0, pw, ph = pg[:, 0], pg[:, 1], pg[:, 2], pg[:, 3]
        lx0, ly0, lx1, ly1 = pg[:, 4], pg[:, 5], pg[:, 6], pg[:, 7]
        hw, hh = pw / 2, ph / 2
        xr, xl = x0 + 0.25 * pw, x0 + 0.75 * pw
        yt, yb = y0 + 0.25 * ph, y0 + 0.75 * ph
        kids = np.empty((len(split_idx), 4, 8))
        kids[:, 0] = np.column_stack([x0, y0 + hh, hw, hh, lx0, np.maximum(ly0, yt), np.minimum(lx1, xl), ly1])
        kids[:, 1] = np.column_stack([x0 + hw, y0 + hh, hw, hh, np.maximum(lx0, xr), np.maximum(ly0, yt), lx1, ly1])
        kids[:, 2] = np.column_stack([x0, y0, hw, hh, lx0, ly0, np.minimum(lx1, xl), np.minimum(ly1, yb)])
        kids[:, 3] = np.column_stack([x0 + hw, y0, hw, hh, np.maximum(lx0, xr), ly0, lx1, np.minimum(ly1, yb)])
        if reach is not None:
            cx0, cy0 = kids[:, :, 0], kids[:, :, 1]
            np.maximum(kids[:, :, 4], cx0 - reach, out=kids[:, :, 4])
            np.maximum(kids[:, :, 5], cy0 - reach, out=kids[:, :, 5])
            np.minimum(kids[:, :, 6], cx0 + kids[:, :, 2] + reach, out=kids[:, :, 6])
            np.minimum(kids[:, :, 7], cy0 + kids[:, :, 3] + reach, out=kids[:, :, 7])
        kids = kids.reshape(-1, 8)
        geoms.append(kids)
        parents.append(np.repeat(split_idx + offset, 4))
        pkeys.append((pkeys[level][split_idx][:, None] * 4 + np.arange(4)).ravel())

        # route members of split nodes to children
        rank = np.full(n_level, -1, dtype=np.int64)
        rank[split_idx] = np.arange(len(split_idx))
        keep = split[mem_node]
        pt = mem_pt[keep]
        r = rank[mem_node[keep]]
        px, py = xs[pt], ys[pt]
        rel_x = px - x0[r]
        rel_y = py - y0[r]
        masks = _route(rel_x, rel_y, pw[r], ph[r], reach)
        new_pt, new_node = [], []
        for c, mask in enumerate(masks):
            new_pt.append(pt[mask])
            new_node.append(4 * r[mask] + c)
        mem_pt = np.concatenate(new_pt)
        mem_node = np.concatenate(new_node)
        offset = next_offset
        level += 1

    first_child = np.concatenate(first_child_parts)
    nodes = {
        "geom": np.concatenate(geoms),
        "depth": np.concatenate([np.full(len(gg), i, dtype=np.int64) for i, gg in enumerate(geoms)]),
        "first_child": first_child,
        "parent": np.concatenate(parents),
        "count": np.concatenate(counts_parts),
    }
    gnode = np.concatenate([a for a, _ in leaf_groups])
    gpt = np.concatenate([b for _, b in leaf_groups])
    leaf_ids = np.unique(gnode)
    if level <= 31:
        depth = nodes["depth"][leaf_ids]
        keys = np.concatenate(pkeys)[leaf_ids] << (2 * (level - depth))
        lnodes = leaf_ids[np.argsort(keys, kind="stable")]
    else:
        lnodes = _dfs_order(leaf_ids, nodes)
    leaf_idx = np.empty(len(nodes["depth"]), dtype=np.int64)
    leaf_idx[lnodes] = np.arange(len(lnodes))
    n = len(points)
    codes = leaf_idx[gnode] * n + gpt
    codes.sort()
    members = codes % n
    ptr = np.zeros(len(lnodes) + 1, dtype=np.int64)
    np.cumsum(np.bincount(codes // n, minlength=len(lnodes)), out=ptr[1:])
    return QuadFlexTree(collection, points, projection, m, d, reach, nodes, lnodes, ptr, members)


def _resolve_reach(reach, m):
    if reach is None or reach == math.inf:
        return None
    if reach == -1.0:
        return float(m)
    if reach < 0:
        raise QuadSkyError(f"reach must be non-negative, got {reach}")
    return float(reach)


def _dfs_order(node_ids: np.ndarray, nodes) -> np.ndarray:
    """Sort node ids into depth-first order (child 1 before child 4)."""
    depth = nodes["depth"]
    parent = nodes["parent"]
    first_child = nodes["first_child"]
    max_depth = int(depth[node_ids].max()) if len(node_ids) else 0
    # key = base-4 digits of the path, left-aligned to max_depth digits
    keys = [0] * len(node_ids)
    for j, n in enumerate(node_ids):
        n = int(n)
        k = 0
        place = 4 ** (max_depth - int(depth[n]))
        while n > 0:
            p = int(parent[n])
            k += (n - int(first_child[p])) * place
            place *= 4
            n = p
        keys[j] = k
    order = sorted(range(len(node_ids)), key=keys.__getitem__)
    return node_ids[order]


def block_pair_array(leaf_ptr: np.ndarray, leaf_members: np.ndarray, key_ranks: np.ndarray,
                     chunk: int = 1 << 20) -> np.ndarray:
    """All within-block pairs, deduplicated, in canonical order.

    Pairs are generated in chunks of about ``chunk`` and deduplicated per
    chunk first. Leaves come in depth-first order, so neighbouring leaves
    (which share most replicated pairs) usually land in the same chunk.
    """
    n = len(key_ranks)
    sizes = np.diff(leaf_ptr)
    pos = np.arange(len(leaf_members))
    # partners of member position p: the later positions of its leaf
    cnt = np.repeat(leaf_ptr[1:], sizes) - pos - 1
    cum = np.concatenate([[0], np.cumsum(cnt)])
    if cum[-1] == 0:
        return np.empty((0, 2), dtype=np.int64)
    member_rank = key_ranks[leaf_members].astype(np.int64)
    cuts = np.searchsorted(cum, np.arange(chunk, cum[-1], chunk), side="right") - 1
    edges = np.unique(np.concatenate([[0], cuts, [len(pos)]]))
    parts = []
    for p0, p1 in zip(edges[:-1], edges[1:]):
        c = cnt[p0:p1]
        a = np.repeat(pos[p0:p1], c)
        b = a + 1 + np.arange(len(a)) - np.repeat(cum[p0:p1] - cum[p0], c)
        ra, rb = member_rank[a], member_rank[b]
        code = np.minimum(ra, rb) * n + np.maximum(ra, rb)
        parts.append(_sorted_unique(code))
    uniq = _sorted_unique(np.concatenate(parts))
    del parts
    inv = np.empty(n, dtype=np.int64)
    inv[key_ranks] = np.arange(n)
    out = np.empty((len(uniq), 2), dtype=np.int64)
    np.floor_divide(uniq, n, out=out[:, 0])
    np.remainder(uniq, n, out=out[:, 1])
    del uniq
    # rank -> index, in place (each cell is read once before it is written)
    np.take(inv, out, out=out, mode="clip")
    return out


def _sorted_unique(x: np.ndarray) -> np.ndarray:
    x.sort()
    if len(x) < 2:
        return x
    keep = np.empty(len(x), dtype=bool)
    keep[0] = True
    np.not_equal(x[1:], x[:-1], out=keep[1:])
    return x[keep]


def leaves(tree) -> list[Block]:
    return tree.leaves()


def enumerate_pairs(blocks: Iterable[Block]) -> set[CandidatePair]:
    """Union of within-block pairs, deduplicated on canonical identity."""
    out: set[CandidatePair] = set()
    for b in blocks:
        keys = b.keys
        for i in range(len(keys)):
            for j in range(i + 1, len(keys)):
                if keys[i] != keys[j]:
                    out.add(canonicalize_pair(keys[i], keys[j]))
    return out


class _Node:
    __slots__ = ("x0", "y0", "w", "h", "depth", "path", "logical", "children", "members")

    def __init__(self, x0, y0, w, h, depth, path, logical):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.depth = depth
        self.path = path
        self.logical = logical
        self.children: Optional[list[_Node]] = None
        self.members: list[int] = []


class QuadFlex:
    """Incremental QuadFlex: insert entities one at a time.

    A leaf that reaches two or more members while exceeding the diagonal or
    density cap splits once and pushes all of its members down through
    :func:`get_index`; the children split further as needed.
    """

    def __init__(self, points: np.ndarray, m: float = 100.0, d: float = math.inf,
                 reach: Optional[float] = -1.0, bbox: Optional[tuple[float, float, float, float]] = None):
        _check_params(m, d)
        self.points = np.asarray(points, dtype=float)
        self.m = m
        self.d = d
        self.reach = _resolve_reach(reach, m)
        x0, y0, w, h = bbox if bbox is not None else _root_box(self.points)
        self.root = _Node(x0, y0, w, h, 0, "", (x0, y0, x0 + w, y0 + h))

    def insert(self, i: int) -> None:
        self._insert(self.root, i)

    def _insert(self, node: _Node, i: int) -> None:
        x, y = self.points[i]
        if node.children is not None:
            # get_index validates the point; _route adds the reach bound
            get_index(node.x0, node.y0, node.w, node.h, x, y, node.logical)
            for c, hit in enumerate(_route(x - node.x0, y - node.y0, node.w, node.h, self.reach)):
                if hit:
                    self._insert(node.children[c], i)
            return
        node.members.append(i)
        if _wants_split(len(node.members), node.w, node.h, node.depth, self.m, self.d):
            node.children = []
            for c in (1, 2, 3, 4):
                cx, cy, logical = _child_geometry(node.x0, node.y0, node.w, node.h, node.logical, c, self.reach)
                node.children.append(_Node(cx, cy, node.w / 2, node.h / 2, node.depth + 1, node.path + str(c), logical))
            members, node.members = node.members, []
            for j in members:
                self._insert(node, j)

    def leaf_nodes(self) -> list[_Node]:
        out = []
        stack = [self.root]
        while stack:
            n = stack.pop()
            if n.children is None:
                out.append(n)
            else:
                stack.extend(reversed(n.children))
        return out

    def blocks(self) -> list[tuple[str, tuple[int, ...]]]:
        """Non-empty leaves as ``(leaf_id, sorted member indices)``, depth-first."""
        return [("R" + n.path, tuple(sorted(n.members))) for n in self.leaf_nodes() if n.members]

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.leaf_nodes())


def build_incremental(collection: EntityCollection, m: float = 100.0, d: float = math.inf,
                      reach: Optional[float] = -1.0, order: Optional[Sequence[int]] = None) -> QuadFlex:
    """Build with :class:`QuadFlex`, inserting in ``order`` (default: collection order)."""
    if len(collection) == 0:
        raise QuadSkyError("cannot block an empty collection")
    points, _ = project(collection)
    q = QuadFlex(points, m, d, reach)
    for i in (range(len(collection)) if order is None else order):
        q.insert(int(i))
    return q
