"""Keyed hashing and the two-level Merkle tree over a tableau.

The lower level builds one binary tree per row over its B = S/lambda blocks;
the upper level is a binary tree whose T leaves are the row roots.  Node
addresses are bit strings: the empty string is the root, each bit descends
left (0) or right (1).  A full-depth address of log2(T) + log2(B) bits names
the leaf digest of block (i, j); one further level names the block itself.

Leaf and internal hashes are domain-separated (0x00 / 0x01 prefixes) and
keyed by prefixing the configured key, so digests are incomparable across
games with different keys.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from math import ceil

from .errors import DivergesOutsideWindow, IncompleteBundle, OutOfRange

ALGORITHMS = ("sha256", "sha3_256", "blake2s")

DIGEST_BYTES = 32

_LEAF_PREFIX = b"\x00"
_NODE_PREFIX = b"\x01"


@dataclass(frozen=True)
class HashScheme:
    """A keyed 256-bit hash: digest = H(key || domain prefix || message)."""

    key: bytes
    algorithm: str = "sha256"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")

    @property
    def digest_bits(self) -> int:
        return DIGEST_BYTES * 8

    def units(self, payload_len: int) -> int:
        """Cost of one hash call over ``payload_len`` message bytes, in 64-byte units."""
        return ceil((len(self.key) + 1 + payload_len) / 64)


def gen_key(n: int, seed: int, algorithm: str = "sha256") -> HashScheme:
    """Sample a fresh key of ceil(n/8) bytes from a seeded generator.

    Deterministic under a fixed seed; n is the security parameter and must
    be at least 16.
    """
    if n < 16:
        raise ValueError(f"security parameter n={n} below the minimum of 16")
    rng = random.Random(("hash-key", n, seed).__repr__())
    return HashScheme(key=rng.randbytes(ceil(n / 8)), algorithm=algorithm)


def _digest(scheme: HashScheme, prefix: bytes, payload: bytes, meter=None) -> bytes:
    if meter is not None:
        meter.add_hash_units(scheme.units(len(payload)))
        meter.add_hash_call()
    h = hashlib.new(scheme.algorithm)
    h.update(scheme.key)
    h.update(prefix)
    h.update(payload)
    return h.digest()


def leaf_hash(scheme: HashScheme, block_bytes: bytes, meter=None) -> bytes:
    return _digest(scheme, _LEAF_PREFIX, block_bytes, meter)


def node_hash(scheme: HashScheme, left: bytes, right: bytes, meter=None) -> bytes:
    return _digest(scheme, _NODE_PREFIX, left + right, meter)


def block_hash_units(scheme: HashScheme, lam: int) -> int:
    """64-byte units charged for one leaf hash over a 2*lam-byte block."""
    return scheme.units(2 * lam)


def node_hash_units(scheme: HashScheme) -> int:
    """64-byte units charged for one internal hash over two digests."""
    return scheme.units(2 * DIGEST_BYTES)


def _levels_from_leaves(leaves: list[bytes], scheme: HashScheme, meter=None) -> list[list[bytes]]:
    levels = [leaves]
    while len(levels[-1]) > 1:
        prev = levels[-1]
        levels.append(
            [node_hash(scheme, prev[k], prev[k + 1], meter) for k in range(0, len(prev), 2)]
        )
    return levels


@dataclass(frozen=True)
class RowTree:
    """Merkle tree over one row's B blocks; levels[0] holds the leaf digests."""

    levels: tuple[tuple[bytes, ...], ...]

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    @property
    def num_leaves(self) -> int:
        return len(self.levels[0])

    def leaf(self, j: int) -> bytes:
        return self.levels[0][j - 1]


def build_row_tree(blocks: list[bytes], scheme: HashScheme, meter=None) -> RowTree:
    leaves = [leaf_hash(scheme, b, meter) for b in blocks]
    levels = _levels_from_leaves(leaves, scheme, meter)
    return RowTree(tuple(tuple(level) for level in levels))


def refresh_row_tree(tree: RowTree, j: int, block_bytes: bytes, scheme: HashScheme, meter=None) -> RowTree:
    """Recompute leaf j and every hash on its path to the row root.

    The recompute is unconditional: exactly 1 + log2(B) hash calls per
    invocation, whether or not the block actually changed.
    """
    levels = [list(level) for level in tree.levels]
    levels[0][j - 1] = leaf_hash(scheme, block_bytes, meter)
    idx = j - 1
    for lvl in range(1, len(levels)):
        idx //= 2
        left = levels[lvl - 1][2 * idx]
        right = levels[lvl - 1][2 * idx + 1]
        levels[lvl][idx] = node_hash(scheme, left, right, meter)
    return RowTree(tuple(tuple(level) for level in levels))


def incremental_row_root(
    prev_tree: RowTree,
    prev_row: bytes,
    new_row: bytes,
    window: list[int],
    lam: int,
    scheme: HashScheme,
    meter=None,
) -> RowTree:
    """Advance a row tree to the successor row, touching only ``window`` blocks.

    ``window`` lists the 1-based block indices allowed to differ between the
    two rows (duplicates are refreshed again, keeping the work per entry
    fixed).  Identical rows cost zero hashes beyond the byte comparison.
    Raises ``DivergesOutsideWindow`` if the rows differ anywhere else.
    """
    if len(prev_row) != len(new_row):
        raise DivergesOutsideWindow("row lengths differ")
    if prev_row == new_row and not window:
        return prev_tree
    allowed = set(window)
    B = prev_tree.num_leaves
    for j in range(1, B + 1):
        lo, hi = 2 * lam * (j - 1), 2 * lam * j
        if j not in allowed and prev_row[lo:hi] != new_row[lo:hi]:
            raise DivergesOutsideWindow(f"rows differ at block {j}, outside window {sorted(allowed)}")
    tree = prev_tree
    for j in window:
        if not 1 <= j <= B:
            raise OutOfRange(f"window block {j} outside [1, {B}]")
        tree = refresh_row_tree(tree, j, new_row[2 * lam * (j - 1) : 2 * lam * j], scheme, meter)
    return tree


@dataclass(frozen=True)
class TableauTree:
    """The two-level tree: per-row subtrees plus the upper tree over row roots.

    Blank rows share a single RowTree instance, so building is O(S + T log S)
    hashes for a run of t rows rather than O(T * S).
    """

    T: int
    B: int
    row_trees: tuple[RowTree, ...] = field(repr=False)
    upper_levels: tuple[tuple[bytes, ...], ...] = field(repr=False)

    @property
    def root(self) -> bytes:
        return self.upper_levels[-1][0]

    @property
    def row_depth(self) -> int:
        return (self.T - 1).bit_length()

    @property
    def block_depth(self) -> int:
        return (self.B - 1).bit_length()

    def row_root(self, i: int) -> bytes:
        if not 1 <= i <= self.T:
            raise OutOfRange(f"row {i} outside [1, {self.T}]")
        return self.row_trees[i - 1].root

    def value_at(self, address: str) -> bytes:
        """Digest stored at a node address (upper node, row root, or leaf)."""
        rd, bd = self.row_depth, self.block_depth
        if len(address) > rd + bd:
            raise OutOfRange(f"address {address!r} deeper than the digest levels")
        if any(c not in "01" for c in address):
            raise OutOfRange(f"address {address!r} is not a bit string")
        if len(address) <= rd:
            level = self.upper_levels[rd - len(address)]
            return level[int(address, 2) if address else 0]
        row = int(address[:rd], 2) if rd else 0
        rest = address[rd:]
        tree = self.row_trees[row]
        level = tree.levels[bd - len(rest)]
        return level[int(rest, 2) if rest else 0]

    def children_at(self, address: str) -> tuple[bytes, bytes]:
        """Digests of both children of an internal node."""
        rd, bd = self.row_depth, self.block_depth
        if len(address) >= rd + bd:
            raise OutOfRange(f"node {address!r} has no digest children")
        return self.value_at(address + "0"), self.value_at(address + "1")


def upper_tree_levels(row_roots: list[bytes], scheme: HashScheme, meter=None) -> tuple:
    return tuple(tuple(level) for level in _levels_from_leaves(row_roots, scheme, meter))


def build_tree(tableau, scheme: HashScheme, meter=None) -> TableauTree:
    """Build the full tree from scratch (the batch oracle for the incremental path)."""
    B = tableau.num_blocks
    lam = tableau.lam
    row_trees = []
    for i in range(1, tableau.t + 1):
        row = tableau.row_bytes(i)
        blocks = [row[2 * lam * (j - 1) : 2 * lam * j] for j in range(1, B + 1)]
        row_trees.append(build_row_tree(blocks, scheme, meter))
    blank_blocks = [
        tableau.blank_data[2 * lam * (j - 1) : 2 * lam * j] for j in range(1, B + 1)
    ]
    blank_tree = build_row_tree(blank_blocks, scheme, meter)
    row_trees.extend([blank_tree] * (tableau.T - tableau.t))
    upper = upper_tree_levels([rt.root for rt in row_trees], scheme, meter)
    return TableauTree(T=tableau.T, B=B, row_trees=tuple(row_trees), upper_levels=upper)


def _bits(value: int, width: int) -> str:
    return format(value, f"0{width}b") if width else ""


def address_of(i: int, j: int, T: int, B: int) -> str:
    """Bit-string address of the leaf digest r_ij for block (i, j)."""
    if not 1 <= i <= T:
        raise OutOfRange(f"row {i} outside [1, {T}]")
    if not 1 <= j <= B:
        raise OutOfRange(f"block {j} outside [1, {B}]")
    rd = (T - 1).bit_length()
    bd = (B - 1).bit_length()
    return _bits(i - 1, rd) + _bits(j - 1, bd)


def row_address(i: int, T: int) -> str:
    """Address of the upper-tree leaf holding row i's root."""
    if not 1 <= i <= T:
        raise OutOfRange(f"row {i} outside [1, {T}]")
    return _bits(i - 1, (T - 1).bit_length())


def block_address(i: int, j: int, T: int, B: int) -> str:
    """Address of the data block itself: one level below its leaf digest."""
    return address_of(i, j, T, B) + "0"


def coords_of(address: str, T: int, B: int) -> tuple[int, int]:
    """Inverse of :func:`address_of` (also accepts block addresses)."""
    rd = (T - 1).bit_length()
    bd = (B - 1).bit_length()
    if any(c not in "01" for c in address):
        raise OutOfRange(f"address {address!r} is not a bit string")
    if len(address) == rd + bd + 1:
        if address[-1] != "0":
            raise OutOfRange(f"block address {address!r} must end in 0")
        address = address[:-1]
    if len(address) != rd + bd:
        raise OutOfRange(f"address {address!r} is not at leaf depth {rd + bd}")
    i = (int(address[:rd], 2) if rd else 0) + 1
    j = (int(address[rd:], 2) if bd else 0) + 1
    return i, j


@dataclass(frozen=True)
class PathBundle:
    """The values needed to check one root-to-descendant path.

    ``nodes`` maps addresses to digests for every node on the path plus the
    children of every internal path node; ``blocks`` maps block addresses to
    raw block bytes when the path ends at a data block.
    """

    nodes: dict[str, bytes]
    blocks: dict[str, bytes]

    def node(self, address: str) -> bytes:
        try:
            return self.nodes[address]
        except KeyError:
            raise IncompleteBundle(f"missing node {address!r}") from None

    def block(self, address: str) -> bytes:
        try:
            return self.blocks[address]
        except KeyError:
            raise IncompleteBundle(f"missing block {address!r}") from None


def extract_bundle(tree: TableauTree, tableau, u: str, v: str) -> PathBundle:
    """Pull the bundle for the u -> v path out of an honestly built tree.

    Every digest node on the path comes with both children; when the path
    reaches leaf depth, the leaf's child is the data block itself.
    """
    _check_ancestry(u, v)
    digest_depth = tree.row_depth + tree.block_depth
    nodes: dict[str, bytes] = {}
    blocks: dict[str, bytes] = {}
    for d in range(len(u), len(v) + 1):
        w = v[:d]
        if len(w) == digest_depth + 1:
            i, j = coords_of(w, tree.T, tree.B)
            blocks[w] = tableau.block_bytes(i, j)
            continue
        nodes[w] = tree.value_at(w)
        if len(w) < digest_depth:
            nodes[w + "0"], nodes[w + "1"] = tree.children_at(w)
        else:
            i, j = coords_of(w, tree.T, tree.B)
            blocks[w + "0"] = tableau.block_bytes(i, j)
    return PathBundle(nodes, blocks)


def _check_ancestry(u: str, v: str):
    if not v.startswith(u):
        raise OutOfRange(f"{u!r} is not an ancestor of {v!r}")


def check_consistent_path(scheme: HashScheme, bundle: PathBundle, u: str, v: str, meter=None) -> bool:
    """True iff every digest node on the u -> v path hashes correctly from its
    children; at leaf depth the child is the data block and the relation is
    leaf_hash(block) == leaf digest.  Costs one hash call per digest node.
    """
    _check_ancestry(u, v)
    for d in range(len(u), len(v) + 1):
        w = v[:d]
        if w in bundle.blocks:
            continue  # the block's relation is checked at its parent leaf
        value = bundle.node(w)
        if w + "0" in bundle.blocks:
            if leaf_hash(scheme, bundle.block(w + "0"), meter) != value:
                return False
        else:
            left, right = bundle.node(w + "0"), bundle.node(w + "1")
            if node_hash(scheme, left, right, meter) != value:
                return False
    return True
