"""The commitment pipeline: run the machine, fold the tableau into the tree,
and report the (a, t, r) triple with exactly metered effort.

Effort is charged on a fixed linear model: one unit per machine transition,
four units per 64-byte unit of hash input, one unit per arbitration response.
The honest commit performs a deterministic amount of hashing, so its metered
total equals the closed form :func:`cost_M` to the unit: per successor row
the engine refreshes the leaf paths of the block the head wrote in and the
block it landed in, unconditionally (two refreshes even when they are the
same block), which keeps the per-row hash census constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

from .errors import OutOfRange
from .machine import MachineSpec, Tableau, run_tableau
from .merkle import (
    HashScheme,
    TableauTree,
    block_hash_units,
    build_row_tree,
    incremental_row_root,
    node_hash_units,
    upper_tree_levels,
)

C_STEP = 1
C_HASH = 4
C_QUERY = 1


@dataclass
class EffortMeter:
    """Per-agent, per-game effort counters; total is their fixed linear mix."""

    step_count: int = 0
    hash_count: int = 0  # 64-byte input units, summed over hash calls
    query_count: int = 0
    hash_calls: int = field(default=0, repr=False)  # raw invocations, for cost asserts

    def add_step(self, n: int = 1):
        self.step_count += n

    def add_hash_units(self, units: int):
        self.hash_count += units

    def add_hash_call(self, n: int = 1):
        self.hash_calls += n

    def add_query(self, n: int = 1):
        self.query_count += n

    @property
    def total(self) -> int:
        return C_STEP * self.step_count + C_HASH * self.hash_count + C_QUERY * self.query_count


@dataclass(frozen=True)
class Commitment:
    """The report triple: output string, claimed running time, tree root."""

    a: str
    t: int
    r: bytes

    def to_json(self) -> dict:
        return {"a": self.a, "t": self.t, "r": self.r.hex()}

    @staticmethod
    def from_json(obj: dict) -> "Commitment":
        return Commitment(a=obj["a"], t=int(obj["t"]), r=bytes.fromhex(obj["r"]))


@dataclass(frozen=True)
class CostModel:
    """Closed-form effort accounting for one (T, S, lambda, key-length) shape.

    h_block and h_node are the 64-byte units charged per block hash and per
    internal hash; they depend only on the key length, so M(.) is a public
    formula either side can evaluate.
    """

    T: int
    S: int
    lam: int
    h_block: int
    h_node: int

    @property
    def B(self) -> int:
        return self.S // self.lam

    @property
    def row_tree_units(self) -> int:
        """Hash units to build one B-leaf row tree from scratch."""
        return self.B * self.h_block + (self.B - 1) * self.h_node

    @property
    def row_update_units(self) -> int:
        """Hash units per successor row: two unconditional leaf-path refreshes."""
        log_b = (self.B - 1).bit_length()
        return 2 * (self.h_block + log_b * self.h_node)

    @property
    def upper_tree_units(self) -> int:
        """Hash units for the upper tree; its leaves are row roots, not re-hashed."""
        return (self.T - 1) * self.h_node

    def m(self, i: int) -> int:
        """Effort to compute rows 1..i plus the full tree (the M(.) schedule)."""
        if not 1 <= i <= self.T:
            raise OutOfRange(f"i={i} outside [1, {self.T}]")
        hash_units = (
            self.row_tree_units  # first row, from scratch
            + (i - 1) * self.row_update_units
            + self.row_tree_units  # the shared blank-row subtree
            + self.upper_tree_units
        )
        return C_STEP * (i - 1) + C_HASH * hash_units

    @property
    def m_c(self) -> int:
        return self.m(self.T)


def cost_model(T: int, S: int, lam: int, scheme: HashScheme) -> CostModel:
    return CostModel(
        T=T, S=S, lam=lam,
        h_block=block_hash_units(scheme, lam),
        h_node=node_hash_units(scheme),
    )


def cost_M(i: int, T: int, S: int, lam: int, scheme: HashScheme) -> int:
    """M(i): the metered cost of an honest commit that halts at row i."""
    return cost_model(T, S, lam, scheme).m(i)


def _block_of(col: int, lam: int) -> int:
    return (col - 1) // lam + 1


def build_tree_incremental(tableau: Tableau, scheme: HashScheme, meter: EffortMeter | None = None) -> TableauTree:
    """Assemble the tableau tree the way an honest prover does.

    Row 1 and the shared blank row are hashed from scratch; every later row
    reuses its predecessor's tree, refreshing the leaf paths of the head's
    write block and landing block.  The result is bit-identical to
    :func:`mrm.merkle.build_tree`.
    """
    lam = tableau.lam
    B = tableau.num_blocks

    def blocks(row: bytes) -> list[bytes]:
        return [row[2 * lam * (j - 1) : 2 * lam * j] for j in range(1, B + 1)]

    row_trees = [build_row_tree(blocks(tableau.row_bytes(1)), scheme, meter)]
    for i in range(2, tableau.t + 1):
        write_block = _block_of(tableau.head_cols[i - 2], lam)
        land_block = _block_of(tableau.head_cols[i - 1], lam)
        row_trees.append(
            incremental_row_root(
                row_trees[-1],
                tableau.row_bytes(i - 1),
                tableau.row_bytes(i),
                [write_block, land_block],
                lam,
                scheme,
                meter,
            )
        )
    blank_tree = build_row_tree(blocks(tableau.blank_data), scheme, meter)
    row_trees.extend([blank_tree] * (tableau.T - tableau.t))
    upper = upper_tree_levels([rt.root for rt in row_trees], scheme, meter)
    return TableauTree(T=tableau.T, B=B, row_trees=tuple(row_trees), upper_levels=upper)


def commit(
    spec: MachineSpec,
    input_str: str,
    T: int,
    S: int,
    lam: int,
    scheme: HashScheme,
    meter: EffortMeter | None = None,
) -> tuple[Commitment, TableauTree, Tableau]:
    """The commitment function: run the machine and report (a, t, root).

    With a fresh meter, the recorded total equals ``cost_M(t, T, S, lam,
    scheme)`` exactly.
    """
    tableau = run_tableau(spec, input_str, T, S, lam)
    if meter is not None:
        meter.add_step(tableau.t - 1)
    tree = build_tree_incremental(tableau, scheme, meter)
    return Commitment(a=tableau.a, t=tableau.t, r=tree.root), tree, tableau
