"""Prover strategies: the absolutely truthful agent and the deviants that
exercise every branch of the dispute protocol.

A strategy does two things: produce a commitment (with metered effort) and
answer arbitration queries.  Every strategy here backs its answers with some
tableau-plus-tree belief -- honest, truncated, or fabricated -- except the
colluder, which answers constants.  String ids select strategies on the CLI:

    tau, lazy:<i>, lazyhalt:<i>, flip, inflate:<d>, collude, apliar:<k>,
    overclaim:<j>
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .arbitration import ProverOracle, Query
from .commitment import (
    Commitment,
    EffortMeter,
    build_tree_incremental,
    commit,
)
from .errors import MRMError
from .machine import (
    MachineSpec,
    Tableau,
    blank_row_data,
    decode_block_output,
    input_row_data,
    run_tableau,
)
from .merkle import (
    HashScheme,
    TableauTree,
    build_row_tree,
    leaf_hash,
    upper_tree_levels,
)


@dataclass
class GameContext:
    """Everything a strategy may consult while preparing its commitment.

    ``truth`` is simulator scaffolding: the honestly computed tableau, used
    for parameter validation and outcome labeling, never billed to a meter.
    """

    spec: MachineSpec
    input: str
    T: int
    S: int
    lam: int
    scheme: HashScheme
    _truth: Optional[Tableau] = field(default=None, repr=False)

    @property
    def truth(self) -> Tableau:
        if self._truth is None:
            self._truth = run_tableau(self.spec, self.input, self.T, self.S, self.lam)
        return self._truth


@dataclass
class AgentState:
    """One agent's committed position for a single game."""

    commitment: Commitment
    tableau: Optional[Tableau]
    tree: Optional[TableauTree]
    meter: EffortMeter

    def oracle(self) -> ProverOracle:
        return _BeliefOracle(self)


class _BeliefOracle(ProverOracle):
    """Answers every query truthfully with respect to the agent's own belief."""

    def __init__(self, state: AgentState):
        self.state = state

    def answer(self, query: Query, history):
        self.state.meter.add_query()
        tab, tree = self.state.tableau, self.state.tree
        if query.kind == "block":
            return tab.block_bytes(query.i, query.j)
        if query.kind == "row_root":
            return tree.row_root(query.i)
        if query.kind == "node_children":
            return tree.children_at(query.address)
        if query.kind == "last_row_blocks":
            return tuple(tab.block_bytes(i, 1) for i in query.rows)
        raise ValueError(f"unknown query kind {query.kind!r}")


class Strategy:
    """Base interface: a commit behavior plus a respond behavior."""

    id: str

    def prepare(self, ctx: GameContext) -> AgentState:
        raise NotImplementedError

    def __repr__(self):
        return f"<strategy {self.id}>"


class Tau(Strategy):
    """Absolutely truthful: commits the real run, answers from the real tree."""

    id = "tau"

    def prepare(self, ctx: GameContext) -> AgentState:
        meter = EffortMeter()
        commitment, tree, tableau = commit(
            ctx.spec, ctx.input, ctx.T, ctx.S, ctx.lam, ctx.scheme, meter
        )
        return AgentState(commitment, tableau, tree, meter)


def _prefix_tableau(ctx: GameContext, rows_computed: int) -> Tableau:
    """Rows 1..i of the honest run, packaged as a tableau claiming t = i."""
    truth = ctx.truth
    rows = truth.row_data[:rows_computed]
    spec = ctx.spec
    return Tableau(
        spec_name=spec.name,
        input=ctx.input,
        T=ctx.T,
        S=ctx.S,
        lam=ctx.lam,
        t=rows_computed,
        a=decode_block_output(spec, rows[-1][: 2 * ctx.lam]),
        row_data=rows,
        head_cols=truth.head_cols[:rows_computed],
        blank_data=blank_row_data(spec, ctx.S),
    )


def _fabricated_halt_row(spec: MachineSpec, source_row: bytes, S: int, lam: int) -> tuple[bytes, str]:
    """A tidy fake final row: the source block's decoded content as output,
    halting head parked on cell 1."""
    output = decode_block_output(spec, source_row[: 2 * lam])
    data = bytearray(blank_row_data(spec, S))
    for k, ch in enumerate(output):
        data[2 * k] = spec.symbol_index(ch)
    halt_state = spec.state_index(spec.halting_states[0])
    data[1] = halt_state + 1
    return bytes(data), output


def _with_replaced_tail(ctx: GameContext, base: Tableau, new_t: int, new_row: bytes,
                        new_a: str, meter: EffortMeter, prefix_rows: int) -> AgentState:
    """Build a belief whose rows 1..prefix_rows are honest, row ``new_t`` is
    ``new_row``, and everything after is blank; hash work is metered."""
    spec = ctx.spec
    lam, B = ctx.lam, ctx.S // ctx.lam

    def blocks(row: bytes):
        return [row[2 * lam * (j - 1) : 2 * lam * j] for j in range(1, B + 1)]

    prefix = _prefix_tableau(ctx, prefix_rows)
    tree_prefix = build_tree_incremental(prefix, ctx.scheme, meter)
    fab_tree = build_row_tree(blocks(new_row), ctx.scheme, meter)
    blank_tree = tree_prefix.row_trees[ctx.T - 1] if prefix_rows < ctx.T else None
    if blank_tree is None or prefix_rows >= ctx.T:
        blank_tree = build_row_tree(blocks(blank_row_data(spec, ctx.S)), ctx.scheme, meter)
    row_trees = list(tree_prefix.row_trees[:prefix_rows]) + [fab_tree]
    row_trees += [blank_tree] * (ctx.T - new_t)
    upper = upper_tree_levels([rt.root for rt in row_trees], ctx.scheme, meter)
    tree = TableauTree(T=ctx.T, B=B, row_trees=tuple(row_trees), upper_levels=upper)
    tableau = Tableau(
        spec_name=spec.name,
        input=ctx.input,
        T=ctx.T,
        S=ctx.S,
        lam=lam,
        t=new_t,
        a=new_a,
        row_data=tuple(list(prefix.row_data[:prefix_rows]) + [new_row]),
        head_cols=tuple(list(prefix.head_cols[:prefix_rows]) + [1]),
        blank_data=blank_row_data(spec, ctx.S),
    )
    commitment = Commitment(a=new_a, t=new_t, r=tree.root)
    return AgentState(commitment, tableau, tree, meter)


class LazyPrefix(Strategy):
    """Computes only rows 1..i, commits row i's content as if it were final."""

    def __init__(self, i: int):
        self.i = i
        self.id = f"lazy:{i}"

    def prepare(self, ctx: GameContext) -> AgentState:
        if not 1 <= self.i < ctx.truth.t:
            raise ValueError(f"lazy prefix i={self.i} must lie in [1, t-1] = [1, {ctx.truth.t - 1}]")
        meter = EffortMeter()
        tableau = _prefix_tableau(ctx, self.i)
        meter.add_step(self.i - 1)
        tree = build_tree_incremental(tableau, ctx.scheme, meter)
        commitment = Commitment(a=tableau.a, t=self.i, r=tree.root)
        return AgentState(commitment, tableau, tree, meter)


class LazyPrefixPlusHalt(Strategy):
    """Computes rows 1..i, then forges a halting row at i+1."""

    def __init__(self, i: int, id_prefix: str = "lazyhalt"):
        self.i = i
        self.id = f"{id_prefix}:{i}"

    def prepare(self, ctx: GameContext) -> AgentState:
        if not 1 <= self.i < ctx.truth.t - 1:
            raise ValueError(
                f"{self.id}: i={self.i} must lie in [1, t-2] = [1, {ctx.truth.t - 2}]"
            )
        meter = EffortMeter()
        meter.add_step(self.i - 1)
        source = ctx.truth.row_data[self.i - 1]
        fab_row, output = _fabricated_halt_row(ctx.spec, source, ctx.S, ctx.lam)
        return _with_replaced_tail(ctx, ctx.truth, self.i + 1, fab_row, output, meter, self.i)


class Overclaim(LazyPrefixPlusHalt):
    """Computes one row past a lazy opponent and forges the halt right after;
    wins the dispute against that opponent at less than honest cost."""

    def __init__(self, j: int):
        super().__init__(j, id_prefix="overclaim")


class FlipAnswer(Strategy):
    """Runs honestly, then rewrites the output row and rebuilds a consistent
    tree over it: internally coherent everywhere except the final transition."""

    id = "flip"

    def prepare(self, ctx: GameContext) -> AgentState:
        meter = EffortMeter()
        _, _, tableau = commit(ctx.spec, ctx.input, ctx.T, ctx.S, ctx.lam, ctx.scheme, meter)
        flipped = _flip_output(ctx.spec, tableau.a)
        data = bytearray(blank_row_data(ctx.spec, ctx.S))
        for k, ch in enumerate(flipped):
            data[2 * k] = ctx.spec.symbol_index(ch)
        head = tableau.row(tableau.t).head()
        state = head[1] if head else ctx.spec.state_index(ctx.spec.halting_states[0])
        data[1] = state + 1
        return _with_replaced_tail(ctx, tableau, tableau.t, bytes(data), flipped, meter, tableau.t - 1)


def _flip_output(spec: MachineSpec, a: str) -> str:
    """A deterministic wrong-but-well-formed output differing from ``a``."""
    for ch in spec.symbols:
        if ch != spec.blank and (not a or ch != a[0]):
            return ch + a[1:] if a else ch
    return a[:-1] if a else spec.symbols[0]


class InflateTime(Strategy):
    """Honest output and tree, but claims the run took ``delta`` rows longer."""

    def __init__(self, delta: int):
        self.delta = delta
        self.id = f"inflate:{delta}"

    def prepare(self, ctx: GameContext) -> AgentState:
        if self.delta < 1:
            raise ValueError("inflate delta must be >= 1")
        if ctx.truth.t + self.delta > ctx.T:
            raise ValueError(f"inflated t would exceed T={ctx.T}")
        meter = EffortMeter()
        commitment, tree, tableau = commit(
            ctx.spec, ctx.input, ctx.T, ctx.S, ctx.lam, ctx.scheme, meter
        )
        fake = Commitment(a=commitment.a, t=commitment.t + self.delta, r=commitment.r)
        return AgentState(fake, tableau, tree, meter)


class ColludeConstant(Strategy):
    """Skips the computation entirely and submits a fixed fabricated triple,
    betting the opponent does the same."""

    id = "collude"

    FIXED_OUTPUT = "1"
    FIXED_T = 1

    def prepare(self, ctx: GameContext) -> AgentState:
        meter = EffortMeter()
        root = leaf_hash(ctx.scheme, b"\x5a" * (2 * ctx.lam), meter)
        commitment = Commitment(a=self.FIXED_OUTPUT, t=self.FIXED_T, r=root)
        state = AgentState(commitment, None, None, meter)
        return state


class _ConstantOracle(ProverOracle):
    def __init__(self, state: AgentState, spec: MachineSpec, S: int, lam: int):
        self.state = state
        self.blank_block = blank_row_data(spec, S)[: 2 * lam]

    def answer(self, query: Query, history):
        self.state.meter.add_query()
        zeros = bytes(32)
        if query.kind == "block":
            return self.blank_block
        if query.kind == "row_root":
            return zeros
        if query.kind == "node_children":
            return (zeros, zeros)
        if query.kind == "last_row_blocks":
            return tuple(self.blank_block for _ in query.rows)
        raise ValueError(f"unknown query kind {query.kind!r}")


class ApLiar(Strategy):
    """Truthful commitment, but the k-th arbitration answer is corrupted."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("apliar k must be >= 1")
        self.k = k
        self.id = f"apliar:{k}"

    def prepare(self, ctx: GameContext) -> AgentState:
        meter = EffortMeter()
        commitment, tree, tableau = commit(
            ctx.spec, ctx.input, ctx.T, ctx.S, ctx.lam, ctx.scheme, meter
        )
        return _ApLiarState(commitment, tableau, tree, meter, self.k)


@dataclass
class _ApLiarState(AgentState):
    k: int = 1

    def oracle(self) -> ProverOracle:
        return _LyingOracle(self, self.k)


class _LyingOracle(_BeliefOracle):
    def __init__(self, state: AgentState, k: int):
        super().__init__(state)
        self.k = k
        self.answered = 0

    def answer(self, query: Query, history):
        payload = super().answer(query, history)
        self.answered += 1
        if self.answered != self.k:
            return payload
        if isinstance(payload, bytes):
            return _corrupt(payload)
        return tuple(_corrupt(p) for p in payload)


def _corrupt(data: bytes) -> bytes:
    return data[:-1] + bytes([data[-1] ^ 0x01])


def make_oracle(strategy: Strategy, state: AgentState, ctx: GameContext) -> ProverOracle:
    """The respond behavior for a prepared state."""
    if isinstance(strategy, ColludeConstant):
        return _ConstantOracle(state, ctx.spec, ctx.S, ctx.lam)
    return state.oracle()


def parse_strategy(spec_str: str) -> Strategy:
    """Parse a CLI strategy id like ``tau`` or ``lazy:3``."""
    name, _, arg = spec_str.partition(":")
    try:
        if name == "tau":
            return Tau()
        if name == "lazy":
            return LazyPrefix(int(arg))
        if name == "lazyhalt":
            return LazyPrefixPlusHalt(int(arg))
        if name == "flip":
            return FlipAnswer()
        if name == "inflate":
            return InflateTime(int(arg))
        if name == "collude":
            return ColludeConstant()
        if name == "apliar":
            return ApLiar(int(arg))
        if name == "overclaim":
            return Overclaim(int(arg))
    except ValueError as exc:
        raise MRMError(f"bad strategy parameter in {spec_str!r}: {exc}") from None
    raise MRMError(f"unknown strategy {spec_str!r}")


def default_library(truth_t: int) -> list[Strategy]:
    """The eight-strategy family used by the payoff matrix and the checks.

    Parameter choices scale with the fixture: the lazy prefix stops halfway,
    the overclaimer computes one row past it.
    """
    i = max(1, min(truth_t - 3, truth_t // 2))
    return [
        Tau(),
        LazyPrefix(i),
        LazyPrefixPlusHalt(i),
        FlipAnswer(),
        InflateTime(2),
        ColludeConstant(),
        ApLiar(1),
        Overclaim(i + 1),
    ]


def best_response_check(opponent: Strategy, candidates: list[Strategy], spec, input_str,
                        T, S, lam, params, trials: int = 10, seed: int = 0):
    """Mean utility of each candidate against a fixed opponent; returns the
    maximizing candidate ids and the full table."""
    from .mechanism import run_game  # local import to avoid a module cycle

    table = {}
    for cand in candidates:
        total = 0.0
        for trial in range(trials):
            result = run_game(
                spec, input_str, T, S, lam, cand, opponent, params,
                seed=hash((seed, cand.id, trial)) & 0x7FFFFFFF,
            )
            total += result.agents["A"]["utility"]
        table[cand.id] = total / trials
    best = max(table.values())
    return [sid for sid, u in table.items() if u == best], table
