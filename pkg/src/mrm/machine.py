"""Deterministic single-tape Turing machines and their execution tableaus.

A tableau is the T x S trace of a run: row i is the whole tape after i - 1
steps, with the head annotated on the cell it occupies.  Rows are encoded as
bytes, two per cell: the symbol index followed by a state byte (0 means no
head, k + 1 means state k).  Rows split into blocks of ``lam`` cells; blocks
are the unit the Merkle layer hashes and the arbitration verifier inspects.

Machines are loaded from a small text format (see ``parse_program``).  Every
program shipped here ends tidily: the final transition leaves the tape blank
except for the output string at the left edge, with the halting head inside
the first block.  ``run_tableau`` enforces that convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import NamedTuple, Optional, Sequence

from .errors import (
    HeadOutOfBounds,
    InputTooLong,
    MachineFormatError,
    MalformedBlock,
    MalformedRow,
    MultipleHeads,
    NoHead,
    OutputTooLarge,
    SpaceExceeded,
    TimeExceeded,
)

MOVES = ("L", "R", "S")

MAX_SYMBOLS = 255
MAX_STATES = 254  # state byte 0 is reserved for "no head here"


class Halted:
    """Sentinel returned by :func:`step` for rows already in a halting state."""

    def __repr__(self):
        return "Halted"


HALTED = Halted()


class Cell(NamedTuple):
    """One tape cell: symbol index plus the head's state index, if present."""

    symbol: int
    head_state: Optional[int]


@dataclass(frozen=True)
class MachineSpec:
    """A deterministic single-tape Turing machine.

    ``transition`` maps ``(state index, symbol index)`` to
    ``(new state, written symbol, move)`` and must be total over non-halting
    states and defined for no halting state.
    """

    name: str
    symbols: tuple[str, ...]
    blank: str
    states: tuple[str, ...]
    start_state: str
    halting_states: tuple[str, ...]
    transition: dict[tuple[int, int], tuple[int, int, str]]

    def __post_init__(self):
        if len(self.symbols) > MAX_SYMBOLS:
            raise MachineFormatError(f"{len(self.symbols)} symbols exceed the {MAX_SYMBOLS} limit")
        if len(self.states) > MAX_STATES:
            raise MachineFormatError(f"{len(self.states)} states exceed the {MAX_STATES} limit")
        if len(set(self.symbols)) != len(self.symbols):
            raise MachineFormatError("duplicate symbols in alphabet")
        if self.blank not in self.symbols:
            raise MachineFormatError(f"blank symbol {self.blank!r} not in alphabet")
        if self.start_state not in self.states:
            raise MachineFormatError(f"start state {self.start_state!r} unknown")
        if not self.halting_states:
            raise MachineFormatError("at least one halting state is required")
        for h in self.halting_states:
            if h not in self.states:
                raise MachineFormatError(f"halting state {h!r} unknown")
        halting = {self.state_index(h) for h in self.halting_states}
        for (q, s), (q2, s2, move) in self.transition.items():
            if q in halting:
                raise MachineFormatError(f"transition defined for halting state {self.states[q]!r}")
            if move not in MOVES:
                raise MachineFormatError(f"bad move {move!r}")
            if not (0 <= s < len(self.symbols) and 0 <= s2 < len(self.symbols)):
                raise MachineFormatError("transition references an unknown symbol")
            if not (0 <= q2 < len(self.states)):
                raise MachineFormatError("transition references an unknown state")
        for q in range(len(self.states)):
            if q in halting:
                continue
            for s in range(len(self.symbols)):
                if (q, s) not in self.transition:
                    raise MachineFormatError(
                        f"transition missing for state {self.states[q]!r}, "
                        f"symbol {self.symbols[s]!r}"
                    )

    def symbol_index(self, ch: str) -> int:
        try:
            return self.symbols.index(ch)
        except ValueError:
            raise MachineFormatError(f"symbol {ch!r} not in alphabet") from None

    def state_index(self, name: str) -> int:
        try:
            return self.states.index(name)
        except ValueError:
            raise MachineFormatError(f"state {name!r} unknown") from None

    @property
    def blank_index(self) -> int:
        return self.symbols.index(self.blank)

    @property
    def halting_indices(self) -> frozenset[int]:
        return frozenset(self.states.index(h) for h in self.halting_states)

    def is_halting(self, state_idx: int) -> bool:
        return state_idx in self.halting_indices


@dataclass(frozen=True)
class Row:
    """Row ``index`` (1-based) of a tableau, encoded as 2*S bytes."""

    index: int
    data: bytes

    @property
    def width(self) -> int:
        return len(self.data) // 2

    def cell(self, col: int) -> Cell:
        sym = self.data[2 * (col - 1)]
        st = self.data[2 * (col - 1) + 1]
        return Cell(sym, st - 1 if st else None)

    def cells(self) -> list[Cell]:
        return [self.cell(c) for c in range(1, self.width + 1)]

    def head(self) -> Optional[tuple[int, int]]:
        """Return (column, state index) of the head, or None for blank rows."""
        for col in range(1, self.width + 1):
            st = self.data[2 * col - 1]
            if st:
                return col, st - 1
        return None


@dataclass(frozen=True)
class Block:
    """Block ``j`` (1-based) of row ``i``: exactly ``lam`` cells, 2*lam bytes."""

    i: int
    j: int
    data: bytes

    def cells(self) -> list[Cell]:
        out = []
        for k in range(0, len(self.data), 2):
            st = self.data[k + 1]
            out.append(Cell(self.data[k], st - 1 if st else None))
        return out

    @staticmethod
    def from_cells(i: int, j: int, cells: Sequence[Cell]) -> "Block":
        data = bytearray()
        for c in cells:
            data.append(c.symbol)
            data.append(0 if c.head_state is None else c.head_state + 1)
        return Block(i, j, bytes(data))


@dataclass(frozen=True)
class Tableau:
    """The full T x S execution trace of one run.

    Only the t non-blank rows are materialized; rows t+1..T share one blank
    row.  ``head_cols[i-1]`` is the head's column in row i.
    """

    spec_name: str
    input: str
    T: int
    S: int
    lam: int
    t: int
    a: str
    row_data: tuple[bytes, ...]
    head_cols: tuple[int, ...]
    blank_data: bytes = field(repr=False, default=b"")

    @property
    def num_blocks(self) -> int:
        return self.S // self.lam

    def row_bytes(self, i: int) -> bytes:
        if not 1 <= i <= self.T:
            raise IndexError(f"row {i} outside [1, {self.T}]")
        return self.row_data[i - 1] if i <= self.t else self.blank_data

    def row(self, i: int) -> Row:
        return Row(i, self.row_bytes(i))

    def block_bytes(self, i: int, j: int) -> bytes:
        if not 1 <= j <= self.num_blocks:
            raise IndexError(f"block {j} outside [1, {self.num_blocks}]")
        row = self.row_bytes(i)
        return row[2 * self.lam * (j - 1) : 2 * self.lam * j]


def blank_row_data(spec: MachineSpec, S: int) -> bytes:
    return bytes([spec.blank_index, 0]) * S


def input_row_data(spec: MachineSpec, input_str: str, S: int) -> bytes:
    """Canonical first row: input left-justified, head on cell 1 in the start state."""
    data = bytearray(blank_row_data(spec, S))
    for k, ch in enumerate(input_str):
        data[2 * k] = spec.symbol_index(ch)
    data[1] = spec.state_index(spec.start_state) + 1
    return bytes(data)


def step(spec: MachineSpec, row: Row) -> Row | Halted:
    """Apply one transition to ``row`` and return the successor row.

    Returns ``HALTED`` when the row's head is already in a halting state.
    Raises ``MalformedRow`` if the head count is not exactly one and
    ``HeadOutOfBounds`` if the move would leave columns [1, S].
    """
    S = row.width
    heads = [(c, row.data[2 * c - 1] - 1) for c in range(1, S + 1) if row.data[2 * c - 1]]
    if len(heads) != 1:
        raise MalformedRow(f"row {row.index} has {len(heads)} heads")
    col, state = heads[0]
    if spec.is_halting(state):
        return HALTED
    sym = row.data[2 * (col - 1)]
    new_state, new_sym, move = spec.transition[(state, sym)]
    new_col = col + {"L": -1, "R": 1, "S": 0}[move]
    if not 1 <= new_col <= S:
        raise HeadOutOfBounds(f"move {move} from column {col} leaves [1, {S}]")
    data = bytearray(row.data)
    data[2 * (col - 1)] = new_sym
    data[2 * col - 1] = 0
    data[2 * new_col - 1] = new_state + 1
    return Row(row.index + 1, bytes(data))


def _validate_shape(T: int, S: int, lam: int):
    if T < 1 or T & (T - 1):
        raise MachineFormatError(f"T={T} is not a power of two")
    if S % lam:
        raise MachineFormatError(f"S={S} is not divisible by lambda={lam}")
    B = S // lam
    if B < 1 or B & (B - 1):
        raise MachineFormatError(f"S/lambda={B} is not a power of two")


def run_tableau(spec: MachineSpec, input_str: str, T: int, S: int, lam: int) -> Tableau:
    """Run the machine to completion and materialize its tableau.

    The machine must halt within T - 1 steps using at most S cells, and its
    halting configuration must be tidy: every cell outside block 1 blank and
    headless, the halting head inside block 1.  The output ``a`` is the
    content of block 1 up to its last non-blank cell.
    """
    _validate_shape(T, S, lam)
    if len(input_str) > lam - 1:
        raise InputTooLong(f"input length {len(input_str)} exceeds lambda - 1 = {lam - 1}")
    rows = [input_row_data(spec, input_str, S)]
    head_cols = [1]
    col, state = 1, spec.state_index(spec.start_state)
    data = bytearray(rows[0])
    while not spec.is_halting(state):
        if len(rows) >= T:
            raise TimeExceeded(f"no halt within T - 1 = {T - 1} steps")
        sym = data[2 * (col - 1)]
        new_state, new_sym, move = spec.transition[(state, sym)]
        new_col = col + {"L": -1, "R": 1, "S": 0}[move]
        if new_col < 1:
            raise HeadOutOfBounds(f"move left of column 1 at step {len(rows)}")
        if new_col > S:
            raise SpaceExceeded(f"machine needs more than S = {S} cells")
        data[2 * (col - 1)] = new_sym
        data[2 * col - 1] = 0
        data[2 * new_col - 1] = new_state + 1
        rows.append(bytes(data))
        head_cols.append(new_col)
        col, state = new_col, new_state
    t = len(rows)
    blank = blank_row_data(spec, S)
    a = _extract_output(spec, rows[-1], S, lam)
    return Tableau(
        spec_name=spec.name,
        input=input_str,
        T=T,
        S=S,
        lam=lam,
        t=t,
        a=a,
        row_data=tuple(rows),
        head_cols=tuple(head_cols),
        blank_data=blank,
    )


def _extract_output(spec: MachineSpec, last_row: bytes, S: int, lam: int) -> str:
    blank_cell = bytes([spec.blank_index, 0])
    for col in range(lam + 1, S + 1):
        if last_row[2 * (col - 1) : 2 * col] != blank_cell:
            raise OutputTooLarge(f"halting row is non-blank at column {col}, outside block 1")
    return decode_block_output(spec, last_row[: 2 * lam])


def decode_block_output(spec: MachineSpec, block_data: bytes) -> str:
    """Decode a block's symbols up to the last non-blank cell."""
    if len(block_data) % 2:
        raise MalformedBlock(f"odd block length {len(block_data)}")
    syms = block_data[0::2]
    last = 0
    for k, s in enumerate(syms, start=1):
        if s != spec.blank_index:
            last = k
    out = []
    for s in syms[:last]:
        if s >= len(spec.symbols):
            raise MalformedBlock(f"symbol byte {s} outside the alphabet")
        out.append(spec.symbols[s])
    return "".join(out)


def blocks_of_row(row: Row, lam: int) -> list[Block]:
    if row.width % lam:
        raise MalformedBlock(f"row width {row.width} not divisible by lambda={lam}")
    return [
        Block(row.index, j + 1, row.data[2 * lam * j : 2 * lam * (j + 1)])
        for j in range(row.width // lam)
    ]


def active_block_window(row: Row, lam: int) -> tuple[int, bool]:
    """Return the head's block index and whether it sits on a block boundary."""
    head = row.head()
    if head is None:
        raise NoHead(f"row {row.index} is blank")
    col = head[0]
    j = (col - 1) // lam + 1
    offset = (col - 1) % lam
    return j, offset == 0 or offset == lam - 1


def local_transition(
    spec: MachineSpec,
    prev_blocks: tuple[Optional[bytes], bytes, Optional[bytes]],
    j: int,
    S: int,
    lam: int,
) -> bytes:
    """Compute block j of the successor row from blocks j-1, j, j+1 of its
    predecessor (absent neighbors are treated as blank).

    Mirrors the tableau construction exactly: a window with no head cannot
    touch block j, so block j is returned unchanged; a halting head anywhere
    in the window means the successor row is blank.
    """
    B = S // lam
    if not 1 <= j <= B:
        raise MalformedBlock(f"block index {j} outside [1, {B}]")
    blank_block = bytes([spec.blank_index, 0]) * lam
    window = []
    for off, blk in zip((-1, 0, 1), prev_blocks):
        if blk is None:
            blk = blank_block
        if len(blk) != 2 * lam:
            raise MalformedBlock(f"window block has {len(blk)} bytes, expected {2 * lam}")
        window.append((j + off, blk))
    heads = []
    for bj, blk in window:
        for k in range(lam):
            st = blk[2 * k + 1]
            if st:
                heads.append(((bj - 1) * lam + k + 1, st - 1, bj))
    if len(heads) > 1:
        raise MultipleHeads(f"{len(heads)} heads in the window around block {j}")
    base = dict(window)[j]
    if not heads:
        return base
    col, state, head_bj = heads[0]
    if state >= len(spec.states):
        raise MalformedBlock(f"state byte {state + 1} outside the state set")
    if spec.is_halting(state):
        return blank_block
    sym_off = (col - 1) - (head_bj - 1) * lam
    sym = dict(window)[head_bj][2 * sym_off]
    if sym >= len(spec.symbols):
        raise MalformedBlock(f"symbol byte {sym} outside the alphabet")
    new_state, new_sym, move = spec.transition[(state, sym)]
    new_col = col + {"L": -1, "R": 1, "S": 0}[move]
    if not 1 <= new_col <= S:
        raise HeadOutOfBounds(f"move {move} from column {col} leaves [1, {S}]")
    out = bytearray(base)
    lo = (j - 1) * lam + 1
    hi = j * lam
    if lo <= col <= hi:
        k = col - lo
        out[2 * k] = new_sym
        out[2 * k + 1] = 0
    if lo <= new_col <= hi:
        k = new_col - lo
        out[2 * k + 1] = new_state + 1
    return bytes(out)


def parse_program(text: str, name: str = "machine") -> MachineSpec:
    """Parse the machine-program text format.

    Header lines ``alphabet:``, ``blank:``, ``start:``, ``halt:`` are followed
    by transition lines ``<state> <symbol> -> <state> <symbol> <L|R|S>``.
    Blank lines and ``#`` comments are ignored.  Pairs not listed default to a
    stay-in-place self-loop, which keeps the transition map total; programs
    are expected never to reach those pairs.
    """
    headers: dict[str, str] = {}
    rules: list[tuple[int, str, str, str, str, str]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" in line:
            lhs, _, rhs = line.partition("->")
            left = lhs.split()
            right = rhs.split()
            if len(left) != 2 or len(right) != 3:
                raise MachineFormatError("expected '<state> <symbol> -> <state> <symbol> <L|R|S>'", line_no)
            rules.append((line_no, left[0], left[1], right[0], right[1], right[2]))
        elif ":" in line:
            key, _, value = line.partition(":")
            headers[key.strip()] = value.strip()
        else:
            raise MachineFormatError(f"unrecognized line {raw.strip()!r}", line_no)
    for key in ("alphabet", "blank", "start", "halt"):
        if key not in headers:
            raise MachineFormatError(f"missing header {key!r}")
    symbols = tuple(headers["alphabet"].replace(" ", ""))
    if not symbols:
        raise MachineFormatError("empty alphabet")
    blank = headers["blank"]
    if len(blank) != 1:
        raise MachineFormatError(f"blank must be one symbol, got {blank!r}")
    halting = tuple(headers["halt"].split())
    if not halting:
        raise MachineFormatError("empty halt list")
    state_names: list[str] = [headers["start"]]

    def intern_state(s):
        if s not in state_names:
            state_names.append(s)
        return s

    for h in halting:
        intern_state(h)
    for line_no, q, s, q2, s2, move in rules:
        intern_state(q)
        intern_state(q2)
    states = tuple(state_names)
    sym_index = {ch: k for k, ch in enumerate(symbols)}
    st_index = {st: k for k, st in enumerate(states)}
    transition: dict[tuple[int, int], tuple[int, int, str]] = {}
    for line_no, q, s, q2, s2, move in rules:
        if s not in sym_index or s2 not in sym_index:
            raise MachineFormatError(f"symbol {s!r} or {s2!r} not in alphabet", line_no)
        if move not in MOVES:
            raise MachineFormatError(f"bad move {move!r}", line_no)
        if q in halting:
            raise MachineFormatError(f"halting state {q!r} cannot have transitions", line_no)
        key = (st_index[q], sym_index[s])
        if key in transition:
            raise MachineFormatError(f"duplicate rule for ({q!r}, {s!r})", line_no)
        transition[key] = (st_index[q2], sym_index[s2], move)
    halt_idx = {st_index[h] for h in halting}
    for q in range(len(states)):
        if q in halt_idx:
            continue
        for s in range(len(symbols)):
            transition.setdefault((q, s), (q, s, "S"))
    return MachineSpec(
        name=name,
        symbols=symbols,
        blank=blank,
        states=states,
        start_state=headers["start"],
        halting_states=halting,
        transition=transition,
    )


def load_program(path) -> MachineSpec:
    from pathlib import Path

    p = Path(path)
    return parse_program(p.read_text(), name=p.stem)


FIXTURES = ("unary-increment", "binary-add", "palindrome-check")


def load_fixture(name: str) -> MachineSpec:
    """Load one of the shipped machine programs by name."""
    if name not in FIXTURES:
        raise MachineFormatError(f"unknown fixture {name!r}; available: {', '.join(FIXTURES)}")
    text = resources.files("mrm.programs").joinpath(f"{name}.tm").read_text()
    return parse_program(text, name=name)
