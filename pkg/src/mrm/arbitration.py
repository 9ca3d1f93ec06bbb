"""Verifier-side dispute resolution between two committed provers.

Invoked only when the two report triples differ.  The verifier never recomputes
the run; it interrogates both agents through typed queries, checks hash
relations and one local transition, and flags each agent winner or loser.
Every exchange lands in an append-only transcript, so a dispute is replayable
byte for byte.

Shared-root disputes are settled by halting-state checks on the claimed last
rows plus one path-consistency check; divergent roots are bisected with
``first_divergence`` down to the first block the agents disagree on, which is
then judged either against the canonical input row or by recomputing it from
the agreed predecessor window.  Work is O(log S + log T) hash evaluations
plus O(lambda) block inspection.

Two deliberate strengthenings of the dispute rules: claimed last-row blocks
are verified against the provider's own root before their content is trusted,
and a claimed-t block must both contain a halting state and decode to the
agent's committed output string.  Malformed, oversized, or missing responses
forfeit immediately.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .errors import MalformedBlock, MRMError, ProtocolViolation
from .machine import MachineSpec, decode_block_output, input_row_data, local_transition
from .merkle import (
    DIGEST_BYTES,
    HashScheme,
    PathBundle,
    address_of,
    block_address,
    check_consistent_path,
    coords_of,
    leaf_hash,
    node_hash,
    row_address,
)

AGENTS = ("A", "B")


@dataclass(frozen=True)
class Query:
    """One verifier request; exactly one payload field family is used per kind."""

    kind: str  # "block" | "row_root" | "node_children" | "last_row_blocks"
    i: Optional[int] = None
    j: Optional[int] = None
    address: Optional[str] = None
    rows: Optional[tuple[int, ...]] = None

    def to_json(self) -> dict:
        obj = {"kind": self.kind}
        if self.i is not None:
            obj["i"] = self.i
        if self.j is not None:
            obj["j"] = self.j
        if self.address is not None:
            obj["address"] = self.address
        if self.rows is not None:
            obj["rows"] = list(self.rows)
        return obj


@dataclass
class TranscriptRecord:
    seq: int
    query: Query
    responses: dict  # agent -> normalized payload, or None if not asked

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "query": self.query.to_json(),
            "a_response": _payload_json(self.query.kind, self.responses.get("A")),
            "b_response": _payload_json(self.query.kind, self.responses.get("B")),
        }


def _payload_json(kind: str, payload):
    if payload is None:
        return None
    if kind == "block":
        return {"block": payload.hex()}
    if kind == "row_root":
        return {"digest": payload.hex()}
    if kind == "node_children":
        return {"left": payload[0].hex(), "right": payload[1].hex()}
    if kind == "last_row_blocks":
        return {"blocks": [b.hex() for b in payload]}
    raise ValueError(f"unknown query kind {kind!r}")


@dataclass
class Transcript:
    """Ordered query/response log of one arbitration."""

    records: list[TranscriptRecord] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    response_bytes: int = 0
    verifier_hash_calls: int = 0

    @property
    def query_count(self) -> int:
        return len(self.records)

    def to_json(self) -> dict:
        return {
            "records": [r.to_json() for r in self.records],
            "notes": list(self.notes),
            "counters": {
                "queries": self.query_count,
                "response_bytes": self.response_bytes,
                "verifier_hash_calls": self.verifier_hash_calls,
            },
        }


@dataclass(frozen=True)
class Verdict:
    winner_a: bool
    winner_b: bool

    def winner(self, agent: str) -> bool:
        return self.winner_a if agent == "A" else self.winner_b

    def to_json(self) -> dict:
        return {"winner_a": self.winner_a, "winner_b": self.winner_b}


class ProverOracle:
    """Answer interface a strategy exposes during arbitration.

    ``answer`` receives the query plus the history of all earlier queries and
    returns the payload for that query kind.  Oracles never see the other
    agent's responses.
    """

    def answer(self, query: Query, history: tuple[Query, ...]):
        raise NotImplementedError


class _Forfeit(Exception):
    def __init__(self, agents: set[str], reason: str):
        super().__init__(reason)
        self.agents = agents
        self.reason = reason


@dataclass(frozen=True)
class FirstDivergenceResult:
    liars: frozenset[str] = frozenset()
    i: Optional[int] = None
    j: Optional[int] = None
    blocks: Optional[dict] = None  # agent -> 2*lam block bytes


class _Arbiter:
    """Bundles the per-dispute context: dimensions, oracles, transcript, meter."""

    def __init__(self, oracles, scheme, spec, input_str, T, S, lam, meter=None):
        self.oracles = oracles
        self.scheme = scheme
        self.spec = spec
        self.input = input_str
        self.T = T
        self.S = S
        self.lam = lam
        self.B = S // lam
        self.row_depth = (T - 1).bit_length()
        self.block_depth = (self.B - 1).bit_length()
        self.meter = meter
        self.transcript = Transcript()

    # -- query plumbing -----------------------------------------------------

    def ask(self, query: Query, agents=AGENTS) -> dict:
        history = tuple(r.query for r in self.transcript.records)
        responses = {}
        for agent in AGENTS:
            if agent not in agents:
                responses[agent] = None
                continue
            try:
                raw = self.oracles[agent].answer(query, history)
            except Exception as exc:  # unresponsive or crashing prover forfeits
                self._record(query, responses)
                raise _Forfeit({agent}, f"agent {agent} unresponsive on {query.kind}: {exc}")
            try:
                responses[agent] = self._normalize(query, raw)
            except ProtocolViolation as exc:
                self._record(query, responses)
                raise _Forfeit({agent}, str(exc))
        self._record(query, responses)
        return responses

    def _record(self, query, responses):
        rec = TranscriptRecord(seq=len(self.transcript.records), query=query, responses=dict(responses))
        self.transcript.records.append(rec)
        for payload in responses.values():
            self.transcript.response_bytes += _payload_size(payload)

    def _normalize(self, query: Query, raw):
        kind = query.kind
        if kind == "block":
            return self._as_block(raw)
        if kind == "row_root":
            return self._as_digest(raw)
        if kind == "node_children":
            if not isinstance(raw, (tuple, list)) or len(raw) != 2:
                raise ProtocolViolation("?", f"node_children payload is not a pair")
            return (self._as_digest(raw[0]), self._as_digest(raw[1]))
        if kind == "last_row_blocks":
            if not isinstance(raw, (tuple, list)) or len(raw) != len(query.rows):
                raise ProtocolViolation("?", "last_row_blocks payload has the wrong arity")
            return tuple(self._as_block(b) for b in raw)
        raise ValueError(f"unknown query kind {kind!r}")

    def _as_block(self, raw) -> bytes:
        if not isinstance(raw, (bytes, bytearray)) or len(raw) != 2 * self.lam:
            raise ProtocolViolation("?", f"block payload is not {2 * self.lam} bytes")
        return bytes(raw)

    def _as_digest(self, raw) -> bytes:
        if not isinstance(raw, (bytes, bytearray)) or len(raw) != DIGEST_BYTES:
            raise ProtocolViolation("?", f"digest payload is not {DIGEST_BYTES} bytes")
        return bytes(raw)

    # -- hashing helpers ----------------------------------------------------

    def _leaf_hash(self, data: bytes) -> bytes:
        self.transcript.verifier_hash_calls += 1
        return leaf_hash(self.scheme, data, self.meter)

    def _node_hash(self, left: bytes, right: bytes) -> bytes:
        self.transcript.verifier_hash_calls += 1
        return node_hash(self.scheme, left, right, self.meter)

    def _check_path(self, bundle: PathBundle, u: str, v: str) -> bool:
        before = 0 if self.meter is None else self.meter.hash_calls
        ok = check_consistent_path(self.scheme, bundle, u, v, self.meter)
        if self.meter is not None:
            self.transcript.verifier_hash_calls += self.meter.hash_calls - before
        else:
            self.transcript.verifier_hash_calls += len(v) - len(u) + 1
        return ok

    # -- queried path consistency --------------------------------------------

    def queried_path_check(self, u: str, top_values: dict, v: str, agents=AGENTS,
                           known_blocks: Optional[dict] = None) -> dict:
        """Check per-agent consistency of the u -> v path using fresh queries.

        ``top_values[agent]`` anchors the top of the path (a committed root or
        an already-answered digest).  Digest children come from node_children
        queries; the terminal block comes from ``known_blocks`` or a block
        query.  Returns agent -> bool.
        """
        digest_depth = self.row_depth + self.block_depth
        bundles = {agent: PathBundle({u: top_values[agent]}, {}) for agent in agents}
        for d in range(len(u), len(v) + 1):
            w = v[:d]
            if len(w) < digest_depth:
                resp = self.ask(Query(kind="node_children", address=w), agents)
                for agent in agents:
                    left, right = resp[agent]
                    bundles[agent].nodes[w + "0"] = left
                    bundles[agent].nodes[w + "1"] = right
            elif len(w) == digest_depth:
                i, j = coords_of(w, self.T, self.B)
                if known_blocks is not None:
                    for agent in agents:
                        bundles[agent].blocks[w + "0"] = known_blocks[agent]
                else:
                    resp = self.ask(Query(kind="block", i=i, j=j), agents)
                    for agent in agents:
                        bundles[agent].blocks[w + "0"] = resp[agent]
        return {agent: self._check_path(bundles[agent], u, v) for agent in agents}

    def anchored_path_check(self, u: str, top_values: dict, v: str, v_values: dict,
                            agents=AGENTS) -> dict:
        """Like queried_path_check, but additionally requires the derived value
        at v to equal the agent's separately answered ``v_values[agent]``."""
        digest_depth = self.row_depth + self.block_depth
        bundles = {agent: PathBundle({u: top_values[agent]}, {}) for agent in agents}
        for d in range(len(u), len(v)):
            w = v[:d]
            resp = self.ask(Query(kind="node_children", address=w), agents)
            for agent in agents:
                left, right = resp[agent]
                bundles[agent].nodes[w + "0"] = left
                bundles[agent].nodes[w + "1"] = right
        # v's own children, so the path check covers v's hash relation too
        if len(v) < digest_depth:
            resp = self.ask(Query(kind="node_children", address=v), agents)
            for agent in agents:
                left, right = resp[agent]
                bundles[agent].nodes[v + "0"] = left
                bundles[agent].nodes[v + "1"] = right
        else:
            i, j = coords_of(v, self.T, self.B)
            resp = self.ask(Query(kind="block", i=i, j=j), agents)
            for agent in agents:
                bundles[agent].blocks[v + "0"] = resp[agent]
        out = {}
        for agent in agents:
            derived = bundles[agent].nodes.get(v)
            ok = derived == v_values[agent] and self._check_path(bundles[agent], u, v)
            out[agent] = ok
        return out


def check_halting_block(spec: MachineSpec, block_bytes: bytes) -> bool:
    """True iff some cell of the block carries a halting head state."""
    if len(block_bytes) % 2:
        raise MalformedBlock(f"odd block length {len(block_bytes)}")
    halting = spec.halting_indices
    for k in range(1, len(block_bytes), 2):
        st = block_bytes[k]
        if st and (st - 1) in halting:
            return True
    return False


def verify_input_block(spec: MachineSpec, input_str: str, j: int, block_bytes: bytes,
                       S: int, lam: int) -> bool:
    """True iff the block equals block j of the canonical first row."""
    if not 1 <= j <= S // lam:
        raise MalformedBlock(f"block index {j} outside [1, {S // lam}]")
    canonical = input_row_data(spec, input_str, S)
    return block_bytes == canonical[2 * lam * (j - 1) : 2 * lam * j]


def first_divergence(arb: _Arbiter, top_a: bytes, top_b: bytes, start: str = "") -> FirstDivergenceResult:
    """Bisect from ``start`` down to the first block the agents disagree on.

    At every level both agents' hash relations are checked; any failure flags
    the offender(s) as liars and stops the descent.  At the leaf the two
    block values are requested and checked against the leaf digests.
    """
    digest_depth = arb.row_depth + arb.block_depth
    address = start
    values = {"A": top_a, "B": top_b}
    while len(address) < digest_depth:
        resp = arb.ask(Query(kind="node_children", address=address))
        liars = set()
        for agent in AGENTS:
            left, right = resp[agent]
            if arb._node_hash(left, right) != values[agent]:
                liars.add(agent)
        if liars:
            return FirstDivergenceResult(liars=frozenset(liars))
        (la, ra), (lb, rb) = resp["A"], resp["B"]
        if la != lb:
            address += "0"
            values = {"A": la, "B": lb}
        elif ra != rb:
            address += "1"
            values = {"A": ra, "B": rb}
        else:
            # consistent hashes with identical children cannot produce
            # differing parents without a hash collision
            arb.transcript.notes.append(f"no divergent child under {address!r}")
            return FirstDivergenceResult(liars=frozenset(AGENTS))
    i, j = coords_of(address, arb.T, arb.B)
    resp = arb.ask(Query(kind="block", i=i, j=j))
    liars = set()
    for agent in AGENTS:
        if arb._leaf_hash(resp[agent]) != values[agent]:
            liars.add(agent)
    if liars:
        return FirstDivergenceResult(liars=frozenset(liars))
    return FirstDivergenceResult(i=i, j=j, blocks={"A": resp["A"], "B": resp["B"]})


def arbitrate(
    commit_a,
    commit_b,
    oracle_a: ProverOracle,
    oracle_b: ProverOracle,
    scheme: HashScheme,
    spec: MachineSpec,
    input_str: str,
    T: int,
    S: int,
    lam: int,
    meter=None,
) -> tuple[Verdict, Transcript]:
    """Resolve a disagreement between two commitments.

    Precondition: the commitments differ (equal reports are paid without
    arbitration).  Returns the winner flags and the full transcript.
    """
    if (commit_a.a, commit_a.t, commit_a.r) == (commit_b.a, commit_b.t, commit_b.r):
        raise ValueError("arbitration requires differing commitments")
    arb = _Arbiter({"A": oracle_a, "B": oracle_b}, scheme, spec, input_str, T, S, lam, meter)
    bad = set()
    for agent, c in (("A", commit_a), ("B", commit_b)):
        if not (1 <= c.t <= T) or len(c.a) > lam or len(c.r) != DIGEST_BYTES:
            bad.add(agent)
            arb.transcript.notes.append(f"agent {agent}: malformed commitment")
    if bad:
        return Verdict("A" not in bad, "B" not in bad), arb.transcript
    try:
        if commit_a.r == commit_b.r:
            verdict = _shared_root(arb, commit_a, commit_b)
        else:
            verdict = _divergent_roots(arb, commit_a, commit_b)
    except _Forfeit as f:
        arb.transcript.notes.append(f"forfeit: {f.reason}")
        verdict = Verdict("A" not in f.agents, "B" not in f.agents)
    return verdict, arb.transcript


def _shared_root(arb: _Arbiter, commit_a, commit_b) -> Verdict:
    commits = {"A": commit_a, "B": commit_b}
    root = commit_a.r
    losers = set()
    if commit_a.t != commit_b.t:
        hi, lo = ("A", "B") if commit_a.t > commit_b.t else ("B", "A")
        t_hi, t_lo = commits[hi].t, commits[lo].t
        hi_resp = arb.ask(Query(kind="last_row_blocks", rows=(t_lo, t_hi)), (hi,))[hi]
        lo_resp = arb.ask(Query(kind="last_row_blocks", rows=(t_lo,)), (lo,))[lo]
        hi_low_block, hi_high_block = hi_resp
        lo_block = lo_resp[0]
        # the provided blocks must be provable against the shared root before
        # their content is believed
        ok = arb.queried_path_check(
            "", {hi: root, lo: root}, block_address(t_lo, 1, arb.T, arb.B),
            known_blocks={hi: hi_low_block, lo: lo_block},
        )
        losers |= {agent for agent, good in ok.items() if not good}
        ok_hi = arb.queried_path_check(
            "", {hi: root}, block_address(t_hi, 1, arb.T, arb.B),
            agents=(hi,), known_blocks={hi: hi_high_block},
        )
        if not ok_hi[hi]:
            losers.add(hi)
        if losers:
            return Verdict("A" not in losers, "B" not in losers)
        if not check_halting_block(arb.spec, lo_block):
            return _winner_only(hi)
        if check_halting_block(arb.spec, hi_low_block) or not check_halting_block(arb.spec, hi_high_block):
            return _winner_only(lo)
        losers |= _binding_failures(arb, {hi: hi_high_block, lo: lo_block}, commits)
        if losers:
            return Verdict("A" not in losers, "B" not in losers)
        t = t_lo
        blocks_t = {hi: hi_low_block, lo: lo_block}
    else:
        t = commit_a.t
        blocks_t = dict(arb.ask(Query(kind="block", i=t, j=1)))
        losers |= _binding_failures(arb, blocks_t, commits)
        if losers:
            return Verdict("A" not in losers, "B" not in losers)
    roots_t = arb.ask(Query(kind="row_root", i=t))
    if roots_t["A"] == roots_t["B"]:
        ok = arb.queried_path_check(
            row_address(t, arb.T), roots_t, block_address(t, 1, arb.T, arb.B),
            known_blocks=blocks_t,
        )
    else:
        ok = arb.anchored_path_check("", {"A": root, "B": root}, row_address(t, arb.T), roots_t)
    return Verdict(ok["A"], ok["B"])


def _binding_failures(arb: _Arbiter, claimed_blocks: dict, commits: dict) -> set:
    """An agent's claimed-t block must contain a halting state and decode to
    the committed output string; anything else contradicts their own report."""
    losers = set()
    for agent, block in claimed_blocks.items():
        try:
            bound = check_halting_block(arb.spec, block) and \
                decode_block_output(arb.spec, block) == commits[agent].a
        except MalformedBlock:
            bound = False
        if not bound:
            losers.add(agent)
            arb.transcript.notes.append(f"agent {agent}: output block contradicts commitment")
    return losers


def _winner_only(agent: str) -> Verdict:
    return Verdict(agent == "A", agent == "B")


def _divergent_roots(arb: _Arbiter, commit_a, commit_b) -> Verdict:
    fd = first_divergence(arb, commit_a.r, commit_b.r)
    if fd.liars:
        return Verdict("A" not in fd.liars, "B" not in fd.liars)
    i, j = fd.i, fd.j
    if i == 1:
        return Verdict(
            verify_input_block(arb.spec, arb.input, j, fd.blocks["A"], arb.S, arb.lam),
            verify_input_block(arb.spec, arb.input, j, fd.blocks["B"], arb.S, arb.lam),
        )
    window_js = [jj for jj in (j - 1, j, j + 1) if 1 <= jj <= arb.B]
    window = {jj: arb.ask(Query(kind="block", i=i - 1, j=jj)) for jj in window_js}
    disagreeing = [jj for jj in window_js if window[jj]["A"] != window[jj]["B"]]
    if not disagreeing:
        agreed = {jj: window[jj]["A"] for jj in window_js}
        try:
            computed = local_transition(
                arb.spec,
                (agreed.get(j - 1), agreed[j], agreed.get(j + 1)),
                j,
                arb.S,
                arb.lam,
            )
        except MRMError as exc:
            # both agents vouched for a window no honest run can contain
            arb.transcript.notes.append(f"agreed window is not executable: {exc}")
            return Verdict(False, False)
        return Verdict(fd.blocks["A"] == computed, fd.blocks["B"] == computed)
    jj = disagreeing[0]
    ok = arb.queried_path_check(
        "", {"A": commit_a.r, "B": commit_b.r},
        block_address(i - 1, jj, arb.T, arb.B),
        known_blocks={agent: window[jj][agent] for agent in AGENTS},
    )
    return Verdict(ok["A"], ok["B"])


def _payload_size(payload) -> int:
    if payload is None:
        return 0
    if isinstance(payload, bytes):
        return len(payload)
    if isinstance(payload, tuple):
        return sum(_payload_size(p) for p in payload)
    return 0
