"""Deterministic Rabin automata and their product with an interval MDP.

Text format, one declaration per line (``#`` starts a comment)::

    states 3
    init 0
    alphabet Goal Haz
    trans 0 - 0            # '-' is the empty observation
    trans 0 Goal 1
    trans 0 Goal,Haz 2
    pair G:{1} B:{2}
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .abstraction import GOAL, HAZARD, Imdp, IntervalRows
from .errors import AlphabetMismatch, NondeterministicTransition, ParseError, UnknownStateReference


@dataclass(frozen=True, eq=True)
class Dra:
    n_states: int
    initial: int
    alphabet: tuple
    transitions: Mapping = field(hash=False)  # (state, frozenset obs) -> state
    pairs: tuple  # ((frozenset G, frozenset B), ...)

    def step(self, state: int, obs) -> Optional[int]:
        return self.transitions.get((state, frozenset(obs)))

    def run(self, word) -> Optional[int]:
        state = self.initial
        for obs in word:
            state = self.step(state, obs)
            if state is None:
                return None
        return state

    def observation_sets(self):
        for k in range(len(self.alphabet) + 1):
            for combo in itertools.combinations(self.alphabet, k):
                yield frozenset(combo)

    def is_complete(self) -> bool:
        return all((s, o) in self.transitions
                   for s in range(self.n_states) for o in self.observation_sets())


def _obs_text(obs: frozenset, order: Sequence[str]) -> str:
    if not obs:
        return "-"
    return ",".join(sym for sym in order if sym in obs)


def print_dra(dra: Dra) -> str:
    lines = [f"states {dra.n_states}", f"init {dra.initial}", "alphabet " + " ".join(dra.alphabet)]
    rank = {o: k for k, o in enumerate(dra.observation_sets())}
    for (s, obs), nxt in sorted(dra.transitions.items(), key=lambda kv: (kv[0][0], rank[kv[0][1]])):
        lines.append(f"trans {s} {_obs_text(obs, dra.alphabet)} {nxt}")
    for good, bad in dra.pairs:
        lines.append("pair G:{%s} B:{%s}" % (",".join(map(str, sorted(good))),
                                             ",".join(map(str, sorted(bad)))))
    return "\n".join(lines) + "\n"


def _tokens(line: str):
    """(token, 1-based column) pairs of a whitespace-separated line."""
    out, col = [], 0
    for piece in line.split():
        col = line.index(piece, col)
        out.append((piece, col + 1))
        col += len(piece)
    return out


def _int(tok, lineno):
    text, col = tok
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"expected an integer, got {text!r}", lineno, col) from None


def _state_set(tok, prefix, lineno):
    text, col = tok
    if not (text.startswith(prefix + ":{") and text.endswith("}")):
        raise ParseError(f"expected {prefix}:{{...}}, got {text!r}", lineno, col)
    body = text[len(prefix) + 2:-1]
    if not body:
        return frozenset()
    try:
        return frozenset(int(x) for x in body.split(","))
    except ValueError:
        raise ParseError(f"bad state list {body!r}", lineno, col) from None


def parse_dra(text: str) -> Dra:
    n_states = initial = alphabet = None
    transitions: dict = {}
    pairs = []
    refs = []  # (state, line, column) to validate once n_states is known

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        toks = _tokens(line)
        if not toks:
            continue
        head, col = toks[0]
        args = toks[1:]
        if head == "states":
            if len(args) != 1:
                raise ParseError("states takes one integer", lineno, col)
            n_states = _int(args[0], lineno)
            if n_states < 1:
                raise ParseError("need at least one state", lineno, args[0][1])
        elif head == "init":
            if len(args) != 1:
                raise ParseError("init takes one integer", lineno, col)
            initial = _int(args[0], lineno)
            refs.append((initial, lineno, args[0][1]))
        elif head == "alphabet":
            syms = [t for t, _ in args]
            if len(set(syms)) != len(syms) or "-" in syms or any("," in s for s in syms):
                raise ParseError("alphabet symbols must be distinct and contain no ',' or '-'", lineno, col)
            alphabet = tuple(syms)
        elif head == "trans":
            if len(args) != 3:
                raise ParseError("trans takes: source observation target", lineno, col)
            if alphabet is None:
                raise ParseError("trans before alphabet", lineno, col)
            src, dst = _int(args[0], lineno), _int(args[2], lineno)
            obs_text, obs_col = args[1]
            obs = frozenset() if obs_text == "-" else frozenset(obs_text.split(","))
            unknown = obs - set(alphabet)
            if unknown or (obs_text != "-" and "" in obs_text.split(",")):
                raise ParseError(f"observation {obs_text!r} not over the alphabet", lineno, obs_col)
            refs.append((src, lineno, args[0][1]))
            refs.append((dst, lineno, args[2][1]))
            if (src, obs) in transitions:
                raise NondeterministicTransition(
                    f"second transition from state {src} on {obs_text}", lineno, col)
            transitions[(src, obs)] = dst
        elif head == "pair":
            if len(args) != 2:
                raise ParseError("pair takes G:{..} B:{..}", lineno, col)
            good = _state_set(args[0], "G", lineno)
            bad = _state_set(args[1], "B", lineno)
            for s in good | bad:
                refs.append((s, lineno, args[0][1]))
            pairs.append((good, bad))
        else:
            raise ParseError(f"unknown directive {head!r}", lineno, col)

    for name, value in (("states", n_states), ("init", initial), ("alphabet", alphabet)):
        if value is None:
            raise ParseError(f"missing '{name}' declaration")
    for s, lineno, col in refs:
        if not 0 <= s < n_states:
            raise UnknownStateReference(f"state {s} is out of range 0..{n_states - 1}", lineno, col)
    return Dra(n_states, initial, alphabet, transitions, tuple(pairs))


def build_until_dra(goal_obs: str = GOAL, hazard_obs: str = HAZARD) -> Dra:
    """Three-state automaton for "avoid hazard until goal".

    State 0 is pending, 1 accepting and 2 rejecting; both terminal states
    are absorbing.  An observation carrying both symbols rejects.
    """
    if goal_obs == hazard_obs:
        raise ValueError("goal and hazard symbols must differ")
    alphabet = (goal_obs, hazard_obs)
    trans = {}
    for k in range(3):
        for obs in itertools.chain.from_iterable(itertools.combinations(alphabet, n) for n in range(3)):
            obs = frozenset(obs)
            if k == 0:
                nxt = 2 if hazard_obs in obs else (1 if goal_obs in obs else 0)
            else:
                nxt = k
            trans[(k, obs)] = nxt
    return Dra(3, 0, alphabet, trans, ((frozenset({1}), frozenset({2})),))


# ---------------------------------------------------------------------------
# product

@dataclass(frozen=True)
class MtPimdp:
    """Product of an interval MDP with a DRA plus a per-cell reward.

    Product state ``p = q * n_dra + s``.  When the DRA is partial an extra
    non-accepting sink state (index ``dra.n_states``) absorbs undefined moves.
    """

    imdp: Imdp
    dra: Dra
    n_dra: int
    rows: IntervalRows
    initial: tuple
    pairs: tuple  # DRA-state (G, B) sets
    reward: np.ndarray = field(compare=False)  # per IMDP state

    @property
    def n_states(self) -> int:
        return self.rows.n_states

    def split(self, p: int) -> tuple[int, int]:
        return divmod(p, self.n_dra)

    def join(self, q: int, s: int) -> int:
        return q * self.n_dra + s

    def dra_component(self) -> np.ndarray:
        return np.arange(self.n_states) % self.n_dra

    def cell_component(self) -> np.ndarray:
        return np.arange(self.n_states) // self.n_dra

    def state_reward(self) -> np.ndarray:
        """Reward W(q) of the cell component of every product state."""
        return self.reward[self.cell_component()]

    def next_dra(self, q: int, s: int) -> int:
        nxt = self.dra.step(s, self.imdp.labels[q]) if s < self.dra.n_states else None
        return self.dra.n_states if nxt is None else nxt

    def pair_states(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Boolean masks over product states for pair ``k``'s G and B sets."""
        comp = self.dra_component()
        good, bad = self.pairs[k]
        return np.isin(comp, list(good)), np.isin(comp, list(bad))


def product(imdp: Imdp, dra: Dra, reward=None) -> MtPimdp:
    alphabet = set(dra.alphabet)
    for q, lab in enumerate(imdp.labels):
        if not lab <= alphabet:
            raise AlphabetMismatch(f"state {q} label {sorted(lab)} is not over {sorted(alphabet)}")
    n_q = imdp.n_states
    partial = any(dra.step(s, lab) is None for s in range(dra.n_states) for lab in set(imdp.labels))
    n_s = dra.n_states + (1 if partial else 0)

    def delta(s, lab):
        nxt = dra.step(s, lab) if s < dra.n_states else None
        return dra.n_states if nxt is None else nxt

    # next DRA state per (cell, DRA state), guarded by the source cell's label
    s_next = np.array([[delta(s, imdp.labels[q]) for s in range(n_s)] for q in range(n_q)])

    base = imdp.rows
    owner = base.row_states()
    n_rows = len(base.succ)
    succ = np.full((n_rows * n_s, base.succ.shape[1]), -1, dtype=np.int64)
    for s in range(n_s):
        target = s_next[owner, s][:, None]
        succ[s::n_s] = np.where(base.succ >= 0, base.succ * n_s + target, -1)
    lower = np.repeat(base.lower, n_s, axis=0)
    upper = np.repeat(base.upper, n_s, axis=0)
    row_index = np.full((n_q * n_s, base.n_actions), -1, dtype=np.int64)
    for s in range(n_s):
        row_index[s::n_s] = np.where(base.row_index >= 0, base.row_index * n_s + s, -1)

    initial = tuple(sorted({q * n_s + delta(dra.initial, imdp.labels[q]) for q in imdp.initial}))
    if reward is None:
        reward = np.zeros(n_q)
    reward = np.asarray(reward, dtype=float)
    if len(reward) == n_q - 1:
        reward = np.append(reward, 0.0)  # out-of-bounds state earns nothing
    if len(reward) != n_q:
        raise ValueError("reward length must match the IMDP state count")
    return MtPimdp(imdp, dra, n_s, IntervalRows(row_index, succ, lower, upper), initial,
                   tuple(dra.pairs), reward)
