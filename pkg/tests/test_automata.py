import itertools

import numpy as np
import pytest

from slipnav import gp
from slipnav.abstraction import GOAL, HAZARD, NoiseModel, build_partition, estimate_intervals
from slipnav.automata import Dra, build_until_dra, parse_dra, print_dra, product
from slipnav.errors import (AlphabetMismatch, NondeterministicTransition, ParseError,
                            UnknownStateReference)

UNTIL_TEXT = """\
# avoid Haz until Goal
states 3
init 0
alphabet Goal Haz
trans 0 - 0
trans 0 Goal 1
trans 0 Haz 2
trans 0 Goal,Haz 2
trans 1 - 1
trans 1 Goal 1
trans 1 Haz 1
trans 1 Goal,Haz 1
trans 2 - 2
trans 2 Goal 2
trans 2 Haz 2
trans 2 Goal,Haz 2
pair G:{1} B:{2}
"""

OBS = [frozenset(), frozenset({GOAL}), frozenset({HAZARD}), frozenset({GOAL, HAZARD})]


def _until_verdict(word):
    """Direct finite-prefix evaluation of (not Haz) until Goal: accepted, rejected or pending."""
    for obs in word:
        if HAZARD in obs:
            return "rejected"
        if GOAL in obs:
            return "accepted"
    return "pending"


def test_one_state_automaton():
    dra = parse_dra("states 1\ninit 0\nalphabet a\ntrans 0 - 0\ntrans 0 a 0\npair G:{0} B:{}\n")
    assert dra.pairs == ((frozenset({0}), frozenset()),)
    assert dra.is_complete()


def test_until_text_parses_to_builder_and_round_trips():
    parsed = parse_dra(UNTIL_TEXT)
    assert parsed == build_until_dra()
    assert parse_dra(print_dra(parsed)) == parsed


def test_until_semantics_on_all_short_words():
    # enumerative check against the direct evaluation, all words up to 6 letters
    dra = build_until_dra()
    verdict = {0: "pending", 1: "accepted", 2: "rejected"}
    for n in range(1, 7):
        for word in itertools.product(OBS, repeat=n):
            assert verdict[dra.run(word)] == _until_verdict(word)


def test_until_examples():
    dra = build_until_dra()
    assert dra.run([set(), set(), {GOAL}]) == 1
    assert dra.run([set(), {HAZARD}, {GOAL}]) == 2
    assert dra.run([{GOAL, HAZARD}]) == 2


@pytest.mark.parametrize("text, error, line", [
    ("states 1\ninit 0\nalphabet a\ntrans 0 a 0\ntrans 0 a 0\n", NondeterministicTransition, 5),
    ("states 2\ninit 0\nalphabet a\ntrans 0 a 5\n", UnknownStateReference, 4),
    ("states 2\ninit 0\nalphabet a\ntrans 0 b 1\n", ParseError, 4),
    ("states 2\ninit 0\nalphabet a\nfoo 1\n", ParseError, 4),
    ("states two\n", ParseError, 1),
    ("states 2\ninit 0\nalphabet a\npair G:1 B:{}\n", ParseError, 4),
])
def test_parse_errors_carry_positions(text, error, line):
    with pytest.raises(error) as info:
        parse_dra(text)
    assert info.value.line == line


def test_missing_declaration():
    with pytest.raises(ParseError):
        parse_dra("states 1\nalphabet a\n")


def _grid_imdp():
    part = build_partition((3.0, 3.0), 1.0, {0: [HAZARD], 8: [GOAL]})
    prior = gp.SparseGp.prior()
    return estimate_intervals(part, prior, prior, NoiseModel(), 0.04, initial=(4,))


def test_product_structure_follows_source_labels():
    # every product row equals its IMDP row with the automaton advanced on L(q)
    imdp = _grid_imdp()
    dra = build_until_dra()
    pm = product(imdp, dra, np.arange(9.0))
    assert pm.n_states == 10 * 3 and pm.n_dra == 3
    for p in range(pm.n_states):
        q, s = pm.split(p)
        s_next = dra.step(s, imdp.labels[q])
        for a in range(8):
            if imdp.rows.row_index[q, a] < 0:
                assert pm.rows.row_index[p, a] < 0
                continue
            succ, lo, hi = pm.rows.row(p, a)
            base_succ, base_lo, base_hi = imdp.rows.row(q, a)
            assert [pm.split(x) for x in succ] == [(int(x), s_next) for x in base_succ]
            assert np.array_equal(lo, base_lo) and np.array_equal(hi, base_hi)
    assert pm.initial == (pm.join(4, 0),)
    assert pm.state_reward()[pm.join(8, 2)] == 8.0
    assert pm.state_reward()[pm.join(9, 0)] == 0.0  # out-of-bounds earns nothing
    good, bad = pm.pair_states(0)
    assert good.sum() == 10 and bad.sum() == 10


def test_partial_automaton_gets_a_sink():
    imdp = _grid_imdp()
    text = "states 1\ninit 0\nalphabet Goal Haz\ntrans 0 - 0\npair G:{0} B:{}\n"
    pm = product(imdp, parse_dra(text))
    assert pm.n_dra == 2
    assert pm.next_dra(0, 0) == 1  # hazard cell has no move, goes to the sink
    assert pm.next_dra(4, 0) == 0


def test_alphabet_mismatch():
    imdp = _grid_imdp()
    with pytest.raises(AlphabetMismatch):
        product(imdp, parse_dra("states 1\ninit 0\nalphabet Goal\ntrans 0 - 0\npair G:{0} B:{}\n"))


def test_dra_equality_covers_transitions():
    a = build_until_dra()
    b = Dra(3, 0, a.alphabet, dict(a.transitions, **{}), a.pairs)
    assert a == b
    changed = dict(a.transitions)
    changed[(0, frozenset())] = 1
    assert Dra(3, 0, a.alphabet, changed, a.pairs) != a
