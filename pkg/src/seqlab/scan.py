"""Exhaustive enumeration of the SCAN command language.

SCAN maps short navigation commands to primitive action sequences. The
command space is finite (20910 commands) and generated by:

    C -> S and S | S after S | S
    S -> V twice | V thrice | V
    V -> D[1] opposite D[2] | D[1] around D[2] | D | U
    D -> U left | U right | turn left | turn right
    U -> walk | look | run | jump

with 'x1 and x2' executing x1 then x2, 'x1 after x2' executing x2 then
x1, 'opposite' turning twice before acting, and 'around' repeating
(turn, act) four times. Enumerating the grammar reproduces the canonical
dataset exactly (token-for-token, using the I_* action names), so the
corpus can be materialized locally instead of being shipped.
"""

from __future__ import annotations

from .data import SeqPair

_ACTIONS = {"walk": "I_WALK", "look": "I_LOOK", "run": "I_RUN", "jump": "I_JUMP"}
_TURNS = {"left": "I_TURN_LEFT", "right": "I_TURN_RIGHT"}


def _verb_phrases() -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    """All V productions as (command tokens, action tokens)."""
    verbs = list(_ACTIONS)
    directions = list(_TURNS)

    # D: bare directed actions and bare turns
    directed: list[tuple[tuple[str, ...], tuple[str, ...]]] = []
    for u in verbs:
        for d in directions:
            directed.append(((u, d), (_TURNS[d], _ACTIONS[u])))
    for d in directions:
        directed.append((("turn", d), (_TURNS[d],)))

    phrases: list[tuple[tuple[str, ...], tuple[str, ...]]] = []
    # D[1] opposite D[2]: turn twice, then act (if any)
    for u in verbs:
        for d in directions:
            phrases.append(((u, "opposite", d), (_TURNS[d], _TURNS[d], _ACTIONS[u])))
    for d in directions:
        phrases.append((("turn", "opposite", d), (_TURNS[d], _TURNS[d])))
    # D[1] around D[2]: four (turn, act) repetitions
    for u in verbs:
        for d in directions:
            phrases.append(((u, "around", d), (_TURNS[d], _ACTIONS[u]) * 4))
    for d in directions:
        phrases.append((("turn", "around", d), (_TURNS[d],) * 4))
    phrases.extend(directed)
    for u in verbs:
        phrases.append(((u,), (_ACTIONS[u],)))
    return phrases


def _simple_commands() -> list[tuple[tuple[str, ...], tuple[str, ...]]]:
    """All S productions: V, V twice, V thrice."""
    out = []
    for cmd, acts in _verb_phrases():
        out.append((cmd, acts))
        out.append((cmd + ("twice",), acts * 2))
        out.append((cmd + ("thrice",), acts * 3))
    return out


def scan_pairs() -> list[SeqPair]:
    """The full SCAN corpus in a fixed enumeration order."""
    simple = _simple_commands()
    pairs = [SeqPair(cmd, acts) for cmd, acts in simple]
    for cmd1, acts1 in simple:
        for cmd2, acts2 in simple:
            pairs.append(SeqPair(cmd1 + ("and",) + cmd2, acts1 + acts2))
            pairs.append(SeqPair(cmd1 + ("after",) + cmd2, acts2 + acts1))
    return pairs
