"""Group presentations, words and exact word-problem backends.

Letters are encoded as nonzero signed integers: generator ``i`` (0-based)
with exponent +1 is ``i + 1`` and with exponent -1 is ``-(i + 1)``.
Involutive generators only ever appear with exponent +1.  A word is a
tuple of letters; the empty tuple is the identity.

Four backends decide the word problem exactly:

* ``free``          free reduction,
* ``racg``          right-angled Coxeter groups, ShortLex-least reduced word,
* ``gersten``       <x, y, t | t x t^-1 = y, xy = yx>, Britton normal form,
* ``free_product``  free products of finite cyclic groups.
"""
from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import AlphabetMismatch, MalformedGraph, PresentationError, RadiusExceeded, UnknownBackend

Word = tuple  # tuple[int, ...] of signed letters


@dataclass(frozen=True)
class GeneratorAlphabet:
    names: tuple
    involutive: tuple

    def __post_init__(self):
        if not self.names:
            raise PresentationError("alphabet must be nonempty")
        if len(set(self.names)) != len(self.names):
            raise PresentationError(f"generator names must be distinct: {self.names}")
        if len(self.involutive) != len(self.names):
            raise PresentationError("one involutive flag per generator")

    def __len__(self):
        return len(self.names)

    def letters(self) -> tuple:
        """All Cayley-graph edge labels in ShortLex order (a, a^-1, b, b^-1, ...)."""
        out = []
        for i, inv in enumerate(self.involutive):
            out.append(i + 1)
            if not inv:
                out.append(-(i + 1))
        return tuple(out)


def letter_key(letter: int) -> int:
    """Sort key of a letter in the ShortLex order used everywhere."""
    return 2 * (abs(letter) - 1) + (letter < 0)


def shortlex_key(word: Sequence[int]):
    return (len(word), tuple(letter_key(c) for c in word))


@dataclass(frozen=True)
class NormalForm:
    """Canonical word of a group element; equal iff the elements are equal."""

    word: tuple
    backend: str

    def __len__(self):
        return len(self.word)


# ---------------------------------------------------------------------------
# backends
#
# Each backend works on a mutable reduction "state".  ``push`` appends one
# letter keeping the state reduced, ``freeze`` returns the canonical word and
# ``state_length`` the geodesic length (exact backends only).


class _Backend:
    def load(self, word):
        """Reduction state for a word that is already a normal form."""
        st = self.new_state()
        for c in word:
            self.push(st, c)
        return st


class FreeBackend(_Backend):
    tag = "free"
    exact_length = True

    def __init__(self, rank: int):
        if rank < 1:
            raise PresentationError("free group rank must be >= 1")
        self.rank = rank

    def new_state(self):
        return []

    def push(self, state, letter):
        if state and state[-1] == -letter:
            state.pop()
        else:
            state.append(letter)

    def freeze(self, state) -> tuple:
        return tuple(state)

    def state_length(self, state) -> int:
        return len(state)

    def load(self, word):
        return list(word)

    def spec(self) -> dict:
        return {"backend": "free", "rank": self.rank}


class RACGBackend(_Backend):
    """Right-angled Coxeter group W_Gamma of a finite simple graph.

    A word is reduced iff no two equal letters are separated only by letters
    commuting with them (Tits).  All reduced words of an element differ by
    commutations, so the ShortLex-least reduced word is the lexicographic
    normal form of the commutation class; ``freeze`` computes it greedily,
    always emitting the smallest letter that commutes with everything before it.
    """

    tag = "racg"
    exact_length = True

    def __init__(self, adjacency: Sequence[Sequence[int]]):
        n = len(adjacency)
        for row in adjacency:
            if len(row) != n:
                raise MalformedGraph("adjacency matrix must be square")
        for i in range(n):
            if adjacency[i][i]:
                raise MalformedGraph(f"self-loop at vertex {i}")
            for j in range(n):
                if bool(adjacency[i][j]) != bool(adjacency[j][i]):
                    raise MalformedGraph(f"adjacency not symmetric at ({i}, {j})")
        self.adjacency = tuple(tuple(int(bool(x)) for x in row) for row in adjacency)
        # commute[u][v] for letters u, v (1-based); a letter does not "commute
        # past" itself, it cancels
        self._commute = [[False] * (n + 1) for _ in range(n + 1)]
        for i in range(n):
            for j in range(n):
                if self.adjacency[i][j]:
                    self._commute[i + 1][j + 1] = True

    def commute(self, u: int, v: int) -> bool:
        return self._commute[u][v]

    def new_state(self):
        return []

    def push(self, state, letter):
        row = self._commute[letter]
        for j in range(len(state) - 1, -1, -1):
            c = state[j]
            if c == letter:
                del state[j]
                return
            if not row[c]:
                break
        state.append(letter)

    def freeze(self, state) -> tuple:
        n = len(state)
        if n < 2:
            return tuple(state)
        com = self._commute
        blockers = [0] * n
        for i in range(n):
            ci = state[i]
            row = com[ci]
            cnt = 0
            for j in range(i):
                if not row[state[j]]:
                    cnt += 1
            blockers[i] = cnt
        alive = [True] * n
        out = []
        for _ in range(n):
            best = -1
            for i in range(n):
                if alive[i] and blockers[i] == 0 and (best < 0 or state[i] < state[best]):
                    best = i
            alive[best] = False
            cb = state[best]
            out.append(cb)
            row = com[cb]
            for i in range(best + 1, n):
                if alive[i] and not row[state[i]]:
                    blockers[i] -= 1
        return tuple(out)

    def state_length(self, state) -> int:
        return len(state)

    def load(self, word):
        return list(word)

    def spec(self) -> dict:
        return {"backend": "racg", "adjacency": [list(r) for r in self.adjacency]}


class GerstenBackend(_Backend):
    """HNN extension of Z^2 = <x, y> with stable letter t, t x t^-1 = y.

    State: ``[syllables, exps]`` where ``syllables[i] = [p, q]`` stands for
    x^p y^q and ``exps[i]`` is the t-exponent between syllables i and i+1.
    Pushing keeps the state free of Britton pinches (t x^k t^-1, t^-1 y^k t);
    ``freeze`` then moves coset parts leftwards so that the syllable after t
    is a power of y and the syllable after t^-1 is a power of x.
    """

    tag = "gersten"
    exact_length = False
    X, Y, T = 1, 2, 3

    def new_state(self):
        return [[[0, 0]], []]

    def push(self, state, letter):
        syl, exps = state
        g = abs(letter)
        e = 1 if letter > 0 else -1
        if g == self.X:
            syl[-1][0] += e
        elif g == self.Y:
            syl[-1][1] += e
        elif g == self.T:
            if exps and exps[-1] == -e:
                p, q = syl[-1]
                if exps[-1] == 1 and q == 0:
                    # t x^p t^-1 = y^p
                    syl.pop()
                    exps.pop()
                    syl[-1][1] += p
                    return
                if exps[-1] == -1 and p == 0:
                    # t^-1 y^q t = x^q
                    syl.pop()
                    exps.pop()
                    syl[-1][0] += q
                    return
            exps.append(e)
            syl.append([0, 0])
        else:
            raise AlphabetMismatch(f"letter {letter} not in Gersten alphabet")

    def freeze(self, state) -> tuple:
        syl = [list(s) for s in state[0]]
        exps = state[1]
        for i in range(len(exps), 0, -1):
            p, q = syl[i]
            if exps[i - 1] == 1:
                # t x^p = y^p t
                syl[i] = [0, q]
                syl[i - 1][1] += p
            else:
                # t^-1 y^q = x^q t^-1
                syl[i] = [p, 0]
                syl[i - 1][0] += q
        out = []
        for i, (p, q) in enumerate(syl):
            out.extend([self.X if p > 0 else -self.X] * abs(p))
            out.extend([self.Y if q > 0 else -self.Y] * abs(q))
            if i < len(exps):
                out.append(self.T * exps[i])
        return tuple(out)

    def state_length(self, state):
        return None

    def spec(self) -> dict:
        return {"backend": "gersten"}


class FreeProductBackend(_Backend):
    """Free product of cyclic groups Z/n_1 * ... * Z/n_r."""

    tag = "free_product"
    exact_length = True

    def __init__(self, orders: Sequence[int]):
        if not orders or any(int(n) < 2 for n in orders):
            raise PresentationError("free product factors need order >= 2")
        self.orders = tuple(int(n) for n in orders)

    def new_state(self):
        return []

    def push(self, state, letter):
        i = abs(letter) - 1
        e = 1 if letter > 0 else -1
        n = self.orders[i]
        if state and state[-1][0] == i:
            k = (state[-1][1] + e) % n
            if k == 0:
                state.pop()
            else:
                state[-1][1] = k
        else:
            state.append([i, e % n])

    def freeze(self, state) -> tuple:
        out = []
        for i, k in state:
            n = self.orders[i]
            if 2 * k <= n:
                out.extend([i + 1] * k)
            else:
                out.extend([-(i + 1)] * (n - k))
        return tuple(out)

    def state_length(self, state) -> int:
        total = 0
        for i, k in state:
            total += min(k, self.orders[i] - k)
        return total

    def spec(self) -> dict:
        return {"backend": "free_product", "orders": list(self.orders)}


# ---------------------------------------------------------------------------


class GroupPresentation:
    """A generating alphabet together with a word-problem backend.

    Immutable after construction.  The Gersten backend has no exact length
    formula; its word lengths come from a cached Cayley ball.
    """

    def __init__(self, alphabet: GeneratorAlphabet, backend):
        self.alphabet = alphabet
        self.backend = backend
        self.tag = backend.tag
        self.letters = alphabet.letters()
        self._letter_set = frozenset(self.letters)
        self.identity = NormalForm((), self.tag)

    def __repr__(self):
        return f"GroupPresentation({self.tag}, {list(self.alphabet.names)})"

    def spec(self) -> dict:
        d = self.backend.spec()
        d["names"] = list(self.alphabet.names)
        return d

    @property
    def exact_length(self) -> bool:
        return self.backend.exact_length

    def check_word(self, word: Iterable[int]) -> tuple:
        word = tuple(word)
        for c in word:
            if c not in self._letter_set:
                raise AlphabetMismatch(f"letter {c} not valid for {self!r}")
        return word

    def _state(self, word):
        b = self.backend
        st = b.new_state()
        for c in word:
            b.push(st, c)
        return st

    def reduce(self, word) -> NormalForm:
        if isinstance(word, NormalForm):
            self._same(word)
            return word
        word = self.parse_word(word) if isinstance(word, str) else self.check_word(word)
        return NormalForm(self.backend.freeze(self._state(word)), self.tag)

    def _same(self, g: NormalForm):
        if g.backend != self.tag:
            raise AlphabetMismatch(f"normal form from backend {g.backend}, expected {self.tag}")

    def _word(self, g) -> tuple:
        if isinstance(g, NormalForm):
            self._same(g)
            return g.word
        if isinstance(g, str):
            return self.parse_word(g)
        return self.check_word(g)

    def inverse_word(self, word) -> tuple:
        inv = self.alphabet.involutive
        return tuple(c if inv[abs(c) - 1] else -c for c in reversed(word))

    def multiply(self, u, v) -> NormalForm:
        return self.reduce(self._word(u) + self._word(v))

    def invert(self, u) -> NormalForm:
        return self.reduce(self.inverse_word(self._word(u)))

    def relative(self, g, h) -> NormalForm:
        """Normal form of g^-1 h."""
        return self.reduce(self.inverse_word(self._word(g)) + self._word(h))

    def length_of_word(self, word) -> int:
        """Geodesic length of the element spelled by ``word`` (exact backends)."""
        if not self.backend.exact_length:
            raise RadiusExceeded("Gersten lengths need a Cayley ball; use word_length")
        return self.backend.state_length(self._state(word))

    def word_length(self, g, oracle=None) -> int:
        g = self.reduce(g)
        if self.backend.exact_length:
            return self.backend.state_length(self._state(g.word))
        if oracle is None:
            from .geometry import default_ball

            oracle = default_ball(self)
        return oracle.length(g)

    # -- text I/O ---------------------------------------------------------

    def format_word(self, g) -> str:
        word = self._word(g)
        if not word:
            return "1"
        names = self.alphabet.names
        parts = []
        for c in word:
            nm = names[abs(c) - 1]
            parts.append(nm if c > 0 else nm + "^-1")
        return "".join(parts) if all(len(n) == 1 for n in names) else " ".join(parts)

    def parse_word(self, text: str) -> tuple:
        """Parse ``"a b^-1 a^3"``, ``"ab^-1a"``, ``"ab'"`` or ``"aBa"`` (upper case = inverse)."""
        names = self.alphabet.names
        index = {n: i for i, n in enumerate(names)}
        text = text.strip()
        if text in ("", "1") or (text in ("e", "id") and text not in index):
            return ()
        single = all(len(n) == 1 for n in names)
        tokens = text.replace("·", " ").replace("*", " ").split()
        if single:
            tokens = [t for tok in tokens for t in _split_compact(tok)]
        out = []
        for tok in tokens:
            m = _TOKEN.fullmatch(tok)
            if m is None:
                raise AlphabetMismatch(f"cannot parse {tok!r}")
            tok, exp_s, prime = m.group(1), m.group(2), m.group(3)
            exp = int(exp_s) if exp_s is not None else (-1 if prime else 1)
            if tok not in index and tok.lower() in index and tok.isupper():
                tok, exp = tok.lower(), -exp
            if tok not in index:
                raise AlphabetMismatch(f"unknown generator {tok!r}")
            i = index[tok]
            letter = (i + 1) if (exp > 0 or self.alphabet.involutive[i]) else -(i + 1)
            out.extend([letter] * abs(exp))
        return tuple(out)

    def word(self, text_or_word) -> tuple:
        if isinstance(text_or_word, str):
            return self.parse_word(text_or_word)
        if isinstance(text_or_word, NormalForm):
            return self._word(text_or_word)
        return self.check_word(text_or_word)

    def element(self, text_or_word) -> NormalForm:
        return self.reduce(self.word(text_or_word))


_TOKEN = re.compile(r"([^\s^']+?)(?:\^(-?\d+)|(')?)")
_COMPACT = re.compile(r"[^\s^'](?:\^-?\d+|')?")


def _split_compact(tok: str):
    parts = _COMPACT.findall(tok)
    if "".join(parts) != tok:
        raise AlphabetMismatch(f"cannot parse {tok!r}")
    return parts


# ---------------------------------------------------------------------------
# construction


def _default_names(n: int):
    if n <= 26:
        return list(string.ascii_lowercase[:n])
    return [f"s{i}" for i in range(n)]


def free_group(rank: int, names=None) -> GroupPresentation:
    names = list(names) if names else _default_names(rank)
    return GroupPresentation(GeneratorAlphabet(tuple(names), (False,) * rank), FreeBackend(rank))


def racg(adjacency, names=None) -> GroupPresentation:
    backend = RACGBackend(adjacency)
    n = len(backend.adjacency)
    names = list(names) if names else _default_names(n)
    return GroupPresentation(GeneratorAlphabet(tuple(names), (True,) * n), backend)


def cycle_graph(n: int):
    adj = [[0] * n for _ in range(n)]
    for i in range(n):
        adj[i][(i + 1) % n] = adj[(i + 1) % n][i] = 1
    return adj


def gersten_group() -> GroupPresentation:
    return GroupPresentation(GeneratorAlphabet(("x", "y", "t"), (False,) * 3), GerstenBackend())


def free_product(orders, names=None) -> GroupPresentation:
    backend = FreeProductBackend(orders)
    n = len(backend.orders)
    names = list(names) if names else _default_names(n)
    inv = tuple(o == 2 for o in backend.orders)
    return GroupPresentation(GeneratorAlphabet(tuple(names), inv), backend)


def _graph_adjacency(graph):
    """Accepts an adjacency matrix, {"cycle": n}, or {"vertices": [...], "edges": [[u, v], ...]}."""
    if isinstance(graph, dict):
        if "cycle" in graph:
            n = int(graph["cycle"])
            if n < 3:
                raise MalformedGraph("cycle graphs need at least 3 vertices")
            return cycle_graph(n), graph.get("vertices")
        if "adjacency" in graph:
            return graph["adjacency"], graph.get("vertices")
        if "vertices" in graph:
            verts = list(graph["vertices"])
            idx = {v: i for i, v in enumerate(verts)}
            if len(idx) != len(verts):
                raise MalformedGraph("duplicate vertex names")
            adj = [[0] * len(verts) for _ in verts]
            for e in graph.get("edges", []):
                if len(e) != 2:
                    raise MalformedGraph(f"bad edge {e!r}")
                u, v = e
                if u not in idx or v not in idx:
                    raise MalformedGraph(f"edge {e!r} uses unknown vertex")
                if u == v:
                    raise MalformedGraph(f"self-loop at {u!r}")
                adj[idx[u]][idx[v]] = adj[idx[v]][idx[u]] = 1
            return adj, verts
        raise MalformedGraph(f"unrecognized graph description {graph!r}")
    if isinstance(graph, (list, tuple)):
        return graph, None
    raise MalformedGraph(f"unrecognized graph description {graph!r}")


def parse_presentation(spec) -> GroupPresentation:
    """Build a presentation from a JSON string or dict.

    Schema (all keys besides ``backend`` depend on the backend)::

        {"backend": "free", "rank": 2}
        {"backend": "racg", "graph": {"cycle": 4}}
        {"backend": "racg", "graph": {"vertices": ["a", "b"], "edges": [["a", "b"]]}}
        {"backend": "racg", "adjacency": [[0, 1], [1, 0]]}
        {"backend": "gersten"}
        {"backend": "free_product", "orders": [2, 3]}

    An optional ``names`` list overrides generator names.
    """
    if isinstance(spec, (str, bytes)):
        spec = json.loads(spec)
    if not isinstance(spec, dict) or "backend" not in spec:
        raise PresentationError("presentation spec must be an object with a 'backend' key")
    kind = str(spec["backend"]).lower()
    names = spec.get("names")
    if kind == "free":
        return free_group(int(spec.get("rank", 2)), names)
    if kind == "racg":
        if "graph" in spec:
            adj, verts = _graph_adjacency(spec["graph"])
        elif "adjacency" in spec:
            adj, verts = spec["adjacency"], None
        else:
            raise MalformedGraph("racg backend needs 'graph' or 'adjacency'")
        return racg(adj, names or verts)
    if kind == "gersten":
        if names and list(names) != ["x", "y", "t"]:
            raise PresentationError("the Gersten backend fixes the alphabet {x, y, t}")
        return gersten_group()
    if kind in ("free_product", "freeproductoffinite", "free_product_of_finite"):
        return free_product(spec["orders"], names)
    raise UnknownBackend(f"unknown backend {spec['backend']!r}")


# functional aliases


def reduce(w, G: GroupPresentation) -> NormalForm:
    return G.reduce(w)


def multiply(u, v, G: GroupPresentation) -> NormalForm:
    return G.multiply(u, v)


def invert(u, G: GroupPresentation) -> NormalForm:
    return G.invert(u)


def word_length(g, G: GroupPresentation, oracle=None) -> int:
    return G.word_length(g, oracle)
