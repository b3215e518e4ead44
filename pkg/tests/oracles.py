"""Independent reference models used to cross-check the library.

None of these share code with geowalk: each group is realised in a different
way (integer matrices, a semidirect product) and word lengths come from a
plain BFS over that realisation.
"""
from __future__ import annotations

from collections import deque
from fractions import Fraction

import numpy as np


# -- free group of rank 2 via Sanov matrices ---------------------------------

SANOV = {
    1: ((1, 2), (0, 1)),
    -1: ((1, -2), (0, 1)),
    2: ((1, 0), (2, 1)),
    -2: ((1, 0), (-2, 1)),
}


def _mul2(A, B):
    return (
        (A[0][0] * B[0][0] + A[0][1] * B[1][0], A[0][0] * B[0][1] + A[0][1] * B[1][1]),
        (A[1][0] * B[0][0] + A[1][1] * B[1][0], A[1][0] * B[0][1] + A[1][1] * B[1][1]),
    )


def sanov(word):
    M = ((1, 0), (0, 1))
    for c in word:
        M = _mul2(M, SANOV[c])
    return M


def freely_reduced(word) -> bool:
    return all(word[i] != -word[i + 1] for i in range(len(word) - 1))


# -- free product Z/2 * Z/3 as PSL(2, Z) -------------------------------------

_S = ((0, -1), (1, 0))
_U = ((0, -1), (1, 1))  # order 3 in PSL(2, Z)


def _psl_key(M):
    flat = (M[0][0], M[0][1], M[1][0], M[1][1])
    for v in flat:
        if v:
            return flat if v > 0 else tuple(-x for x in flat)
    return flat


def psl(word):
    """Image of a word over letters 1 (order 2) and +-2 (order 3)."""
    U_inv = _mul2(_U, _U)
    M = ((1, 0), (0, 1))
    for c in word:
        M = _mul2(M, {1: _S, -1: _S, 2: _U, -2: U_inv}[c])
    return _psl_key(M)


# -- right-angled Coxeter groups via the Tits representation ------------------


class TitsRACG:
    """sigma_i(v) = v - 2 B(e_i, v) e_i with B = 1 on the diagonal, 0 on edges, -1 on non-edges."""

    def __init__(self, adjacency):
        A = np.asarray(adjacency, dtype=np.int64)
        n = A.shape[0]
        B = np.where(A == 1, 0, -1)
        np.fill_diagonal(B, 1)
        self.n = n
        self.gens = []
        for i in range(n):
            M = np.eye(n, dtype=np.int64)
            M[i] = M[i] - 2 * B[i]
            self.gens.append(M)

    def matrix(self, word):
        M = np.eye(self.n, dtype=np.int64)
        for c in word:
            M = M @ self.gens[c - 1]
        return M

    def key(self, word):
        return self.matrix(word).tobytes()

    def ball(self, R: int) -> dict:
        """key -> word length for every element of length <= R."""
        I = np.eye(self.n, dtype=np.int64)
        out = {I.tobytes(): 0}
        frontier = [I]
        for r in range(1, R + 1):
            nxt = []
            for M in frontier:
                for g in self.gens:
                    N = M @ g
                    k = N.tobytes()
                    if k not in out:
                        out[k] = r
                        nxt.append(N)
            frontier = nxt
        return out


# -- Gersten group as (RAAG on the integer path) x| Z ------------------------
#
# Elements are w * t^n with w a word in x_i = t^i x t^-i.  Then y = x_1 and
# x_i commutes with x_j exactly when |i - j| <= 1.


def _raag_push(stack: list, letter):
    i, e = letter
    for j in range(len(stack) - 1, -1, -1):
        k, f = stack[j]
        if k == i:
            if f == -e:
                del stack[j]
                return
            break
        if abs(k - i) > 1:
            break
    stack.append(letter)


def _raag_canonical(word) -> tuple:
    """Lexicographically least word in the commutation class of a reduced word."""
    rest = list(word)
    out = []
    while rest:
        best = None
        for p, (i, e) in enumerate(rest):
            if all(abs(k - i) == 1 for k, _ in rest[:p]):
                if best is None or (i, e) < rest[best]:
                    best = p
        out.append(rest.pop(best))
    return tuple(out)


class GerstenModel:
    letters = {1: "x", 2: "y", 3: "t"}

    @staticmethod
    def act(state, letter):
        w, n = state
        w = list(w)
        c, e = abs(letter), (1 if letter > 0 else -1)
        if c == 3:
            return (tuple(w), n + e)
        _raag_push(w, (n if c == 1 else n + 1, e))
        return (tuple(w), n)

    @classmethod
    def key(cls, word):
        st = ((), 0)
        for c in word:
            st = cls.act(st, c)
        return (_raag_canonical(st[0]), st[1])

    @classmethod
    def ball(cls, R: int) -> dict:
        start = ((), 0)
        out = {start: 0}
        q = deque([start])
        while q:
            s = q.popleft()
            d = out[s]
            if d == R:
                continue
            for c in (1, -1, 2, -2, 3, -3):
                t = cls.act(s, c)
                t = (_raag_canonical(t[0]), t[1])
                if t not in out:
                    out[t] = d + 1
                    q.append(t)
        return out


# -- closed forms in the 4-regular tree ---------------------------------------


def common_prefix(u, v) -> int:
    k = 0
    for a, b in zip(u, v):
        if a != b:
            break
        k += 1
    return k


def tree_gromov(x, y) -> Fraction:
    """(x, y)_id for reduced words in a free group: the common prefix length."""
    return Fraction(common_prefix(x, y))


def tree_axis_projection(word, letter=1):
    """Projection of a reduced word onto the axis of ``letter``: the maximal prefix that is a power."""
    t = 0
    for c in word:
        if c == letter and t >= 0:
            t += 1
        elif c == -letter and t <= 0:
            t -= 1
        else:
            break
    return t, len(word) - abs(t)
