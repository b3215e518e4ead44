"""Cayley-ball distance oracles, periodic geodesic axes and closest-point projections."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import BudgetExceeded, NotGeodesicAxis, RadiusExceeded, WindowTooSmall
from .group import GroupPresentation, NormalForm

DEFAULT_BUDGET = 2_000_000


class DistanceOracle:
    """Word-metric oracle for one presentation.

    Two modes.  ``exact`` (Free, RACG, free products) answers any query
    from the reduced word alone.  ``ball`` stores the full BFS ball of a
    given radius with parent links and a neighbour table; lengths outside
    it raise ``RadiusExceeded`` unless the backend is exact.  Exact
    backends may also carry a ball, which divergence probes need for
    restricted path searches.
    """

    def __init__(self, G: GroupPresentation, radius=None):
        self.G = G
        self.radius = radius
        self.elements: list = []
        self.index: dict = {}
        self.dist = np.zeros(0, dtype=np.int32)
        self.parent = np.zeros(0, dtype=np.int32)
        self.parent_letter = np.zeros(0, dtype=np.int16)
        self.neighbors = np.zeros((0, len(G.letters)), dtype=np.int32)
        self.stats: dict = {}

    @property
    def mode(self) -> str:
        return "exact" if self.radius is None else "ball"

    @property
    def has_ball(self) -> bool:
        return self.radius is not None

    def __repr__(self):
        return f"DistanceOracle({self.G.tag}, mode={self.mode}, radius={self.radius}, size={len(self.elements)})"

    # -- membership and lengths -------------------------------------------

    def _key(self, g) -> tuple:
        if isinstance(g, NormalForm):
            return g.word
        return self.G.reduce(g).word

    def contains(self, g) -> bool:
        return self._key(g) in self.index

    def idx(self, g) -> int:
        k = self._key(g)
        try:
            return self.index[k]
        except KeyError:
            raise RadiusExceeded(f"{self.G.format_word(k)} lies outside the radius-{self.radius} ball") from None

    def length(self, g) -> int:
        if self.G.exact_length:
            word = g.word if isinstance(g, NormalForm) else g
            return self.G.length_of_word(word)
        return int(self.dist[self.idx(g)])

    def distance(self, g, h) -> int:
        G = self.G
        if G.exact_length:
            return G.length_of_word(G.inverse_word(G.word(g)) + G.word(h))
        return self.length(G.relative(g, h))

    def geodesic_word(self, g) -> tuple:
        """One geodesic word for g: the normal form for exact backends, else via parent links."""
        if self.G.exact_length:
            return self.G.reduce(g).word
        i = self.idx(g)
        out = []
        while i > 0:
            out.append(int(self.parent_letter[i]))
            i = int(self.parent[i])
        return tuple(reversed(out))

    def geodesic_path(self, x, y) -> list:
        """Vertices of the stored geodesic from x to y (both endpoints included)."""
        G = self.G
        x = G.reduce(x)
        word = self.geodesic_word(G.relative(x, y))
        st = G.backend.new_state()
        for c in x.word:
            G.backend.push(st, c)
        out = [x]
        for c in word:
            G.backend.push(st, c)
            out.append(NormalForm(G.backend.freeze(st), G.tag))
        return out

    def sphere(self, r: int) -> list:
        if self.radius is None or r > self.radius:
            raise RadiusExceeded(f"sphere of radius {r} needs a ball of at least that radius")
        return [NormalForm(w, self.G.tag) for w, d in zip(self.elements, self.dist) if d == r]

    def element(self, i: int) -> NormalForm:
        return NormalForm(self.elements[i], self.G.tag)


def exact_oracle(G: GroupPresentation) -> DistanceOracle:
    if not G.exact_length:
        raise RadiusExceeded("this backend has no exact length formula; build a ball instead")
    return DistanceOracle(G, None)


def build_ball(G: GroupPresentation, R: int, budget: int = DEFAULT_BUDGET) -> DistanceOracle:
    """BFS ball of radius R around the identity.

    Expansion follows ShortLex letter order so parent links always give the
    same geodesic.  The neighbour table covers every element, including the
    outer sphere, with -1 for products leaving the ball.
    """
    if R < 0:
        raise ValueError("radius must be >= 0")
    t0 = time.perf_counter()
    b = G.backend
    letters = G.letters
    elements = [()]
    index = {(): 0}
    dist = [0]
    parent = [-1]
    plet = [0]
    nbr_rows = []
    frontier_start = 0
    layer = 0
    while True:
        frontier_end = len(elements)
        for i in range(frontier_start, frontier_end):
            w = elements[i]
            row = []
            for c in letters:
                st = b.load(w)
                b.push(st, c)
                v = b.freeze(st)
                j = index.get(v)
                if j is None and layer < R:
                    j = len(elements)
                    if j >= budget:
                        raise BudgetExceeded(f"ball of radius {R} exceeds budget of {budget} elements")
                    index[v] = j
                    elements.append(v)
                    dist.append(layer + 1)
                    parent.append(i)
                    plet.append(c)
                row.append(-1 if j is None else j)
            nbr_rows.append(row)
        if layer == R:
            break
        layer += 1
        frontier_start = frontier_end
        if frontier_start == len(elements):
            break
    O = DistanceOracle(G, R)
    O.elements = elements
    O.index = index
    O.dist = np.asarray(dist, dtype=np.int32)
    O.parent = np.asarray(parent, dtype=np.int32)
    O.parent_letter = np.asarray(plet, dtype=np.int16)
    O.neighbors = np.asarray(nbr_rows, dtype=np.int32).reshape(len(elements), len(letters))
    O.stats = {"size": len(elements), "seconds": time.perf_counter() - t0}
    return O


_BALLS: dict = {}


def default_ball(G: GroupPresentation, radius: int = 8) -> DistanceOracle:
    """Process-wide cached ball, used for Gersten word lengths."""
    key = (json.dumps(G.spec(), sort_keys=True), radius)
    if key not in _BALLS:
        _BALLS[key] = build_ball(G, radius)
    return _BALLS[key]


def distance(O: DistanceOracle, g, h) -> int:
    return O.distance(g, h)


# ---------------------------------------------------------------------------
# geodesic axes


@dataclass(eq=False)
class GeodesicSegment:
    """Window [t_min, t_max] of the periodic path t -> origin * gamma(t).

    gamma(q*L + r) = w^q * prefix_r(w) where L = |w|; gamma(0) = origin.
    """

    G: GroupPresentation
    period: tuple
    t_min: int
    t_max: int
    origin: NormalForm
    points: tuple = field(repr=False)
    qi_constants: tuple = (1, 0)
    verified_to: int = 0

    @property
    def width(self) -> int:
        return self.t_max - self.t_min

    @property
    def params(self) -> range:
        return range(self.t_min, self.t_max + 1)

    def __contains__(self, t) -> bool:
        return self.t_min <= t <= self.t_max

    def point(self, t: int) -> NormalForm:
        if not self.t_min <= t <= self.t_max:
            return self.G.reduce(self.origin.word + gamma_word(self.period, t, self.G))
        return self.points[t - self.t_min]

    def letter_after(self, t: int) -> int:
        """Edge label from gamma(t) to gamma(t+1)."""
        return self.period[t % len(self.period)]

    def translate(self, g) -> "GeodesicSegment":
        """Left translate g * segment."""
        g = self.G.reduce(g)
        return _make_segment(self.G, self.period, self.t_min, self.t_max, self.G.multiply(g, self.origin), self.verified_to)

    def rewindow(self, t_min: int, t_max: int) -> "GeodesicSegment":
        return _make_segment(self.G, self.period, t_min, t_max, self.origin, self.verified_to)

    def margin(self) -> int:
        return max(1, math.ceil(0.1 * self.width))

    def base(self) -> "GeodesicSegment":
        if not self.origin.word:
            return self
        return _make_segment(self.G, self.period, self.t_min, self.t_max, self.G.identity, self.verified_to)


def gamma_word(period: Sequence[int], t: int, G: GroupPresentation) -> tuple:
    L = len(period)
    q, r = divmod(t, L)
    if q >= 0:
        return tuple(period) * q + tuple(period[:r])
    inv = G.inverse_word(tuple(period))
    return inv * (-q) + tuple(period[:r])


def _make_segment(G, period, t_min, t_max, origin, verified_to):
    b = G.backend
    st = b.new_state()
    for c in origin.word + gamma_word(period, t_min, G):
        b.push(st, c)
    pts = [NormalForm(b.freeze(st), G.tag)]
    L = len(period)
    for t in range(t_min, t_max):
        b.push(st, period[t % L])
        pts.append(NormalForm(b.freeze(st), G.tag))
    return GeodesicSegment(G, tuple(period), t_min, t_max, origin, tuple(pts), (1, 0), verified_to)


def verify_geodesic_period(G: GroupPresentation, period, span: int, oracle: DistanceOracle | None = None) -> int:
    """Check that every length-d subword (d <= span) of the bi-infinite power of period is geodesic.

    Returns the span actually verified (capped at the ball radius for
    backends without an exact length).
    """
    period = tuple(period)
    L = len(period)
    b = G.backend
    if not G.exact_length:
        if oracle is None:
            oracle = default_ball(G)
        span = min(span, oracle.radius)
    for r in range(L):
        st = b.new_state()
        for d in range(1, span + 1):
            b.push(st, period[(r + d - 1) % L])
            if G.exact_length:
                ln = b.state_length(st)
            else:
                j = oracle.index.get(b.freeze(st))
                ln = None if j is None else int(oracle.dist[j])
            if ln != d:
                raise NotGeodesicAxis(
                    f"power of {G.format_word(period)} is not geodesic: subword of length {d} "
                    f"from offset {r} has length {ln if ln is not None else '>' + str(oracle.radius)}"
                )
    return span


def axis_segment(G: GroupPresentation, w, window, origin=None, oracle: DistanceOracle | None = None) -> GeodesicSegment:
    """Window of the periodic geodesic through ``origin`` with period w.

    Raises NotGeodesicAxis unless every subword of w^Z of length up to the
    window width (and at least two periods) is geodesic.
    """
    w = G.word(w)
    if not w:
        raise NotGeodesicAxis("period must be nonempty")
    t_min, t_max = (int(window[0]), int(window[1]))
    if t_min > t_max:
        raise ValueError(f"empty window {window}")
    span = max(t_max - t_min, 2 * len(w))
    done = verify_geodesic_period(G, w, span, oracle)
    origin = G.identity if origin is None else G.reduce(origin)
    return _make_segment(G, w, t_min, t_max, origin, done)


# ---------------------------------------------------------------------------
# projections


@dataclass(frozen=True)
class ProjectionResult:
    t: int
    point: NormalForm
    distance: int
    tie_count: int


def _axis_distances(O: DistanceOracle, period, t_min: int, t_max: int, x_rel: tuple) -> list:
    """d(gamma(t), x) for the axis through the identity and t in [t_min, t_max], x given relative to the origin.

    Uses d(gamma(t), x) = |x^-1 gamma(t)| and extends x^-1 gamma(t) one letter at a time.
    """
    G = O.G
    b = G.backend
    st = b.new_state()
    for c in G.inverse_word(x_rel) + gamma_word(period, t_min, G):
        b.push(st, c)
    L = len(period)
    out = []
    exact = G.exact_length
    for t in range(t_min, t_max + 1):
        if t > t_min:
            b.push(st, period[(t - 1) % L])
        if exact:
            out.append(b.state_length(st))
        else:
            out.append(int(O.dist[O.idx(b.freeze(st))]))
    return out


def _pick(t_min: int, ds: list, point) -> ProjectionResult:
    m = min(ds)
    i = ds.index(m)
    return ProjectionResult(t_min + i, point(t_min + i), m, ds.count(m))


def check_margin(seg: GeodesicSegment, t: int):
    m = seg.margin()
    if not seg.t_min + m <= t <= seg.t_max - m:
        raise WindowTooSmall(f"projection parameter {t} within margin {m} of window [{seg.t_min}, {seg.t_max}]")


def project(O: DistanceOracle, seg: GeodesicSegment, x, require_margin: bool = False) -> ProjectionResult:
    """Closest point of the window to x, least parameter among ties.

    Translated axes are handled as g * pi(g^-1 x).
    """
    G = O.G
    x_rel = G.relative(seg.origin, x).word
    ds = _axis_distances(O, seg.period, seg.t_min, seg.t_max, x_rel)
    res = _pick(seg.t_min, ds, seg.point)
    if require_margin:
        check_margin(seg, res.t)
    return res


def project_direct(O: DistanceOracle, seg: GeodesicSegment, x) -> ProjectionResult:
    """Projection by measuring d(x, p) against every stored window point (reference implementation)."""
    ds = [O.distance(p, x) for p in seg.points]
    return _pick(seg.t_min, ds, seg.point)


def axis_projection(O: DistanceOracle, period, x, origin=None) -> ProjectionResult:
    """Closest point to x on the whole bi-infinite axis origin * gamma (a verified geodesic).

    Every minimiser t satisfies |t| <= 2 d(origin, x), so scanning that range
    is exact and needs no window margin.
    """
    G = O.G
    origin = G.identity if origin is None else G.reduce(origin)
    x_rel = G.relative(origin, x).word
    T = 2 * O.length(x_rel)
    ds = _axis_distances(O, tuple(period), -T, T, x_rel)

    def point(t):
        return G.reduce(origin.word + gamma_word(period, t, G))

    return _pick(-T, ds, point)


def distance_to_segment(O: DistanceOracle, seg: GeodesicSegment, x) -> int:
    return project(O, seg, x).distance


def gromov_product(O: DistanceOracle, x, y, o) -> Fraction:
    """(x, y)_o = (d(o,x) + d(o,y) - d(x,y)) / 2 as an exact rational."""
    return Fraction(O.distance(o, x) + O.distance(o, y) - O.distance(x, y), 2)


@dataclass(frozen=True)
class LipschitzFit:
    A: Fraction
    B: int
    pairs: int


def fit_projection_lipschitz(O: DistanceOracle, seg: GeodesicSegment, pairs: Iterable) -> LipschitzFit:
    """Smallest (A, B) with d(pi x, pi y) <= A d(x, y) + B on the given pairs.

    B is the largest projection jump over pairs at distance <= 1, and A the
    largest (jump - B) / d over the rest.
    """
    rows = []
    for x, y in pairs:
        d = O.distance(x, y)
        dp = abs(project(O, seg, x).t - project(O, seg, y).t)
        rows.append((d, dp))
    B = max([dp for d, dp in rows if d <= 1], default=0)
    A = max([Fraction(dp - B, d) for d, dp in rows if d >= 1], default=Fraction(0))
    return LipschitzFit(max(A, Fraction(0)), B, len(rows))
