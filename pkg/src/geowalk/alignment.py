"""K-alignment of chains of axis subsegments and points, local-to-global checks and linkage sets."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .errors import HypothesisViolated, PreconditionError, RadiusExceeded, SearchExhausted
from .geometry import DistanceOracle, GeodesicSegment, axis_projection, build_ball, check_margin, gamma_word, project
from .group import NormalForm, shortlex_key


@dataclass(frozen=True)
class SegmentItem:
    """The subpath origin * gamma([m, n]) of the axis with the given period.

    Projections onto it use the whole axis origin * gamma unless an explicit
    window segment is supplied, in which case the window margin rule applies.
    """

    origin: NormalForm
    period: tuple
    m: int
    n: int
    window: GeodesicSegment | None = None

    def __post_init__(self):
        if self.m > self.n:
            raise PreconditionError(f"subsegment needs m <= n, got [{self.m}, {self.n}]")

    @property
    def length(self) -> int:
        return self.n - self.m

    def points(self, G) -> list:
        b = G.backend
        st = b.new_state()
        for c in self.origin.word + gamma_word(self.period, self.m, G):
            b.push(st, c)
        out = [NormalForm(b.freeze(st), G.tag)]
        L = len(self.period)
        for t in range(self.m, self.n):
            b.push(st, self.period[t % L])
            out.append(NormalForm(b.freeze(st), G.tag))
        return out


def segment_item(seg: GeodesicSegment, m: int, n: int, use_window: bool = False) -> SegmentItem:
    return SegmentItem(seg.origin, seg.period, m, n, seg if use_window else None)


def _item_points(O, item) -> list:
    if isinstance(item, SegmentItem):
        return item.points(O.G)
    return [O.G.reduce(item)]


def _project_item(O: DistanceOracle, item: SegmentItem, x) -> int:
    if item.window is not None:
        t = project(O, item.window, x).t
        check_margin(item.window, t)
        return t
    return axis_projection(O, item.period, x, item.origin).t


@dataclass(frozen=True)
class PairMargin:
    index: int  # position of the segment item in the chain
    side: str  # "prev" (condition 1) or "next" (condition 2)
    margin: float  # >= 0 iff the condition holds

    @property
    def ok(self) -> bool:
        return self.margin >= 0


@dataclass(frozen=True)
class AlignmentResult:
    aligned: bool
    margins: tuple

    def __bool__(self):
        return self.aligned


def alignment_margins(O: DistanceOracle, chain: Sequence, K: float, only=None, projector=None, points=None) -> list:
    """Signed margins of both alignment conditions for each segment item.

    Condition 1: projections of the previous item onto item i lie at parameters <= m_i + K.
    Condition 2: projections of the next item lie at parameters >= n_i - K.
    ``projector(item, x)`` and ``points(item)`` may be supplied to share caches.
    """
    proj = projector or (lambda item, x: _project_item(O, item, x))
    item_points = points or (lambda item: _item_points(O, item))
    if len(chain) < 2:
        raise PreconditionError("a chain needs at least two items")
    pts_cache: dict = {}

    def pts(j):
        if j not in pts_cache:
            pts_cache[j] = item_points(chain[j])
        return pts_cache[j]

    out = []
    idxs = range(len(chain)) if only is None else only
    for i in idxs:
        item = chain[i]
        if not isinstance(item, SegmentItem):
            continue
        if i > 0:
            ts = [proj(item, p) for p in pts(i - 1)]
            out.append(PairMargin(i, "prev", item.m + K - max(ts)))
        if i + 1 < len(chain):
            ts = [proj(item, p) for p in pts(i + 1)]
            out.append(PairMargin(i, "next", min(ts) - (item.n - K)))
    return out


def is_aligned(O: DistanceOracle, chain: Sequence, K: float, projector=None, points=None) -> AlignmentResult:
    margins = alignment_margins(O, chain, K, projector=projector, points=points)
    return AlignmentResult(all(m.ok for m in margins), tuple(margins))


def translate_chain(G, chain: Sequence, g) -> list:
    g = G.reduce(g)
    out = []
    for item in chain:
        if isinstance(item, SegmentItem):
            win = item.window.translate(g) if item.window is not None else None
            out.append(SegmentItem(G.multiply(g, item.origin), item.period, item.m, item.n, win))
        else:
            out.append(G.multiply(g, item))
    return out


# ---------------------------------------------------------------------------
# local-to-global


@dataclass(frozen=True)
class AlignmentParams:
    K: float = 0.0
    eps: float = 0.05
    eta: float = 0.05
    D: float | None = None

    def __post_init__(self):
        if self.K < 0:
            raise PreconditionError("K must be >= 0")


@dataclass(frozen=True)
class LocalToGlobalReport:
    holds: bool
    D: float
    diameter: int
    hypothesis_slack: float  # eta * eps * log D
    conclusion_slack: float  # 2 * eta * eps * log D
    witness: tuple | None  # (x, segment index, y) of the first failing triple
    margins: tuple = field(default=())


def segment_union_diameter(O: DistanceOracle, items: Sequence) -> int:
    pts = []
    for it in items:
        pts.extend(_item_points(O, it))
    best = 0
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            best = max(best, O.distance(pts[i], pts[j]))
    return best


def check_local_to_global(O: DistanceOracle, chain: Sequence, params: AlignmentParams) -> LocalToGlobalReport:
    """Verify hypotheses (diameter, segment lengths, consecutive alignment) then the triple conclusions.

    chain = (x, seg_1, ..., seg_N, y).  A failed conclusion is reported with
    its witness triple, not raised: it means D sits below the asymptotic threshold.
    """
    if not (0 < params.eps < 0.1 and 0 < params.eta < 0.1):
        raise HypothesisViolated("params", None, "need 0 < eps, eta < 0.1")
    if len(chain) < 3:
        raise PreconditionError("chain must be (x, segments..., y) with at least one segment")
    x, segs, y = chain[0], list(chain[1:-1]), chain[-1]
    if isinstance(x, SegmentItem) or isinstance(y, SegmentItem) or not all(isinstance(s, SegmentItem) for s in segs):
        raise PreconditionError("chain must be (point, segments..., point)")
    diam = segment_union_diameter(O, segs)
    D = float(params.D) if params.D is not None else float(max(diam, 1))
    logD = math.log(D) if D > 1 else 0.0
    if diam > D:
        raise HypothesisViolated(1, None, f"diameter {diam} exceeds D={D}")
    for i, s in enumerate(segs, start=1):
        if s.length < params.eps * logD:
            raise HypothesisViolated(2, i, f"segment length {s.length} < eps log D = {params.eps * logD:.4f}")
    k1 = params.eta * params.eps * logD
    pre = is_aligned(O, chain, k1)
    if not pre:
        bad = next(m for m in pre.margins if not m.ok)
        raise HypothesisViolated(3, bad.index, f"chain not {k1:.4f}-aligned ({bad.side} margin {bad.margin:.4f})")
    k2 = 2 * k1
    margins = []
    for i, s in enumerate(segs, start=1):
        res = is_aligned(O, [x, s, y], k2)
        margins.append(res.margins)
        if not res:
            return LocalToGlobalReport(False, D, diam, k1, k2, (x, i, y), tuple(margins))
    return LocalToGlobalReport(True, D, diam, k1, k2, None, tuple(margins))


# ---------------------------------------------------------------------------
# linkage sets


@dataclass(frozen=True)
class LinkageRow:
    """Per-element certificate: projection offsets for conditions (2) and (3)."""

    element: NormalForm
    cond1_min_separation: int | None
    cond2_dist: int
    cond3_dist: int


@dataclass(frozen=True)
class PairCertificate:
    a: int
    b: int
    sep_right: int  # |b a^-1|
    sep_left: int  # |a^-1 b|
    cond2_t: int  # parameter of pi(gamma(0) a^-1 b), relative to gamma(0)
    cond3_t: int  # parameter of pi(gamma(m) a b^-1), relative to gamma(m)


@dataclass(frozen=True)
class LinkageSet:
    K: int
    m: int
    eps: float
    period: tuple
    origin: NormalForm
    elements: tuple
    rows: tuple
    pairs: tuple
    examined: int


def _axis_t(O, period, origin, g, x_word) -> int:
    """Projection parameter of g * x onto origin * gamma, relative to g."""
    G = O.G
    return axis_projection(O, period, G.multiply(g, x_word), origin).t


class _LinkageChecker:
    def __init__(self, O, seg: GeodesicSegment, K: int, m: int, eps: float):
        self.O, self.G = O, O.G
        self.period, self.origin = seg.period, seg.origin
        self.K, self.m, self.eps = K, m, eps
        self.bound = eps * K
        self.g0 = seg.origin
        self.gm = self.G.multiply(seg.origin, gamma_word(seg.period, m, self.G))

    def single(self, a: NormalForm):
        """(t for pi(gamma(0) a^-1), t for pi(gamma(m) a) - m)."""
        G = self.G
        t2 = axis_projection(self.O, self.period, G.multiply(self.g0, G.invert(a)), self.origin).t
        t3 = axis_projection(self.O, self.period, G.multiply(self.gm, a), self.origin).t - self.m
        return t2, t3

    def pair(self, ia, a, ib, b) -> PairCertificate:
        G, O = self.G, self.O
        sep_r = O.length(G.multiply(b, G.invert(a)))
        sep_l = O.length(G.relative(a, b))
        t2 = axis_projection(O, self.period, G.multiply(self.g0, G.relative(a, b)), self.origin).t
        t3 = axis_projection(O, self.period, G.multiply(self.gm, G.multiply(a, G.invert(b))), self.origin).t - self.m
        return PairCertificate(ia, ib, sep_r, sep_l, t2, t3)

    def pair_ok(self, c: PairCertificate) -> bool:
        return (
            2 * c.sep_right >= self.K
            and 2 * c.sep_left >= self.K
            and abs(c.cond2_t) <= self.bound
            and abs(c.cond3_t) <= self.bound
        )


def _sphere(O: DistanceOracle, K: int, budget: int):
    if O.has_ball and O.radius >= K:
        return O.sphere(K)
    if not O.G.exact_length:
        raise RadiusExceeded(f"sphere of radius {K} is outside the cached ball")
    return build_ball(O.G, K, budget).sphere(K)


def find_linkage_set(
    O: DistanceOracle, seg: GeodesicSegment, K: int, m: int, eps: float, size: int = 10, budget: int = 1_000_000
) -> LinkageSet:
    """Greedy ShortLex first-fit search over the sphere S(id, K).

    A candidate a is kept when pi(gamma(0) a^-1) and pi(gamma(m) a) lie within
    eps*K of gamma(0), gamma(m), and against every kept b: |b a^-1|, |a^-1 b| >= K/2
    and the cross projections of gamma(0) a^-1 b, gamma(0) b^-1 a,
    gamma(m) a b^-1, gamma(m) b a^-1 stay within eps*K as well.
    """
    if size < 1:
        raise PreconditionError("size must be >= 1")
    chk = _LinkageChecker(O, seg, K, m, eps)
    sphere = sorted(_sphere(O, K, budget), key=lambda g: shortlex_key(g.word))
    if len(sphere) < size:
        raise SearchExhausted(f"sphere of radius {K} has {len(sphere)} < {size} elements")
    kept, singles, pairs = [], [], []
    examined = 0
    for a in sphere:
        examined += 1
        t2, t3 = chk.single(a)
        if abs(t2) > chk.bound or abs(t3) > chk.bound:
            continue
        ia = len(kept)
        new_pairs = []
        ok = True
        for ib, b in enumerate(kept):
            c1, c2 = chk.pair(ia, a, ib, b), chk.pair(ib, b, ia, a)
            if not (chk.pair_ok(c1) and chk.pair_ok(c2)):
                ok = False
                break
            new_pairs.extend([c1, c2])
        if not ok:
            continue
        kept.append(a)
        singles.append((t2, t3))
        pairs.extend(new_pairs)
        if len(kept) == size:
            break
    if len(kept) < size:
        raise SearchExhausted(f"only {len(kept)} of {size} linkage elements found on S(id, {K})")
    rows = []
    for i, a in enumerate(kept):
        seps = [min(c.sep_right, c.sep_left) for c in pairs if c.a == i]
        rows.append(LinkageRow(a, min(seps) if seps else None, abs(singles[i][0]), abs(singles[i][1])))
    return LinkageSet(K, m, eps, seg.period, seg.origin, tuple(kept), tuple(rows), tuple(pairs), examined)


def verify_linkage_set(O: DistanceOracle, S: LinkageSet) -> bool:
    """Recompute every certificate from scratch."""
    G = O.G
    seg = GeodesicSegment(G, S.period, 0, 0, S.origin, (S.origin,))
    chk = _LinkageChecker(O, seg, S.K, S.m, S.eps)
    for a in S.elements:
        if O.length(a) != S.K:
            return False
        t2, t3 = chk.single(a)
        if abs(t2) > chk.bound or abs(t3) > chk.bound:
            return False
    for i, a in enumerate(S.elements):
        for j, b in enumerate(S.elements):
            if i != j and not chk.pair_ok(chk.pair(i, a, j, b)):
                return False
    return True
