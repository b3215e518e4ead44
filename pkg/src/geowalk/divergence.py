"""Divergence probes: detours around axis neighbourhoods, growth fits, contraction and landing checks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    EndpointInsideNeighborhood,
    InsufficientData,
    PreconditionError,
    ProjectionGapTooSmall,
    RadiusExceeded,
    WindowTooSmall,
)
from .geometry import DistanceOracle, GeodesicSegment, project
from .group import NormalForm
from .rng import trial_rng


class _Unreachable:
    """No path between the endpoints survives inside the ball."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "Unreachable"

    def __reduce__(self):
        return (_Unreachable, ())


UNREACHABLE = _Unreachable()


# ---------------------------------------------------------------------------
# neighbourhoods and detours


def _require_cover(O: DistanceOracle, seg: GeodesicSegment, R: int):
    """N_R(window) must contain N_R(full axis) restricted to the ball."""
    if not O.has_ball:
        raise RadiusExceeded("divergence probes need a ball oracle")
    need = O.length(seg.origin) + O.radius + R
    if seg.t_min > -need or seg.t_max < need:
        raise WindowTooSmall(f"window [{seg.t_min}, {seg.t_max}] must cover [-{need}, {need}] for R={R}")


def neighborhood_mask(O: DistanceOracle, seg: GeodesicSegment, R: int) -> np.ndarray:
    """Boolean mask over ball indices of {gamma(t) h : t in window, |h| <= R}."""
    _require_cover(O, seg, R)
    G = O.G
    b = G.backend
    mask = np.zeros(len(O.elements), dtype=bool)
    hs = [O.elements[i] for i in np.flatnonzero(O.dist <= R)]
    get = O.index.get
    for p in seg.points:
        for h in hs:
            st = b.load(p.word)
            for c in h:
                b.push(st, c)
            j = get(b.freeze(st))
            if j is not None:
                mask[j] = True
    return mask


def _bfs(O: DistanceOracle, s: int, e: int, blocked: np.ndarray):
    if s == e:
        return 0
    nb = O.neighbors
    seen = blocked.copy()
    seen[s] = True
    frontier = [s]
    d = 0
    while True:
        d += 1
        nxt = nb[frontier].ravel()
        nxt = nxt[nxt >= 0]
        nxt = np.unique(nxt)
        nxt = nxt[~seen[nxt]]
        if nxt.size == 0:
            return UNREACHABLE
        if np.any(nxt == e):
            return d
        seen[nxt] = True
        frontier = nxt


def detour_length(O: DistanceOracle, seg: GeodesicSegment, R: int, p_minus, p_plus, theta=None, mask=None):
    """Shortest path from p_minus to p_plus inside the ball avoiding N_R(seg).

    Returns an int or UNREACHABLE.  Endpoints must lie outside N_R and their
    projections must differ by more than theta (default: two periods).
    """
    G = O.G
    p_minus, p_plus = G.reduce(p_minus), G.reduce(p_plus)
    theta = 2 * len(seg.period) if theta is None else theta
    pm, pp = project(O, seg, p_minus), project(O, seg, p_plus)
    for name, pr in (("p-", pm), ("p+", pp)):
        if pr.distance <= R:
            raise EndpointInsideNeighborhood(f"{name} is at distance {pr.distance} <= R={R} from the axis")
    if abs(pm.t - pp.t) <= theta:
        raise ProjectionGapTooSmall(f"endpoint projections {pm.t}, {pp.t} differ by at most theta={theta}")
    if mask is None:
        mask = neighborhood_mask(O, seg, R)
    return _bfs(O, O.idx(p_minus), O.idx(p_plus), mask)


@dataclass(frozen=True)
class EndpointRule:
    """p(+/-) = gamma(+/-(scale*R + offset)) followed by R + extra letters of the cyclic branch word."""

    branch: tuple
    scale: int = 1
    offset: int = 0
    extra: int = 1

    def endpoints(self, O: DistanceOracle, seg: GeodesicSegment, R: int):
        G = O.G
        s = self.scale * R + self.offset
        n = R + self.extra
        push = tuple(self.branch[i % len(self.branch)] for i in range(n))
        return (
            G.multiply(seg.point(-s), push),
            G.multiply(seg.point(s), push),
        )


@dataclass(frozen=True)
class ProfileRow:
    R: int
    p_minus: NormalForm
    p_plus: NormalForm
    detour: object  # int, UNREACHABLE, or None when flagged
    flag: str = ""

    @property
    def finite(self) -> bool:
        return isinstance(self.detour, int)


@dataclass(frozen=True)
class DivergenceProfile:
    segment_id: str
    theta: int
    rows: tuple

    def finite_rows(self):
        return [r for r in self.rows if r.finite]


def divergence_profile(O, seg, R_list: Sequence[int], theta=None, rule: EndpointRule | None = None, segment_id="axis"):
    """Measure detours for each R.  Rows whose endpoints break a precondition are flagged, not raised."""
    R_list = list(R_list)
    if any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise PreconditionError("R_list must be strictly increasing")
    theta = 2 * len(seg.period) if theta is None else theta
    if rule is None:
        raise PreconditionError("an endpoint rule is required")
    rows = []
    for R in R_list:
        pm, pp = rule.endpoints(O, seg, R)
        try:
            d = detour_length(O, seg, R, pm, pp, theta)
            rows.append(ProfileRow(R, pm, pp, d, "" if d is not UNREACHABLE else "unreachable"))
        except EndpointInsideNeighborhood:
            rows.append(ProfileRow(R, pm, pp, None, "inside"))
        except ProjectionGapTooSmall:
            rows.append(ProfileRow(R, pm, pp, None, "theta"))
    return DivergenceProfile(segment_id, theta, tuple(rows))


@dataclass(frozen=True)
class GrowthFit:
    model: str  # "polynomial" or "exponential"
    degree: float
    poly_coef: float
    exp_rate: float
    exp_coef: float
    ssr_poly: float
    ssr_exp: float
    ratios: tuple
    superlinear: bool


def _lstsq(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    ssr = float(np.sum((A @ coef - y) ** 2))
    return float(coef[0]), float(coef[1]), ssr


def fit_growth(profile: DivergenceProfile) -> GrowthFit:
    """Compare log d ~ k log R (polynomial) with log d ~ a R (exponential); smaller residual wins."""
    rows = [r for r in profile.finite_rows() if r.R > 0 and r.detour > 0]
    if len(rows) < 3:
        raise InsufficientData(f"need at least 3 finite rows, have {len(rows)}")
    R = np.array([r.R for r in rows], dtype=float)
    d = np.log(np.array([r.detour for r in rows], dtype=float))
    k, c_poly, ssr_poly = _lstsq(np.log(R), d)
    a, c_exp, ssr_exp = _lstsq(R, d)
    ratios = tuple(r.detour / r.R for r in rows)
    superlinear = all(b > a_ for a_, b in zip(ratios, ratios[1:]))
    model = "exponential" if ssr_exp < ssr_poly else "polynomial"
    return GrowthFit(model, k, math.exp(c_poly), a, math.exp(c_exp), ssr_poly, ssr_exp, ratios, superlinear)


# ---------------------------------------------------------------------------
# contraction


@dataclass(frozen=True)
class ContractionReport:
    K: int
    trials: int
    qualifying: int
    max_diameter: int
    witness: tuple | None  # (x, y) words
    witness_trial: int | None
    seed: int


def projection_diameter(O, seg, path) -> int:
    ts = [project(O, seg, p).t for p in path]
    return max(ts) - min(ts)


def contraction_probe(O: DistanceOracle, seg: GeodesicSegment, K: int, trials: int, seed: int) -> ContractionReport:
    """Sample geodesics between ball points outside N_K(seg); record the largest projection diameter
    among those geodesics that stay outside N_K."""
    if trials < 1:
        raise PreconditionError("trials must be >= 1")
    mask = neighborhood_mask(O, seg, K)
    outside = np.flatnonzero(~mask)
    best, witness, wtrial, count = 0, None, None, 0
    if outside.size == 0:
        return ContractionReport(K, trials, 0, 0, None, None, seed)
    for i in range(trials):
        x, y = sample_pair(O, outside, seed, i)
        path = O.geodesic_path(x, y)
        if any(project(O, seg, p).distance <= K for p in path):
            continue
        count += 1
        dia = projection_diameter(O, seg, path)
        if dia > best or witness is None:
            best, witness, wtrial = dia, (x.word, y.word), i
    return ContractionReport(K, trials, count, best, witness, wtrial, seed)


def sample_pair(O, candidates: np.ndarray, seed: int, trial: int):
    rng = trial_rng(seed, trial)
    i, j = rng.integers(0, candidates.size, size=2)
    return O.element(int(candidates[i])), O.element(int(candidates[j]))


# ---------------------------------------------------------------------------
# landing


@dataclass(frozen=True)
class LandingReport:
    x: NormalForm
    y: NormalForm
    gap: int
    p_x: NormalForm | None
    p_y: NormalForm | None
    entry_distances: tuple | None
    entry_offsets: tuple | None
    mid_max_distance: int | None


def landing_check(O, seg, x, y, delta: float, K1: int = 0, threshold: float = 0.0) -> LandingReport:
    """Walk the stored geodesic [x, y]; find its first and last points within K1 of the axis.

    Requires the projection gap to exceed delta*(log d(x,seg) + log d(y,seg)) + threshold
    (logarithms of distances below 1 are taken as 0).
    """
    G = O.G
    x, y = G.reduce(x), G.reduce(y)
    px, py = project(O, seg, x), project(O, seg, y)
    gap = abs(px.t - py.t)
    need = delta * (math.log(max(px.distance, 1)) + math.log(max(py.distance, 1))) + threshold
    if not gap > need:
        raise ProjectionGapTooSmall(f"projection gap {gap} <= {need:.3f}")
    path = O.geodesic_path(x, y)
    projs = [project(O, seg, p) for p in path]
    inside = [i for i, pr in enumerate(projs) if pr.distance <= K1]
    if not inside:
        return LandingReport(x, y, gap, None, None, None, None, None)
    i, j = inside[0], inside[-1]
    offsets = (O.distance(path[i], px.point), O.distance(path[j], py.point))
    mid = max(pr.distance for pr in projs[i : j + 1])
    return LandingReport(
        x, y, gap, path[i], path[j], (projs[i].distance, projs[j].distance), offsets, mid
    )
