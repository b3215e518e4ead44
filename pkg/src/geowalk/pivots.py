"""Pivotal times for words w0 a1 g b1 g c1 w1 ... ak g bk g ck wk, pivoted classes and tail DP.

Here g = gamma(l) with l = ceil(eps log n).  A step either adds a pivot
(criterion A), backtracks to the largest earlier pivot m whose segment is
still aligned with W_k (criterion B(m)), or empties the set (B(empty)).
Criteria are decided geometrically through the alignment module or by a
synthetic, seed-determined outcome table.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .alignment import SegmentItem, is_aligned
from .errors import EnumerationBudgetExceeded, InvalidTail, PreconditionError
from .geometry import DistanceOracle, axis_projection, gamma_word
from .group import NormalForm
from .rng import mix_np, trial_seed, uniform01, uniform01_np

KIND_A, KIND_B = 1, 2


@dataclass(frozen=True)
class SyntheticOracleSpec:
    """Seeded stand-in for the geometric criteria.

    ``a_outcomes[k-1]`` may be a bool or a set of admissible b-indices for
    step k; ``b_outcomes`` maps (k, m) to a bool.  Unlisted queries succeed
    when a hash-uniform draw keyed by (seed, kind, k[, m]) falls below p_A / p_B.
    """

    p_A: float = 0.9
    p_B: float = 0.9
    seed: int = 0
    a_outcomes: tuple | None = None
    b_outcomes: dict | None = None

    def criterion_a(self, k: int, triple) -> bool:
        if self.a_outcomes is not None and k - 1 < len(self.a_outcomes):
            out = self.a_outcomes[k - 1]
            if isinstance(out, bool):
                return out
            return triple[1] in out
        return uniform01(self.seed, KIND_A, k) < self.p_A

    def criterion_b(self, k: int, m: int) -> bool:
        if self.b_outcomes is not None and (k, m) in self.b_outcomes:
            return bool(self.b_outcomes[(k, m)])
        return uniform01(self.seed, KIND_B, k, m) < self.p_B


@dataclass
class PivotConfig:
    n: float
    eps: float
    linkage: tuple = ()  # elements of S (NormalForm) in geometric mode; ignored otherwise
    base_words: tuple = ()  # w_0, w_1, ... (NormalForm or words)
    oracle: DistanceOracle | None = None
    period: tuple = ()
    synthetic: SyntheticOracleSpec | None = None
    frame: NormalForm | None = None  # z_0; the identity unless the whole picture is translated
    S_size: int | None = None

    def __post_init__(self):
        if self.eps * math.log(self.n) < 1:
            raise PreconditionError("need eps log n >= 1")
        if (self.oracle is None) == (self.synthetic is None):
            raise PreconditionError("choose exactly one of geometric (oracle) or synthetic mode")
        if self.oracle is not None:
            if not self.linkage:
                raise PreconditionError("geometric mode needs a nonempty linkage set")
            G = self.oracle.G
            self.linkage = tuple(G.reduce(a) for a in self.linkage)
            self.base_words = tuple(G.reduce(w) for w in self.base_words)
            self.frame = G.identity if self.frame is None else G.reduce(self.frame)
            self.period = tuple(self.period)
        if self.S_size is None:
            self.S_size = len(self.linkage)
        if self.S_size < 1:
            raise PreconditionError("S must be nonempty")

    @property
    def geometric(self) -> bool:
        return self.oracle is not None

    @property
    def ell(self) -> int:
        """Segment length ceil(eps log n)."""
        return math.ceil(self.eps * math.log(self.n) - 1e-12)

    @property
    def slack(self) -> int:
        """Alignment slack eps^3 log n rounded up to an integer."""
        return math.ceil(self.eps**3 * math.log(self.n) - 1e-12)

    def chain_slack(self) -> int:
        return math.ceil(self.eps**2 * math.log(self.n) - 1e-12)

    def w(self, i: int):
        if not self.geometric:
            return None
        if i < len(self.base_words):
            return self.base_words[i]
        return self.oracle.G.identity


@dataclass(frozen=True)
class StepRecord:
    k: int
    triple: tuple
    W: NormalForm | None
    V: NormalForm | None
    U: NormalForm | None
    z: NormalForm | None
    P: tuple
    branch: str  # "A", "B" or "B0" (no admissible m)
    m: int | None = None


@dataclass(frozen=True)
class PivotState:
    k: int
    W: NormalForm | None
    z: NormalForm | None
    P: tuple
    Vs: tuple  # V_1 .. V_k
    z_rel: NormalForm | None = None  # W_k^-1 z_k
    rel: tuple = ()  # V_m^-1 W_k for m in P, same order as P


@dataclass(frozen=True)
class PivotTrace:
    steps: tuple
    final: PivotState

    @property
    def P(self) -> tuple:
        return self.final.P

    def P_at(self, j: int) -> tuple:
        return () if j == 0 else self.steps[j - 1].P


class _Geometry:
    """Alignment queries for the pivot criteria.

    Alignment is invariant under left translation, so criterion A at step k
    is evaluated on the chain translated by V_k^-1 and criterion B(m) on the
    chain translated by V_m^-1.  The translated chains involve only short
    relative elements, which makes memoising the answers effective.
    """

    def __init__(self, cfg: PivotConfig):
        self.cfg = cfg
        self.O = cfg.oracle
        self.G = self.O.G
        self.gl = gamma_word(cfg.period, cfg.ell, self.G)
        self.base = self.seg(self.G.identity)
        self._proj: dict = {}
        self._pts: dict = {}
        self._a: dict = {}
        self._b: dict = {}

    def project(self, item: SegmentItem, x: NormalForm) -> int:
        rel = self.G.relative(item.origin, x).word
        t = self._proj.get(rel)
        if t is None:
            t = axis_projection(self.O, self.cfg.period, rel).t
            self._proj[rel] = t
        return t

    def points(self, item) -> list:
        if not isinstance(item, SegmentItem):
            return [item]
        key = (item.origin.word, item.m, item.n)
        pts = self._pts.get(key)
        if pts is None:
            pts = item.points(self.G)
            self._pts[key] = pts
        return pts

    def seg(self, origin: NormalForm) -> SegmentItem:
        return SegmentItem(origin, self.cfg.period, 0, self.cfg.ell)

    def aligned(self, chain, K) -> bool:
        return is_aligned(self.O, chain, K, projector=self.project, points=self.points).aligned

    def criterion_a(self, x_rel: NormalForm, b: NormalForm, c: NormalForm, w: NormalForm) -> bool:
        """(x, gamma|, gamma(l) b gamma|, gamma(l) b gamma(l) c w) aligned, with x = V_k^-1 z_{k-1}."""
        key = (x_rel.word, b.word, c.word, w.word)
        hit = self._a.get(key)
        if hit is None:
            G = self.G
            u = G.reduce(self.gl + b.word)
            wr = G.reduce(u.word + self.gl + c.word + w.word)
            hit = self.aligned([x_rel, self.base, self.seg(u), wr], self.cfg.slack)
            self._a[key] = hit
        return hit

    def criterion_b(self, rel: NormalForm) -> bool:
        """(gamma|, V_m^-1 W_k) aligned."""
        hit = self._b.get(rel.word)
        if hit is None:
            hit = self.aligned([self.base, rel], self.cfg.slack)
            self._b[rel.word] = hit
        return hit


class PivotRunner:
    """Online pivot algorithm; ``step`` is pure so prefixes can be shared."""

    def __init__(self, cfg: PivotConfig):
        self.cfg = cfg
        self.geo = _Geometry(cfg) if cfg.geometric else None

    def initial(self) -> PivotState:
        cfg = self.cfg
        if cfg.geometric:
            G = cfg.oracle.G
            W = G.multiply(cfg.frame, cfg.w(0))
            return PivotState(0, W, cfg.frame, (), (), G.invert(cfg.w(0)), ())
        return PivotState(0, None, None, (), ())

    def step(self, st: PivotState, triple) -> tuple:
        cfg = self.cfg
        k = st.k + 1
        a, b, c = triple
        if not all(0 <= x < cfg.S_size for x in triple):
            raise PreconditionError(f"triple {triple} out of range for |S|={cfg.S_size}")
        if cfg.geometric:
            return self._step_geometric(st, k, a, b, c)
        okA = cfg.synthetic.criterion_a(k, triple)
        if okA:
            new = PivotState(k, None, None, st.P + (k,), st.Vs + (None,))
            return new, StepRecord(k, tuple(triple), None, None, None, None, new.P, "A")
        for m in reversed(st.P):
            if cfg.synthetic.criterion_b(k, m):
                P = tuple(p for p in st.P if p < m)
                new = PivotState(k, None, None, P, st.Vs + (None,))
                return new, StepRecord(k, tuple(triple), None, None, None, None, P, "B", m)
        new = PivotState(k, None, None, (), st.Vs + (None,))
        return new, StepRecord(k, tuple(triple), None, None, None, None, (), "B0")

    def _step_geometric(self, st: PivotState, k, a, b, c):
        cfg, geo = self.cfg, self.geo
        G = cfg.oracle.G
        S = cfg.linkage
        wk = cfg.w(k)
        step_word = S[a].word + geo.gl + S[b].word + geo.gl + S[c].word + wk.word  # W_{k-1}^-1 W_k
        V = G.multiply(st.W, S[a])
        U = G.multiply(V, geo.gl + S[b].word)
        W = G.multiply(U, geo.gl + S[c].word + wk.word)
        Vs = st.Vs + (V,)
        x_rel = G.multiply(G.invert(S[a]), st.z_rel)  # V_k^-1 z_{k-1}
        rel_prev = tuple(G.multiply(r, step_word) for r in st.rel)  # V_m^-1 W_k
        if geo.criterion_a(x_rel, S[b], S[c], wk):
            z_rel = G.invert(G.reduce(geo.gl + S[c].word + wk.word))  # W_k^-1 U_k
            new = PivotState(k, W, U, st.P + (k,), Vs, z_rel, rel_prev + (G.reduce(step_word[len(S[a].word):]),))
            return new, StepRecord(k, (a, b, c), W, V, U, U, new.P, "A")
        for i in range(len(st.P) - 1, -1, -1):
            m = st.P[i]
            if geo.criterion_b(rel_prev[i]):
                P = st.P[:i]
                z = st.Vs[m - 1]
                new = PivotState(k, W, z, P, Vs, G.invert(rel_prev[i]), rel_prev[:i])
                return new, StepRecord(k, (a, b, c), W, V, U, z, P, "B", m)
        new = PivotState(k, W, cfg.frame, (), Vs, G.relative(W, cfg.frame), ())
        return new, StepRecord(k, (a, b, c), W, V, U, cfg.frame, (), "B0")

    def run(self, s: Sequence) -> PivotTrace:
        st = self.initial()
        steps = []
        for triple in s:
            st, rec = self.step(st, triple)
            steps.append(rec)
        return PivotTrace(tuple(steps), st)

    def check_a_direct(self, z, V, U, W) -> bool:
        """Criterion A on the untranslated chain (reference for the translated evaluation)."""
        geo = self.geo
        return geo.aligned([z, geo.seg(V), geo.seg(U), W], self.cfg.slack)

    def check_b_direct(self, Vm, W) -> bool:
        geo = self.geo
        return geo.aligned([geo.seg(Vm), W], self.cfg.slack)


def as_triples(s) -> tuple:
    s = tuple(s)
    if s and not isinstance(s[0], (tuple, list)):
        if len(s) % 3:
            raise PreconditionError("flat sequence length must be a multiple of 3")
        s = tuple(tuple(s[i : i + 3]) for i in range(0, len(s), 3))
    return tuple(tuple(t) for t in s)


def run_pivots(cfg: PivotConfig, s, runner: PivotRunner | None = None) -> PivotTrace:
    return (runner or PivotRunner(cfg)).run(as_triples(s))


def pivoted_class(cfg: PivotConfig, s, trace: PivotTrace | None = None, budget: int = 100_000, runner=None) -> list:
    """All sequences obtained by changing b at pivotal times that re-run to the same pivot set."""
    runner = runner or PivotRunner(cfg)
    s = as_triples(s)
    trace = trace or runner.run(s)
    P = trace.P
    total = cfg.S_size ** len(P)
    if total > budget:
        raise EnumerationBudgetExceeded(f"{total} substitutions exceed budget {budget}")
    out = []
    for choice in itertools.product(range(cfg.S_size), repeat=len(P)):
        s2 = [list(t) for t in s]
        for p, b in zip(P, choice):
            s2[p - 1][1] = b
        s2 = tuple(tuple(t) for t in s2)
        if s2 == s or runner.run(s2).P == P:
            out.append(s2)
    return sorted(out)


def class_key(s, P) -> tuple:
    """(P, s with b masked at P): equal keys <=> pivoted from each other."""
    masked = tuple((a, None if i + 1 in P else b, c) for i, (a, b, c) in enumerate(s))
    return (tuple(P), masked)


def enumerate_pivot_sets(cfg: PivotConfig, k: int, budget: int = 2_000_000, runner=None) -> dict:
    """P_k for every s in S^{3k}, sharing work across common prefixes."""
    runner = runner or PivotRunner(cfg)
    n = cfg.S_size ** (3 * k)
    if n > budget:
        raise EnumerationBudgetExceeded(f"{n} sequences exceed budget {budget}")
    triples = list(itertools.product(range(cfg.S_size), repeat=3))
    out = {}

    def rec(st, prefix):
        if st.k == k:
            out[prefix] = st.P
            return
        for t in triples:
            st2, _ = runner.step(st, t)
            rec(st2, prefix + (t,))

    rec(runner.initial(), ())
    return out


@dataclass(frozen=True)
class ChainReport:
    chain: tuple
    aligned: bool
    slack: int
    length_budget_ok: bool  # eps log(sum |w_i| + k eps log n) <= log n
    hypothesis_value: float


def extract_aligned_chain(cfg: PivotConfig, trace: PivotTrace) -> ChainReport:
    """(z_0, V_i gamma, U_i gamma for pivots i, [z_k gamma], W_k) checked at slack ceil(eps^2 log n)."""
    if not cfg.geometric:
        raise PreconditionError("chain extraction needs geometric mode")
    runner_geo = _Geometry(cfg)
    G = cfg.oracle.G
    final = trace.final
    items = [cfg.frame]
    for i in final.P:
        rec = trace.steps[i - 1]
        items.append(runner_geo.seg(rec.V))
        items.append(runner_geo.seg(rec.U))
    if final.P and final.z != trace.steps[final.P[-1] - 1].U:
        items.append(runner_geo.seg(final.z))
    elif not final.P and final.z != cfg.frame and final.k > 0:
        items.append(runner_geo.seg(final.z))
    W = final.W if final.W is not None else G.multiply(cfg.frame, cfg.w(0))
    items.append(W)
    K = cfg.chain_slack()
    ok = runner_geo.aligned(items, K)
    k = final.k
    total = sum(cfg.oracle.length(cfg.w(i)) for i in range(k + 1)) + k * cfg.eps * math.log(cfg.n)
    hv = cfg.eps * math.log(total) if total > 0 else 0.0
    return ChainReport(tuple(items), ok, K, hv <= math.log(cfg.n), hv)


# ---------------------------------------------------------------------------
# tail dynamic programme


@dataclass(frozen=True)
class TailBoundTable:
    k_values: tuple
    probs: tuple  # exact P(#P_k <= k/2) as Fractions
    rho: float
    literal: tuple  # (1/10)^k for comparison; reported only
    distributions: tuple = field(default=(), repr=False)


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x).limit_denominator(10**12) if isinstance(x, float) else Fraction(x)


def saturated_tails(step_bounds: Callable[[int], object], p_A, k_max: int) -> list:
    """t_j = P(drop >= j+1) of the extremal chain: min(1 - p_A, bound(0), ..., bound(j))."""
    p_A = _frac(p_A)
    if not 0 <= p_A <= 1:
        raise InvalidTail("p_A must be a probability")
    tails = []
    cur = 1 - p_A
    for j in range(k_max + 1):
        b = _frac(step_bounds(j))
        if not 0 <= b <= 1:
            raise InvalidTail(f"bound({j}) = {b} is not in [0, 1]")
        if j == 0 and p_A + b < 1:
            raise InvalidTail(f"p_A + bound(0) = {p_A + b} < 1: the step law cannot sum to 1")
        cur = min(cur, b)
        tails.append(cur)
    return tails


def pivot_tail_dp(step_bounds: Callable[[int], object], p_A, k_max: int) -> TailBoundTable:
    """Exact law of #P_k for the chain: +1 w.p. p_A, else a drop of j+1 with the largest
    probabilities the bounds allow; drops below zero land on zero."""
    p_A = _frac(p_A)
    tails = saturated_tails(step_bounds, p_A, k_max)
    dist = {0: Fraction(1)}
    probs, dists = [], []
    for k in range(1, k_max + 1):
        new: dict = {}
        for c, pr in dist.items():
            new[c + 1] = new.get(c + 1, 0) + pr * p_A
            if c == 0:
                new[0] = new.get(0, 0) + pr * (1 - p_A)
                continue
            # drop exactly j+1 for j < c-1, and to zero with the remaining failure mass
            for j in range(c - 1):
                q = tails[j] - tails[j + 1]
                if q:
                    new[c - j - 1] = new.get(c - j - 1, 0) + pr * q
            rest = tails[c - 1] if c - 1 < len(tails) else tails[-1]
            if rest:
                new[0] = new.get(0, 0) + pr * rest
        dist = new
        probs.append(sum((pr for c, pr in dist.items() if 2 * c <= k), Fraction(0)))
        dists.append(dict(sorted(dist.items())))
    ks = tuple(range(1, k_max + 1))
    rho = fit_decay(ks, probs)
    return TailBoundTable(ks, tuple(probs), rho, tuple(Fraction(1, 10**k) for k in ks), tuple(dists))


def fit_decay(ks, probs) -> float:
    """exp of the least-squares slope of log p against k (positive entries only)."""
    pts = [(k, math.log(p)) for k, p in zip(ks, probs) if p > 0]
    if len(pts) < 2:
        return 0.0
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.array([p[1] for p in pts], dtype=float)
    slope = np.polyfit(x, y, 1)[0]
    return float(math.exp(slope))


def tenfold_tail_bounds(j: int) -> Fraction:
    """P(drop > j) <= 10^-(j+1)."""
    return Fraction(1, 10 ** (j + 1))


def per_step_success(s: int) -> Fraction:
    """(s-1)(s-2)(s-1)/s^3: chance that a uniform triple avoids the one bad a, the two bad b and the one bad c."""
    return Fraction((s - 1) * (s - 2) * (s - 1), s**3)


def synthetic_pivot_counts(
    p_A: float, p_B: float, k_max: int, trials: int, seed: int, chunk: int = 20000, branches: bool = False
):
    """#P_k for k = 1..k_max over many synthetic runs, vectorised across trials.

    Trial i uses ``SyntheticOracleSpec(p_A, p_B, trial_seed(seed, i))`` and
    reproduces ``run_pivots`` on that spec exactly.  With ``branches`` the
    per-trial counts of A, B and B0 steps are returned as well.
    """
    out = np.zeros((trials, k_max), dtype=np.int32)
    hist = np.zeros((trials, 3), dtype=np.int32)
    for lo in range(0, trials, chunk):
        hi = min(trials, lo + chunk)
        seeds = mix_np(np.uint64(seed & ((1 << 64) - 1)), np.arange(lo, hi, dtype=np.uint64))
        P = np.zeros((hi - lo, k_max + 1), dtype=bool)
        for k in range(1, k_max + 1):
            okA = uniform01_np(seeds, KIND_A, k) < p_A
            hist[lo:hi, 0] += okA
            P[okA, k] = True
            pending = ~okA
            for m in range(k - 1, 0, -1):
                cand = pending & P[:, m]
                if not cand.any():
                    continue
                okB = np.zeros_like(cand)
                okB[cand] = uniform01_np(seeds[cand], KIND_B, k, m) < p_B
                P[okB, m:] = False
                hist[lo:hi, 1] += okB
                pending &= ~okB
            hist[lo:hi, 2] += pending
            P[pending, :] = False
            out[lo:hi, k - 1] = P.sum(axis=1)
    return (out, hist) if branches else out


def spec_for_trial(p_A: float, p_B: float, seed: int, i: int) -> SyntheticOracleSpec:
    return SyntheticOracleSpec(p_A, p_B, trial_seed(seed, i))
