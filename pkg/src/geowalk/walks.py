"""Random walks on a presentation: step measures, sampling, drift and CLT statistics,
the dyadic Gromov-product identity, the coin-toss factorisation of a convolution
power, and deviation tails of Gromov products."""
from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .errors import (
    EnumerationBudgetExceeded,
    InsufficientTrials,
    InvalidMeasure,
    MissingCheckpoints,
    PreconditionError,
    ZeroVariance,
)
from .geometry import DistanceOracle, build_ball, default_ball, exact_oracle, gamma_word
from .group import FreeBackend, GroupPresentation, NormalForm
from .rng import MASK64, mix

MIN_TRIALS = 30


# ---------------------------------------------------------------------------
# step measures


def _as_prob(p):
    if isinstance(p, str):
        return Fraction(p)
    if isinstance(p, (int, Fraction)):
        return Fraction(p)
    return float(p)


@dataclass(frozen=True)
class StepMeasure:
    """Finitely many increment words with weights.

    ``variant`` is "srw", "finite" or "heavy".  A heavy-tailed measure picks
    a support word with the stated weights and then repeats it L times,
    where L follows a Zipf law with exponent ``zipf_s``; the p-th moment of
    |g| is finite exactly when zipf_s > p + 1.
    """

    support: tuple  # ((word, prob), ...)
    variant: str = "finite"
    zipf_s: float | None = None
    moment: float | None = None

    @property
    def words(self) -> tuple:
        return tuple(w for w, _ in self.support)

    @property
    def probs(self) -> np.ndarray:
        return np.array([float(p) for _, p in self.support])

    @property
    def cumulative(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    def exact_probs(self) -> list:
        out = []
        for _, p in self.support:
            out.append(p if isinstance(p, Fraction) else Fraction(p).limit_denominator(10**12))
        return out

    @property
    def single_letters(self) -> bool:
        return all(len(w) == 1 for w in self.words)


def _validate(G: GroupPresentation, support) -> tuple:
    if not support:
        raise InvalidMeasure("empty support")
    items = []
    for w, p in support:
        p = _as_prob(p)
        if not p > 0:
            raise InvalidMeasure(f"non-positive weight {p}")
        items.append((G.word(w), p))
    total = sum(p for _, p in items)
    exact = all(isinstance(p, Fraction) for _, p in items)
    if (exact and total != 1) or (not exact and abs(float(total) - 1.0) > 1e-9):
        raise InvalidMeasure(f"weights sum to {float(total)}, not 1")
    return tuple(items)


def generates_semigroup(G: GroupPresentation, words: Sequence, radius: int = 2, max_factors: int = 6) -> bool:
    """True if every element of the radius ball is a product of at most ``max_factors`` support words."""
    target = set(build_ball(G, radius).elements)
    b = G.backend
    reached = {()}
    frontier = {()}
    for _ in range(max_factors):
        nxt = set()
        for x in frontier:
            for w in words:
                st = b.load(x)
                for c in w:
                    b.push(st, c)
                y = b.freeze(st)
                if y not in reached:
                    nxt.add(y)
        reached |= nxt
        if target <= reached:
            return True
        frontier = nxt
        if not frontier:
            break
    return target <= reached


def _check_generates(G, words, check: bool):
    if check and not generates_semigroup(G, [w for w in words if w]):
        raise InvalidMeasure("support does not generate the group as a semigroup (radius-2 ball not reached)")


def simple_random_walk(G: GroupPresentation) -> StepMeasure:
    k = len(G.letters)
    return StepMeasure(tuple(((c,), Fraction(1, k)) for c in G.letters), "srw")


def finite_support(G: GroupPresentation, support, check_semigroup: bool = True) -> StepMeasure:
    items = _validate(G, support)
    _check_generates(G, [w for w, _ in items], check_semigroup)
    return StepMeasure(items, "finite")


def point_mass(G: GroupPresentation, word) -> StepMeasure:
    """Degenerate measure; it never generates an infinite group, so no semigroup check."""
    return StepMeasure(((G.word(word), Fraction(1)),), "finite")


def heavy_tail(G: GroupPresentation, p: float = 3.0, zipf_s: float | None = None, check_semigroup: bool = True) -> StepMeasure:
    """Uniform letter raised to a Zipf(s) power; default s = p + 2 keeps E|g|^p finite."""
    s = p + 2.0 if zipf_s is None else float(zipf_s)
    if not s > p + 1:
        raise InvalidMeasure(f"Zipf exponent {s} gives infinite {p}-th moment (need s > p + 1)")
    base = simple_random_walk(G)
    _check_generates(G, base.words, check_semigroup)
    return StepMeasure(base.support, "heavy", s, float(p))


def measure_from_spec(G: GroupPresentation, spec) -> StepMeasure:
    """Build a measure from a config value: "srw", {"heavy": p} or {"support": [[word, prob], ...]}."""
    if spec in (None, "srw"):
        return simple_random_walk(G)
    if isinstance(spec, dict):
        if "heavy" in spec:
            return heavy_tail(G, float(spec["heavy"]), spec.get("zipf_s"))
        if "support" in spec:
            return finite_support(G, [tuple(x) for x in spec["support"]], spec.get("check", True))
    raise InvalidMeasure(f"unrecognised measure spec {spec!r}")


# ---------------------------------------------------------------------------
# sampling


def walk_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & MASK64))


def _draw_indices(rng: np.random.Generator, mu: StepMeasure, n: int):
    idx = np.searchsorted(mu.cumulative, rng.random(n), side="right")
    np.minimum(idx, len(mu.support) - 1, out=idx)
    reps = rng.zipf(mu.zipf_s, n) if mu.variant == "heavy" else None
    return idx, reps


@dataclass(frozen=True)
class Checkpoint:
    m: int
    Z: NormalForm
    displacement: int


@dataclass(frozen=True)
class Trajectory:
    seed: int
    n: int
    increments: tuple
    checkpoints: tuple

    def at(self, m: int) -> Checkpoint:
        for c in self.checkpoints:
            if c.m == m:
                return c
        raise MissingCheckpoints(f"no checkpoint at m={m}")

    @property
    def displacement(self) -> int:
        return self.at(self.n).displacement


def default_checkpoints(n: int) -> list:
    """0, n and every power of two up to n."""
    pts = {0, n}
    j = 1
    while j <= n:
        pts.add(j)
        j *= 2
    return sorted(pts)


def multiples_grid(N: int, k: int) -> list:
    """Checkpoints N*i for i = 0..k; what the dyadic identity reads."""
    return [N * i for i in range(k + 1)]


def _lengths_oracle(G, oracle):
    if oracle is not None:
        return oracle
    return exact_oracle(G) if G.exact_length else default_ball(G)


def sample_walk(G: GroupPresentation, mu: StepMeasure, n: int, seed: int, checkpoints=None, oracle=None) -> Trajectory:
    """Z_m = g_1 ... g_m with g_i i.i.d. from mu; reduction is exact at every checkpoint."""
    if n < 0:
        raise PreconditionError("n must be >= 0")
    cps = sorted(set(default_checkpoints(n) if checkpoints is None else checkpoints))
    if cps and (cps[0] < 0 or cps[-1] > n):
        raise PreconditionError("checkpoints must lie in [0, n]")
    O = _lengths_oracle(G, oracle)
    rng = walk_rng(seed)
    idx, reps = _draw_indices(rng, mu, n)
    words = mu.words
    b = G.backend
    st = b.new_state()
    incs = []
    out = []
    want = set(cps)

    def record(m):
        Z = NormalForm(b.freeze(st), G.tag)
        out.append(Checkpoint(m, Z, O.length(Z)))

    if 0 in want:
        record(0)
    for i in range(n):
        w = words[idx[i]]
        if reps is not None:
            w = w * int(reps[i])
        incs.append(w)
        for c in w:
            b.push(st, c)
        if i + 1 in want:
            record(i + 1)
    return Trajectory(int(seed), n, tuple(incs), tuple(out))


def _fast_path_ok(G: GroupPresentation, mu: StepMeasure) -> bool:
    return isinstance(G.backend, FreeBackend) and mu.variant != "heavy" and mu.single_letters


def _free_batch(mu: StepMeasure, n: int, seeds, cps, want_final: bool):
    """Reduced-word stacks for a batch of free-group walks with single-letter steps."""
    B = len(seeds)
    letters = np.array([w[0] for w in mu.words], dtype=np.int16)
    draws = np.empty((B, n), dtype=np.int16)
    for r, s in enumerate(seeds):
        idx, _ = _draw_indices(walk_rng(s), mu, n)
        draws[r] = letters[idx]
    stack = np.zeros((B, n + 1), dtype=np.int16)
    L = np.zeros(B, dtype=np.int64)
    rows = np.arange(B)
    col = {m: j for j, m in enumerate(cps)}
    disp = np.zeros((B, len(cps)), dtype=np.int64)
    if 0 in col:
        disp[:, col[0]] = 0
    for i in range(n):
        l = draws[:, i]
        top = stack[rows, L - 1]  # index -1 reads the always-zero last column
        cancel = (top == -l) & (L > 0)
        keep = ~cancel
        L[cancel] -= 1
        stack[rows[keep], L[keep]] = l[keep]
        L[keep] += 1
        if i + 1 in col:
            disp[:, col[i + 1]] = L
    finals = None
    if want_final:
        finals = [tuple(int(c) for c in stack[r, : L[r]]) for r in range(B)]
    return disp, finals


def walk_batch(G: GroupPresentation, mu: StepMeasure, n: int, seeds, checkpoints=None, want_final=False, oracle=None):
    """Displacements (trials x checkpoints) and optionally the final elements, one walk per seed.

    Free groups with single-letter steps use a vectorised stack; the draws are
    the same as ``sample_walk`` so both paths return identical numbers.
    """
    cps = sorted(set(default_checkpoints(n) if checkpoints is None else checkpoints))
    seeds = list(seeds)
    if _fast_path_ok(G, mu):
        disp, finals = _free_batch(mu, n, seeds, cps, want_final)
        if finals is not None:
            finals = [NormalForm(w, G.tag) for w in finals]
        return disp, finals
    disp = np.zeros((len(seeds), len(cps)), dtype=np.int64)
    finals = [] if want_final else None
    for r, s in enumerate(seeds):
        tr = sample_walk(G, mu, n, s, cps if n in cps else cps + [n], oracle)
        got = {c.m: c.displacement for c in tr.checkpoints}
        disp[r] = [got[m] for m in cps]
        if want_final:
            finals.append(tr.at(n).Z)
    return disp, finals


def _batch_job(args):
    G, mu, n, seeds, cps, want_final = args
    return walk_batch(G, mu, n, seeds, cps, want_final)


def parallel_walks(G, mu, n, seeds, checkpoints=None, threads: int = 1, block: int = 2000, want_final=False):
    """Split seeds into fixed blocks, run them on ``threads`` processes, concatenate in block order.

    Block boundaries do not depend on ``threads``, so the result is identical
    for every worker count.
    """
    seeds = list(seeds)
    cps = sorted(set(default_checkpoints(n) if checkpoints is None else checkpoints))
    jobs = [(G, mu, n, seeds[i : i + block], cps, want_final) for i in range(0, len(seeds), block)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(_batch_job, jobs))
    else:
        parts = [_batch_job(j) for j in jobs]
    if not parts:
        return np.zeros((0, len(cps)), dtype=np.int64), ([] if want_final else None)
    disp = np.vstack([p[0] for p in parts])
    finals = [x for p in parts for x in p[1]] if want_final else None
    return disp, finals


def trial_seeds(master: int, trials: int, *salt: int) -> list:
    return [mix(master, *salt, i) for i in range(trials)]


# ---------------------------------------------------------------------------
# exact displacement chain for simple random walk on a free group


@dataclass(frozen=True)
class BirthDeathChain:
    """Displacement |Z_n| of SRW on F_r: from 0 always up, else up w.p. (2r-1)/2r, down w.p. 1/2r."""

    rank: int

    @property
    def up(self) -> Fraction:
        return Fraction(2 * self.rank - 1, 2 * self.rank)

    @property
    def down(self) -> Fraction:
        return 1 - self.up

    @property
    def drift(self) -> Fraction:
        return self.up - self.down

    @property
    def variance(self) -> Fraction:
        return 1 - self.drift**2

    def law(self, n: int, exact: bool = False):
        """Distribution of the displacement after n steps (Fractions if exact, else floats)."""
        if exact:
            p = [Fraction(0)] * (n + 1)
            p[0] = Fraction(1)
            up, dn = self.up, self.down
            for _ in range(n):
                q = [Fraction(0)] * (n + 1)
                q[1] += p[0]
                for d in range(1, n):
                    if p[d]:
                        q[d + 1] += p[d] * up
                        q[d - 1] += p[d] * dn
                if n >= 1 and p[n]:
                    q[n - 1] += p[n] * dn
                p = q
            return p
        up, dn = float(self.up), float(self.down)
        p = np.zeros(n + 2)
        p[0] = 1.0
        for _ in range(n):
            q = np.zeros(n + 2)
            q[1] += p[0]
            q[2:] += up * p[1:-1]
            q[:-1][: n + 1] += dn * p[1:]
            p = q
        return p[: n + 1]

    def moments(self, n: int, exact: bool = False):
        p = self.law(n, exact)
        if exact:
            mean = sum(d * x for d, x in enumerate(p))
            var = sum(d * d * x for d, x in enumerate(p)) - mean**2
            return mean, var
        d = np.arange(len(p))
        mean = float(d @ p)
        return mean, float((d * d) @ p - mean**2)


# ---------------------------------------------------------------------------
# drift and CLT


def wilson_interval(successes: int, trials: int, level: float = 0.95):
    if trials < 1:
        raise InsufficientTrials("Wilson interval needs at least one trial")
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def _displacements(data, n):
    if len(data) and isinstance(data[0], Trajectory):
        ns = {t.n for t in data}
        if len(ns) != 1:
            raise PreconditionError("trajectories must share n")
        n = ns.pop()
        return np.array([t.displacement for t in data], dtype=float), n
    if n is None:
        raise PreconditionError("n is required with raw displacements")
    return np.asarray(data, dtype=float), int(n)


@dataclass(frozen=True)
class DriftEstimate:
    trials: int
    n: int
    lam_hat: float
    ci: tuple
    se: float


def drift_estimate(data, n: int | None = None, level: float = 0.95) -> DriftEstimate:
    d, n = _displacements(data, n)
    if d.size < MIN_TRIALS:
        raise InsufficientTrials(f"need at least {MIN_TRIALS} trials, have {d.size}")
    if n <= 0:
        raise PreconditionError("n must be positive")
    lam = float(d.mean() / n)
    se = float(d.std(ddof=1) / math.sqrt(d.size) / n)
    z = stats.norm.ppf(0.5 + level / 2)
    return DriftEstimate(int(d.size), n, lam, (lam - z * se, lam + z * se), se)


@dataclass(frozen=True)
class CltReport:
    trials: int
    n: int
    lam_hat: float
    lam_ci: tuple
    sigma_hat: float
    sigma_ci: tuple
    lam: float
    sigma: float
    plug_in: bool
    ks: float
    ks_pvalue: float
    csv_path: str | None = None


def clt_statistic(data, lam=None, sigma=None, n: int | None = None, level: float = 0.95) -> CltReport:
    """KS distance of (d - lam n)/(sigma sqrt n) against N(0,1).

    With lam and sigma omitted, the sample estimates are plugged in (the
    normalised statistic then converges to the same limit by Slutsky).
    """
    d, n = _displacements(data, n)
    if d.size < MIN_TRIALS:
        raise InsufficientTrials(f"need at least {MIN_TRIALS} trials, have {d.size}")
    est = drift_estimate(d, n, level)
    s2 = float(d.var(ddof=1)) / n
    sigma_hat = math.sqrt(s2)
    df = d.size - 1
    a = (1 - level) / 2
    sigma_ci = (
        math.sqrt(df * s2 / stats.chi2.ppf(1 - a, df)),
        math.sqrt(df * s2 / stats.chi2.ppf(a, df)),
    )
    plug_in = lam is None or sigma is None
    lam_used = est.lam_hat if lam is None else float(lam)
    sig_used = sigma_hat if sigma is None else float(sigma)
    if sig_used == 0:
        raise ZeroVariance("sigma is zero; the normalised displacement is undefined")
    z = (d - lam_used * n) / (sig_used * math.sqrt(n))
    ks = stats.kstest(z, "norm")
    return CltReport(
        int(d.size), n, est.lam_hat, est.ci, sigma_hat, sigma_ci, lam_used, sig_used, plug_in,
        float(ks.statistic), float(ks.pvalue),
    )


# ---------------------------------------------------------------------------
# dyadic identity


def dyadic_indices(k: int) -> list:
    """0 = i(0) < ... < i(2^L) = k with L = floor(log2 k), filled by repeated floor-midpoints.

    Consecutive gaps are 1 or 2.
    """
    if k < 1:
        raise PreconditionError("k must be >= 1")
    L = k.bit_length() - 1
    M = 1 << L
    idx = [0] * (M + 1)
    idx[M] = k
    step = M // 2
    while step >= 1:
        for j in range(step, M, 2 * step):
            idx[j] = (idx[j - step] + idx[j + step]) // 2
        step //= 2
    return idx


@dataclass(frozen=True)
class DyadicReport:
    N: int
    k: int
    displacement: int
    step_sum: int  # sum of d(Z_{N(i-1)}, Z_{Ni})
    pair_sum: Fraction  # Gromov products at the gap-2 positions
    level_sum: Fraction  # Gromov products over the binary merge levels
    level_sums: tuple
    I1: float
    I2: float
    I3: float
    residual: Fraction


def dyadic_decomposition(O: DistanceOracle, traj: Trajectory, N: int, k: int, center=(0.0, 0.0, 0.0)) -> DyadicReport:
    """Split d(id, Z_{Nk}) into block increments minus twice the Gromov products of a binary merge.

    With ``center`` = (0, 0, 0) the identity displacement/sqrt(Nk) = I1 - I2 - I3
    holds path by path; ``residual`` is that identity on the exact integer and
    half-integer sums.
    """
    if N < 1:
        raise PreconditionError("N must be >= 1")
    have = {c.m: c.Z for c in traj.checkpoints}
    missing = [N * i for i in range(k + 1) if N * i not in have]
    if missing:
        raise MissingCheckpoints(f"trajectory lacks checkpoints {missing[:8]}")
    Z = [have[N * i] for i in range(k + 1)]

    def gp(a, c, b):
        return Fraction(O.distance(Z[b], Z[a]) + O.distance(Z[b], Z[c]) - O.distance(Z[a], Z[c]), 2)

    idx = dyadic_indices(k)
    M = len(idx) - 1
    step_sum = sum(O.distance(Z[i - 1], Z[i]) for i in range(1, k + 1))
    pair_sum = Fraction(0)
    for t in range(M):
        if idx[t + 1] - idx[t] == 2:
            pair_sum += gp(idx[t], idx[t] + 2, idx[t] + 1)
    levels = []
    span = 2
    while span <= M:
        half = span // 2
        levels.append(sum((gp(idx[r], idx[r + span], idx[r + half]) for r in range(0, M, span)), Fraction(0)))
        span *= 2
    level_sum = sum(levels, Fraction(0))
    disp = O.distance(Z[0], Z[k])
    residual = disp - (step_sum - 2 * pair_sum - 2 * level_sum)
    scale = math.sqrt(N * k)
    return DyadicReport(
        N, k, disp, step_sum, pair_sum, level_sum, tuple(levels),
        (step_sum - center[0]) / scale, (2 * float(pair_sum) - center[1]) / scale,
        (2 * float(level_sum) - center[2]) / scale, residual,
    )


# ---------------------------------------------------------------------------
# coin-toss factorisation of a convolution power


@dataclass(frozen=True)
class DecompositionReport:
    N: int
    K: int
    m: int
    s: int
    p: Fraction
    q: Fraction
    min_margin: Fraction
    witness: NormalForm | None
    verdict: bool
    support_size: int
    tv: Fraction | None
    rows: tuple  # (element, mu_N, q_muS) sorted ShortLex
    nu: dict = field(repr=False, default_factory=dict)
    triples: tuple = field(repr=False, default=())


def convolution_power(G: GroupPresentation, mu: StepMeasure, N: int, budget: int = 2_000_000) -> dict:
    """Exact law of g_1...g_N as {normal-form word: Fraction}."""
    if mu.variant == "heavy":
        raise PreconditionError("exact convolution needs a finitely supported measure")
    probs = mu.exact_probs()
    D = math.lcm(*(p.denominator for p in probs))
    weights = [(w, int(p * D)) for w, p in zip(mu.words, probs)]
    b = G.backend
    cur = {(): 1}
    for _ in range(N):
        nxt = defaultdict(int)
        for x, c in cur.items():
            for w, wt in weights:
                st = b.load(x)
                for l in w:
                    b.push(st, l)
                nxt[b.freeze(st)] += c * wt
        if len(nxt) > budget:
            raise EnumerationBudgetExceeded(f"support of the {N}-fold convolution exceeds {budget}")
        cur = nxt
    den = D**N
    return {x: Fraction(c, den) for x, c in cur.items()}


def _letter_mass(G, mu) -> Fraction:
    mass = defaultdict(Fraction)
    for w, p in zip(mu.words, mu.exact_probs()):
        red = G.reduce(w).word
        if len(red) == 1:
            mass[red[0]] += p
    missing = [c for c in G.letters if mass[c] == 0]
    if missing:
        raise PreconditionError(f"measure must charge every generator; missing {[G.format_word((c,)) for c in missing]}")
    return min(mass[c] for c in G.letters)


def decompose_convolution(
    G: GroupPresentation, mu: StepMeasure, S, m: int, K: int, period=None, coef=None, budget: int = 2_000_000,
) -> DecompositionReport:
    """Check that mu^{*N} - q mu_{S'} is non-negative, N = 3K + 2m, q = coef^3 p^N.

    mu_{S'} is the law of a gamma(m) b gamma(m) c with a, b, c uniform on S and
    p the least weight mu gives a generator.  ``coef`` defaults to |S|.
    """
    elements = tuple(G.reduce(x) for x in getattr(S, "elements", S))
    period = tuple(getattr(S, "period", None) or period or ())
    if not elements:
        raise PreconditionError("S must be non-empty")
    if m > 0 and not period:
        raise PreconditionError("an axis period is required when m > 0")
    s = len(elements)
    coef = s if coef is None else coef
    N = 3 * K + 2 * m
    p = _letter_mass(G, mu)
    q = Fraction(coef) ** 3 * p**N
    gm = gamma_word(period, m, G) if m else ()
    muN = convolution_power(G, mu, N, budget)
    counts = defaultdict(int)
    triples = []
    for a in elements:
        for b_ in elements:
            for c in elements:
                x = G.reduce(a.word + gm + b_.word + gm + c.word).word
                counts[x] += 1
                triples.append(x)
    per_triple = q / s**3
    keys = set(muN) | set(counts)
    rows = []
    min_margin, witness = None, None
    for x in keys:
        qs = per_triple * counts.get(x, 0)
        mg = muN.get(x, Fraction(0)) - qs
        if min_margin is None or mg < min_margin or (mg == min_margin and _sl(x) < _sl(witness.word)):
            min_margin, witness = mg, NormalForm(x, G.tag)
        rows.append((x, muN.get(x, Fraction(0)), qs))
    rows.sort(key=lambda r: _sl(r[0]))
    verdict = min_margin >= 0 and q < 1
    nu, tv = {}, None
    if verdict:
        for x, mn, qs in rows:
            v = (mn - qs) / (1 - q)
            if v:
                nu[x] = v
        tv = sum((abs(q * counts.get(x, 0) / s**3 + (1 - q) * nu.get(x, 0) - muN.get(x, 0)) for x in keys), Fraction(0)) / 2
    return DecompositionReport(
        N, K, m, s, p, q, min_margin, witness, verdict, len(muN), tv,
        tuple((NormalForm(x, G.tag), a, b) for x, a, b in rows), nu, tuple(triples),
    )


def _sl(w):
    from .group import shortlex_key

    return shortlex_key(w)


class CoinTossSampler:
    """Draw one block of N steps: with probability q a uniform a gamma b gamma c, otherwise from nu."""

    def __init__(self, G: GroupPresentation, report: DecompositionReport):
        if not report.verdict:
            raise PreconditionError("decomposition margin is negative; nu is not a probability measure")
        self.G = G
        self.q = float(report.q)
        self.triples = report.triples
        keys = sorted(report.nu, key=_sl)
        self.nu_keys = keys
        w = np.array([float(report.nu[k]) for k in keys])
        self.nu_cum = np.cumsum(w / w.sum())
        self.nu_cum[-1] = 1.0

    def sample(self, rng: np.random.Generator):
        """Returns (element word, rho) with rho = 1 for a pivot-shaped block."""
        if rng.random() < self.q:
            return self.triples[int(rng.integers(len(self.triples)))], 1
        j = int(np.searchsorted(self.nu_cum, rng.random(), side="right"))
        return self.nu_keys[min(j, len(self.nu_keys) - 1)], 0

    def walk(self, blocks: int, seed: int):
        """Product g_1 ... g_blocks of independent blocks, with the coin flips."""
        rng = walk_rng(seed)
        b = self.G.backend
        st = b.new_state()
        rhos = []
        for _ in range(blocks):
            w, r = self.sample(rng)
            rhos.append(r)
            for c in w:
                b.push(st, c)
        return NormalForm(b.freeze(st), self.G.tag), rhos


# ---------------------------------------------------------------------------
# deviation tails


@dataclass(frozen=True)
class DeviationRow:
    n: int
    threshold: float
    count_exceed: int
    trials: int
    p_hat: float
    ci: tuple
    second_moment: float
    max_product: Fraction


@dataclass(frozen=True)
class DeviationReport:
    alpha: float
    x: str
    rows: tuple


def deviation_tail(
    G: GroupPresentation,
    mu: StepMeasure,
    alpha: float,
    x,
    n_grid: Sequence[int],
    trials: int,
    seed: int,
    oracle: DistanceOracle | None = None,
    level: float = 0.99,
    threads: int = 1,
) -> DeviationReport:
    """Empirical P[(x, Z_n)_id >= n^{3 alpha}] and E[(x, Z_n)_id^2] for each n.

    ``x`` is an element, or a callable n -> element (for instance a^n).
    """
    if trials < 1:
        raise InsufficientTrials("deviation tail needs at least one trial")
    O = _lengths_oracle(G, oracle)
    xf = x if callable(x) else (lambda n, _x=G.reduce(x): _x)
    rows = []
    for n in n_grid:
        xn = G.reduce(xf(n))
        lx = O.length(xn)
        _, finals = parallel_walks(G, mu, n, trial_seeds(seed, trials, n), [n], threads, want_final=True)
        thr = n ** (3 * alpha)
        gps = [Fraction(lx + O.length(Z) - O.distance(xn, Z), 2) for Z in finals]
        cnt = sum(1 for g in gps if g >= thr)
        rows.append(
            DeviationRow(
                n, thr, cnt, trials, cnt / trials, wilson_interval(cnt, trials, level),
                float(sum(g * g for g in gps) / trials), max(gps),
            )
        )
    desc = "callable" if callable(x) else G.format_word(G.reduce(x))
    return DeviationReport(alpha, desc, tuple(rows))
