"""Experiment configs, runners and artifact writing for the command line."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import SegmentItem, alignment_margins, find_linkage_set
from .cache import cached_ball
from .divergence import EndpointRule, divergence_profile, fit_growth
from .errors import AlphabetMismatch, ConfigError, InsufficientData, InvalidMeasure, PresentationError
from .geometry import axis_segment, exact_oracle, gamma_word
from .group import FreeBackend, GroupPresentation, parse_presentation
from .pivots import (
    PivotConfig,
    PivotRunner,
    tenfold_tail_bounds,
    pivot_tail_dp,
    synthetic_pivot_counts,
)
from .rng import trial_rng
from .walks import (
    BirthDeathChain,
    clt_statistic,
    decompose_convolution,
    deviation_tail,
    measure_from_spec,
    parallel_walks,
    trial_seeds,
)

KINDS = ("divergence", "walk-clt", "pivots", "linkage", "align", "decompose", "deviation")
# keys that never change results; left out of the config hash
_RUNTIME_KEYS = ("out_dir", "threads", "svg")


@dataclass
class ExperimentConfig:
    kind: str
    params: dict
    seed: int
    out_dir: Path
    threads: int = 1
    svg: bool = False

    def canonical(self) -> dict:
        d = {k: v for k, v in self.params.items() if k not in _RUNTIME_KEYS}
        d["kind"] = self.kind
        d["seed"] = self.seed
        return d

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class RunManifest:
    kind: str
    config_hash: str
    artifacts: list
    tool_version: str
    wall_time: float
    summary: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "config_hash": self.config_hash,
            "artifacts": self.artifacts,
            "tool_version": self.tool_version,
            "wall_time": self.wall_time,
        }


def load_config(source, kind=None, seed=None, out_dir=None, threads=None, svg=None) -> ExperimentConfig:
    """Parse a JSON config (path or dict) and apply command-line overrides."""
    if isinstance(source, dict):
        params = dict(source)
    else:
        try:
            params = json.loads(Path(source).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {source} not found") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(params, dict):
        raise ConfigError("config must be a JSON object")
    ck = params.get("kind")
    if kind is not None and ck is not None and ck != kind:
        raise ConfigError(f"config kind {ck!r} does not match command {kind!r}")
    kind = kind or ck
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    seed = params.get("seed") if seed is None else seed
    if seed is None:
        raise ConfigError("a seed is required")
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {seed!r}") from None
    threads = int(params.get("threads", 1) if threads is None else threads)
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    out = Path(out_dir or params.get("out_dir") or "out")
    svg = bool(params.get("svg", False) if svg is None else svg)
    params["kind"] = kind
    return ExperimentConfig(kind, params, seed, out, threads, svg)


# ---------------------------------------------------------------------------
# helpers


def _get(p: dict, key, typ=None, default=...):
    if key not in p:
        if default is ...:
            raise ConfigError(f"missing required key {key!r}")
        return default
    v = p[key]
    if typ is not None:
        try:
            v = typ(v)
        except (TypeError, ValueError):
            raise ConfigError(f"key {key!r} has invalid value {p[key]!r}") from None
    return v


def _presentation(p) -> GroupPresentation:
    try:
        return parse_presentation(_get(p, "presentation"))
    except PresentationError as e:
        raise ConfigError(f"bad presentation: {e}") from None


def _word(G, text):
    try:
        return G.word(text)
    except (AlphabetMismatch, ValueError) as e:
        raise ConfigError(f"bad word {text!r}: {e}") from None


def _measure(G, p):
    try:
        return measure_from_spec(G, p.get("measure", "srw"))
    except InvalidMeasure as e:
        raise ConfigError(str(e)) from None


def _oracle(G, p, need_ball=False):
    r = p.get("ball_radius")
    if r is None and G.exact_length and not need_ball:
        return exact_oracle(G)
    if r is None:
        raise ConfigError("ball_radius is required for this presentation or experiment")
    return cached_ball(G, int(r))


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(x) for x in r])
    return buf.getvalue().encode()


def _cell(x):
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, Fraction):
        return str(x)
    return x


def _json_bytes(d) -> bytes:
    return (json.dumps(d, sort_keys=True, indent=2, default=_jsonable) + "\n").encode()


def _jsonable(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"not JSON serialisable: {type(x)}")


class _Artifacts:
    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self.items = []

    def write(self, name: str, data: bytes):
        (self.dir / name).write_bytes(data)
        self.items.append({"name": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})


# ---------------------------------------------------------------------------
# runners; each returns a summary dict and writes its artifacts


def _run_divergence(cfg: ExperimentConfig, art: _Artifacts) -> dict:
    p = cfg.params
    G = _presentation(p)
    axis = _word(G, _get(p, "axis"))
    R_list = [int(r) for r in _get(p, "R_list")]
    O = _oracle(G, p, need_ball=True)
    half = int(p.get("window", O.radius + max(R_list) + 1))
    seg = axis_segment(G, axis, (-half, half), oracle=O)
    rule_p = _get(p, "rule")
    rule = EndpointRule(
        _word(G, _get(rule_p, "branch")), int(rule_p.get("scale", 1)), int(rule_p.get("offset", 0)),
        int(rule_p.get("extra", 1)),
    )
    sid = str(p.get("segment_id", "axis"))
    prof = divergence_profile(O, seg, R_list, p.get("theta"), rule, sid)
    rows = [
        (sid, r.R, G.format_word(r.p_minus), G.format_word(r.p_plus), "" if r.detour is None else str(r.detour), r.flag)
        for r in prof.rows
    ]
    art.write("divergence.csv", _csv_bytes(["segment_id", "R", "endpoint_minus", "endpoint_plus", "detour", "flag"], rows))
    summary = {"theta": prof.theta, "ball_radius": O.radius}
    try:
        fit = fit_growth(prof)
        summary.update(
            model=fit.model, degree=fit.degree, exp_rate=fit.exp_rate, ssr_poly=fit.ssr_poly,
            ssr_exp=fit.ssr_exp, ratios=list(fit.ratios), superlinear=fit.superlinear,
        )
    except InsufficientData as e:  # too few finite rows is a legitimate outcome here
        summary["fit_error"] = f"{type(e).__name__}: {e}"
    return summary


def _clt_params(G, mu, p):
    lam, s2 = p.get("lambda"), p.get("sigma2")
    if lam is None and s2 is None and isinstance(G.backend, FreeBackend) and mu.variant == "srw":
        ch = BirthDeathChain(G.backend.rank)
        return float(ch.drift), math.sqrt(ch.variance), "birth-death"
    if lam is None or s2 is None:
        return None, None, "plug-in"
    return float(lam), math.sqrt(float(s2)), "config"


def _run_walk_clt(cfg: ExperimentConfig, art: _Artifacts) -> dict:
    p = cfg.params
    G = _presentation(p)
    mu = _measure(G, p)
    n = _get(p, "n", int)
    trials = _get(p, "trials", int)
    disp, _ = parallel_walks(G, mu, n, trial_seeds(cfg.seed, trials), [n], cfg.threads)
    d = disp[:, 0]
    art.write("clt.csv", _csv_bytes(["trial", "n", "displacement"], ((i, n, int(x)) for i, x in enumerate(d))))
    lam, sig, source = _clt_params(G, mu, p)
    rep = clt_statistic(d, lam, sig, n=n)
    summary = {
        "trials": rep.trials, "n": n, "lambda_hat": rep.lam_hat, "lambda_ci": list(rep.lam_ci),
        "sigma_hat": rep.sigma_hat, "sigma_ci": list(rep.sigma_ci), "lambda": rep.lam, "sigma": rep.sigma,
        "normalisation": source, "ks": rep.ks, "ks_pvalue": rep.ks_pvalue,
    }
    if cfg.svg:
        from .svgplot import histogram_svg

        z = (d - rep.lam * n) / (rep.sigma * math.sqrt(n))
        notes = [f"n={n}", f"trials={rep.trials}", f"lambda_hat={rep.lam_hat:.6f}", f"sigma_hat={rep.sigma_hat:.6f}",
                 f"KS={rep.ks:.6f}"]
        art.write("histogram.svg", histogram_svg(z, notes).encode())
    return summary


def _run_pivots(cfg: ExperimentConfig, art: _Artifacts) -> dict:
    p = cfg.params
    k = _get(p, "k", int)
    trials = _get(p, "trials", int)
    mode = p.get("mode", "synthetic")
    rows = []
    if mode == "synthetic":
        pA, pB = _get(p, "p_A", float), _get(p, "p_B", float)
        counts, hist = synthetic_pivot_counts(pA, pB, k, trials, cfg.seed, branches=True)
        for i in range(trials):
            rows.append((i, k, int(counts[i, -1]), f"A:{hist[i,0]};B:{hist[i,1]};B0:{hist[i,2]}"))
        final = counts[:, -1]
    elif mode == "geometric":
        G = _presentation(p)
        O = _oracle(G, p)
        axis = _word(G, _get(p, "axis"))
        seg = axis_segment(G, axis, (-64, 64), oracle=O)
        lk = _get(p, "linkage")
        S = find_linkage_set(O, seg, int(lk["K"]), int(lk["m"]), float(lk["eps"]), int(lk.get("size", 4)))
        base = [_word(G, w) for w in p.get("base_words", [])]
        pc = PivotConfig(float(p.get("n_param", math.exp(10))), float(p.get("eps", 0.3)), S.elements, tuple(base),
                         O, axis)
        runner = PivotRunner(pc)
        s_size = len(S.elements)
        final = []
        for i in range(trials):
            rng = trial_rng(cfg.seed, i)
            s = [tuple(int(x) for x in rng.integers(0, s_size, 3)) for _ in range(k)]
            tr = runner.run(s)
            br = [st.branch for st in tr.steps]
            rows.append((i, k, len(tr.P), f"A:{br.count('A')};B:{br.count('B')};B0:{br.count('B0')}"))
            final.append(len(tr.P))
        final = np.array(final)
    else:
        raise ConfigError(f"unknown pivots mode {mode!r}")
    art.write("pivots.csv", _csv_bytes(["trial", "k", "num_pivots", "branch_histogram"], rows))
    summary = {"mode": mode, "k": k, "trials": trials, "mean_pivots": float(np.mean(final)) if len(final) else 0.0}
    k_max = int(p.get("dp_k_max", 0))
    if k_max:
        pA = Fraction(str(p.get("dp_p_A", p.get("p_A", "0.9"))))
        tab = pivot_tail_dp(tenfold_tail_bounds, pA, k_max)
        art.write("tail.csv", _csv_bytes(["k", "p_exact", "rho_fit"], ((kk, pr, tab.rho) for kk, pr in zip(tab.k_values, tab.probs))))
        summary["rho_fit"] = tab.rho
    return summary


def _run_linkage(cfg: ExperimentConfig, art: _Artifacts) -> dict:
    p = cfg.params
    G = _presentation(p)
    O = _oracle(G, p)
    axis = _word(G, _get(p, "axis"))
    K, m = _get(p, "K", int), _get(p, "m", int)
    seg = axis_segment(G, axis, (-(4 * K + m + 8), 4 * K + m + 8), oracle=O)
    S = find_linkage_set(O, seg, K, m, _get(p, "eps", float), int(p.get("size", 10)), int(p.get("budget", 1_000_000)))
    rows = [(G.format_word(r.element), "" if r.cond1_min_separation is None else r.cond1_min_separation, r.cond2_dist, r.cond3_dist) for r in S.rows]
    art.write("linkage.csv", _csv_bytes(["element", "cond1_min_separation", "cond2_dist", "cond3_dist"], rows))
    return {"size": len(S.elements), "examined": S.examined}


def _chain_item(G, it, period):
    if isinstance(it, str):
        return G.reduce(_word(G, it))
    if isinstance(it, dict):
        if "point" in it:
            return G.reduce(_word(G, it["point"]))
        return SegmentItem(G.reduce(_word(G, it.get("origin", ""))), _word(G, it.get("period", period)), int(it["m"]), int(it["n"]))
    raise ConfigError(f"bad chain item {it!r}")


def _run_align(cfg: ExperimentConfig, art: _Artifacts) -> dict:
    p = cfg.params
    G = _presentation(p)
    O = _oracle(G, p)
    chain = [_chain_item(G, it, p.get("axis", "")) for it in _get(p, "chain")]
    K = _get(p, "K", float)
    margins = alignment_margins(O, chain, K)
    rows = [(m.index, m.side, m.margin, int(m.ok)) for m in margins]
    art.write("align.csv", _csv_bytes(["pair", "side", "margin", "ok"], rows))
    return {"aligned": all(m.ok for m in margins), "K": K}


def _run_decompose(cfg: ExperimentConfig, art: _Artifacts) -> dict:
    p = cfg.params
    G = _presentation(p)
    mu = _measure(G, p)
    axis = _word(G, _get(p, "axis"))
    K, m = _get(p, "K", int), _get(p, "m", int)
    if "S" in p:
        S = [G.reduce(_word(G, w)) for w in p["S"]]
    else:
        O = _oracle(G, p)
        seg = axis_segment(G, axis, (-(4 * K + m + 8), 4 * K + m + 8), oracle=O)
        S = find_linkage_set(O, seg, K, int(p.get("linkage_m", m)), float(p.get("eps", 0.3)), int(p.get("size", 2))).elements
    rep = decompose_convolution(G, mu, S, m, K, period=axis, coef=p.get("coef"), budget=int(p.get("budget", 2_000_000)))
    rows = ((G.format_word(x), a, b) for x, a, b in rep.rows)
    art.write("decomposition.csv", _csv_bytes(["element", "mu_N", "q_muS"], rows))
    return {
        "N": rep.N, "s": rep.s, "p": rep.p, "q": rep.q, "min_margin": rep.min_margin, "verdict": rep.verdict,
        "support_size": rep.support_size, "tv": rep.tv, "witness": G.format_word(rep.witness),
        "S": [G.format_word(x) for x in S],
    }


def _run_deviation(cfg: ExperimentConfig, art: _Artifacts) -> dict:
    p = cfg.params
    G = _presentation(p)
    mu = _measure(G, p)
    xs = _get(p, "x")
    if isinstance(xs, dict) and "axis_power" in xs:
        per = _word(G, xs["axis_power"])
        x = lambda n: gamma_word(per, n, G)  # noqa: E731
    else:
        x = _word(G, xs)
    rep = deviation_tail(
        G, mu, _get(p, "alpha", float), x, [int(n) for n in _get(p, "n_grid")], _get(p, "trials", int), cfg.seed,
        threads=cfg.threads,
    )
    art.write("deviation.csv", _csv_bytes(["n", "count_exceed", "trials"], ((r.n, r.count_exceed, r.trials) for r in rep.rows)))
    return {
        "alpha": rep.alpha,
        "rows": [{"n": r.n, "threshold": r.threshold, "p_hat": r.p_hat, "ci": list(r.ci),
                  "second_moment": r.second_moment, "max_product": r.max_product} for r in rep.rows],
    }


RUNNERS = {
    "divergence": _run_divergence,
    "walk-clt": _run_walk_clt,
    "pivots": _run_pivots,
    "linkage": _run_linkage,
    "align": _run_align,
    "decompose": _run_decompose,
    "deviation": _run_deviation,
}


def run_experiment(source, **overrides) -> RunManifest:
    """Run one experiment; CSVs and summary.json first, manifest.json last."""
    cfg = source if isinstance(source, ExperimentConfig) else load_config(source, **overrides)
    t0 = time.perf_counter()
    art = _Artifacts(cfg.out_dir)
    summary = RUNNERS[cfg.kind](cfg, art)
    art.write("summary.json", _json_bytes(summary))
    man = RunManifest(cfg.kind, cfg.config_hash, art.items, __version__, time.perf_counter() - t0, summary)
    (cfg.out_dir / "manifest.json").write_bytes(_json_bytes(man.to_json()))
    return man
