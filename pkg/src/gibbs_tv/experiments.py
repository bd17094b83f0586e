"""Experiment orchestration behind the command-line interface.

Every runner is deterministic given its config: replicas draw from
counter-based streams keyed by the master seed, per-replica results are
gathered by index, and reports carry no timestamps.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import kstest

from . import bounds, oracle, truncnorm
from .coupling import Mode, clopper_pearson_upper, ensemble_coupled_step, max_couple, one_shot_schedule
from .graph import NeighborhoodGraph, build_custom_graph, build_grid_graph, load_graph
from .imageio import PgmImage, write_observation, write_pgm
from .metrics import PairSummary, fit_decay_rate, summarize_arrays, write_summary_csv
from .model import ModelParams, conditional_mean, load_params
from .rng import SeededStream, stream_key
from .sampler import ChainState, degrade, ensemble_gibbs_step, run_chain

SEED_ENV = "GIBBS_TV_SEED"
DEFAULT_SEED = 20240101


def default_seed() -> int:
    return int(os.environ.get(SEED_ENV, DEFAULT_SEED))


@dataclass
class ExperimentConfig:
    # model: either files or a grid with a constant / explicit observation
    model: str | None = None
    graph: str | None = None
    width: int = 2
    height: int = 2
    scheme: str = "N4"
    gamma: float = 1.0
    sigma: float = 1.0
    y: list[float] | None = None
    y_value: float = 0.5

    epsilon: float = 0.1
    replicas: int = 10_000
    seed: int = field(default_factory=default_seed)
    workers: int = 1
    chunk_size: int = 2048

    # contraction
    steps: int = 120
    record_every: int = 1
    init: str = "extremal"
    rate_tolerance: float = 0.005

    # restore: run the recommended schedule, or at least ``sweeps`` sweeps
    # of N updates for a smoother average, never more than max_steps
    max_steps: int = 200_000
    sweeps: int = 0

    # collector
    collector_sizes: list[int] = field(default_factory=lambda: [4, 16, 64])
    collector_epsilons: list[float] = field(default_factory=lambda: [0.1, 0.01])
    collector_replicas: int = 100_000

    # verify
    iterations: int = 1000
    coupling_trials: int = 100_000
    coupling_pairs: int = 20
    oracle_levels: int = 17
    oracle_t_max: int = 40

    out: str = "."

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError("replicas must be at least 1")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        with open(path) as fh:
            doc = json.load(fh)
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(doc)

    def build(self) -> tuple[ModelParams, NeighborhoodGraph]:
        graph = load_graph(self.graph) if self.graph else build_grid_graph(self.width, self.height, self.scheme)
        if self.model:
            params = load_params(self.model)
        else:
            y = self.y if self.y is not None else [self.y_value] * graph.num_sites
            params = ModelParams(self.gamma, self.sigma, y)
        params.check(graph)
        return params, graph

    def stream(self, purpose: str, replica: int = 0, role: str = "main") -> SeededStream:
        return SeededStream(self.seed, purpose, replica, role)

    def path(self, name: str) -> Path:
        p = Path(self.out)
        p.mkdir(parents=True, exist_ok=True)
        return p / name


def dump_json(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _map_chunks(fn: Callable, replicas: int, chunk_size: int, workers: int) -> list:
    chunks = [np.arange(s, min(s + chunk_size, replicas)) for s in range(0, replicas, chunk_size)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, chunks))
    return [fn(c) for c in chunks]


def _inits(cfg: ExperimentConfig, N: int) -> tuple[np.ndarray, np.ndarray]:
    if cfg.init == "extremal":
        return np.zeros(N), np.ones(N)
    if cfg.init == "equal":
        return np.full(N, 0.5), np.full(N, 0.5)
    raise ValueError(f"unknown init {cfg.init!r}")


# -- bound -------------------------------------------------------------------


def run_bound(cfg: ExperimentConfig) -> bounds.BoundReport:
    params, graph = cfg.build()
    return bounds.tv_mixing_time(params, graph, cfg.epsilon)


# -- contraction -------------------------------------------------------------


def coupled_series(params, graph, mode, init_x, init_z, key, replicas, steps, record_every):
    """Per-replica (weighted d, taxicab, X != Z) at recorded times."""
    R = replicas.size
    X = np.tile(init_x, (R, 1))
    Z = np.tile(init_z, (R, 1))
    deg = graph.degrees.astype(np.float64)
    times, d, dh, neq = [], [], [], []

    def record(t):
        diff = np.abs(X - Z)
        times.append(t)
        d.append(diff @ deg)
        dh.append(diff.sum(axis=1))
        neq.append(np.any(X != Z, axis=1))

    record(0)
    for t in range(steps):
        ensemble_coupled_step(X, Z, t, mode, params, graph, key, replicas)
        if (t + 1) % record_every == 0 or t + 1 == steps:
            record(t + 1)
    return times, np.array(d).T, np.array(dh).T, np.array(neq).T


def _summaries(times, d, dh, neq) -> list[PairSummary]:
    out = []
    R = d.shape[0]
    for k, t in enumerate(times):
        def ms(v):
            v = v.astype(np.float64)
            return float(v.mean()), float(v.std(ddof=1) / math.sqrt(R)) if R > 1 else math.nan

        md, sd = ms(d[:, k])
        mh, sh = ms(dh[:, k])
        mf, sf = ms(neq[:, k])
        out.append(PairSummary(int(t), md, sd, mh, sh, mf, sf, R))
    return out


def run_contraction_experiment(cfg: ExperimentConfig, write: bool = True) -> dict:
    params, graph = cfg.build()
    init_x, init_z = _inits(cfg, graph.num_sites)
    key = stream_key(cfg.seed, "contraction", "pair")

    def work(idx):
        return coupled_series(params, graph, Mode.SYNCHRONOUS, init_x, init_z, key, idx, cfg.steps, cfg.record_every)

    parts = _map_chunks(work, cfg.replicas, cfg.chunk_size, cfg.workers)
    times = parts[0][0]
    d, dh, neq = (np.concatenate([p[k] for p in parts]) for k in (1, 2, 3))
    rows = _summaries(times, d, dh, neq)
    theory = bounds.contraction_rate(graph.num_sites, graph.n_max, params.gamma, params.sigma)
    if all(r.mean_weighted_d == 0 for r in rows):
        fit = None
        verdict = "degenerate"
    else:
        fit = fit_decay_rate([r.t for r in rows], [r.mean_weighted_d for r in rows], [r.se_weighted_d for r in rows])
        if fit.degenerate:
            verdict = "degenerate"
        else:
            verdict = "pass" if fit.rate <= theory + cfg.rate_tolerance else "fail"
    report = {
        "mode": "contraction",
        "replicas": cfg.replicas,
        "steps": cfg.steps,
        "theoretical_rate": theory,
        "fit": fit.to_json() if fit else None,
        "tolerance": cfg.rate_tolerance,
        "verdict": verdict,
    }
    if write:
        write_summary_csv(rows, cfg.path("contraction.csv"))
        dump_json(report, cfg.path("contraction.json"))
    report["series"] = rows
    return report


# -- certificate -------------------------------------------------------------


def run_certificate_experiment(cfg: ExperimentConfig, write: bool = True) -> dict:
    params, graph = cfg.build()
    bound = bounds.tv_mixing_time(params, graph, cfg.epsilon)
    init_x, init_z = _inits(cfg, graph.num_sites)
    shot = one_shot_schedule(
        params, graph, cfg.epsilon, init_x, init_z, cfg.stream("certificate", role="pair"),
        cfg.replicas, workers=cfg.workers, chunk_size=cfg.chunk_size, bound=bound,
    )
    if not shot.ci_usable:
        verdict = "inconclusive"
    else:
        verdict = "pass" if shot.passes else "fail"
    report = {"mode": "certificate", "bound": bound.to_json(), "one_shot": shot.to_json(), "verdict": verdict}
    if write:
        dump_json(report, cfg.path("certificate.json"))
        shot.write_times_csv(cfg.path("certificate_times.csv"))
        cfg.path("certificate.txt").write_text(render_certificate(bound, shot, verdict) + "\n")
    return report


def render_certificate(bound: bounds.BoundReport, shot, verdict: str) -> str:
    ci = f"{shot.upper_95:.6f}" if shot.ci_usable else "unusable (single replica)"
    return "\n".join(
        [
            bound.render(),
            "",
            f"replicas                       {shot.replicas}",
            f"noncoalesced at tau + M        {shot.noncoalesced_count} ({shot.noncoalesced_fraction:.6f})",
            f"95% upper confidence limit     {ci}",
            f"replicas with cover time > M   {shot.coupon_time_exceeded_count}",
            f"replicas identical at tau      {shot.identical_at_tau_count}",
            f"verdict                        {verdict}",
            f"note: {shot.surrogate_note}",
        ]
    )


# -- degrade / restore -------------------------------------------------------


def degrade_image(cfg: ExperimentConfig, image: PgmImage) -> np.ndarray:
    return degrade(image.pixels, cfg.sigma, cfg.stream("degrade"))


def restore_observation(cfg: ExperimentConfig, y: np.ndarray, width: int, height: int) -> tuple[PgmImage, dict]:
    graph = build_grid_graph(width, height, cfg.scheme)
    params = ModelParams(cfg.gamma, cfg.sigma, y)
    try:
        bound = bounds.tv_mixing_time(params, graph, cfg.epsilon)
        recommended = bound.schedule
        bound_json = bound.to_json()
    except bounds.BoundError as exc:
        recommended, bound_json = cfg.max_steps, {"error": str(exc)}
    steps = min(max(recommended, cfg.sweeps * graph.num_sites), cfg.max_steps)
    init = ChainState(np.clip(y, 0.0, 1.0))
    run = run_chain(init, steps, params, graph, cfg.stream("restore"), record_every=max(1, steps))
    restored = PgmImage(width, height, np.clip(run.mean, 0.0, 1.0))
    diag = {
        "steps_run": steps,
        "steps_recommended": recommended,
        "capped": steps < max(recommended, cfg.sweeps * graph.num_sites),
        "sweeps": steps / graph.num_sites,
        "bound": bound_json,
    }
    return restored, diag


def degrade_and_restore(cfg: ExperimentConfig, image: PgmImage, write: bool = True):
    y = degrade_image(cfg, image)
    restored, diag = restore_observation(cfg, y, image.width, image.height)
    if write:
        write_observation(y, cfg.path("observed.y"), image.width, image.height, sigma=cfg.sigma)
        write_pgm(restored, cfg.path("restored.pgm"))
        dump_json(diag, cfg.path("restore.json"))
    return y, restored, diag


# -- coupon collector --------------------------------------------------------


def run_collector_experiment(cfg: ExperimentConfig, write: bool = True) -> dict:
    rows = []
    for N in cfg.collector_sizes:
        for eps in cfg.collector_epsilons:
            M = bounds.coupon_collector_M(N, eps)
            exact = oracle.coupon_collector_tail(N, M)
            gen = cfg.stream("collector", replica=N, role=repr(eps)).generator()
            sim = oracle.simulate_coupon_collector(N, M, cfg.collector_replicas, gen)
            se = math.sqrt(exact * (1 - exact) / cfg.collector_replicas)
            ok_bound = exact <= eps / 2
            ok_sim = abs(sim - exact) <= 3 * se
            rows.append(
                {"N": N, "epsilon": eps, "M": M, "exact_tail": exact, "simulated_tail": sim,
                 "binomial_se": se, "bound_holds": ok_bound, "simulation_agrees": ok_sim}
            )
    verdict = "pass" if all(r["bound_holds"] and r["simulation_agrees"] for r in rows) else "fail"
    report = {"mode": "collector", "replicas": cfg.collector_replicas, "rows": rows, "verdict": verdict}
    if write:
        dump_json(report, cfg.path("collector.json"))
    return report


# -- oracle cross-check ------------------------------------------------------


def two_site_model() -> tuple[ModelParams, NeighborhoodGraph]:
    return ModelParams(1.0, 1.0, [0.5, 0.5]), build_custom_graph([(0, 1)], 2)


def run_oracle_crosscheck(cfg: ExperimentConfig, params=None, graph=None) -> dict:
    """Exact discretised TV against the maximal-coupling noncoalescence rate."""
    if params is None:
        params, graph = two_site_model()
    init_x, init_z = np.zeros(graph.num_sites), np.ones(graph.num_sites)
    tv = oracle.discretized_chain_exact_tv(params, graph, cfg.oracle_levels, init_x, init_z, cfg.oracle_t_max)
    key = stream_key(cfg.seed, "oracle-crosscheck", "pair")

    def work(idx):
        return coupled_series(params, graph, Mode.MAXIMAL, init_x, init_z, key, idx, cfg.oracle_t_max, 1)[3]

    neq = np.concatenate(_map_chunks(work, cfg.replicas, cfg.chunk_size, cfg.workers))
    counts = neq.sum(axis=0)
    upper = np.array([clopper_pearson_upper(int(c), cfg.replicas) for c in counts])
    monotone = bool(np.all(np.diff(tv) <= 1e-12))
    dominated = bool(np.all(tv <= upper + 1e-12))
    return {
        "tv": tv.tolist(),
        "noncoalesced": (counts / cfg.replicas).tolist(),
        "upper_95": upper.tolist(),
        "monotone": monotone,
        "dominated": dominated,
        "verdict": "pass" if monotone and dominated else "fail",
    }


# -- verification suite ------------------------------------------------------


def _suite(name, passed, total, **extra) -> dict:
    status = "skipped" if total == 0 else ("pass" if passed == total else "fail")
    return {"name": name, "status": status, "passed": int(passed), "total": int(total), **extra}


def _draw_params(gen, n):
    m1 = gen.uniform(-2, 3, n)
    m2 = gen.uniform(-2, 3, n)
    v = gen.uniform(0.01, 5, n)
    return m1, m2, v


def mass_bound_suite(cfg, n, lower_bound=bounds.log_truncated_mass_lower_bound) -> dict:
    gen = cfg.stream("verify-mass-bound").generator()
    zeta, _, v = _draw_params(gen, n)
    lm = truncnorm.log_mass(zeta, v)
    ok = sum(bool(lm[k] >= lower_bound(zeta[k], v[k])) for k in range(n))
    return _suite("mass_lower_bound", ok, n)


def truncation_suite(cfg, n, tol=1e-9) -> dict:
    gen = cfg.stream("verify-truncation").generator()
    m1, m2, v = _draw_params(gen, n)
    ok = finite = 0
    for k in range(n):
        tv_num = oracle.numeric_tv_params(m1[k], v[k], m2[k], v[k])
        exact, _ = bounds.normal_tv(m1[k], m2[k], math.sqrt(v[k]))
        log_min_mass = min(float(truncnorm.log_mass(m1[k], v[k])), float(truncnorm.log_mass(m2[k], v[k])))
        with np.errstate(over="ignore"):
            bound = math.inf if exact > 0 and math.log(exact) - log_min_mass > 700 else (
                exact * math.exp(-log_min_mass)
            )
        ok += tv_num <= bound + tol
        finite += bound < 1
    return _suite("truncation_domination", ok, n, tolerance=tol, informative=finite)


def normal_tv_suite(cfg, n, tol=1e-9) -> dict:
    gen = cfg.stream("verify-normal-tv").generator()
    m1, m2, v = _draw_params(gen, n)
    ok_bound = ok_quad = 0
    for k in range(n):
        s = math.sqrt(v[k])
        exact, lin = bounds.normal_tv(m1[k], m2[k], s)
        ok_bound += exact <= lin
        ok_quad += abs(exact - oracle.numeric_tv_normal(m1[k], m2[k], s)) <= tol
    return _suite("normal_tv_linear_bound", min(ok_bound, ok_quad), n, bound_ok=ok_bound, quadrature_ok=ok_quad)


def coupling_suite(cfg, pairs, trials, alpha=0.001, tol=0.01) -> dict:
    """Meeting rate and both marginals of the maximal coupling."""
    gen = cfg.stream("verify-coupling-params").generator()
    m1, m2, v = _draw_params(gen, pairs)
    v2 = gen.uniform(0.01, 5, pairs)
    details = []
    ok = 0
    for k in range(pairs):
        # half the pairs share the variance (as in the chain), half do not
        vz = v[k] if k % 2 == 0 else v2[k]
        key = stream_key(cfg.seed, "verify-coupling", str(k))
        x, z, met = max_couple(m1[k], v[k], m2[k], vz, key, 0, np.arange(trials))
        tv = oracle.numeric_tv_params(m1[k], v[k], m2[k], vz)
        rate_ok = abs(met.mean() - (1 - tv)) <= tol
        px = kstest(x, lambda s: truncnorm.cdf(s, m1[k], v[k])).pvalue
        pz = kstest(z, lambda s: truncnorm.cdf(s, m2[k], vz)).pvalue
        good = bool(rate_ok and px > alpha and pz > alpha and np.all(x[met] == z[met]))
        ok += good
        details.append({"met_rate": float(met.mean()), "one_minus_tv": 1 - tv, "ks_x": px, "ks_z": pz, "ok": good})
    return _suite("maximal_coupling", ok, pairs, pairs_detail=details)


def sampler_suite(cfg, cases, draws=100_000, alpha=0.001) -> dict:
    gen = cfg.stream("verify-sampler-params").generator()
    ok = 0
    for k in range(cases):
        m, v = gen.uniform(-2, 3), gen.uniform(0.01, 5)
        u = SeededStream(cfg.seed, "verify-sampler", k).uniforms(np.arange(draws // 4 + 1)).ravel()[:draws]
        x = truncnorm.quantile(m, v, u)
        ok += kstest(x, lambda s: truncnorm.cdf(s, m, v)).pvalue > alpha
    return _suite("truncated_normal_ks", ok, cases)


def per_site_suite(cfg, states, trials=20_000) -> dict:
    """Empirical per-site non-meeting rate against the per-site bound.

    Models are drawn with weak coupling and nonnegative observations so that
    a good share of the bounds are below 1 (informative).
    """
    gen = cfg.stream("verify-per-site").generator()
    graph = build_grid_graph(3, 3, "N4")
    ok = informative = 0
    for k in range(states):
        params = ModelParams(gen.uniform(0.1, 1.0), gen.uniform(0.5, 3.0), gen.uniform(0, 1, graph.num_sites))
        var = 1.0 / (params.sigma**-2 + graph.degrees * params.gamma**2)
        zeta_i = var * (params.sigma**-2 * params.y + params.gamma**2 * graph.n_max)
        x = gen.uniform(0, 1, graph.num_sites)
        z = np.clip(x + gen.normal(0, 0.3, graph.num_sites), 0, 1)
        i = int(gen.integers(graph.num_sites))
        nb = list(graph.adjacency[i])
        mx = conditional_mean(params, graph.degrees[i], params.y[i], x[nb].sum())
        mz = conditional_mean(params, graph.degrees[i], params.y[i], z[nb].sum())
        l1 = float(np.abs(x[nb] - z[nb]).sum())
        bound = bounds.per_site_noncoalescence_bound(zeta_i[i], var[i], params.gamma, l1)
        informative += bound < 1
        key = stream_key(cfg.seed, "verify-per-site-draws", str(k))
        _, _, met = max_couple(mx, var[i], mz, var[i], key, 0, np.arange(trials))
        p = 1 - met.mean()
        ok += p <= min(1.0, bound) + 3 * math.sqrt(max(p * (1 - p), 1.0 / trials) / trials)
    return _suite("per_site_noncoalescence", ok, states, informative=int(informative))


def collector_suite(cfg) -> dict:
    rep = run_collector_experiment(dataclasses.replace(cfg, collector_replicas=min(cfg.collector_replicas, 20_000)), write=False)
    ok = sum(r["bound_holds"] and r["simulation_agrees"] for r in rep["rows"])
    return _suite("coupon_collector", ok, len(rep["rows"]))


def oracle_suite(cfg) -> dict:
    rep = run_oracle_crosscheck(dataclasses.replace(cfg, replicas=min(cfg.replicas, 10_000)))
    return _suite("oracle_crosscheck", int(rep["monotone"]) + int(rep["dominated"]), 2, tv=rep["tv"])


def verify_suite(cfg: ExperimentConfig, overrides: dict | None = None) -> dict:
    """Batch checks of the bound inequalities, samplers and couplings.

    ``overrides`` may replace ``"mass_lower_bound"`` (used for mutation
    testing of the suite itself).
    """
    overrides = overrides or {}
    n = cfg.iterations
    if n <= 0:
        return {"mode": "verify", "status": "skipped", "suites": []}
    suites = [
        mass_bound_suite(cfg, n, overrides.get("mass_lower_bound", bounds.log_truncated_mass_lower_bound)),
        truncation_suite(cfg, n),
        normal_tv_suite(cfg, n),
        sampler_suite(cfg, max(1, n // 200), draws=min(cfg.coupling_trials, 100_000)),
        coupling_suite(cfg, cfg.coupling_pairs, cfg.coupling_trials),
        per_site_suite(cfg, max(1, n // 20)),
        collector_suite(cfg),
        oracle_suite(cfg),
    ]
    status = "pass" if all(s["status"] == "pass" for s in suites) else "fail"
    return {"mode": "verify", "status": status, "suites": suites}
