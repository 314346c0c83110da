"""Experiment configuration, sweeps over the horizon, and scaling-law fits."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from avgpg import agent, oracle
from avgpg.estimator import estimate_advantage
from avgpg.mdp import (
    TabularMdp,
    constant_reward_mdp,
    gen_random_ergodic,
    load_mdp,
    make_two_state,
    sample_trajectory,
)
from avgpg.policy import PolicyKind, PolicyParams, make_policy, measure_constants
from avgpg.rng import stream

RUNS_COLUMNS = [
    "T", "seed", "H", "N", "K", "T_effective", "total_reward", "J_star", "regret",
    "avg_optimality_gap", "mean_grad_err_sq", "estimator_mse",
]
SUMMARY_COLUMNS = [
    "T", "H", "N", "K", "T_effective", "n_seeds",
    "regret_mean", "regret_se",
    "avg_optimality_gap_mean", "avg_optimality_gap_se",
    "mean_grad_err_sq_mean", "mean_grad_err_sq_se",
    "estimator_mse_mean", "estimator_mse_se",
]
# exponents the bounds suggest when H grows like sqrt(T); reported, never asserted
REFERENCE_SLOPES = {
    "regret_slope": 0.75,
    "gap_slope": -0.25,
    "grad_err_slope": -0.5,
    "estimator_mse_slope": -0.5,
}
FIT_METRICS = {
    "regret_slope": "regret",
    "gap_slope": "avg_optimality_gap",
    "grad_err_slope": "mean_grad_err_sq",
    "estimator_mse_slope": "estimator_mse",
}


class FitError(ValueError):
    pass


def fit_slope(points: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """OLS of log2(y) on log2(x); returns (slope, intercept, 1.96 * slope standard error)."""
    if len(points) < 3:
        raise FitError(f"need at least 3 points, got {len(points)}")
    xs = np.array([float(p[0]) for p in points])
    ys = np.array([float(p[1]) for p in points])
    for i, (x, y) in enumerate(zip(xs, ys)):
        if not y > 0:
            raise FitError(f"nonpositive y at point {i}: ({x}, {y})")
        if not x > 0:
            raise FitError(f"nonpositive x at point {i}: ({x}, {y})")
    if len(np.unique(xs)) != len(xs):
        raise FitError("x values must be distinct")
    lx, ly = np.log2(xs), np.log2(ys)
    mx = lx.mean()
    sxx = float(((lx - mx) ** 2).sum())
    slope = float(((lx - mx) * (ly - ly.mean())).sum() / sxx)
    intercept = float(ly.mean() - slope * mx)
    resid = ly - (intercept + slope * lx)
    dof = len(xs) - 2
    se = math.sqrt(float((resid**2).sum()) / dof / sxx) if dof > 0 else 0.0
    return slope, intercept, 1.96 * se


# -- configuration --------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Everything a sweep needs; JSON round-trips through :meth:`from_dict`.

    ``mdp_source`` is a fixture name (``"two_state"``), a path to an MDP JSON
    file, or ``{"generator": {n_states, n_actions, smoothing, seed[,
    constant_reward]}}``. ``alpha`` may be ``"auto"`` for 1/(4 L_hat).
    ``min_epochs``, when set, replaces ``c_H`` by the largest value giving
    at least that many epochs at the smallest T.
    """

    mdp_source: Any = "two_state"
    policy_kind: str = "tabular"
    T_grid: list[int] = field(default_factory=lambda: [2**16, 2**18, 2**20])
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    alpha: float | str = "auto"
    c_H: float = 1.0
    c_N: float = 1.0
    min_epochs: int | None = None
    diagnostics: bool = True
    output_dir: str | None = None
    master_seed: int = 0
    t_mix: int | None = None
    t_hit: float | None = None
    n_probes: int = 16
    probe_scale: float = 1.0
    probe_pair: tuple[int, int] = (0, 0)
    features: Any = None
    workers: int = 1

    def __post_init__(self):
        self.T_grid = [int(t) for t in self.T_grid]
        self.seeds = [int(s) for s in self.seeds]
        self.probe_pair = tuple(int(x) for x in self.probe_pair)
        if not self.T_grid or any(b <= a for a, b in zip(self.T_grid, self.T_grid[1:])):
            raise ValueError(f"T_grid must be nonempty and strictly increasing, got {self.T_grid}")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if isinstance(self.alpha, str) and self.alpha != "auto":
            raise ValueError(f"alpha must be a number or 'auto', got {self.alpha!r}")
        PolicyKind(self.policy_kind)

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        doc = dict(doc)
        if "T" in doc:
            doc["T_grid"] = [doc.pop("T")]
        if "seed" in doc:
            doc["seeds"] = [doc.pop("seed")]
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["probe_pair"] = list(self.probe_pair)
        return out


def load_mdp_source(source, base_dir: Path | None = None) -> tuple[TabularMdp, np.ndarray | None]:
    if isinstance(source, str):
        if source == "two_state":
            return make_two_state(), None
        path = Path(source)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return load_mdp(path)
    if isinstance(source, dict) and "generator" in source:
        spec = dict(source["generator"])
        value = spec.pop("constant_reward", None)
        if value is not None:
            return constant_reward_mdp(value=value, **spec), None
        return gen_random_ergodic(**spec), None
    if isinstance(source, dict) and "fixture" in source:
        return load_mdp_source(source["fixture"])
    if isinstance(source, dict) and "path" in source:
        return load_mdp_source(source["path"], base_dir)
    raise ValueError(f"unrecognized mdp_source: {source!r}")


def resolve_features(spec, mdp: TabularMdp, file_features: np.ndarray | None) -> np.ndarray | None:
    if spec is None:
        return file_features
    if isinstance(spec, dict) and "n_features" in spec:
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        return rng.standard_normal((mdp.n_states, mdp.n_actions, int(spec["n_features"])))
    return np.asarray(spec, dtype=float)


def probe_thetas(policy: PolicyParams, n_probes: int, scale: float, seed: int) -> list[np.ndarray]:
    """The zero vector followed by ``n_probes`` Gaussian draws of the given scale."""
    rng = stream(seed)
    return [np.zeros(policy.dim)] + [scale * rng.standard_normal(policy.dim) for _ in range(n_probes)]


def resolve_mixing_constants(mdp: TabularMdp, policy: PolicyParams, probes) -> tuple[int, float]:
    """Largest t_mix and t_hit seen over the probe parameters."""
    t_mix, t_hit = 1, 1.0
    for theta in probes:
        ev = oracle.evaluate(mdp, policy.with_theta(theta))
        t_mix = max(t_mix, oracle.mixing_time(ev.chain, ev.d))
        t_hit = max(t_hit, oracle.hitting_time(ev.d))
    return t_mix, t_hit


def c_H_for_min_epochs(T: int, t_mix: float, t_hit: float, min_epochs: int, c_N: float = 1.0) -> float:
    """A c_H within 1% of the largest for which make_schedule(T, ...) has K >= min_epochs."""
    base = 16 * t_hit * t_mix * math.sqrt(T) * math.log2(T) ** 2
    c = T / min_epochs / base
    for _ in range(2000):
        if agent.make_schedule(T, t_mix, t_hit, c, c_N).K >= min_epochs:
            return c
        c *= 0.99
    raise ValueError(f"no c_H reaches {min_epochs} epochs at T={T}")


@dataclass
class Resolved:
    config: ExperimentConfig
    mdp: TabularMdp
    policy: PolicyParams
    J_star: float
    t_mix: int
    t_hit: float
    c_H: float
    alpha: float

    def describe(self) -> dict:
        out = self.config.to_dict()
        out["resolved"] = {
            "J_star": self.J_star,
            "t_mix": self.t_mix,
            "t_hit": self.t_hit,
            "c_H": self.c_H,
            "alpha": self.alpha,
        }
        return out


def resolve(config: ExperimentConfig, base_dir: Path | None = None) -> Resolved:
    mdp, file_features = load_mdp_source(config.mdp_source, base_dir)
    features = resolve_features(config.features, mdp, file_features)
    policy = make_policy(config.policy_kind, mdp, features=features)
    probes = probe_thetas(policy, config.n_probes, config.probe_scale, config.master_seed)
    t_mix, t_hit = resolve_mixing_constants(mdp, policy, probes)
    if config.t_mix is not None:
        t_mix = int(config.t_mix)
    if config.t_hit is not None:
        t_hit = float(config.t_hit)
    c_H = config.c_H
    if config.min_epochs is not None:
        c_H = c_H_for_min_epochs(config.T_grid[0], t_mix, t_hit, config.min_epochs, config.c_N)
    if config.alpha == "auto":
        constants = measure_constants(config.policy_kind, mdp, probes, features)
        alpha = constants.recommended_alpha
        if not math.isfinite(alpha):
            alpha = 1.0
    else:
        alpha = float(config.alpha)
    J_star = oracle.optimal_gain(mdp)[0]
    return Resolved(config, mdp, policy, J_star, t_mix, t_hit, c_H, alpha)


# -- sweeps ----------------------------------------------------------------------


def run_cell(res: Resolved, t_index: int, seed: int) -> agent.RunLog:
    cfg = res.config
    T = cfg.T_grid[t_index]
    schedule = agent.make_schedule(T, res.t_mix, res.t_hit, res.c_H, cfg.c_N)
    return agent.run(
        res.mdp, res.policy, schedule, res.alpha, (cfg.master_seed, t_index, seed),
        diagnostics=cfg.diagnostics, J_star=res.J_star, probe_pair=cfg.probe_pair,
    )


def _cell_worker(args):
    res, t_index, seed = args
    return run_cell(res, t_index, seed)


@dataclass
class SweepSummary:
    runs: list[dict]
    per_T: list[dict]
    fits: dict
    resolved: dict
    logs: list[agent.RunLog] = field(default_factory=list)


def _mean_se(values: list) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.array(vals, dtype=float)
    se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return float(arr.mean()), se


def sweep(config: ExperimentConfig, base_dir: Path | None = None) -> SweepSummary:
    res = resolve(config, base_dir)
    cells = [(ti, seed) for ti in range(len(config.T_grid)) for seed in config.seeds]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_cell_worker, [(res, ti, s) for ti, s in cells]))
    else:
        outcomes = []
        for ti, seed in cells:
            try:
                outcomes.append(run_cell(res, ti, seed))
            except Exception as exc:
                raise RuntimeError(f"run failed at T={config.T_grid[ti]}, seed={seed}: {exc}") from exc

    runs = []
    for (ti, seed), log in zip(cells, outcomes):
        sch = log.schedule
        runs.append({
            "T": config.T_grid[ti], "seed": seed, "H": sch.H, "N": sch.N, "K": sch.K,
            "T_effective": sch.T_effective, "total_reward": log.total_reward,
            "J_star": log.J_star, "regret": log.regret,
            "avg_optimality_gap": log.avg_optimality_gap,
            "mean_grad_err_sq": log.mean_grad_err_sq, "estimator_mse": log.estimator_mse,
        })

    per_T = []
    for T in config.T_grid:
        rows = [r for r in runs if r["T"] == T]
        entry = {k: rows[0][k] for k in ("T", "H", "N", "K", "T_effective")}
        entry["n_seeds"] = len(rows)
        for metric in ("regret", "avg_optimality_gap", "mean_grad_err_sq", "estimator_mse"):
            entry[f"{metric}_mean"], entry[f"{metric}_se"] = _mean_se([r[metric] for r in rows])
        per_T.append(entry)

    fits = {}
    for name, metric in FIT_METRICS.items():
        points = [(e["T"], e[f"{metric}_mean"]) for e in per_T if e[f"{metric}_mean"] is not None]
        if not points:
            continue
        try:
            slope, intercept, half = fit_slope(points)
            fits[name] = {
                "slope": slope, "intercept": intercept, "half_width": half,
                "n_points": len(points), "reference_slope": REFERENCE_SLOPES[name],
            }
        except FitError as exc:
            fits[name] = {"error": str(exc), "n_points": len(points)}
    fits["n_seeds"] = len(config.seeds)
    fits["note"] = "seed count is a budget choice; confidence half-widths reflect only that budget"

    summary = SweepSummary(runs, per_T, fits, res.describe(), outcomes)
    if config.output_dir:
        write_artifacts(summary, Path(config.output_dir))
    return summary


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def write_artifacts(summary: SweepSummary, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(summary.resolved, indent=2, sort_keys=True) + "\n")
    write_csv(out / "runs.csv", RUNS_COLUMNS, summary.runs)
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary.per_T)
    (out / "fits.json").write_text(json.dumps(summary.fits, indent=2, sort_keys=True) + "\n")


# -- estimator diagnostic ----------------------------------------------------------


@dataclass
class EstimatorDiagnostic:
    s: int
    a: int
    N: int
    true_advantage: float
    rows: list[dict]
    slope: float | None
    intercept: float | None
    half_width: float | None
    fit_error: str | None = None


def estimator_diagnostic(
    mdp: TabularMdp,
    policy: PolicyParams,
    s: int,
    a: int,
    H_grid: Sequence[int],
    repeats: int = 1000,
    N: int | None = None,
    seed: int = 0,
) -> EstimatorDiagnostic:
    """Empirical MSE of A_hat(s, a) against the oracle, per epoch length H.

    Each repeat is a fresh epoch at fixed theta, started from the stationary
    distribution. N defaults to ceil(4 t_mix log2(max H)), fixed across H.
    """
    if repeats < 100:
        raise ValueError(f"repeats must be >= 100, got {repeats}")
    if not (0 <= s < mdp.n_states and 0 <= a < mdp.n_actions):
        raise ValueError(f"query ({s}, {a}) out of range")
    ev = oracle.evaluate(mdp, policy)
    if N is None:
        N = oracle.tail_start(oracle.mixing_time(ev.chain, ev.d), max(H_grid))
    cum_d = np.cumsum(ev.d)
    truth = float(ev.A[s, a])
    rows = []
    for hi, H in enumerate(H_grid):
        errs = np.empty(repeats)
        hits = np.empty(repeats)
        for rep in range(repeats):
            rng = stream(seed, hi, rep)
            start = int(min(np.searchsorted(cum_d, rng.random(), side="right"), mdp.n_states - 1))
            traj = sample_trajectory(mdp, policy, start, int(H), rng)
            errs[rep] = (estimate_advantage(traj, s, a, policy, N) - truth) ** 2
            hits[rep] = np.count_nonzero(traj.states == s)
        rows.append({
            "H": int(H),
            "mse": float(errs.mean()),
            "mse_se": float(errs.std(ddof=1) / math.sqrt(repeats)),
            "mean_visits": float(hits.mean()),
        })
    try:
        slope, intercept, half = fit_slope([(r["H"], r["mse"]) for r in rows])
    except FitError as exc:
        # an exact estimator (e.g. zero error everywhere) has nothing to fit
        return EstimatorDiagnostic(s, a, int(N), truth, rows, None, None, None, str(exc))
    return EstimatorDiagnostic(s, a, int(N), truth, rows, slope, intercept, half)
