"""Multi-seed sweeps, aggregation, paired t-tests, and report emission."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np

from . import losses
from .dataio import Dataset
from .nn import DivergenceError
from .train import TrainConfig, train_run, write_run_artifacts

DEFAULT_SEEDS = tuple(range(20))


@dataclass
class SweepSummary:
    feature_name: str
    task: str
    per_seed_scores: dict[int, float]
    failed_seeds: dict[int, str]
    max_score: float
    mean_score: float
    std_score: float  # sample std, n-1

    @property
    def complete(self) -> bool:
        return not self.failed_seeds

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_seed_scores"] = {str(k): v for k, v in self.per_seed_scores.items()}
        d["failed_seeds"] = {str(k): v for k, v in self.failed_seeds.items()}
        return d

    @classmethod
    def from_scores(cls, feature_name: str, task: str,
                    per_seed: dict[int, float],
                    failed: dict[int, str] | None = None) -> "SweepSummary":
        vals = np.array([per_seed[s] for s in sorted(per_seed)], dtype=np.float64)
        return cls(
            feature_name=feature_name,
            task=task,
            per_seed_scores={s: per_seed[s] for s in sorted(per_seed)},
            failed_seeds=dict(sorted((failed or {}).items())),
            max_score=float(vals.max()),
            mean_score=float(vals.mean()),
            std_score=float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
        )


def run_dir_for(out_dir, feature_name: str, task: str, seed: int) -> Path:
    return Path(out_dir) / "runs" / feature_name / task / str(seed)


def _run_one(dataset: Dataset, config: TrainConfig, run_dir: Path) -> float:
    result = train_run(dataset, config)
    write_run_artifacts(result, run_dir)
    return result.best_val_score


def run_sweep(dataset: Dataset, base_config: TrainConfig, seeds,
              out_dir, jobs: int = 1) -> SweepSummary:
    """One train_run per seed, manifests persisted, completed runs reused.

    A diverging seed is recorded without aborting the sweep.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("seeds must be nonempty")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    feature = base_config.feature_name or dataset.features.feature_name
    per_seed: dict[int, float] = {}
    failed: dict[int, str] = {}
    pending: list[int] = []
    for seed in seeds:
        rd = run_dir_for(out_dir, feature, base_config.task, seed)
        manifest = rd / "manifest.json"
        if manifest.exists():
            with open(manifest, encoding="utf-8") as fh:
                per_seed[seed] = json.load(fh)["best_val_score"]
        else:
            pending.append(seed)

    def config_for(seed: int) -> TrainConfig:
        return replace(base_config, seed=seed, feature_name=feature)

    if jobs <= 1:
        for seed in pending:
            rd = run_dir_for(out_dir, feature, base_config.task, seed)
            try:
                per_seed[seed] = _run_one(dataset, config_for(seed), rd)
            except DivergenceError as exc:
                failed[seed] = str(exc)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                seed: pool.submit(
                    _run_one, dataset, config_for(seed),
                    run_dir_for(out_dir, feature, base_config.task, seed),
                )
                for seed in pending
            }
            for seed in pending:
                try:
                    per_seed[seed] = futures[seed].result()
                except DivergenceError as exc:
                    failed[seed] = str(exc)
    summary = SweepSummary.from_scores(feature, base_config.task, per_seed, failed)
    summary_path = Path(out_dir) / "runs" / feature / base_config.task / "sweep.json"
    summary_path.parent.mkdir(parents=True, exist_ok=True)
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary.to_dict(), fh, sort_keys=True, indent=1)
    return summary


# --- Student-t machinery ------------------------------------------------


def _betacf(a: float, b: float, x: float, tol: float = 1e-14, max_iter: int = 500) -> float:
    """Continued fraction for the regularized incomplete beta (Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x < 0.0 or x > 1.0:
        raise ValueError("x outside [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, nu: int) -> float:
    """Two-sided p-value P(|T_nu| >= |t|) = I_{nu/(nu+t^2)}(nu/2, 1/2)."""
    if nu < 1:
        raise ValueError("nu must be >= 1")
    if t == 0.0:
        return 1.0
    x = nu / (nu + t * t)
    return betainc_reg(nu / 2.0, 0.5, x)


@dataclass
class PairedTestResult:
    feature_a: str
    feature_b: str
    task: str
    n: int
    mean_diff: float
    t_stat: float
    dof: int
    p_value: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def paired_ttest(scores_a, scores_b, feature_a: str = "a", feature_b: str = "b",
                 task: str = "") -> PairedTestResult:
    """Two-sided paired t-test on per-seed score differences."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D of equal length")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs n >= 2")
    d = a - b
    mean_d = float(d.mean())
    sd = float(d.std(ddof=1))
    nu = n - 1
    if sd == 0.0:
        # all differences identical: t is undefined
        p = 1.0 if mean_d == 0.0 else 0.0
        t = 0.0 if mean_d == 0.0 else math.copysign(math.inf, mean_d)
        return PairedTestResult(feature_a, feature_b, task, n, mean_d, t, nu, p, degenerate=True)
    t = mean_d / (sd / math.sqrt(n))
    return PairedTestResult(feature_a, feature_b, task, n, mean_d, float(t), nu, t_sf(t, nu))


# --- report building ----------------------------------------------------

TASK_ORDER = ("high", "two", "culture", "type")


def build_report(summaries: list[SweepSummary], tests: list[PairedTestResult],
                 out_dir) -> dict:
    """Emit summary.json, tables.txt, radar.json, box.json under out_dir/report."""
    if not summaries:
        raise ValueError("at least one sweep summary is required")
    report_dir = Path(out_dir) / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    by_key = {(s.feature_name, s.task): s for s in summaries}
    features = sorted({s.feature_name for s in summaries})
    tasks = [t for t in TASK_ORDER if any(s.task == t for s in summaries)]

    warnings = []
    # per-seed overall means over the seed intersection across tasks
    box: dict[str, list[float]] = {}
    for feat in features:
        task_sums = [by_key.get((feat, t)) for t in TASK_ORDER]
        if any(s is None for s in task_sums):
            continue
        seed_sets = [set(s.per_seed_scores) for s in task_sums]
        common = sorted(set.intersection(*seed_sets))
        union = set.union(*seed_sets)
        if set(common) != union:
            warnings.append(
                f"{feat}: overall score computed on {len(common)} common seeds "
                f"(of {len(union)})"
            )
        box[feat] = [
            losses.overall_mean(*(s.per_seed_scores[seed] for s in task_sums))
            for seed in common
        ]

    radar = {
        feat: {
            t: by_key[(feat, t)].max_score
            for t in tasks if (feat, t) in by_key
        }
        for feat in features
    }

    summary_payload = {
        "sweeps": [by_key[k].to_dict() for k in sorted(by_key)],
        "paired_tests": [t.to_dict() for t in tests],
        "warnings": warnings,
    }
    _dump(report_dir / "summary.json", summary_payload)
    _dump(report_dir / "radar.json", radar)
    _dump(report_dir / "box.json", box)

    tables = _render_tables(by_key, features, tasks, tests)
    with open(report_dir / "tables.txt", "w", encoding="utf-8") as fh:
        fh.write(tables)
    return summary_payload


def _dump(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)


def _render_tables(by_key, features, tasks, tests) -> str:
    lines = []
    col = max([len(f) for f in features] + [7])

    def table(title, fmt, best_of):
        lines.append(title)
        lines.append("  " + "Feature".ljust(col) + "".join(t.rjust(18) for t in tasks))
        for feat in features:
            row = ["  " + feat.ljust(col)]
            for t in tasks:
                s = by_key.get((feat, t))
                if s is None:
                    row.append("-".rjust(18))
                    continue
                cell = fmt(s)
                if best_of.get(t) == feat:
                    cell = f"*{cell}*"
                row.append(cell.rjust(18))
            lines.append("".join(row))
        lines.append("")

    best_max = {
        t: max((f for f in features if (f, t) in by_key),
               key=lambda f: by_key[(f, t)].max_score, default=None)
        for t in tasks
    }
    best_mean = {
        t: max((f for f in features if (f, t) in by_key),
               key=lambda f: by_key[(f, t)].mean_score, default=None)
        for t in tasks
    }
    table("Validation maximum scores per seed sweep",
          lambda s: f"{s.max_score:.4f}", best_max)
    table("Validation mean scores (± sample std) per seed sweep",
          lambda s: f"{s.mean_score:.3f}±{s.std_score:.3f}", best_mean)
    if tests:
        lines.append("Paired t-tests")
        for t in tests:
            lines.append(
                f"  {t.feature_a} vs {t.feature_b} [{t.task}]: "
                f"t={t.t_stat:.4f}, dof={t.dof}, p={t.p_value:.4f}"
                + (" (degenerate)" if t.degenerate else "")
            )
        lines.append("")
    return "\n".join(lines)
