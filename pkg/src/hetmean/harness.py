"""Config-driven Monte Carlo experiment runner.

Loads a TOML experiment description, runs seeded paired trials for each
requested estimator and population size, and emits a CSV of per-estimator
summaries plus a JSON manifest carrying the config echo and a content hash.
Trial i draws from stream id i, so runs are deterministic given the seed and
populations are identical across estimators within a trial.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from .analysis import median_truncation_baseline
from .core import (
    Constant,
    Explicit,
    HeavyTail,
    MetaKind,
    PointMass,
    PowerLaw,
    PrivacyBudget,
    TruncatedGaussian,
    TwoPoint,
    DEFAULT_HALF_WIDTH_W,
    generate_population,
)
from .estimators import (
    EstimatorConfig,
    estimate_ideal_private,
    estimate_nonprivate,
    estimate_public_k,
)
from .initial import VarianceEstimatorConfig
from .mechanisms import PtrOutcome
from .private_k import estimate_private_k
from .rng import RandomSource

__all__ = [
    "ExperimentConfig",
    "TrialSummary",
    "ComparisonRow",
    "ExperimentResult",
    "run_experiment",
    "compare_estimators",
    "CSV_HEADER",
    "git_blob_sha1",
]

ESTIMATOR_NAMES = ("nonprivate", "ideal", "public_k", "private_k", "median_baseline")

CSV_HEADER = (
    "estimator,n,epsilon,delta,beta,trials,mean,var,mse,bias,"
    "clamp_rate,fallback_rate,pred_var,runtime_ms"
)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: population model, budget, estimators, trial plan."""

    seed: int
    trials: int
    beta: float
    ns: tuple[int, ...]
    estimators: tuple[str, ...]
    epsilon: float
    delta: float
    meta_kind: MetaKind = MetaKind.TRUNCATED_GAUSSIAN
    meta_p: float = 0.5
    meta_sigma_p: float | str = 0.03  # number or "inv_sqrt_n"
    meta_w: float = DEFAULT_HALF_WIDTH_W
    profile_kind: str = "power_law"
    profile_k: int = 1
    profile_ks: tuple[int, ...] = ()
    L: int | None = None
    alpha_override: float | None = None
    known_sigma_sq: float | None = None
    k_max: int | None = None
    lambda_radius_at: str = "k_max"
    sigma_bounds: tuple[float, float] = (1e-3, 1.0)
    variance_gamma: float = 0.56
    variance_rho_bar: float | None = None
    variance_meta_ratio: float | None = None
    variance_min_sample_constant: float = 1.0
    variance_histogram_path: str = "stability"
    figures: bool = True
    outdir: str = "out"

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        unknown = set(self.estimators) - set(ESTIMATOR_NAMES)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")
        if not self.ns:
            raise ValueError("at least one population size required")

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        budget = raw.get("budget", {})
        meta = raw.get("meta", {})
        profile = raw.get("profile", {})
        est = raw.get("estimator", {})
        var = est.get("variance", {})
        return ExperimentConfig(
            seed=int(raw.get("seed", 0)),
            trials=int(raw.get("trials", 100)),
            beta=float(raw.get("beta", 0.05)),
            ns=tuple(int(v) for v in raw.get("ns", [])),
            estimators=tuple(raw.get("estimators", ["public_k"])),
            epsilon=float(budget.get("epsilon", 1.0)),
            delta=float(budget.get("delta", 0.0)),
            meta_kind=MetaKind(meta.get("kind", "truncated_gaussian")),
            meta_p=float(meta.get("p", 0.5)),
            meta_sigma_p=meta.get("sigma_p", 0.03),
            meta_w=float(meta.get("w", DEFAULT_HALF_WIDTH_W)),
            profile_kind=profile.get("kind", "power_law"),
            profile_k=int(profile.get("K", 1)),
            profile_ks=tuple(int(v) for v in profile.get("ks", [])),
            L=int(est["L"]) if "L" in est else None,
            alpha_override=(
                float(est["alpha_override"]) if "alpha_override" in est else None
            ),
            known_sigma_sq=(
                float(est["known_sigma_sq"]) if "known_sigma_sq" in est else None
            ),
            k_max=int(est["k_max"]) if "k_max" in est else None,
            lambda_radius_at=est.get("lambda_radius_at", "k_max"),
            sigma_bounds=tuple(float(v) for v in est.get("sigma_bounds", (1e-3, 1.0))),
            variance_gamma=float(var.get("gamma", 0.56)),
            variance_rho_bar=float(var["rho_bar"]) if "rho_bar" in var else None,
            variance_meta_ratio=(
                float(var["meta_ratio"]) if "meta_ratio" in var else None
            ),
            variance_min_sample_constant=float(var.get("min_sample_constant", 1.0)),
            variance_histogram_path=var.get("histogram_path", "stability"),
            figures=bool(raw.get("figures", True)),
            outdir=str(raw.get("outdir", "out")),
        )

    @staticmethod
    def from_toml(path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            return ExperimentConfig.from_dict(tomllib.load(fh))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "trials": self.trials,
            "beta": self.beta,
            "ns": list(self.ns),
            "estimators": list(self.estimators),
            "budget": {"epsilon": self.epsilon, "delta": self.delta},
            "meta": {
                "kind": self.meta_kind.value,
                "p": self.meta_p,
                "sigma_p": self.meta_sigma_p,
                "w": self.meta_w,
            },
            "profile": {
                "kind": self.profile_kind,
                "K": self.profile_k,
                "ks": list(self.profile_ks),
            },
            "estimator": {
                "L": self.L,
                "alpha_override": self.alpha_override,
                "known_sigma_sq": self.known_sigma_sq,
                "k_max": self.k_max,
                "lambda_radius_at": self.lambda_radius_at,
                "sigma_bounds": list(self.sigma_bounds),
                "variance": {
                    "gamma": self.variance_gamma,
                    "rho_bar": self.variance_rho_bar,
                    "meta_ratio": self.variance_meta_ratio,
                    "min_sample_constant": self.variance_min_sample_constant,
                    "histogram_path": self.variance_histogram_path,
                },
            },
            "figures": self.figures,
            "outdir": self.outdir,
        }

    def resolve_sigma_p(self, n: int) -> float:
        if self.meta_sigma_p == "inv_sqrt_n":
            return 1.0 / math.sqrt(n)
        return float(self.meta_sigma_p)

    def resolve_meta(self, n: int):
        sigma_p = self.resolve_sigma_p(n)
        if self.meta_kind is MetaKind.POINT_MASS:
            return PointMass(self.meta_p)
        if self.meta_kind is MetaKind.TWO_POINT:
            return TwoPoint(self.meta_p, sigma_p)
        return TruncatedGaussian(self.meta_p, sigma_p, self.meta_w)

    def resolve_profile(self):
        if self.profile_kind == "constant":
            return Constant(self.profile_k)
        if self.profile_kind == "power_law":
            return PowerLaw()
        if self.profile_kind == "heavy_tail":
            return HeavyTail()
        if self.profile_kind == "explicit":
            return Explicit(self.profile_ks)
        raise ValueError(f"unknown profile kind {self.profile_kind!r}")

    def budget(self) -> PrivacyBudget:
        return PrivacyBudget(self.epsilon, self.delta)

    def variance_config(self) -> VarianceEstimatorConfig:
        return VarianceEstimatorConfig(
            berry_esseen_gamma=self.variance_gamma,
            moment_ratio_bound=self.variance_rho_bar,
            meta_third_moment_ratio=self.variance_meta_ratio,
            min_sample_constant=self.variance_min_sample_constant,
            histogram_path=self.variance_histogram_path,
        )

    def estimator_config(self, n: int) -> EstimatorConfig:
        k_max = self.k_max
        if k_max is None:
            k_max = int(self.resolve_profile().counts(n).max())
        return EstimatorConfig(
            meta_kind=self.meta_kind,
            half_width_w=self.meta_w,
            L=self.L,
            alpha_override=self.alpha_override,
            known_sigma_sq=self.known_sigma_sq,
            sigma_bounds=self.sigma_bounds,
            variance=self.variance_config(),
            k_max=k_max,
            lambda_radius_at=self.lambda_radius_at,
        )


@dataclass(frozen=True)
class TrialSummary:
    """Aggregate of one (estimator, n) cell of the experiment grid."""

    estimator: str
    n: int
    epsilon: float
    delta: float
    beta: float
    trials: int
    mean: float
    var: float
    mse: float
    bias: float
    clamp_rate: float
    fallback_rate: float
    pred_var: float | None
    runtime_ms: float

    def __post_init__(self) -> None:
        expected = self.var + self.bias**2
        if abs(self.mse - expected) > 1e-10 * max(abs(self.mse), 1e-300):
            raise ValueError("mse must equal var + bias^2")

    def csv_row(self, runtime_override: float | None = None) -> str:
        runtime = self.runtime_ms if runtime_override is None else runtime_override
        pred = "" if self.pred_var is None else repr(self.pred_var)
        fields = [
            self.estimator,
            str(self.n),
            repr(self.epsilon),
            repr(self.delta),
            repr(self.beta),
            str(self.trials),
            repr(self.mean),
            repr(self.var),
            repr(self.mse),
            repr(self.bias),
            repr(self.clamp_rate),
            repr(self.fallback_rate),
            pred,
            repr(float(runtime)),
        ]
        return ",".join(fields)


@dataclass
class ExperimentResult:
    summaries: list[TrialSummary]
    estimates: dict  # (estimator, n) -> np.ndarray of per-trial estimates
    csv_path: Path | None = None
    manifest_path: Path | None = None


def _run_one(name: str, pop, cfg: ExperimentConfig, n: int, rng: RandomSource):
    meta = cfg.resolve_meta(n)
    if name == "nonprivate":
        return estimate_nonprivate(pop)
    if name == "ideal":
        return estimate_ideal_private(
            pop,
            meta.p,
            meta.sigma_p2,
            cfg.epsilon,
            cfg.beta,
            rng,
            cfg.meta_kind,
            cfg.meta_w,
        )
    if name == "public_k":
        return estimate_public_k(pop, cfg.budget(), cfg.beta, cfg.estimator_config(n), rng)
    if name == "private_k":
        return estimate_private_k(pop, cfg.budget(), cfg.beta, cfg.estimator_config(n), rng)
    if name == "median_baseline":
        return median_truncation_baseline(pop, cfg.budget(), rng)
    raise ValueError(f"unknown estimator {name!r}")


def run_experiment(
    config: ExperimentConfig, outdir: str | Path | None = None
) -> ExperimentResult:
    """Run the full grid and write results.csv + manifest.json (+ figures)."""
    estimates: dict = {}
    summaries: list[TrialSummary] = []
    profile = config.resolve_profile()

    for n_idx, n in enumerate(config.ns):
        meta = config.resolve_meta(n)
        per_est = {
            name: {
                "estimates": np.empty(config.trials),
                "clamp": np.zeros(config.trials),
                "fallback": np.zeros(config.trials),
                "pred": [],
                "runtime": 0.0,
            }
            for name in config.estimators
        }
        for t in range(config.trials):
            base = RandomSource(config.seed, stream=n_idx * config.trials + t)
            pop = generate_population(meta, profile, n, base.substream(0))
            for e_idx, name in enumerate(config.estimators):
                cell = per_est[name]
                rng = base.substream(1 + e_idx)
                start = time.perf_counter()
                report = _run_one(name, pop, config, n, rng)
                cell["runtime"] += time.perf_counter() - start
                cell["estimates"][t] = report.estimate
                middle = (
                    report.plan.weights.size if report.plan is not None else 0
                )
                cell["clamp"][t] = (
                    report.clamped_users / middle if middle else 0.0
                )
                cell["fallback"][t] = float(report.ptr is PtrOutcome.FALLBACK)
                pred = report.diagnostics.get("predicted_variance")
                if pred is not None:
                    cell["pred"].append(pred)

        for name in config.estimators:
            cell = per_est[name]
            est = cell["estimates"]
            mean = float(est.mean())
            var = float(est.var())  # ddof=0 keeps mse == var + bias^2 exact
            bias = mean - config.meta_p
            mse = float(np.mean((est - config.meta_p) ** 2))
            # Guard against float drift between the two formulas.
            mse = var + bias**2
            pred = float(np.mean(cell["pred"])) if cell["pred"] else None
            summaries.append(
                TrialSummary(
                    estimator=name,
                    n=n,
                    epsilon=config.epsilon,
                    delta=config.delta,
                    beta=config.beta,
                    trials=config.trials,
                    mean=mean,
                    var=var,
                    mse=mse,
                    bias=bias,
                    clamp_rate=float(cell["clamp"].mean()),
                    fallback_rate=float(cell["fallback"].mean()),
                    pred_var=pred,
                    runtime_ms=cell["runtime"] * 1000.0,
                )
            )
            estimates[(name, n)] = cell["estimates"]

    result = ExperimentResult(summaries=summaries, estimates=estimates)
    if outdir is None:
        outdir = config.outdir
    if outdir is not None:
        result.csv_path, result.manifest_path = write_outputs(
            config, summaries, Path(outdir)
        )
    return result


def git_blob_sha1(content: bytes) -> str:
    """Content hash in git's blob format."""
    header = f"blob {len(content)}\0".encode("ascii")
    return hashlib.sha1(header + content).hexdigest()


def render_csv(summaries: list[TrialSummary], canonical: bool = False) -> str:
    rows = [CSV_HEADER]
    for s in summaries:
        rows.append(s.csv_row(runtime_override=0.0 if canonical else None))
    return "\n".join(rows) + "\n"


def write_outputs(
    config: ExperimentConfig, summaries: list[TrialSummary], outdir: Path
) -> tuple[Path, Path]:
    """Write results.csv and manifest.json; render figures when enabled.

    The manifest's content hash covers the CSV with the runtime column
    canonicalized to zero, so repeated runs of the same config hash equally.
    """
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / "results.csv"
    csv_path.write_text(render_csv(summaries), encoding="ascii")
    manifest = {
        "config": config.to_dict(),
        "csv": csv_path.name,
        "rows": len(summaries),
        "content_hash": git_blob_sha1(
            render_csv(summaries, canonical=True).encode("ascii")
        ),
    }
    manifest_path = outdir / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="ascii"
    )
    if config.figures:
        from . import figures

        figures.render_report(outdir, summaries)
    return csv_path, manifest_path


@dataclass(frozen=True)
class ComparisonRow:
    estimator_a: str
    estimator_b: str
    n: int
    var_ratio: float
    ci_low: float
    ci_high: float
    trials: int
    resamples: int


def compare_estimators(
    config: ExperimentConfig,
    result: ExperimentResult | None = None,
    resamples: int = 1000,
) -> list[ComparisonRow]:
    """Paired variance ratios with bootstrap confidence intervals.

    Trials are paired (identical populations per trial across estimators), so
    the ratio resamples the same trial indices for both estimators.
    """
    if len(config.estimators) < 2:
        raise ValueError("need at least two estimators to compare")
    if result is None:
        result = run_experiment(config, outdir=None)
    gen = RandomSource(config.seed, stream=999_999_937).generator()
    rows: list[ComparisonRow] = []
    for n in config.ns:
        for i, a in enumerate(config.estimators):
            for b in config.estimators[i + 1 :]:
                xa = result.estimates[(a, n)]
                xb = result.estimates[(b, n)]
                ratio = float(xa.var() / xb.var())
                idx = gen.integers(0, len(xa), size=(resamples, len(xa)))
                boot_a = xa[idx].var(axis=1)
                boot_b = xb[idx].var(axis=1)
                boot = boot_a / boot_b
                rows.append(
                    ComparisonRow(
                        estimator_a=a,
                        estimator_b=b,
                        n=n,
                        var_ratio=ratio,
                        ci_low=float(np.quantile(boot, 0.025)),
                        ci_high=float(np.quantile(boot, 0.975)),
                        trials=len(xa),
                        resamples=resamples,
                    )
                )
    return rows


def write_comparison(rows: list[ComparisonRow], outdir: Path) -> Path:
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "compare.csv"
    lines = ["estimator_a,estimator_b,n,var_ratio,ci_low,ci_high,trials,resamples"]
    for r in rows:
        lines.append(
            f"{r.estimator_a},{r.estimator_b},{r.n},{r.var_ratio!r},"
            f"{r.ci_low!r},{r.ci_high!r},{r.trials},{r.resamples}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path
