"""Monte-Carlo engine: genotype and effect generation, summary-statistic
computation, and a seeded replicate runner with metric aggregation.

The genotype model is a desk-scale stand-in for real panels: each LD block
is an AR(1) latent-Gaussian haplotype pair thresholded at the SNP's minor
allele frequency, which yields Hardy-Weinberg dosages with geometrically
decaying within-block correlation.  Causal exposure effects are drawn once
per study and held fixed; direct (pleiotropic) outcome effects are redrawn
every replicate.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
import pandas as pd
from scipy.stats import norm

from .covest import CovBundle, build_cov_bundle
from .errors import ConfigError, DeemError, StudyError
from .estimators import Mode, beta_plugin, run_deem
from .ldcore import BlockDiagMatrix, LdBlockSet, estimate_block_correlations, solve
from .selection import SelectionConfig
from .sumstats import HarmonizedDataset, SnpRecord, SummaryStats, harmonize

__all__ = [
    "Scenario",
    "ReplicateResult",
    "MetricsTable",
    "gen_mafs",
    "gen_genotypes",
    "gen_effects",
    "gen_sumstats_individual",
    "gen_sumstats_direct",
    "run_study",
    "KNOWN_METHODS",
]

KNOWN_METHODS = ("deem", "plugin", "ivw_diag")


@dataclass(frozen=True)
class Scenario:
    """Full configuration of one simulation study."""

    d: int = 1000
    block_size: int = 50
    ar1_rho: float = 0.5
    maf_range: tuple[float, float] = (0.05, 0.5)
    pi_c: float = 0.05
    pi_d: float = 0.1
    h2_c: float = 0.1
    h2_d: float = 0.1
    beta_x: float = 0.4
    effect_dist: str = "normal"
    n_e: int = 20000
    n_o: int = 20000
    n_s: int = 8000
    n_ref: int = 2000
    mode: str = "two_sample"
    correlated_pleiotropy: dict | None = None
    pvalue_threshold: float = 0.1
    clump_r_threshold: float = 0.9
    ld_lambda: float = 0.5
    level: float = 0.95
    seed: int = 0
    replicates: int = 200

    def __post_init__(self):
        if self.d % self.block_size != 0:
            raise ConfigError("d must be a multiple of block_size")
        if not (0 <= self.pi_c <= 1 and 0 <= self.pi_d <= 1):
            raise ConfigError("causal fractions must be in [0, 1]")
        if not (0 <= self.h2_c < 1 and 0 <= self.h2_d < 1):
            raise ConfigError("heritabilities must be in [0, 1)")
        if not -1 < self.ar1_rho < 1:
            raise ConfigError("ar1_rho must be in (-1, 1)")
        lo, hi = self.maf_range
        if not (0 < lo <= hi <= 0.5):
            raise ConfigError("maf_range must satisfy 0 < lo <= hi <= 0.5")
        if min(self.n_e, self.n_o, self.n_s, self.n_ref) < 2:
            raise ConfigError("sample sizes must be >= 2")
        if self.mode not in ("two_sample", "one_sample"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.effect_dist not in ("normal", "laplace"):
            raise ConfigError(f"unknown effect_dist {self.effect_dist!r}")

    @property
    def n_blocks(self) -> int:
        return self.d // self.block_size

    @staticmethod
    def from_json(path_or_dict) -> "Scenario":
        if isinstance(path_or_dict, dict):
            raw = dict(path_or_dict)
        else:
            with open(path_or_dict) as fh:
                raw = json.load(fh)
        known = {f for f in Scenario.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        if "maf_range" in raw:
            raw["maf_range"] = tuple(raw["maf_range"])
        return Scenario(**raw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["maf_range"] = list(out["maf_range"])
        return out


@dataclass
class ReplicateResult:
    method: str
    replicate: int
    beta_hat: float
    se_hat: float
    covered: bool
    n_snps: int
    truth: float


@dataclass
class MetricsTable:
    rows: list[dict]

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=[
            "method", "bias", "se", "rmse", "coverage_rate", "mean_n_snps", "n_ok",
        ])


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def gen_mafs(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    lo, hi = scenario.maf_range
    return rng.uniform(lo, hi, size=scenario.d)


@lru_cache(maxsize=8)
def _ar1_transfer(size: int, rho: float) -> np.ndarray:
    """Upper-triangular map from iid innovations to a unit-variance AR(1) path.

    Column j of the path is sum_k T[k, j] * eps_k with T[k, j] =
    c_k * rho^(j-k), c_0 = 1, c_k = sqrt(1 - rho^2); one matmul replaces the
    sequential recursion.
    """
    j = np.arange(size)
    t = np.triu(rho ** (j[None, :] - j[:, None]))
    t[1:, :] *= math.sqrt(1.0 - rho**2)
    return t.astype(np.float32)


def _latent_block(n: int, size: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    eps = rng.standard_normal((n, size), dtype=np.float32)
    if size == 1:
        return eps
    return eps @ _ar1_transfer(size, rho)


def gen_genotypes(
    scenario: Scenario, mafs: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    """n x d dosage matrix: two thresholded AR(1) latent haplotypes per block."""
    thresholds = norm.ppf(mafs).astype(np.float32)
    g = np.empty((n, scenario.d), dtype=np.int8)
    for b in range(scenario.n_blocks):
        sl = slice(b * scenario.block_size, (b + 1) * scenario.block_size)
        t = thresholds[sl]
        h1 = _latent_block(n, scenario.block_size, scenario.ar1_rho, rng) < t
        h2 = _latent_block(n, scenario.block_size, scenario.ar1_rho, rng) < t
        g[:, sl] = h1.astype(np.int8) + h2.astype(np.int8)
    return g


def _sparse_effects(
    d: int, frac: float, h2: float, dist: str, rng: np.random.Generator
) -> np.ndarray:
    if frac == 0.0:
        raise ConfigError("cannot draw effects with a zero causal fraction")
    for _ in range(100):
        mask = rng.random(d) < frac
        if mask.any():
            break
    else:
        raise ConfigError(f"no causal indicator drawn in 100 attempts (fraction {frac})")
    out = np.zeros(d)
    k = int(mask.sum())
    var = h2 / k
    if dist == "laplace":
        out[mask] = rng.laplace(0.0, math.sqrt(var / 2.0), size=k)
    else:
        out[mask] = rng.normal(0.0, math.sqrt(var), size=k)
    return out


def gen_effects(scenario: Scenario, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Draw the exposure, direct-outcome, and confounder-path effect vectors."""
    alpha = _sparse_effects(scenario.d, scenario.pi_c, scenario.h2_c, scenario.effect_dist, rng)
    if scenario.pi_d > 0 and scenario.h2_d > 0:
        beta_g = _sparse_effects(scenario.d, scenario.pi_d, scenario.h2_d, scenario.effect_dist, rng)
    else:
        beta_g = np.zeros(scenario.d)
    eta = np.zeros(scenario.d)
    cp = scenario.correlated_pleiotropy
    if cp:
        causal = np.flatnonzero(alpha != 0.0)
        mask = rng.random(causal.size) < cp.get("pi_eta", 0.1)
        chosen = causal[mask]
        if chosen.size:
            var = cp.get("h2_eta", 0.1) / chosen.size
            eta[chosen] = rng.normal(0.0, math.sqrt(var), size=chosen.size)
    return {"alpha_G": alpha, "beta_G": beta_g, "eta_G": eta}


def _marginal_stats(g: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized per-SNP simple-regression slopes and residual-based SEs."""
    n = g.shape[0]
    gf = g if g.dtype == np.float64 else g.astype(np.float64)
    gm = gf.mean(axis=0)
    yc = y - y.mean()
    sxy = gf.T @ yc
    sxx = np.einsum("ij,ij->j", gf, gf) - n * gm**2
    if np.any(sxx <= 0):
        raise ConfigError("monomorphic SNP in simulated cohort; widen maf_range or raise n")
    slope = sxy / sxx
    syy = float(yc @ yc)
    sse = np.maximum(syy - slope * sxy, 0.0)
    se = np.sqrt(sse / (n - 2) / sxx)
    return slope, se


def _snp_id(j: int) -> str:
    return f"snp{j:05d}"


def _block_id(b: int) -> str:
    return f"blk{b:03d}"


def _to_sumstats(
    slopes: np.ndarray, ses: np.ndarray, n: int, label: str
) -> SummaryStats:
    records = tuple(
        SnpRecord(_snp_id(j), "A", "G", float(slopes[j]), float(ses[j]), n)
        for j in range(len(slopes))
    )
    return SummaryStats(records=records, trait_label=label, sample_size=n)


def gen_sumstats_individual(
    scenario: Scenario,
    effects: dict[str, np.ndarray],
    genotypes: dict[str, np.ndarray],
    rng: np.random.Generator,
) -> tuple[SummaryStats, SummaryStats, SummaryStats, LdBlockSet]:
    """Marginal statistics from individual-level data.

    ``genotypes`` maps cohort names (exposure / outcome / supplemental /
    reference) to dosage matrices; in one-sample mode the exposure and
    outcome entries are the same matrix and one shared confounder links the
    two traits.
    """
    alpha, beta_g, eta = effects["alpha_G"], effects["beta_G"], effects["eta_G"]
    cp = scenario.correlated_pleiotropy or {}
    beta_u = cp.get("beta_u", 0.0)

    def traits(gf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = gf.shape[0]
        u2 = rng.normal(0.0, 1.0, n)
        if eta.any() or beta_u != 0.0:
            u1 = gf @ eta + rng.normal(0.0, math.sqrt(0.5), n)
            confound_x, confound_y = u1 + u2, beta_u * u1 + u2
        else:
            confound_x = confound_y = u2
        x = gf @ alpha + confound_x + rng.normal(0.0, math.sqrt(0.5), n)
        y = scenario.beta_x * x + gf @ beta_g + confound_y + rng.normal(0.0, math.sqrt(0.5), n)
        return x, y

    # one float conversion per cohort, shared by trait simulation and the
    # marginal regressions
    if scenario.mode == "one_sample":
        gf_shared = genotypes["exposure"].astype(np.float64)
        x, y = traits(gf_shared)
        exp_slope, exp_se = _marginal_stats(gf_shared, x)
        out_slope, out_se = _marginal_stats(gf_shared, y)
    else:
        gf_e = genotypes["exposure"].astype(np.float64)
        gf_o = genotypes["outcome"].astype(np.float64)
        x_e, _ = traits(gf_e)
        _, y_o = traits(gf_o)
        exp_slope, exp_se = _marginal_stats(gf_e, x_e)
        out_slope, out_se = _marginal_stats(gf_o, y_o)

    gf_s = genotypes["supplemental"].astype(np.float64)
    x_s, _ = traits(gf_s)
    sup_slope, sup_se = _marginal_stats(gf_s, x_s)

    block_map = [
        (
            _block_id(b),
            [_snp_id(j) for j in range(b * scenario.block_size, (b + 1) * scenario.block_size)],
        )
        for b in range(scenario.n_blocks)
    ]
    ref = pd.DataFrame(
        genotypes["reference"], columns=[_snp_id(j) for j in range(scenario.d)]
    )
    ld = estimate_block_correlations(ref, block_map)

    exposure = _to_sumstats(exp_slope, exp_se, scenario.n_e, "exposure")
    outcome = _to_sumstats(out_slope, out_se, scenario.n_o, "outcome")
    supplemental = _to_sumstats(sup_slope, sup_se, scenario.n_s, "supplemental")
    return exposure, outcome, supplemental, ld


def gen_sumstats_direct(
    truth: dict,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact normal-model draws of the three coefficient vectors.

    ``truth`` carries gamma, beta_x, block-diagonal covariances (sigma_gamma,
    sigma_Gamma, optional sigma_p), tau_p, rho_U, and the supplemental noise
    SD ``sigma_tilde``.  Returns (gamma_hat, Gamma_hat, gamma_tilde); the
    exposure/outcome pair is drawn jointly per block so overlap and
    pleiotropy enter with their model covariances.
    """
    gamma = np.asarray(truth["gamma"], dtype=float)
    beta_x = float(truth["beta_x"])
    sg: BlockDiagMatrix = truth["sigma_gamma"]
    sG: BlockDiagMatrix = truth["sigma_Gamma"]
    sp: BlockDiagMatrix | None = truth.get("sigma_p")
    tau = float(truth.get("tau_p", 0.0))
    rho = float(truth.get("rho_U", 0.0))
    sigma_tilde = float(truth.get("sigma_tilde", 0.0))

    gamma_hat = np.empty_like(gamma)
    Gamma_hat = np.empty_like(gamma)
    start = 0
    for i, sg_b in enumerate(sg.blocks):
        nb = sg_b.shape[0]
        sl = slice(start, start + nb)
        start += nb
        cov_G = sG.blocks[i] + (tau * sp.blocks[i] if sp is not None and tau else 0.0)
        joint = np.block(
            [[sg_b, rho * sg_b], [rho * sg_b, cov_G + np.zeros((nb, nb))]]
        )
        mean = np.concatenate([gamma[sl], beta_x * gamma[sl]])
        draw = rng.multivariate_normal(mean, joint, method="cholesky")
        gamma_hat[sl] = draw[:nb]
        Gamma_hat[sl] = draw[nb:]
    gamma_tilde = gamma + sigma_tilde * rng.standard_normal(gamma.shape)
    return gamma_hat, Gamma_hat, gamma_tilde


# ---------------------------------------------------------------------------
# study runner
# ---------------------------------------------------------------------------


def _panel_rng(scenario: Scenario) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=scenario.seed, spawn_key=(0,)))


def _replicate_rng(scenario: Scenario, rep: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=scenario.seed, spawn_key=(1, rep))
    )


def _study_fixtures(scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """MAFs and causal exposure effects, fixed across replicates."""
    rng = _panel_rng(scenario)
    mafs = gen_mafs(scenario, rng)
    alpha = _sparse_effects(scenario.d, scenario.pi_c, scenario.h2_c, scenario.effect_dist, rng)
    return mafs, alpha


def _ivw_diag_estimate(ds: HarmonizedDataset, level: float) -> tuple[float, float, int]:
    """Classic inverse-variance weighting: diagonal V of squared outcome SEs."""
    gamma = ds.exposure.betas
    Gamma = ds.outcome.betas
    w = 1.0 / ds.outcome.ses**2
    den = float(np.sum(w * gamma**2))
    beta = float(np.sum(w * gamma * Gamma)) / den
    se = math.sqrt(1.0 / den)
    return beta, se, ds.dim


def _plugin_estimate(
    ds: HarmonizedDataset, bundle: CovBundle, level: float
) -> tuple[float, float, int]:
    gamma = ds.exposure.betas
    Gamma = ds.outcome.betas
    beta = beta_plugin(gamma, Gamma, bundle.v)
    vg = solve(bundle.v, gamma)
    den = float(gamma @ vg)
    # sandwich-style spread of the ratio's numerator around the plug-in value
    sf_blocks = [
        bundle.sigma_Gamma.blocks[i] + beta**2 * bundle.sigma_gamma.blocks[i]
        for i in range(len(bundle.v.blocks))
    ]
    num_var = 0.0
    start = 0
    for blk in sf_blocks:
        nb = blk.shape[0]
        vg_b = vg[start : start + nb]
        num_var += float(vg_b @ blk @ vg_b)
        start += nb
    se = math.sqrt(num_var) / den
    return beta, se, ds.dim


def run_replicate(scenario: Scenario, rep: int, methods: tuple[str, ...]) -> list[ReplicateResult]:
    """One seeded replicate: fresh cohorts, fresh direct effects, all methods."""
    mafs, alpha = _study_fixtures(scenario)
    rng = _replicate_rng(scenario, rep)

    beta_g = (
        _sparse_effects(scenario.d, scenario.pi_d, scenario.h2_d, scenario.effect_dist, rng)
        if scenario.pi_d > 0 and scenario.h2_d > 0
        else np.zeros(scenario.d)
    )
    eta = np.zeros(scenario.d)
    cp = scenario.correlated_pleiotropy
    if cp:
        causal = np.flatnonzero(alpha != 0.0)
        mask = rng.random(causal.size) < cp.get("pi_eta", 0.1)
        chosen = causal[mask]
        if chosen.size:
            eta[chosen] = rng.normal(
                0.0, math.sqrt(cp.get("h2_eta", 0.1) / chosen.size), size=chosen.size
            )
    effects = {"alpha_G": alpha, "beta_G": beta_g, "eta_G": eta}

    genotypes = {"exposure": gen_genotypes(scenario, mafs, scenario.n_e, rng)}
    if scenario.mode == "one_sample":
        genotypes["outcome"] = genotypes["exposure"]
    else:
        genotypes["outcome"] = gen_genotypes(scenario, mafs, scenario.n_o, rng)
    genotypes["supplemental"] = gen_genotypes(scenario, mafs, scenario.n_s, rng)
    genotypes["reference"] = gen_genotypes(scenario, mafs, scenario.n_ref, rng)

    exposure, outcome, supplemental, ld = gen_sumstats_individual(
        scenario, effects, genotypes, rng
    )
    ds = harmonize(exposure, outcome, supplemental, ld)
    cfg = SelectionConfig(scenario.pvalue_threshold, scenario.clump_r_threshold)
    z = float(norm.ppf(0.5 + scenario.level / 2.0))

    pleiotropy_present = scenario.pi_d > 0 and scenario.h2_d > 0
    if scenario.mode == "one_sample":
        mode = Mode.ONE_SAMPLE
    elif pleiotropy_present:
        mode = Mode.TWO_SAMPLE_PLEIOTROPY
    else:
        mode = Mode.TWO_SAMPLE_VALID

    results = []
    shared: dict = {}
    for method in methods:
        if method == "deem":
            est = run_deem(ds, cfg, mode=mode, lam=scenario.ld_lambda, level=scenario.level)
            beta, se, n_snps = est.beta, est.se, est.n_snps
        elif method in ("plugin", "ivw_diag"):
            if "sub" not in shared:
                from .selection import restrict, select

                sel = select(ds, cfg)
                shared["sub"] = restrict(ds, sel)
                shared["bundle"] = build_cov_bundle(shared["sub"], lam=scenario.ld_lambda)
            if method == "plugin":
                beta, se, n_snps = _plugin_estimate(shared["sub"], shared["bundle"], scenario.level)
            else:
                beta, se, n_snps = _ivw_diag_estimate(shared["sub"], scenario.level)
        else:
            raise ConfigError(f"unknown method {method!r}")
        covered = bool(beta - z * se <= scenario.beta_x <= beta + z * se)
        results.append(
            ReplicateResult(method, rep, float(beta), float(se), covered, n_snps, scenario.beta_x)
        )
    return results


def _run_replicate_star(args) -> tuple[int, list[ReplicateResult] | str]:
    scenario, rep, methods = args
    try:
        return rep, run_replicate(scenario, rep, methods)
    except DeemError as exc:
        return rep, f"{type(exc).__name__}: {exc}"


def run_study(
    scenario: Scenario,
    methods: tuple[str, ...] = KNOWN_METHODS,
    threads: int | None = None,
    out_dir: str | None = None,
) -> MetricsTable:
    """Run all replicates, aggregate metrics, optionally write output files.

    Per-replicate RNG streams are derived from (seed, replicate index), so
    results are identical for any thread count.  Replicates that fail are
    recorded and tolerated up to 5% of the study.
    """
    for m in methods:
        if m not in KNOWN_METHODS:
            raise ConfigError(f"unknown method {m!r}; known: {', '.join(KNOWN_METHODS)}")
    threads = threads or 1
    jobs = [(scenario, rep, tuple(methods)) for rep in range(scenario.replicates)]
    outcomes: list[list[ReplicateResult] | str | None] = [None] * scenario.replicates
    if threads > 1 and scenario.replicates > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for rep, res in pool.map(_run_replicate_star, jobs, chunksize=1):
                outcomes[rep] = res
    else:
        for job in jobs:
            rep, res = _run_replicate_star(job)
            outcomes[rep] = res

    failures = [(i, r) for i, r in enumerate(outcomes) if isinstance(r, str)]
    if len(failures) > 0.05 * scenario.replicates:
        raise StudyError(
            f"{len(failures)}/{scenario.replicates} replicates failed; first: "
            f"replicate {failures[0][0]}: {failures[0][1]}"
        )

    replicate_rows: list[ReplicateResult] = []
    for res in outcomes:
        if isinstance(res, list):
            replicate_rows.extend(res)

    rows = []
    for method in methods:
        sub = [r for r in replicate_rows if r.method == method]
        est = np.array([r.beta_hat for r in sub])
        bias = float(est.mean() - scenario.beta_x)
        se = float(est.std(ddof=0))
        rows.append(
            {
                "method": method,
                "bias": bias,
                "se": se,
                "rmse": math.sqrt(bias**2 + se**2),
                "coverage_rate": float(np.mean([r.covered for r in sub])),
                "mean_n_snps": float(np.mean([r.n_snps for r in sub])),
                "n_ok": len(sub),
            }
        )
    table = MetricsTable(rows=rows)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_atomic_df(table.to_dataframe(), os.path.join(out_dir, "metrics.csv"))
        rep_df = pd.DataFrame(
            [
                {
                    "method": r.method,
                    "replicate": r.replicate,
                    "beta_hat": r.beta_hat,
                    "se_hat": r.se_hat,
                    "covered": int(r.covered),
                    "n_snps": r.n_snps,
                    "truth": r.truth,
                }
                for r in replicate_rows
            ]
        )
        _write_atomic_df(rep_df, os.path.join(out_dir, "replicates.csv"))
        manifest = {
            "scenario": scenario.to_dict(),
            "methods": list(methods),
            "failed_replicates": [{"replicate": i, "error": e} for i, e in failures],
        }
        _write_atomic_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n",
            os.path.join(out_dir, "manifest.json"),
        )
    return table


def _write_atomic_text(text: str, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_atomic_df(df: pd.DataFrame, path: str) -> None:
    _write_atomic_text(df.to_csv(index=False), path)
