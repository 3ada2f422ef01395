"""Causal-effect estimators on harmonized summary statistics.

The pipeline estimates the effect of an exposure on an outcome from marginal
per-SNP coefficients under correlated, possibly weak instruments:

* a plug-in ratio estimator (reduces to classic inverse-variance weighting
  for diagonal V) whose weak-instrument bias motivates everything else;
* an anchor estimator that replaces the exposure coefficients in the weight
  by the independent supplemental-sample coefficients;
* a debiased estimating equation whose correction matrix is built from the
  V-weighted diagonal projections of the coefficient covariances, with
  variants absorbing direct (pleiotropic) SNP-outcome effects and
  exposure/outcome sample overlap;
* a variance-optimal ensemble of the equation root and the anchor, with a
  plug-in 2x2 covariance matrix for the pair.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .covest import CovBundle, build_cov_bundle
from .errors import (
    ConditioningError,
    ConvergenceError,
    DeemError,
    DegenerateInstrumentError,
    EvaluationDomainError,
    NoRootError,
)
from .ldcore import BlockDiagMatrix, inverse_blocks, solve
from .selection import SelectionConfig, restrict, select
from .sumstats import HarmonizedDataset

__all__ = [
    "Mode",
    "NuisanceEstimates",
    "SolverDiagnostics",
    "MrEstimate",
    "beta_plugin",
    "beta2",
    "estimate_tau_p",
    "estimate_rho",
    "estimate_tau_os",
    "ee_value",
    "ee_expectation",
    "solve_ee",
    "estimate_psi",
    "ensemble",
    "run_deem",
]


class Mode(enum.Enum):
    TWO_SAMPLE_VALID = "two-sample"
    TWO_SAMPLE_PLEIOTROPY = "pleiotropy"
    ONE_SAMPLE = "one-sample"


@dataclass(frozen=True)
class NuisanceEstimates:
    """Pleiotropy variance, overlap parameter, and the anchor they come from.

    ``tau`` is the value used inside the correction matrix (clamped at zero);
    ``tau_raw`` keeps the unclamped estimate for diagnostics.  The two flags
    record whether each nuisance was actually estimated from data, which
    determines its contribution to the variance matrix.
    """

    tau: float = 0.0
    rho: float = 0.0
    beta2: float = 0.0
    tau_raw: float = 0.0
    tau_estimated: bool = False
    rho_estimated: bool = False


@dataclass
class SolverDiagnostics:
    root_bracket: tuple[float, float]
    iterations: int
    residual: float
    multiplicity_flag: bool = False


@dataclass
class MrEstimate:
    beta: float
    se: float
    ci_low: float
    ci_high: float
    weights: tuple[float, float]
    nuisance: NuisanceEstimates
    n_snps: int
    mode: Mode
    solver_diag: SolverDiagnostics
    beta1: float
    beta2: float
    psi: np.ndarray
    instrument_strength: float
    warnings: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "beta": self.beta,
            "se": self.se,
            "ci": [self.ci_low, self.ci_high],
            "weights": [self.weights[0], self.weights[1]],
            "tau_raw": self.nuisance.tau_raw,
            "tau_used": self.nuisance.tau,
            "rho": self.nuisance.rho,
            "n_snps_selected": self.n_snps,
            "mode": self.mode.value,
            "solver": {
                "bracket": list(self.solver_diag.root_bracket),
                "iterations": self.solver_diag.iterations,
                "residual": self.solver_diag.residual,
                "multiplicity_flag": self.solver_diag.multiplicity_flag,
            },
            "warnings": list(self.warnings),
        }

    def to_csv_row(self) -> dict:
        return {
            "mode": self.mode.value,
            "beta": self.beta,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "w1": self.weights[0],
            "w2": self.weights[1],
            "tau_used": self.nuisance.tau,
            "rho": self.nuisance.rho,
            "n_snps": self.n_snps,
        }


# ---------------------------------------------------------------------------
# closed-form estimators and nuisances
# ---------------------------------------------------------------------------


def beta_plugin(gamma_hat: np.ndarray, Gamma_hat: np.ndarray, v: BlockDiagMatrix) -> float:
    """Ratio estimator g'V^{-1}G / g'V^{-1}g (inverse-variance weighting when
    V is the diagonal of squared outcome standard errors)."""
    vg = solve(v, gamma_hat)
    den = float(gamma_hat @ vg)
    if den <= 0:
        raise DegenerateInstrumentError("gamma' V^-1 gamma is not positive")
    return float(Gamma_hat @ vg) / den


def beta2(
    gamma_tilde: np.ndarray,
    gamma_hat: np.ndarray,
    Gamma_hat: np.ndarray,
    v: BlockDiagMatrix,
) -> float:
    """Anchor estimator weighting by the supplemental-sample coefficients."""
    vt = solve(v, gamma_tilde)
    den = float(gamma_hat @ vt)
    if den == 0.0:
        raise DegenerateInstrumentError(
            "supplemental and exposure coefficients are V-orthogonal"
        )
    return float(Gamma_hat @ vt) / den


def _traces(bundle: CovBundle) -> tuple[float, float]:
    """tr{V^-1 D_gamma} and tr{V^-1 D_p} (equal to the Sigma traces)."""
    t_gamma = float(np.sum(bundle.v_inv_diag * bundle.d_gamma))
    t_p = float(np.sum(bundle.v_inv_diag * bundle.d_p))
    return t_gamma, t_p


def estimate_tau_p(
    bundle: CovBundle, gamma_hat: np.ndarray, Gamma_hat: np.ndarray, beta2_val: float
) -> float:
    """Raw (unclamped) pleiotropy-variance estimate at the anchor."""
    _, t_p = _traces(bundle)
    if t_p <= 0:
        raise DegenerateInstrumentError("tr{V^-1 D_p} is not positive")
    r = Gamma_hat - beta2_val * gamma_hat
    quad = float(r @ solve(bundle.v, r))
    noise = float(np.sum(bundle.v_inv_diag * (bundle.d_Gamma + beta2_val**2 * bundle.d_gamma)))
    return (quad - noise) / t_p


def estimate_rho(
    bundle: CovBundle, gamma_hat: np.ndarray, Gamma_hat: np.ndarray, beta2_val: float
) -> float:
    """Sample-overlap parameter estimate at the anchor."""
    t_gamma, _ = _traces(bundle)
    if t_gamma <= 0:
        raise DegenerateInstrumentError("tr{V^-1 D_gamma} is not positive")
    r = Gamma_hat - beta2_val * gamma_hat
    return float(gamma_hat @ solve(bundle.v, r)) / t_gamma + beta2_val


def estimate_tau_os(
    bundle: CovBundle,
    gamma_hat: np.ndarray,
    Gamma_hat: np.ndarray,
    beta2_val: float,
    rho: float,
) -> float:
    """Raw pleiotropy-variance estimate under sample overlap."""
    _, t_p = _traces(bundle)
    if t_p <= 0:
        raise DegenerateInstrumentError("tr{V^-1 D_p} is not positive")
    r = Gamma_hat - beta2_val * gamma_hat
    quad = float(r @ solve(bundle.v, r))
    noise = float(
        np.sum(
            bundle.v_inv_diag
            * (bundle.d_Gamma + (beta2_val**2 - 2.0 * rho * beta2_val) * bundle.d_gamma)
        )
    )
    return (quad - noise) / t_p


# ---------------------------------------------------------------------------
# debiased estimating equation
# ---------------------------------------------------------------------------


def _q_denominator(beta: float, bundle: CovBundle, nuisance: NuisanceEstimates) -> np.ndarray:
    return (
        bundle.d_Gamma
        + nuisance.tau * bundle.d_p
        + (beta**2 - 2.0 * nuisance.rho * beta) * bundle.d_gamma
    )


def _q_diag(beta: float, bundle: CovBundle, nuisance: NuisanceEstimates) -> np.ndarray:
    den = _q_denominator(beta, bundle, nuisance)
    if np.any(den <= 0):
        raise EvaluationDomainError(
            f"correction denominator not positive at beta={beta}"
        )
    return (nuisance.rho - beta) * bundle.d_gamma / den


def ee_value(
    beta: float,
    mode: Mode,
    bundle: CovBundle,
    gamma_hat: np.ndarray,
    Gamma_hat: np.ndarray,
    nuisance: NuisanceEstimates,
) -> float:
    """Debiased estimating function {g - Q(b)(G - b g)}' V^{-1} (G - b g).

    The mode is encoded entirely in the nuisance values: the valid two-sample
    equation has tau = rho = 0, the pleiotropy-robust one has rho = 0, and
    the overlap-aware one uses both.
    """
    del mode  # dispatch happens through the nuisance values
    q = _q_diag(beta, bundle, nuisance)
    resid = Gamma_hat - beta * gamma_hat
    v_resid = solve(bundle.v, resid)
    return float(gamma_hat @ v_resid) - float((q * resid) @ v_resid)


def ee_expectation(
    beta: float,
    v: BlockDiagMatrix,
    sigma_gamma: BlockDiagMatrix,
    sigma_Gamma: BlockDiagMatrix,
    d_gamma: np.ndarray,
    d_Gamma: np.ndarray,
    tau: float = 0.0,
    sigma_p: BlockDiagMatrix | None = None,
    d_p: np.ndarray | None = None,
    rho: float = 0.0,
) -> float:
    """Analytic expectation of the estimating function at the true effect.

    Assumes the coefficient model holds exactly at ``beta`` with the given
    true covariances; the supplied diagonals are whatever correction the
    caller wants to audit (the V-projections make this zero, naive diagonals
    generally do not).
    """
    from .ldcore import diag_of_inv_prod

    d_p = np.zeros_like(d_gamma) if d_p is None else d_p
    den = d_Gamma + tau * d_p + (beta**2 - 2.0 * rho * beta) * d_gamma
    if np.any(den <= 0):
        raise EvaluationDomainError(f"correction denominator not positive at beta={beta}")
    q = (rho - beta) * d_gamma / den

    resid_blocks = []
    for i, sg in enumerate(sigma_gamma.blocks):
        s = sigma_Gamma.blocks[i] + (beta**2 - 2.0 * rho * beta) * sg
        if sigma_p is not None and tau != 0.0:
            s = s + tau * sigma_p.blocks[i]
        resid_blocks.append(s)
    sigma_resid = BlockDiagMatrix(resid_blocks)

    diag_vg, _ = diag_of_inv_prod(v, sigma_gamma)
    diag_vr, _ = diag_of_inv_prod(v, sigma_resid)
    return (rho - beta) * float(np.sum(diag_vg)) - float(np.sum(q * diag_vr))


def solve_ee(
    mode: Mode,
    bundle: CovBundle,
    gamma_hat: np.ndarray,
    Gamma_hat: np.ndarray,
    nuisance: NuisanceEstimates,
    anchor: float,
    _grid: int = 65,
) -> tuple[float, SolverDiagnostics]:
    """Root of the estimating equation nearest the anchor.

    The bracket grows geometrically around the anchor until the function
    changes sign on a scan grid (points where the function is undefined act
    as bracket boundaries); a bracketed derivative-free refinement then
    polishes the root to |value| <= 1e-10 * gamma'V^{-1}gamma.  If several
    sign changes fall inside the final bracket, the root nearest the anchor
    is returned and the multiplicity flag is set.
    """
    vg = solve(bundle.v, gamma_hat)
    vG = solve(bundle.v, Gamma_hat)
    scale = float(gamma_hat @ vg)
    tol = 1e-10 * max(scale, 1e-300)

    # V^{-1}(Gamma - b*gamma) = vG - b*vg, so each evaluation is pure vector
    # arithmetic; this is the same function ee_value computes.
    def f(b: float) -> float | None:
        den = _q_denominator(b, bundle, nuisance)
        if np.any(den <= 0):
            return None
        q = (nuisance.rho - b) * bundle.d_gamma / den
        v_resid = vG - b * vg
        resid = Gamma_hat - b * gamma_hat
        return float(gamma_hat @ v_resid) - float((q * resid) @ v_resid)

    half0 = 0.5 * max(1.0, abs(anchor))
    intervals: list[tuple[float, float]] = []
    bracket = (anchor - half0, anchor + half0)
    for k in range(7):
        half = (2.0**k) * half0
        lo, hi = anchor - half, anchor + half
        bracket = (lo, hi)
        grid = np.linspace(lo, hi, _grid)
        vals = [f(b) for b in grid]
        intervals = []
        for i in range(len(grid) - 1):
            a, b = vals[i], vals[i + 1]
            if a is None or b is None:
                continue
            if a == 0.0:
                intervals.append((grid[i], grid[i]))
            elif a * b < 0.0:
                intervals.append((grid[i], grid[i + 1]))
        if vals[-1] == 0.0:
            intervals.append((grid[-1], grid[-1]))
        if intervals:
            break
    if not intervals:
        raise NoRootError(
            f"no sign change of the estimating function in [{bracket[0]:.6g}, {bracket[1]:.6g}] "
            f"around anchor {anchor:.6g}"
        )

    multiplicity = len(intervals) > 1
    lo, hi = min(intervals, key=lambda ab: abs(0.5 * (ab[0] + ab[1]) - anchor))
    if lo == hi:
        root, iterations = float(lo), 0
    else:
        root, r = brentq(f, lo, hi, xtol=1e-14, rtol=8.9e-16, full_output=True)
        iterations = r.iterations
    residual = f(root)
    residual = float("nan") if residual is None else residual
    if not abs(residual) <= tol:
        raise ConvergenceError(
            f"root refinement stalled: |value|={abs(residual):.3e} > tol={tol:.3e}"
        )
    return float(root), SolverDiagnostics(
        root_bracket=(float(lo), float(hi)),
        iterations=int(iterations),
        residual=residual,
        multiplicity_flag=multiplicity,
    )


# ---------------------------------------------------------------------------
# plug-in variance of the (root, anchor) pair
# ---------------------------------------------------------------------------


def estimate_psi(
    mode: Mode,
    bundle: CovBundle,
    gamma_hat: np.ndarray,
    Gamma_hat: np.ndarray,
    gamma_tilde: np.ndarray,
    nuisance: NuisanceEstimates,
) -> tuple[np.ndarray, list[str]]:
    """Plug-in 2x2 asymptotic covariance of (equation root, anchor).

    Both estimators are linear-plus-quadratic functionals of the jointly
    normal pair (exposure coefficients, residual outcome coefficients), so
    every variance entry reduces to traces and quadratic forms computable
    block by block; nuisance estimation contributes extra rows exactly when
    the corresponding nuisance was estimated from data.  The anchor value is
    plugged in wherever the true effect appears.
    """
    del Gamma_hat  # the variance depends on the data only through the plug-ins
    b2 = nuisance.beta2
    tau, rho = nuisance.tau, nuisance.rho
    t_gamma, t_p = _traces(bundle)
    if t_gamma <= 0:
        raise DegenerateInstrumentError("tr{V^-1 D_gamma} is not positive")

    mu1 = float(gamma_hat @ solve(bundle.v, gamma_hat)) - t_gamma
    mu2 = float(gamma_hat @ solve(bundle.v, gamma_tilde))
    if mu1 <= 0:
        raise ConditioningError(
            "noise-corrected instrument strength is not positive; "
            "instruments too weak for a variance estimate"
        )
    if mu2 == 0:
        raise DegenerateInstrumentError("anchor denominator is zero")

    stats = ["s1", "s2"]
    if nuisance.tau_estimated:
        stats.append("st")
    if nuisance.rho_estimated:
        stats.append("sr")
    k = len(stats)

    vt = solve(bundle.v, gamma_tilde)
    v_inv = inverse_blocks(bundle.v)
    acc = np.zeros((k, k))

    start = 0
    for ib, vb in enumerate(bundle.v.blocks):
        nb = vb.shape[0]
        sl = slice(start, start + nb)
        start += nb
        Vi = v_inv[ib]
        Sg = bundle.sigma_gamma.blocks[ib]
        SG = bundle.sigma_Gamma.blocks[ib]
        Sp = bundle.sigma_p.blocks[ib]
        S22 = SG + tau * Sp + (b2**2 - 2.0 * rho * b2) * Sg
        cross = (rho - b2) * Sg
        St = np.block([[Sg, cross], [cross, S22]])

        q = _q_diag(b2, bundle, nuisance)[sl]
        qv = q[:, None] * Vi
        zero = np.zeros((nb, nb))
        a_mats = {
            "s1": np.block([[zero, 0.5 * Vi], [0.5 * Vi, -0.5 * (qv + qv.T)]]),
            "st": np.block([[zero, zero], [zero, Vi]]),
            "sr": np.block([[zero, 0.5 * Vi], [0.5 * Vi, zero]]),
        }
        m = np.concatenate([gamma_hat[sl], np.zeros(nb)])
        a2 = np.concatenate([np.zeros(nb), vt[sl]])

        a_st = {name: a_mats[name] @ St for name in stats if name != "s2"}
        for i, si in enumerate(stats):
            for j in range(i, k):
                sj = stats[j]
                if si != "s2" and sj != "s2":
                    prod = a_st[si] @ a_mats[sj]
                    # plugging the noisy exposure coefficients into the mean
                    # term inflates it by tr{.Sigma_gamma}; subtract it back
                    correction = 4.0 * np.trace(prod[:nb, :nb] @ Sg)
                    acc[i, j] += (
                        2.0 * np.trace(a_st[si] @ a_st[sj])
                        + 4.0 * float(m @ prod @ m)
                        - correction
                    )
                elif si == "s2" and sj == "s2":
                    acc[i, j] += float(a2 @ St @ a2)
                else:
                    quad = si if sj == "s2" else sj
                    acc[i, j] += 2.0 * float(m @ a_st[quad] @ a2)

    pref = {"s1": 1.0, "s2": 1.0, "st": 1.0 / t_p if t_p > 0 else 0.0, "sr": 1.0 / t_gamma}
    omega = np.empty((k, k))
    for i, si in enumerate(stats):
        for j in range(i, k):
            omega[i, j] = omega[j, i] = pref[si] * pref[stats[j]] * acc[i, j]

    d_f = _q_denominator(b2, bundle, nuisance)
    if np.any(d_f <= 0):
        raise EvaluationDomainError("correction denominator not positive at the anchor")
    mu_tau = (rho - b2) * float(
        np.sum(bundle.v_inv_diag * bundle.d_p * bundle.d_gamma / d_f)
    )
    mu_rho_tau = 2.0 * b2 * t_gamma / t_p if t_p > 0 else 0.0
    mu_rho = -t_gamma - 2.0 * (rho - b2) * b2 * float(
        np.sum(bundle.v_inv_diag * bundle.d_gamma**2 / d_f)
    )
    mu_beta = -mu1 / t_gamma

    b_mat = np.zeros((k, 2))
    chain = mu_tau * mu_rho_tau + mu_rho  # total root sensitivity to the overlap statistic
    for i, name in enumerate(stats):
        if name == "s1":
            b_mat[i] = (1.0 / mu1, 0.0)
        elif name == "s2":
            load1 = chain * mu_beta / (mu1 * mu2) if nuisance.rho_estimated else 0.0
            b_mat[i] = (load1, 1.0 / mu2)
        elif name == "st":
            b_mat[i] = (mu_tau / mu1, 0.0)
        elif name == "sr":
            b_mat[i] = (chain / mu1, 0.0)

    psi = b_mat.T @ omega @ b_mat
    psi = 0.5 * (psi + psi.T)

    warnings: list[str] = []
    if psi[0, 0] <= 0 or psi[1, 1] <= 0:
        raise ConditioningError("plug-in variance has a non-positive diagonal")
    if psi[0, 0] * psi[1, 1] - psi[0, 1] ** 2 <= 0:
        psi = np.diag(np.diag(psi))
        warnings.append("psi-not-positive-definite: off-diagonal dropped")
    return psi, warnings


def ensemble(
    beta1: float, beta2_val: float, psi: np.ndarray, level: float = 0.95
) -> tuple[float, float, float, float, tuple[float, float]]:
    """Variance-optimal convex combination of the root and the anchor.

    Returns (estimate, se, ci_low, ci_high, weights).
    """
    ones = np.ones(2)
    try:
        pinv_one = np.linalg.solve(psi, ones)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"plug-in variance is singular: {exc}") from exc
    denom = float(ones @ pinv_one)
    if denom <= 0 or not np.isfinite(denom):
        raise ConditioningError("plug-in variance yields a non-positive weight normalizer")
    w = pinv_one / denom
    beta = float(w[0] * beta1 + w[1] * beta2_val)
    se = float(np.sqrt(1.0 / denom))
    z = float(norm.ppf(0.5 + level / 2.0))
    return beta, se, beta - z * se, beta + z * se, (float(w[0]), float(w[1]))


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def _stage(name: str, exc: DeemError) -> DeemError:
    exc.stage = name
    return exc


def run_deem(
    ds: HarmonizedDataset,
    cfg: SelectionConfig | None = None,
    mode: Mode = Mode.TWO_SAMPLE_VALID,
    lam: float = 0.5,
    level: float = 0.95,
    snp_weights: np.ndarray | None = None,
    nuisance_override: NuisanceEstimates | None = None,
) -> MrEstimate:
    """Full pipeline: select, restrict, covariances, root, variance, ensemble."""
    cfg = cfg or SelectionConfig()
    try:
        sel = select(ds, cfg)
        sub = restrict(ds, sel)
    except DeemError as exc:
        raise _stage("selection", exc)

    try:
        bundle = build_cov_bundle(sub, lam=lam, snp_weights=snp_weights)
    except DeemError as exc:
        raise _stage("covest", exc)

    gamma_hat = sub.exposure.betas
    Gamma_hat = sub.outcome.betas
    gamma_tilde = sub.supplemental.betas

    try:
        b2 = beta2(gamma_tilde, gamma_hat, Gamma_hat, bundle.v)
        if nuisance_override is not None:
            nuisance = NuisanceEstimates(
                tau=nuisance_override.tau,
                rho=nuisance_override.rho,
                beta2=b2,
                tau_raw=nuisance_override.tau_raw,
                tau_estimated=nuisance_override.tau_estimated,
                rho_estimated=nuisance_override.rho_estimated,
            )
        elif mode is Mode.TWO_SAMPLE_VALID:
            nuisance = NuisanceEstimates(beta2=b2)
        elif mode is Mode.TWO_SAMPLE_PLEIOTROPY:
            tau_raw = estimate_tau_p(bundle, gamma_hat, Gamma_hat, b2)
            nuisance = NuisanceEstimates(
                tau=max(0.0, tau_raw), beta2=b2, tau_raw=tau_raw, tau_estimated=True
            )
        else:
            rho = estimate_rho(bundle, gamma_hat, Gamma_hat, b2)
            tau_raw = estimate_tau_os(bundle, gamma_hat, Gamma_hat, b2, rho)
            nuisance = NuisanceEstimates(
                tau=max(0.0, tau_raw),
                rho=rho,
                beta2=b2,
                tau_raw=tau_raw,
                tau_estimated=True,
                rho_estimated=True,
            )
        beta1, diag = solve_ee(mode, bundle, gamma_hat, Gamma_hat, nuisance, anchor=b2)
        psi, warnings = estimate_psi(mode, bundle, gamma_hat, Gamma_hat, gamma_tilde, nuisance)
        beta, se, lo, hi, w = ensemble(beta1, b2, psi, level=level)
    except DeemError as exc:
        raise _stage("estimators", exc)

    if bundle.d_p_clamped:
        warnings.append(f"pleiotropy projection clamped at zero for {bundle.d_p_clamped} SNPs")

    return MrEstimate(
        beta=beta,
        se=se,
        ci_low=lo,
        ci_high=hi,
        weights=w,
        nuisance=nuisance,
        n_snps=sub.dim,
        mode=mode,
        solver_diag=diag,
        beta1=beta1,
        beta2=b2,
        psi=psi,
        instrument_strength=float(gamma_hat @ solve(bundle.v, gamma_hat)),
        warnings=warnings,
    )
