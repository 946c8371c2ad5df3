"""Random-intercept linear mixed model fitted by profiled REML.

Model: y = X beta + Z u + eps with u ~ (0, sigma2_u I) grouped by user and
eps ~ (0, sigma2_e I). Writing lambda = sigma2_u / sigma2_e, the covariance
is sigma2_e * (I + lambda Z Z'), block diagonal over users, so every
quantity profiles down to group sums:

    Sigma_g^{-1} = I - (lambda / (1 + lambda n_g)) J_g
    log|Sigma_g| = log(1 + lambda n_g)

beta and sigma2_e have closed forms given lambda; the REML criterion is
maximized over lambda >= 0 by golden-section search on log(lambda + eps),
with the lambda = 0 boundary (ordinary least squares) checked explicitly.
Inference on beta is Wald, using Cov(beta) = sigma2_e (X' Sigma^{-1} X)^{-1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataValidationError, NumericalError
from .events import AGE_GROUPS, EDUCATION_LEVELS, GENDERS, OCCUPATIONS, UserProfile
from .trajectory import TIMESPAN_ORDER, SwitchRateRecord

FACTOR_LEVELS: dict[str, tuple[str, ...]] = {
    "timespan": TIMESPAN_ORDER,
    "gender": ("female", "male"),
    "age_group": AGE_GROUPS,
    "education": EDUCATION_LEVELS,
    "occupation": OCCUPATIONS,
}

# Reference levels: small hours, female, 18-20, low, managers.
REFERENCE_LEVELS: dict[str, str] = {name: levels[0] for name, levels in FACTOR_LEVELS.items()}

DEMOGRAPHIC_FACTORS = ("gender", "age_group", "education", "occupation")


@dataclass(frozen=True)
class ModelSpec:
    """Fixed-effect structure: main effects plus two-way interactions."""

    outcome: str = "rate"
    main_effects: tuple[str, ...] = ("timespan",)
    interactions: tuple[tuple[str, str], ...] = ()
    group: str = "user"

    def factors(self) -> tuple[str, ...]:
        seen: list[str] = []
        for f in self.main_effects:
            if f not in seen:
                seen.append(f)
        for a, b in self.interactions:
            for f in (a, b):
                if f not in seen:
                    seen.append(f)
        return tuple(seen)


def parse_formula(text: str) -> ModelSpec:
    """Parse the supported grammar: ``rate ~ t1 + t2*t3 + ... + (1|user)``."""
    if "~" not in text:
        raise DataValidationError("formula must contain '~'")
    lhs, rhs = text.split("~", 1)
    outcome = lhs.strip()
    if not outcome:
        raise DataValidationError("formula is missing an outcome")
    parts = [p.strip() for p in rhs.split("+")]
    if not parts:
        raise DataValidationError("formula has no right-hand side")
    mains: list[str] = []
    inters: list[tuple[str, str]] = []
    saw_random = False
    for part in parts:
        if not part:
            raise DataValidationError("empty term in formula")
        compact = part.replace(" ", "")
        if compact in ("(1|user)", "(1|user_id)"):
            saw_random = True
            continue
        if "*" in compact:
            a, _, b = compact.partition("*")
            if not a or not b or "*" in b:
                raise DataValidationError(f"malformed interaction term {part!r}")
            for f in (a, b):
                if f not in FACTOR_LEVELS:
                    raise DataValidationError(f"unknown factor {f!r}")
                if f not in mains:
                    mains.append(f)
            inters.append((a, b))
        else:
            if compact not in FACTOR_LEVELS:
                raise DataValidationError(f"unknown factor {compact!r}")
            if compact not in mains:
                mains.append(compact)
    if not saw_random:
        raise DataValidationError("formula must end with the random intercept term (1|user)")
    return ModelSpec(outcome=outcome, main_effects=tuple(mains), interactions=tuple(inters))


DEFAULT_FORMULA = (
    "rate ~ timespan*gender + timespan*age_group + timespan*education + occupation + (1|user)"
)


@dataclass
class DesignInfo:
    """Design matrix bookkeeping used by marginal means and reporting."""

    columns: list[str]
    factor_rows: list[dict[str, str]]
    spec: ModelSpec
    dropped_columns: list[str] = field(default_factory=list)

    def row_vector(self, values: dict[str, str]) -> np.ndarray:
        vec = [1.0]
        names = ["(Intercept)"]
        for f in self.spec.main_effects:
            for level in FACTOR_LEVELS[f][1:]:
                names.append(f"{f}={level}")
                vec.append(1.0 if values[f] == level else 0.0)
        for a, b in self.spec.interactions:
            for la in FACTOR_LEVELS[a][1:]:
                for lb in FACTOR_LEVELS[b][1:]:
                    names.append(f"{a}={la}:{b}={lb}")
                    vec.append(1.0 if (values[a] == la and values[b] == lb) else 0.0)
        full = dict(zip(names, vec))
        return np.array([full[c] for c in self.columns])


def build_design(
    records: list[SwitchRateRecord],
    profiles: dict[str, UserProfile],
    spec: ModelSpec,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, DesignInfo]:
    """Dummy-code the records against reference levels.

    Returns (y, X, group codes, info). All-zero columns (empty interaction
    cells) are dropped and reported via ``info.dropped_columns``; a remaining
    rank deficiency raises.
    """
    if not records:
        raise DataValidationError("no records to model")
    needs_profiles = any(f in DEMOGRAPHIC_FACTORS for f in spec.factors())

    rows: list[dict[str, str]] = []
    y = np.empty(len(records))
    group_labels: list[str] = []
    for i, rec in enumerate(records):
        values: dict[str, str] = {"timespan": rec.timespan}
        if needs_profiles:
            profile = profiles.get(rec.user_id)
            if profile is None:
                raise DataValidationError(f"user {rec.user_id!r} has no profile")
            for f in DEMOGRAPHIC_FACTORS:
                values[f] = getattr(profile, f)
        rows.append(values)
        y[i] = rec.rate
        group_labels.append(rec.user_id)

    for f in spec.factors():
        observed = {r[f] for r in rows}
        unknown = observed - set(FACTOR_LEVELS[f])
        if unknown:
            raise DataValidationError(f"unknown level(s) {sorted(unknown)} for factor {f!r}")

    info = DesignInfo(columns=[], factor_rows=rows, spec=spec)
    # Build the full dummy expansion once, then drop empty columns.
    names = ["(Intercept)"]
    for f in spec.main_effects:
        names += [f"{f}={level}" for level in FACTOR_LEVELS[f][1:]]
    for a, b in spec.interactions:
        names += [
            f"{a}={la}:{b}={lb}"
            for la in FACTOR_LEVELS[a][1:]
            for lb in FACTOR_LEVELS[b][1:]
        ]
    info.columns = names
    X = np.vstack([info.row_vector(r) for r in rows])

    nonzero = np.abs(X).sum(axis=0) > 0
    info.dropped_columns = [n for n, keep in zip(names, nonzero) if not keep]
    info.columns = [n for n, keep in zip(names, nonzero) if keep]
    X = X[:, nonzero]

    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise NumericalError("design matrix is rank deficient after dropping empty cells")

    uniq = sorted(set(group_labels))
    code = {u: i for i, u in enumerate(uniq)}
    groups = np.array([code[g] for g in group_labels], dtype=np.int64)
    return y, X, groups, info


@dataclass
class FitResult:
    beta: np.ndarray
    beta_names: list[str]
    se: np.ndarray
    cov_beta: np.ndarray
    sigma2_u: float
    sigma2_e: float
    lam: float
    reml_loglik: float
    n_obs: int
    n_groups: int
    converged: bool
    boundary: bool
    n_evals: int
    dropped_columns: list[str] = field(default_factory=list)

    def coef(self, name: str) -> float:
        return float(self.beta[self.beta_names.index(name)])

    def as_dict(self) -> dict:
        return {
            "fixed_effects": [
                {"name": n, "estimate": float(b), "se": float(s)}
                for n, b, s in zip(self.beta_names, self.beta, self.se)
            ],
            "sigma2_u": self.sigma2_u,
            "sigma2_e": self.sigma2_e,
            "lambda": self.lam,
            "reml_loglik": self.reml_loglik,
            "n_obs": self.n_obs,
            "n_groups": self.n_groups,
            "converged": self.converged,
            "boundary": self.boundary,
            "dropped_columns": list(self.dropped_columns),
        }


class _Profile:
    """Profiled REML criterion over lambda, computed from group sums."""

    def __init__(self, y: np.ndarray, X: np.ndarray, groups: np.ndarray):
        self.n, self.p = X.shape
        # Total row order (group, y, X columns) makes every reduction
        # independent of input row order, bit for bit.
        keys = tuple(X[:, j] for j in range(X.shape[1] - 1, -1, -1)) + (y, groups)
        order = np.lexsort(keys)
        Xs, ys, gs = X[order], y[order], groups[order]
        self.XtX = Xs.T @ Xs
        self.Xty = Xs.T @ ys
        self.yty = float(ys @ ys)
        uniq, starts = np.unique(gs, return_index=True)
        bounds = list(starts) + [len(gs)]
        self.m = len(uniq)
        self.ng = np.array([bounds[i + 1] - bounds[i] for i in range(self.m)], dtype=np.float64)
        self.SX = np.vstack([Xs[bounds[i] : bounds[i + 1]].sum(axis=0) for i in range(self.m)])
        self.Sy = np.array([ys[bounds[i] : bounds[i + 1]].sum() for i in range(self.m)])

    def evaluate(self, lam: float):
        """Return (loglik, beta, sigma2_e, cov_unscaled) at this lambda."""
        c = lam / (1.0 + lam * self.ng)
        A = self.XtX - (self.SX.T * c) @ self.SX
        b = self.Xty - self.SX.T @ (c * self.Sy)
        q = self.yty - float(c @ (self.Sy**2))
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            raise NumericalError("X' Sigma^{-1} X is not positive definite") from None
        beta = np.linalg.solve(L.T, np.linalg.solve(L, b))
        rss_v = max(q - float(beta @ b), 0.0)
        dof = self.n - self.p
        logdet_sigma = float(np.log1p(lam * self.ng).sum())
        logdet_A = 2.0 * float(np.log(np.diag(L)).sum())
        sigma2_e = rss_v / dof
        if sigma2_e <= 0.0:
            loglik = math.inf  # perfect fit: criterion unbounded above
        else:
            loglik = -0.5 * (
                dof * math.log(sigma2_e) + logdet_sigma + logdet_A + dof * (1.0 + math.log(2 * math.pi))
            )
        cov_unscaled = np.linalg.solve(L.T, np.linalg.solve(L, np.eye(self.p)))
        return loglik, beta, sigma2_e, cov_unscaled


GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

LAMBDA_SHIFT = 1e-10
LAMBDA_MAX = 1e8
# Tolerance on log(lambda + shift); tight enough that the interior optimum
# passes central-difference gradient checks and permutation invariance.
SEARCH_TOL = 1e-12
MAX_EVALS = 10_000


def fit_reml(y: np.ndarray, X: np.ndarray, groups: np.ndarray, info: DesignInfo | None = None) -> FitResult:
    """Maximize the profiled REML criterion over lambda >= 0.

    Golden-section search runs on u = log(lambda + shift); the returned fit
    takes whichever of the interior optimum and the lambda = 0 boundary
    scores higher. A flat criterion (e.g. one observation per group, where
    lambda is unidentifiable) therefore lands on the boundary and reproduces
    ordinary least squares.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    groups = np.asarray(groups)
    n, p = X.shape
    if len(y) != n or len(groups) != n:
        raise DataValidationError("y, X, and groups must have matching lengths")
    if n <= p + 2:
        raise DataValidationError(f"too few observations (n={n}) for p={p} columns")
    if len(np.unique(groups)) < 2:
        raise DataValidationError("need at least 2 groups")
    if np.linalg.matrix_rank(X) < p:
        raise NumericalError("design matrix is rank deficient")

    prof = _Profile(y, X, groups)
    evals = 0

    def crit(u: float) -> float:
        nonlocal evals
        evals += 1
        return prof.evaluate(math.exp(u) - LAMBDA_SHIFT)[0]

    lo, hi = math.log(LAMBDA_SHIFT), math.log(LAMBDA_MAX + LAMBDA_SHIFT)
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = crit(x1), crit(x2)
    converged = False
    while evals < MAX_EVALS:
        if hi - lo <= SEARCH_TOL:
            converged = True
            break
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = crit(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = crit(x1)

    u_star = (lo + hi) / 2.0
    lam_star = max(math.exp(u_star) - LAMBDA_SHIFT, 0.0)
    ll_star = prof.evaluate(lam_star)[0]
    ll_zero = prof.evaluate(0.0)[0]

    boundary = False
    if ll_zero >= ll_star - 1e-8 or not math.isfinite(ll_star):
        lam_hat = 0.0
        boundary = True
    else:
        lam_hat = lam_star
        if lam_hat >= LAMBDA_MAX * 0.99:
            boundary = True

    loglik, beta, sigma2_e, cov_unscaled = prof.evaluate(lam_hat)
    if not math.isfinite(loglik):
        # Perfect fit: variances collapse to zero at the boundary.
        sigma2_e = 0.0
        lam_hat = 0.0
        boundary = True
        loglik = math.inf
    cov_beta = sigma2_e * cov_unscaled
    se = np.sqrt(np.maximum(np.diag(cov_beta), 0.0))
    return FitResult(
        beta=beta,
        beta_names=list(info.columns) if info is not None else [f"b{i}" for i in range(p)],
        se=se,
        cov_beta=cov_beta,
        sigma2_u=lam_hat * sigma2_e,
        sigma2_e=sigma2_e,
        lam=lam_hat,
        reml_loglik=loglik,
        n_obs=n,
        n_groups=int(len(np.unique(groups))),
        converged=converged,
        boundary=boundary,
        n_evals=evals,
        dropped_columns=list(info.dropped_columns) if info is not None else [],
    )


def reml_criterion(y: np.ndarray, X: np.ndarray, groups: np.ndarray, lam: float) -> float:
    """The profiled criterion at one lambda; exposed for derivative checks."""
    return _Profile(np.asarray(y, float), np.asarray(X, float), np.asarray(groups)).evaluate(lam)[0]


def marginal_means(
    fit: FitResult, info: DesignInfo, at: list[dict[str, str]]
) -> list[dict]:
    """Estimated means for factor combinations, averaging the rest.

    For each requested combination, unspecified factors follow their observed
    joint distribution over the design rows; the estimate is c'beta for the
    averaged design vector c, with SE from c' Cov(beta) c.
    """
    out = []
    for combo in at:
        for f, level in combo.items():
            if f not in FACTOR_LEVELS:
                raise DataValidationError(f"unknown factor {f!r}")
            if level not in FACTOR_LEVELS[f]:
                raise DataValidationError(f"unknown level {level!r} for factor {f!r}")
        vecs = []
        for row in info.factor_rows:
            values = dict(row)
            values.update(combo)
            vecs.append(info.row_vector(values))
        c = np.mean(vecs, axis=0)
        est = float(c @ fit.beta)
        var = float(c @ fit.cov_beta @ c)
        out.append({**combo, "estimate": est, "se": math.sqrt(max(var, 0.0))})
    return out


def wald_contrast(fit: FitResult, contrast: np.ndarray, null: float = 0.0) -> tuple[float, float]:
    """Wald z statistic and two-sided normal p-value for c'beta = null."""
    c = np.asarray(contrast, dtype=np.float64)
    if c.shape != fit.beta.shape:
        raise DataValidationError(f"contrast length {c.size} != {fit.beta.size} coefficients")
    var = float(c @ fit.cov_beta @ c)
    if var <= 0.0:
        raise NumericalError("contrast has zero variance")
    z = (float(c @ fit.beta) - null) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return z, p


def empirical_logit(rate: float, adjust: float = 0.025) -> float:
    """Optional outcome transform: log((r + a) / (1 - r + a))."""
    return math.log((rate + adjust) / (1.0 - rate + adjust))
