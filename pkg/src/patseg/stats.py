"""Association tests and regression models for cohort analysis.

Everything here is closed-form or classic iterative arithmetic on numpy
arrays: Pearson and phi coefficients with their usual significance tests,
ordinary least squares via the normal equations, and logistic regression
via iteratively reweighted least squares. The screening-plus-multivariate
flow in run_paper_analysis mirrors a univariate filter at a fixed alpha
followed by one model per outcome.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import stats as sps
from scipy.special import expit

from .errors import ConvergenceError, DegenerateInputError, SeparationError

__all__ = [
    "PatientRecord",
    "RegressorStat",
    "RegressionReport",
    "ScreenResult",
    "AnalysisResult",
    "pearson",
    "phi",
    "ols_fit",
    "logistic_fit",
    "run_paper_analysis",
    "render_analysis",
    "read_records_csv",
    "write_records_csv",
    "read_patv_csv",
    "write_patv_csv",
    "join_patv",
    "write_analysis_csv",
]

RECORDS_CSV_HEADER = "case_id,age,sex,bmi,deceased,cvd_diagnosis"
PATV_CSV_HEADER = "case_id,patv_cm3"
ANALYSIS_CSV_HEADER = "outcome,regressor,status,coef,std_error,p_value,significant"

OUTCOMES = ("patv", "cvd_diagnosis", "deceased")
CANDIDATES = ("sex", "age", "bmi", "patv")


@dataclass(frozen=True)
class PatientRecord:
    case_id: str
    age: float
    sex: int  # 1 = female
    bmi: float
    deceased: int
    cvd_diagnosis: int  # number of diagnosed cardiovascular conditions
    patv: float | None = None  # pericardial adipose tissue volume, cm^3

    def __post_init__(self):
        if not self.case_id or any(c in self.case_id for c in ",\n\r"):
            raise ValueError(f"bad case_id {self.case_id!r}")
        if not np.isfinite(self.age) or self.age <= 0:
            raise ValueError(f"age must be positive, got {self.age}")
        if not np.isfinite(self.bmi) or self.bmi <= 0:
            raise ValueError(f"bmi must be positive, got {self.bmi}")
        if self.sex not in (0, 1):
            raise ValueError(f"sex must be 0 or 1, got {self.sex}")
        if self.deceased not in (0, 1):
            raise ValueError(f"deceased must be 0 or 1, got {self.deceased}")
        if not isinstance(self.cvd_diagnosis, int) or self.cvd_diagnosis < 0:
            raise ValueError(
                f"cvd_diagnosis must be a non-negative count, got {self.cvd_diagnosis}"
            )
        if self.patv is not None and not (np.isfinite(self.patv) and self.patv >= 0):
            raise ValueError(f"patv must be non-negative, got {self.patv}")


@dataclass(frozen=True)
class RegressorStat:
    name: str
    coef: float
    std_error: float
    p_value: float
    significant: bool

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p_value out of [0, 1]: {self.p_value}")
        if self.std_error < 0:
            raise ValueError(f"negative std_error: {self.std_error}")


@dataclass(frozen=True)
class RegressionReport:
    model_kind: str  # "ols" | "logistic"
    n: int
    alpha: float
    regressors: tuple[RegressorStat, ...]

    def __post_init__(self):
        if self.model_kind not in ("ols", "logistic"):
            raise ValueError(f"unknown model_kind {self.model_kind!r}")
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        for r in self.regressors:
            if r.significant != (r.p_value < self.alpha):
                raise ValueError(
                    f"inconsistent significance flag for {r.name!r}"
                )

    def coef(self, name: str) -> RegressorStat:
        for r in self.regressors:
            if r.name == name:
                return r
        raise KeyError(name)


def _clean_pair(x, y):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 3:
        raise ValueError("need at least 3 observations")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("inputs must be finite")
    return x, y


def pearson(x, y) -> tuple[float, float]:
    """Sample correlation and its two-sided t-test p-value (n - 2 df)."""
    x, y = _clean_pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(dx @ dx)
    sy = float(dy @ dy)
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInputError("constant input has no defined correlation")
    r = float(dx @ dy) / np.sqrt(sx * sy)
    r = float(np.clip(r, -1.0, 1.0))
    n = x.shape[0]
    if abs(r) == 1.0:
        return r, 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    p = float(2.0 * sps.t.sf(abs(t), n - 2))
    return r, p


def phi(table) -> tuple[float, float]:
    """Phi coefficient of a 2x2 contingency table [[a, b], [c, d]] and the
    chi-square p-value (1 df, no continuity correction).

    Rows index one binary variable, columns the other; equals pearson() on
    the underlying 0/1 encodings.
    """
    t = np.asarray(table, dtype=np.float64)
    if t.shape != (2, 2):
        raise ValueError(f"expected a 2x2 table, got shape {t.shape}")
    if (t < 0).any() or not np.isfinite(t).all():
        raise ValueError("table entries must be non-negative counts")
    a, b = t[0]
    c, d = t[1]
    margins = (a + b) * (c + d) * (a + c) * (b + d)
    if margins == 0.0:
        raise DegenerateInputError("a table margin is empty")
    v = float((a * d - b * c) / np.sqrt(margins))
    n = float(t.sum())
    p = float(sps.chi2.sf(n * v * v, df=1))
    return v, p


def _binary_table(x, y) -> np.ndarray:
    """2x2 counts with rows = x in {0, 1}, columns = y in {0, 1}."""
    x = np.asarray(x)
    y = np.asarray(y)
    out = np.zeros((2, 2), dtype=np.int64)
    for i in (0, 1):
        for j in (0, 1):
            out[i, j] = int(((x == i) & (y == j)).sum())
    return out


def _design(X, names, n_min):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"design must be 2-d, got shape {X.shape}")
    n, p = X.shape
    if len(names) != p:
        raise ValueError(f"{p} columns but {len(names)} names")
    if not np.isfinite(X).all():
        raise ValueError("design contains non-finite values")
    full = np.column_stack([np.ones(n), X])
    full_names = ("intercept",) + tuple(names)
    if n < len(full_names) + n_min:
        raise ValueError(
            f"too few rows ({n}) for {len(full_names)} coefficients"
        )
    # walk the columns so the first dependent one gets named
    for j in range(1, full.shape[1]):
        if np.linalg.matrix_rank(full[:, : j + 1]) <= np.linalg.matrix_rank(
            full[:, :j]
        ):
            raise DegenerateInputError(
                f"design is rank-deficient at column {full_names[j]!r}"
            )
    return full, full_names


def ols_fit(X, y, names, alpha: float = 0.01) -> RegressionReport:
    """Least squares by the normal equations, with an intercept prepended.

    Standard errors use the unbiased residual variance (n - p df); p-values
    are two-sided t-tests on each coefficient.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    full, full_names = _design(X, names, n_min=1)
    n, p = full.shape
    if y.shape[0] != n:
        raise ValueError(f"y has {y.shape[0]} rows, design has {n}")
    if not np.isfinite(y).all():
        raise ValueError("y contains non-finite values")

    xtx = full.T @ full
    beta = np.linalg.solve(xtx, full.T @ y)
    resid = y - full @ beta
    dof = n - p
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(xtx)
    se = np.sqrt(np.diag(cov))

    regs = []
    for name, b, s in zip(full_names, beta, se):
        if s == 0.0:
            pv = 0.0 if b != 0.0 else 1.0
        else:
            pv = float(2.0 * sps.t.sf(abs(b / s), dof))
        regs.append(RegressorStat(name, float(b), float(s), pv, pv < alpha))
    return RegressionReport("ols", n, alpha, tuple(regs))


MAX_IRLS_ITERATIONS = 100
IRLS_TOLERANCE = 1e-8
SEPARATION_BOUND = 1e3


def logistic_fit(X, y, names, alpha: float = 0.01) -> RegressionReport:
    """Logistic regression by iteratively reweighted least squares.

    Converges when no coefficient moves by more than 1e-8 in a Newton
    step; a coefficient magnitude above 1e3 is treated as separation.
    Standard errors come from the inverse Fisher information (Wald).
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    full, full_names = _design(X, names, n_min=1)
    n, p = full.shape
    if y.shape[0] != n:
        raise ValueError(f"y has {y.shape[0]} rows, design has {n}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("outcome must be binary 0/1")
    if y.min() == y.max():
        raise DegenerateInputError("outcome is constant; nothing to fit")

    beta = np.zeros(p)
    for _ in range(MAX_IRLS_ITERATIONS):
        mu = expit(full @ beta)
        w = mu * (1.0 - mu)
        info = full.T @ (full * w[:, None])
        try:
            step = np.linalg.solve(info, full.T @ (y - mu))
        except np.linalg.LinAlgError:
            # weights collapse to zero when every fitted probability has
            # saturated at its outcome, the perfect-separation signature
            if np.max(w) < 1e-8:
                raise SeparationError(
                    "fitted probabilities saturated; outcome looks separable"
                ) from None
            raise DegenerateInputError(
                "singular information matrix during IRLS"
            ) from None
        beta = beta + step
        worst = int(np.argmax(np.abs(beta)))
        if abs(beta[worst]) > SEPARATION_BOUND:
            raise SeparationError(
                f"coefficient for {full_names[worst]!r} exceeded "
                f"{SEPARATION_BOUND:g}; outcome looks separable"
            )
        if np.max(np.abs(step)) < IRLS_TOLERANCE:
            break
    else:
        raise ConvergenceError(
            f"IRLS did not converge in {MAX_IRLS_ITERATIONS} iterations"
        )

    mu = expit(full @ beta)
    info = full.T @ (full * (mu * (1.0 - mu))[:, None])
    se = np.sqrt(np.diag(np.linalg.inv(info)))

    regs = []
    for name, b, s in zip(full_names, beta, se):
        z = b / s if s > 0 else np.inf * np.sign(b)
        pv = float(2.0 * sps.norm.sf(abs(z)))
        regs.append(RegressorStat(name, float(b), float(s), pv, pv < alpha))
    return RegressionReport("logistic", n, alpha, tuple(regs))


@dataclass(frozen=True)
class ScreenResult:
    regressor: str
    method: str  # "pearson" | "phi"
    value: float
    p_value: float
    passed: bool


@dataclass(frozen=True)
class AnalysisResult:
    n: int
    alpha: float
    screens: dict  # outcome -> {regressor: ScreenResult}
    reports: dict  # outcome -> RegressionReport | None
    errors: dict  # outcome -> diagnostic string for failed fits


def _records_matrix(records: list[PatientRecord]) -> dict[str, np.ndarray]:
    if any(r.patv is None for r in records):
        raise ValueError("every record needs a patv value; join one first")
    return {
        "sex": np.array([r.sex for r in records], dtype=np.float64),
        "age": np.array([r.age for r in records], dtype=np.float64),
        "bmi": np.array([r.bmi for r in records], dtype=np.float64),
        "patv": np.array([r.patv for r in records], dtype=np.float64),
        "cvd_diagnosis": np.array(
            [r.cvd_diagnosis for r in records], dtype=np.float64
        ),
        "deceased": np.array([r.deceased for r in records], dtype=np.float64),
    }


def _screen_one(cols, outcome: str, cand: str) -> tuple[str, float, float]:
    x, y = cols[cand], cols[outcome]
    binary = {"sex", "deceased"}
    if outcome in binary and cand in binary:
        v, p = phi(_binary_table(x, y))
        return "phi", v, p
    # point-biserial for mixed pairs is pearson on the 0/1 coding
    v, p = pearson(x, y)
    return "pearson", v, p


def run_paper_analysis(
    records: list[PatientRecord], alpha: float = 0.01
) -> AnalysisResult:
    """Univariate screen then one multivariate model per outcome.

    Outcomes: fat volume and diagnosis count by least squares, mortality
    by logistic regression. Candidate regressors are sex, age, bmi, and
    fat volume, minus the outcome itself; only candidates whose
    univariate test clears alpha enter the model. A fit failure for one
    outcome (separation, degeneracy) is recorded and the rest proceed.
    """
    if len(records) < 10:
        raise ValueError(f"analysis needs at least 10 records, got {len(records)}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    cols = _records_matrix(records)
    n = len(records)

    screens: dict[str, dict[str, ScreenResult]] = {}
    reports: dict[str, RegressionReport | None] = {}
    errors: dict[str, str] = {}

    for outcome in OUTCOMES:
        cands = [c for c in CANDIDATES if c != outcome]
        row: dict[str, ScreenResult] = {}
        for cand in cands:
            try:
                method, v, p = _screen_one(cols, outcome, cand)
                row[cand] = ScreenResult(cand, method, v, p, p < alpha)
            except DegenerateInputError:
                row[cand] = ScreenResult(cand, "none", float("nan"),
                                         float("nan"), False)
        screens[outcome] = row
        kept = [c for c in cands if row[c].passed]

        X = np.column_stack([cols[c] for c in kept]) if kept else np.empty((n, 0))
        y = cols[outcome]
        try:
            if outcome == "deceased":
                reports[outcome] = logistic_fit(X, y, kept, alpha)
            else:
                reports[outcome] = ols_fit(X, y, kept, alpha)
        except (DegenerateInputError, SeparationError, ConvergenceError,
                np.linalg.LinAlgError) as exc:
            reports[outcome] = None
            errors[outcome] = f"{type(exc).__name__}: {exc}"

    return AnalysisResult(n, alpha, screens, reports, errors)


def render_analysis(result: AnalysisResult) -> str:
    """Fixed-width text table: candidate regressors by outcome models.

    Cells show coefficient (standard error) with the model p-value, the
    word "excluded" where the univariate screen dropped the candidate,
    "outcome" on the diagonal, and the failure note when a model errored.
    """
    col_w = 26
    name_w = 10

    def cell(outcome: str, cand: str) -> str:
        if cand == outcome:
            return "outcome"
        if outcome in result.errors:
            return "model failed"
        if not result.screens[outcome][cand].passed:
            return "excluded"
        rep = result.reports[outcome]
        r = rep.coef(cand)
        mark = " *" if r.significant else ""
        return f"{r.coef:.4g} ({r.std_error:.3g}) p={r.p_value:.3g}{mark}"

    lines = []
    head = "".join(o.ljust(col_w) for o in OUTCOMES)
    lines.append("regressor".ljust(name_w) + head)
    kinds = "".join(
        (result.reports[o].model_kind if result.reports[o] else "failed").ljust(col_w)
        for o in OUTCOMES
    )
    lines.append("model".ljust(name_w) + kinds)
    lines.append(f"n = {result.n}, alpha = {result.alpha:g}, * significant")
    lines.append("-" * (name_w + col_w * len(OUTCOMES)))
    for cand in CANDIDATES:
        row = "".join(cell(o, cand).ljust(col_w) for o in OUTCOMES)
        lines.append(cand.ljust(name_w) + row)
    for outcome, msg in sorted(result.errors.items()):
        lines.append(f"note: {outcome} model failed: {msg}")
    return "\n".join(lines) + "\n"


def write_records_csv(records, path, include_patv: bool = False) -> None:
    path = Path(path)
    with open(path, "w", newline="\n") as f:
        header = RECORDS_CSV_HEADER + (",patv" if include_patv else "")
        f.write(header + "\n")
        for r in records:
            row = (
                f"{r.case_id},{r.age!r},{r.sex},{r.bmi!r},"
                f"{r.deceased},{r.cvd_diagnosis}"
            )
            if include_patv:
                if r.patv is None:
                    raise ValueError(f"record {r.case_id} has no patv")
                row += f",{r.patv!r}"
            f.write(row + "\n")


def read_records_csv(path) -> list[PatientRecord]:
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path} is empty") from None
        base = RECORDS_CSV_HEADER.split(",")
        if header not in (base, base + ["patv"]):
            raise ValueError(
                f"unexpected header {','.join(header)!r}; "
                f"want {RECORDS_CSV_HEADER!r}"
            )
        has_patv = header == base + ["patv"]
        records = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"row {row!r} does not match the header")
            records.append(
                PatientRecord(
                    case_id=row[0],
                    age=float(row[1]),
                    sex=int(row[2]),
                    bmi=float(row[3]),
                    deceased=int(row[4]),
                    cvd_diagnosis=int(row[5]),
                    patv=float(row[6]) if has_patv else None,
                )
            )
    return records


def write_patv_csv(patv_by_case: dict[str, float], path) -> None:
    with open(Path(path), "w", newline="\n") as f:
        f.write(PATV_CSV_HEADER + "\n")
        for case_id in patv_by_case:
            f.write(f"{case_id},{patv_by_case[case_id]!r}\n")


def read_patv_csv(path) -> dict[str, float]:
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != PATV_CSV_HEADER.split(","):
            raise ValueError(
                f"unexpected header in {path}; want {PATV_CSV_HEADER!r}"
            )
        out = {}
        for row in reader:
            if not row:
                continue
            if len(row) != 2 or row[0] in out:
                raise ValueError(f"bad or duplicate row {row!r}")
            out[row[0]] = float(row[1])
    return out


def join_patv(records, patv_by_case: dict[str, float]) -> list[PatientRecord]:
    """Attach measured fat volumes to demographic records by case id."""
    out = []
    for r in records:
        if r.case_id not in patv_by_case:
            raise ValueError(f"no fat volume for case {r.case_id!r}")
        out.append(replace(r, patv=float(patv_by_case[r.case_id])))
    return out


def write_analysis_csv(result: AnalysisResult, path) -> None:
    """Machine-readable companion to render_analysis, one row per cell.

    Status is "fit" (numbers follow), "excluded" (failed the univariate
    screen), or "model-failed" (that outcome's model raised); blank numeric
    cells stay empty. Floats use repr, so output is byte-stable.
    """
    lines = [ANALYSIS_CSV_HEADER]
    for outcome in OUTCOMES:
        report = result.reports.get(outcome)
        for name in ("intercept", *(c for c in CANDIDATES if c != outcome)):
            if report is None:
                lines.append(f"{outcome},{name},model-failed,,,,")
                continue
            stat = next((r for r in report.regressors if r.name == name), None)
            if stat is None:
                lines.append(f"{outcome},{name},excluded,,,,")
            else:
                lines.append(
                    f"{outcome},{name},fit,{stat.coef!r},{stat.std_error!r},"
                    f"{stat.p_value!r},{stat.significant}"
                )
    with open(Path(path), "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
