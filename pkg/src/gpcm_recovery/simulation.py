"""Monte Carlo parameter-recovery harness.

Generates latent traits and GPCM responses, runs the estimators over
replications of a condition, and summarizes recovery with bias, RMSE and MSE.

Seeding
-------
Every random stream comes from ``numpy.random.SeedSequence(base_seed,
spawn_key=...)``. The spawn key is a tuple of small integers built from the
stream's role; strings are mapped through CRC-32 so keys are stable across
processes and Python versions:

* thetas:    ``(crc("theta"), crc(distribution), sample_size)``
* responses: ``(crc("responses"), crc(distribution), sample_size, test_length, replication)``
* MCMC:      ``(crc("mcmc"), crc(distribution), sample_size, test_length, replication)``

The theta key deliberately omits test length and replication, so every
replication of a condition sees the same ability vector.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FleishmanInfeasibleError, InvalidInputError, NonConvergenceError
from .model import ItemBank, ItemParams, ResponseMatrix, gpcm_log_probs

log = logging.getLogger(__name__)

# Generating item parameters. Columns b1..b4 of the published table are read as
# the four stored steps, i.e. transitions into categories 1..4 of a 5-category item.
TABLE1 = ItemBank([
    ItemParams(1.476, (-1.726, -0.145, -0.849, 1.765)),
    ItemParams(1.202, (-1.285, 0.248, 0.868, 1.433)),
    ItemParams(1.390, (-1.109, -0.099, -0.257, 1.196)),
    ItemParams(0.880, (-1.855, -0.105, 0.526, 1.271)),
    ItemParams(1.047, (-2.198, 0.274, 1.038, 2.126)),
    ItemParams(1.256, (-1.059, -0.542, 0.716, 1.858)),
    ItemParams(1.090, (-1.326, -0.351, 0.669, 1.305)),
    ItemParams(0.996, (-1.895, -1.475, 0.288, 1.392)),
    ItemParams(0.985, (-0.707, -0.949, 0.369, 1.296)),
    ItemParams(0.983, (-1.793, -0.567, 0.517, 1.571)),
    ItemParams(1.150, (-1.972, -0.198, 0.092, 1.169)),
    ItemParams(1.291, (-1.503, -0.648, 0.863, 2.453)),
    ItemParams(1.530, (-1.447, -0.623, 0.900, 1.557)),
    ItemParams(0.906, (-2.284, -0.201, 0.903, 1.623)),
    ItemParams(1.213, (-1.385, -0.486, 0.632, 1.224)),
    ItemParams(0.803, (-1.494, -0.859, 0.923, 1.546)),
    ItemParams(0.773, (-1.009, -0.518, -0.438, 1.309)),
    ItemParams(0.933, (-1.140, -0.310, 1.691, 1.721)),
    ItemParams(1.408, (-1.459, -0.471, 0.736, 0.832)),
    ItemParams(1.044, (-1.709, -0.454, -0.320, 1.149)),
])

# Four 4-category items shaped like the reading-passage example: the MMLE
# column of the published estimate comparison.
REAL_DATA_LIKE = ItemBank([
    ItemParams(1.213, (-1.894, -0.998, 0.261)),
    ItemParams(1.060, (-0.969, -0.123, 0.794)),
    ItemParams(1.117, (-1.628, -0.793, 1.735)),
    ItemParams(0.300, (0.344, 2.828, 6.188)),
])

DISTRIBUTIONS = ("normal", "uniform", "skewed")
SAMPLE_SIZES = (500, 1000, 2000)
TEST_LENGTHS = (5, 10, 20)


def stable_tag(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def derive_seed(base_seed: int, stage: str, *fields) -> np.random.SeedSequence:
    key = [stable_tag(stage)]
    for f in fields:
        key.append(stable_tag(f) if isinstance(f, str) else int(f))
    return np.random.SeedSequence(int(base_seed), spawn_key=tuple(key))


def seed_int(ss: np.random.SeedSequence) -> int:
    """A 63-bit integer seed drawn from a SeedSequence, for APIs that take ints."""
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# -- Fleishman power transform ------------------------------------------------

def _fleishman_system(b, c, d, skew, exkurt):
    f = np.array([
        b * b + 6 * b * d + 2 * c * c + 15 * d * d - 1,
        2 * c * (b * b + 24 * b * d + 105 * d * d + 2) - skew,
        24 * (b * d + c * c * (1 + b * b + 28 * b * d)
              + d * d * (12 + 48 * b * d + 141 * c * c + 225 * d * d)) - exkurt,
    ])
    jac = np.array([
        [2 * b + 6 * d, 4 * c, 6 * b + 30 * d],
        [2 * c * (2 * b + 24 * d), 2 * (b * b + 24 * b * d + 105 * d * d + 2),
         2 * c * (24 * b + 210 * d)],
        [24 * (d + c * c * (2 * b + 28 * d) + 48 * d ** 3),
         24 * (2 * c * (1 + b * b + 28 * b * d) + 282 * c * d * d),
         24 * (b + 28 * b * c * c + 2 * d * (12 + 48 * b * d + 141 * c * c + 225 * d * d)
               + d * d * (48 * b + 450 * d))],
    ])
    return f, jac


def fleishman_coeffs(skewness: float, excess_kurtosis: float, tol: float = 1e-12,
                     max_iter: int = 200) -> tuple[float, float, float, float]:
    """Coefficients ``(a, b, c, d)`` so that ``a + bX + cX^2 + dX^3`` has the target moments.

    ``X`` is standard normal; the result has mean 0, variance 1, the given
    skewness and excess kurtosis, and ``a = -c``. Solved by damped Newton from
    ``(b, c, d) = (1, skewness/6, 0)``.
    """
    if skewness == 0 and excess_kurtosis == 0:
        return (0.0, 1.0, 0.0, 0.0)
    # moment inequality that holds for every distribution
    if excess_kurtosis < skewness**2 - 2:
        raise FleishmanInfeasibleError(
            f"skewness {skewness} and excess kurtosis {excess_kurtosis} are outside the feasible region"
        )
    x = np.array([1.0, skewness / 6.0, 0.0])
    f, jac = _fleishman_system(*x, skewness, excess_kurtosis)
    for _ in range(max_iter):
        norm = np.linalg.norm(f)
        if norm < tol:
            break
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise FleishmanInfeasibleError("singular Jacobian in Fleishman solve") from exc
        t = 1.0
        while t > 1e-10:
            trial = x + t * step
            f_new, jac_new = _fleishman_system(*trial, skewness, excess_kurtosis)
            if np.linalg.norm(f_new) < norm:
                break
            t *= 0.5
        else:
            raise FleishmanInfeasibleError("Fleishman Newton iteration stalled")
        x, f, jac = trial, f_new, jac_new
    if np.linalg.norm(f) >= 1e-10:
        raise FleishmanInfeasibleError("Fleishman Newton iteration did not converge")
    b, c, d = (float(v) for v in x)
    return (-c, b, c, d)


@dataclass(frozen=True)
class LatentDistribution:
    tag: str
    skewness: float = 0.0
    excess_kurtosis: float = 0.0
    coeffs: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if self.tag not in DISTRIBUTIONS:
            raise InvalidInputError(f"unknown latent distribution {self.tag!r}")
        if self.tag == "skewed" and self.coeffs is None:
            object.__setattr__(self, "coeffs", fleishman_coeffs(self.skewness, self.excess_kurtosis))

    @classmethod
    def named(cls, tag: str) -> "LatentDistribution":
        if tag == "skewed":
            return cls("skewed", 1.25, 1.5)
        return cls(tag)


def generate_thetas(dist: LatentDistribution, n: int, seed) -> np.ndarray:
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if dist.tag == "normal":
        return rng.standard_normal(n)
    if dist.tag == "uniform":
        return rng.uniform(-3.0, 3.0, n)
    a, b, c, d = dist.coeffs
    x = rng.standard_normal(n)
    return a + x * (b + x * (c + x * d))


def condition_thetas(dist: LatentDistribution, sample_size: int, base_seed: int) -> np.ndarray:
    """The ability vector shared by every replication with this distribution and size."""
    return generate_thetas(dist, sample_size, derive_seed(base_seed, "theta", dist.tag, sample_size))


def generate_responses(bank: ItemBank, thetas, seed) -> ResponseMatrix:
    thetas = np.asarray(thetas, dtype=float)
    rng = np.random.default_rng(seed)
    u = np.empty((thetas.size, len(bank)), dtype=np.int64)
    for j, item in enumerate(bank):
        cdf = np.cumsum(np.exp(gpcm_log_probs(thetas, item)), axis=1)
        draw = rng.random(thetas.size)
        u[:, j] = np.minimum((draw[:, None] >= cdf[:, :-1]).sum(axis=1), item.n_categories - 1)
    return ResponseMatrix(u, tuple(int(m) for m in bank.n_categories))


# -- recovery metrics -----------------------------------------------------------

def bias(estimates, truth) -> float:
    err = np.asarray(estimates, dtype=float) - truth
    if err.size == 0:
        raise InvalidInputError("bias needs at least one replication")
    return float(err.mean())


def rmse(estimates, truth) -> float:
    err = np.asarray(estimates, dtype=float) - truth
    if err.size == 0:
        raise InvalidInputError("rmse needs at least one replication")
    return float(np.sqrt(np.mean(err**2)))


def mse(estimates, truth) -> float:
    return rmse(estimates, truth) ** 2


def theta_hash(thetas) -> str:
    return hashlib.sha256(np.ascontiguousarray(thetas, dtype=np.float64).tobytes()).hexdigest()


# -- conditions and replications -----------------------------------------------

ESTIMATORS = ("mmle", "mcmc")
PARAM_CLASSES = ("discrimination", "location", "ability")


@dataclass(frozen=True)
class SimCondition:
    distribution: LatentDistribution
    sample_size: int
    test_length: int
    n_replications: int = 100
    base_seed: int = 0

    def __post_init__(self):
        if isinstance(self.distribution, str):
            object.__setattr__(self, "distribution", LatentDistribution.named(self.distribution))
        if self.sample_size < 1:
            raise InvalidInputError("sample_size must be >= 1")
        if not 1 <= self.test_length <= len(TABLE1):
            raise InvalidInputError(f"test_length must lie in 1..{len(TABLE1)}")
        if self.n_replications < 1:
            raise InvalidInputError("n_replications must be >= 1")

    @classmethod
    def parse(cls, text: str, n_replications: int = 100, base_seed: int = 0) -> "SimCondition":
        """From ``"dist,SS,TL"``, e.g. ``"normal,500,5"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise InvalidInputError(f"condition must look like dist,SS,TL: {text!r}")
        try:
            ss, tl = int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise InvalidInputError(f"condition must look like dist,SS,TL: {text!r}") from exc
        return cls(LatentDistribution.named(parts[0]), ss, tl, n_replications, base_seed)

    @property
    def condition_id(self) -> str:
        return f"{self.distribution.tag}-SS{self.sample_size}-TL{self.test_length}"

    @property
    def bank(self) -> ItemBank:
        # shorter tests use the leading items of the generating table
        return TABLE1[: self.test_length]

    def thetas(self) -> np.ndarray:
        return condition_thetas(self.distribution, self.sample_size, self.base_seed)

    def response_seed(self, replication: int) -> np.random.SeedSequence:
        d = self.distribution.tag
        return derive_seed(self.base_seed, "responses", d, self.sample_size, self.test_length, replication)

    def mcmc_seed(self, replication: int) -> int:
        d = self.distribution.tag
        return seed_int(derive_seed(self.base_seed, "mcmc", d, self.sample_size, self.test_length, replication))

    def data(self, replication: int) -> ResponseMatrix:
        return generate_responses(self.bank, self.thetas(), self.response_seed(replication))


def full_design(n_replications: int = 100, base_seed: int = 0) -> list[SimCondition]:
    """The 27 crossed conditions."""
    return [
        SimCondition(LatentDistribution.named(d), ss, tl, n_replications, base_seed)
        for d in DISTRIBUTIONS for ss in SAMPLE_SIZES for tl in TEST_LENGTHS
    ]


def parameter_names(bank: ItemBank, n_persons: int) -> dict[str, tuple[str, ...]]:
    disc = tuple(f"a[{j + 1}]" for j in range(len(bank)))
    loc = tuple(f"b[{j + 1},{k}]" for j, it in enumerate(bank) for k in range(2, it.n_categories + 1))
    ability = tuple(f"theta[{i + 1}]" for i in range(n_persons))
    return {"discrimination": disc, "location": loc, "ability": ability}


def parameter_vectors(bank: ItemBank, thetas) -> dict[str, np.ndarray]:
    return {
        "discrimination": np.asarray(bank.discriminations, dtype=float),
        "location": np.concatenate([np.asarray(it.steps, dtype=float) for it in bank]) if len(bank) else np.empty(0),
        "ability": np.asarray(thetas, dtype=float),
    }


@dataclass
class ReplicationResult:
    replication: int
    estimator: str
    status: str  # "ok", or why the replication is excluded
    estimates: dict[str, np.ndarray] | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class EstimatorSettings:
    em: object = None  # mmle.EmConfig
    hmc: object = None  # mcmc.HmcConfig; its seed is replaced per replication
    prior: object = None  # mcmc.PriorSpec


def run_replication(cond: SimCondition, replication: int, estimators=ESTIMATORS,
                    settings: EstimatorSettings | None = None) -> list[ReplicationResult]:
    """Generate one dataset and fit every requested estimator on it."""
    from .mcmc import HmcConfig, fit_mcmc
    from .mmle import EmConfig, fit_mmle

    settings = settings or EstimatorSettings()
    thetas = cond.thetas()
    data = generate_responses(cond.bank, thetas, cond.response_seed(replication))
    base = {"theta_sha256": theta_hash(thetas)}
    out = []
    for est in estimators:
        diag = dict(base)
        if est == "mmle":
            import warnings

            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                fit = fit_mmle(data, config=settings.em or EmConfig())
            diag.update(n_cycles=fit.n_cycles, converged=fit.converged)
            if fit.collapse_maps:
                status = "collapsed categories: " + ";".join(str(w.message) for w in caught)
            elif not fit.converged:
                status = "nonconverged"
            else:
                status = "ok"
        elif est == "mcmc":
            cfg = replace(settings.hmc or HmcConfig(), seed=cond.mcmc_seed(replication))
            try:
                fit = fit_mcmc(data, prior=settings.prior, cfg=cfg)
            except NonConvergenceError as exc:
                diag.update(n_retries=exc.n_retries, max_psrf=exc.worst_psrf, worst_parameter=exc.parameter)
                out.append(ReplicationResult(replication, est, "nonconverged", None, diag))
                continue
            k = int(np.argmax(fit.psrf))
            diag.update(n_retries=fit.n_retries, max_psrf=fit.max_psrf,
                        worst_parameter=fit.draws.names[k],
                        accept_rate_min=float(fit.accept_rate.min()),
                        accept_rate_max=float(fit.accept_rate.max()))
            status = "ok"
        else:
            raise InvalidInputError(f"unknown estimator {est!r}")
        est_vec = parameter_vectors(fit.bank_hat, fit.theta_hat) if status == "ok" else None
        out.append(ReplicationResult(replication, est, status, est_vec, diag))
    return out


def _replication_job(args):
    return run_replication(*args)


@dataclass
class RecoveryReport:
    """Per-replication estimates for one condition plus bias/RMSE/MSE summaries.

    Metrics follow the usual Monte Carlo recovery definitions: for each
    parameter, bias and RMSE are taken over the included replications; a
    parameter class (discrimination, location steps, abilities) is then
    summarized by the mean and SD of those per-parameter values.
    """

    condition: SimCondition
    results: list[ReplicationResult]

    def __post_init__(self):
        self.results = sorted(self.results, key=lambda r: (ESTIMATORS.index(r.estimator)
                                                         if r.estimator in ESTIMATORS else 99,
                                                         r.replication))
        self._truth = parameter_vectors(self.condition.bank, self.condition.thetas())
        self._names = parameter_names(self.condition.bank, self.condition.sample_size)

    @property
    def estimators(self) -> tuple[str, ...]:
        return tuple(e for e in ESTIMATORS if any(r.estimator == e for r in self.results))

    def truth(self, param_class: str) -> np.ndarray:
        return self._truth[param_class]

    def names(self, param_class: str) -> tuple[str, ...]:
        return self._names[param_class]

    def included(self, estimator: str) -> list[ReplicationResult]:
        return [r for r in self.results if r.estimator == estimator and r.ok]

    def excluded(self, estimator: str) -> list[ReplicationResult]:
        return [r for r in self.results if r.estimator == estimator and not r.ok]

    def estimates(self, estimator: str, param_class: str) -> np.ndarray:
        """``(replications, parameters)`` array over included replications."""
        rows = [r.estimates[param_class] for r in self.included(estimator)]
        if not rows:
            raise InvalidInputError(f"no included replications for {estimator}")
        return np.vstack(rows)

    def parameter_metrics(self, estimator: str, param_class: str) -> dict[str, np.ndarray]:
        err = self.estimates(estimator, param_class) - self.truth(param_class)[None, :]
        b = err.mean(axis=0)
        m = np.mean(err**2, axis=0)
        return {"bias": b, "rmse": np.sqrt(m), "mse": m}

    def class_summary(self, estimator: str, param_class: str) -> dict[str, float]:
        pm = self.parameter_metrics(estimator, param_class)
        ddof = 1 if pm["bias"].size > 1 else 0
        out = {}
        for key in ("bias", "rmse", "mse"):
            out[f"{key}_mean"] = float(pm[key].mean())
            out[f"{key}_sd"] = float(pm[key].std(ddof=ddof))
        return out

    def subset(self, n_replications: int) -> "RecoveryReport":
        """The report a run with only the first ``n_replications`` would give."""
        cond = replace(self.condition, n_replications=n_replications)
        return RecoveryReport(cond, [r for r in self.results if r.replication <= n_replications])

    # -- CSV emission ------------------------------------------------------------

    TIDY_COLUMNS = ("condition_id", "distribution", "SS", "TL", "replication", "estimator",
                    "param_class", "param_name", "truth", "estimate")
    SUMMARY_COLUMNS = ("condition_id", "distribution", "SS", "TL", "estimator", "param_class",
                       "n_parameters", "n_replications", "n_excluded",
                       "bias_mean", "bias_sd", "rmse_mean", "rmse_sd", "mse_mean", "mse_sd")
    DIAGNOSTIC_COLUMNS = ("condition_id", "replication", "estimator", "status", "theta_sha256",
                          "n_cycles", "n_retries", "max_psrf", "worst_parameter",
                          "accept_rate_min", "accept_rate_max")

    def _cond_fields(self):
        c = self.condition
        return [c.condition_id, c.distribution.tag, c.sample_size, c.test_length]

    def tidy_rows(self):
        head = self._cond_fields()
        for r in self.results:
            if not r.ok:
                continue
            for cls in PARAM_CLASSES:
                for name, t, e in zip(self._names[cls], self._truth[cls], r.estimates[cls]):
                    yield head + [r.replication, r.estimator, cls, name, _fmt(t), _fmt(e)]

    def summary_rows(self):
        head = self._cond_fields()
        for est in self.estimators:
            n_ok, n_bad = len(self.included(est)), len(self.excluded(est))
            for cls in PARAM_CLASSES:
                if n_ok == 0:
                    continue
                s = self.class_summary(est, cls)
                yield head + [est, cls, self._truth[cls].size, n_ok, n_bad] + [
                    _fmt(s[k]) for k in ("bias_mean", "bias_sd", "rmse_mean", "rmse_sd", "mse_mean", "mse_sd")]

    def diagnostic_rows(self):
        for r in self.results:
            d = r.diagnostics
            yield [self.condition.condition_id, r.replication, r.estimator, r.status] + [
                _fmt(d[k]) if isinstance(d.get(k), float) else ("" if d.get(k) is None else d[k])
                for k in self.DIAGNOSTIC_COLUMNS[4:]]

    def write_tidy_csv(self, fh, header: bool = True) -> None:
        _write_rows(fh, self.TIDY_COLUMNS if header else None, self.tidy_rows())

    def write_summary_csv(self, fh, header: bool = True) -> None:
        _write_rows(fh, self.SUMMARY_COLUMNS if header else None, self.summary_rows())

    def write_diagnostics_csv(self, fh, header: bool = True) -> None:
        _write_rows(fh, self.DIAGNOSTIC_COLUMNS if header else None, self.diagnostic_rows())


def _fmt(x) -> str:
    """Shortest round-trip decimal form of a float."""
    return repr(float(x))


def _write_rows(fh, header, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow(header)
    w.writerows(rows)


def run_condition(cond: SimCondition, estimators=ESTIMATORS, settings: EstimatorSettings | None = None,
                  n_workers: int = 1) -> RecoveryReport:
    """Run every replication of a condition and collect a :class:`RecoveryReport`.

    Replications are independent given the shared ability vector, so with
    ``n_workers > 1`` they run in a process pool; results do not depend on
    the worker count.
    """
    estimators = tuple(estimators)
    for e in estimators:
        if e not in ESTIMATORS:
            raise InvalidInputError(f"unknown estimator {e!r}")
    jobs = [(cond, r, estimators, settings) for r in range(1, cond.n_replications + 1)]
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            batches = list(pool.map(_replication_job, jobs))
    else:
        batches = [_replication_job(j) for j in jobs]
    report = RecoveryReport(cond, [r for batch in batches for r in batch])
    for est in estimators:
        bad = report.excluded(est)
        if bad:
            log.warning("%s %s: %d of %d replications excluded (%s)", cond.condition_id, est,
                        len(bad), cond.n_replications, ", ".join(sorted({r.status for r in bad})))
    return report


# -- comparing two fits of the same data ----------------------------------------

@dataclass
class EstimateComparison:
    item_rows: list[tuple[str, float, float, float]]  # name, first, second, second - first
    ability_mean_diff: float
    ability_sd_diff: float
    ability_max_abs_diff: float
    ability_correlation: float
    ability_means: tuple[float, float]
    ability_sds: tuple[float, float]

    COLUMNS = ("parameter", "first", "second", "difference")

    def write_csv(self, fh) -> None:
        rows = [[n, _fmt(a), _fmt(b), _fmt(d)] for n, a, b, d in self.item_rows]
        rows += [
            ["ability_mean", _fmt(self.ability_means[0]), _fmt(self.ability_means[1]),
             _fmt(self.ability_mean_diff)],
            ["ability_sd", _fmt(self.ability_sds[0]), _fmt(self.ability_sds[1]),
             _fmt(self.ability_sds[1] - self.ability_sds[0])],
            ["ability_diff_sd", "", "", _fmt(self.ability_sd_diff)],
            ["ability_max_abs_diff", "", "", _fmt(self.ability_max_abs_diff)],
            ["ability_correlation", "", "", _fmt(self.ability_correlation)],
        ]
        _write_rows(fh, self.COLUMNS, rows)


def compare_estimates(fit_a, fit_b) -> EstimateComparison:
    """Side-by-side item estimates and ability agreement of two fits.

    Works with anything exposing ``bank_hat`` and ``theta_hat``. Differences
    are ``fit_b - fit_a``.
    """
    bank_a, bank_b = fit_a.bank_hat, fit_b.bank_hat
    if tuple(bank_a.n_categories) != tuple(bank_b.n_categories):
        raise InvalidInputError("fits disagree on the item structure")
    th_a = np.asarray(fit_a.theta_hat, dtype=float)
    th_b = np.asarray(fit_b.theta_hat, dtype=float)
    if th_a.shape != th_b.shape or th_a.size == 0:
        raise InvalidInputError("fits disagree on the number of persons")
    va = parameter_vectors(bank_a, th_a)
    vb = parameter_vectors(bank_b, th_b)
    names = parameter_names(bank_a, 0)
    rows = []
    for cls in ("discrimination", "location"):
        for n, a, b in zip(names[cls], va[cls], vb[cls]):
            rows.append((n, float(a), float(b), float(b - a)))
    diff = th_b - th_a
    if th_a.std() > 0 and th_b.std() > 0:
        corr = float(np.corrcoef(th_a, th_b)[0, 1])
    else:
        corr = float("nan")
    return EstimateComparison(
        item_rows=rows,
        ability_mean_diff=float(diff.mean()),
        ability_sd_diff=float(diff.std(ddof=1)) if diff.size > 1 else 0.0,
        ability_max_abs_diff=float(np.max(np.abs(diff))),
        ability_correlation=corr,
        ability_means=(float(th_a.mean()), float(th_b.mean())),
        ability_sds=(float(th_a.std(ddof=1)) if th_a.size > 1 else 0.0,
                     float(th_b.std(ddof=1)) if th_b.size > 1 else 0.0),
    )
