"""Simulation of the normalized polynomial-time sums and CLT verification.

The simulator works entirely on the reduced setup: for each component i it
evaluates the part G_i at the stacked process sampled along p_1(n)..p_i(n),
accumulates prefix sums in float64 (per-term values come from exact rational
tables converted once), and reads paths off at exactly computed cutoffs
floor(N * t * c).  The merged-sum path is reconstructed from the component
paths through the time-change weights; the reconstruction is checked against
a direct summation on every sampled path.

Replicates use disjoint counter streams, so runs are reproducible bit for
bit given (seed, plan) regardless of chunking or thread count: statistics
are reduced in replicate order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import stats as spstats

from .covariance import CovarianceReport, ScenarioContext, increment_covariance
from .errors import BadTimes, ConfigError, DegenerateVariance, EngineAssertion
from .polynomials import ExactRoot, floor_times_root

_CHUNK = 256  # replicates per batch; fixed so results do not depend on threads


# ---------------------------------------------------------------------------
# plans and reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationPlan:
    """What to simulate: ladder of sizes, replicate count, and time points."""

    n_ladder: tuple[int, ...]
    replicates: int
    t_grid: tuple[Fraction, ...] = (Fraction(1),)
    increment_triples: tuple[tuple[Fraction, Fraction, Fraction], ...] = ()
    seed: int = 0
    normality: bool = True

    def __post_init__(self) -> None:
        if not self.n_ladder or any(n < 1 for n in self.n_ladder):
            raise ConfigError("n_ladder must hold sizes >= 1")
        if self.replicates < 2:
            raise ConfigError("need at least 2 replicates")
        if list(self.t_grid) != sorted(self.t_grid) or any(t < 0 for t in self.t_grid):
            raise ConfigError("t_grid must be sorted and nonnegative")
        for triple in self.increment_triples:
            t1, t2, t3 = triple
            if not 0 <= t1 <= t2 <= t3:
                raise BadTimes(f"bad increment triple {triple}")


@dataclass(frozen=True)
class ComparisonRow:
    """One empirical estimate against its analytic prediction."""

    name: str
    n: int
    estimate: float
    std_error: float
    predicted: float
    z: float

    def serialize(self) -> dict:
        return {"name": self.name, "n": self.n, "estimate": self.estimate,
                "std_error": self.std_error, "predicted": self.predicted,
                "z": self.z}


@dataclass(frozen=True)
class NormalityStats:
    ks_distance: float
    ks_threshold: float
    skewness: float
    excess_kurtosis: float
    passed: bool

    def serialize(self) -> dict:
        return {"ks_distance": self.ks_distance, "ks_threshold": self.ks_threshold,
                "skewness": self.skewness, "excess_kurtosis": self.excess_kurtosis,
                "passed": self.passed}


@dataclass(frozen=True)
class SimulationReport:
    plan: SimulationPlan
    variance_rows: tuple[ComparisonRow, ...]
    covariance_rows: tuple[ComparisonRow, ...]
    increment_rows: tuple[ComparisonRow, ...]
    normality: NormalityStats | None
    samples_per_row: int

    def all_rows(self) -> tuple[ComparisonRow, ...]:
        return self.variance_rows + self.covariance_rows + self.increment_rows

    def serialize(self) -> dict:
        return {
            "variance": [r.serialize() for r in self.variance_rows],
            "covariances": [r.serialize() for r in self.covariance_rows],
            "increments": [r.serialize() for r in self.increment_rows],
            "normality": self.normality.serialize() if self.normality else None,
            "replicates": self.samples_per_row,
        }


# ---------------------------------------------------------------------------
# path simulation
# ---------------------------------------------------------------------------

@dataclass
class ComponentPaths:
    """Sampled component paths of one replicate on a time grid."""

    n: int
    t_grid: tuple[Fraction, ...]
    component_values: np.ndarray      # [size, len(grid)]
    total_values: np.ndarray          # [len(grid)] reconstructed from components
    direct_total: np.ndarray          # [len(grid)] direct summation of all parts

    def identity_residual(self) -> float:
        """Relative gap between the reconstructed and the direct merged sum."""
        scale = max(1.0, float(np.abs(self.direct_total).max(initial=0.0)))
        return float(np.abs(self.total_values - self.direct_total).max(initial=0.0)) / scale


class _Simulator:
    """Tables and cutoffs for one scenario, reused across replicates."""

    def __init__(self, ctx: ScenarioContext):
        self.ctx = ctx
        family = ctx.family
        self.size = family.size
        self.process = ctx.setup.process
        self.cell_count = len(self.process.cell_values)
        self.tables = [self._table(i) for i in range(1, self.size + 1)]
        # c_{i,head} (<= 1) stretches grid times into component cutoffs; the
        # reconstruction weight c_{head,i} inverts it.
        self.to_cutoff = [family.time_change(i, family.block_head(family.block_of(i)))
                          for i in range(1, self.size + 1)]
        self.from_head = [root.reciprocal() for root in self.to_cutoff]

    def _table(self, i: int) -> np.ndarray:
        values = self.process.cell_values
        part = self.ctx.decomposed.parts[i - 1]
        table = np.empty((self.cell_count,) * i, dtype=float)
        for combo in np.ndindex(*table.shape):
            table[combo] = float(part.evaluate([values[c] for c in combo]))
        return table.reshape(-1)

    def cutoff(self, n: int, t: Fraction, i: int) -> int:
        return floor_times_root(Fraction(n) * t, self.to_cutoff[i - 1])

    def reconstruction_cutoff(self, n: int, t: Fraction, i: int) -> int:
        """floor(n * (c_{head,i} t) * c_{i,head}), the merged-sum cutoff."""
        root = self.from_head[i - 1].mul(self.to_cutoff[i - 1])
        return floor_times_root(Fraction(n) * t, root)

    def term_block(self, n_terms: int, seed: int,
                   replicate_ids: Sequence[int]) -> list[np.ndarray]:
        """Per-component term arrays [replicates, n_terms].

        All slots gather from one merged sample of the process, which both
        deduplicates overlapping times and keeps sequentially sampled models
        (Markov) consistent across slots.
        """
        family = self.ctx.family
        slot_times = [family.polys[u - 1].values_upto(n_terms)
                      for u in range(1, self.size + 1)]
        merged = np.unique(np.concatenate(slot_times))
        cells = self.process.cells_batch(merged, seed, list(replicate_ids))
        streams = [cells[:, np.searchsorted(merged, times)] for times in slot_times]
        terms = []
        for i in range(1, self.size + 1):
            flat = np.zeros_like(streams[0])
            for u in range(i):
                flat = flat * self.cell_count + streams[u]
            terms.append(self.tables[i - 1][flat])
        return terms


def simulate_paths(ctx: ScenarioContext, n: int, t_grid: Sequence[Fraction],
                   seed: int, replicate_id: int) -> ComponentPaths:
    """Component and merged paths of one replicate at the grid times."""
    sim = _Simulator(ctx)
    grid = tuple(Fraction(t) for t in t_grid)
    paths = _paths_for_block(sim, n, grid, seed, [replicate_id])
    return paths[0]


def _paths_for_block(sim: _Simulator, n: int, grid: tuple[Fraction, ...],
                     seed: int, replicate_ids: Sequence[int]) -> list[ComponentPaths]:
    t_max = max(grid, default=Fraction(1))
    n_terms = max(int(n * t_max), 1)
    terms = sim.term_block(n_terms, seed, replicate_ids)
    scale = 1.0 / np.sqrt(float(n))
    prefix = [np.cumsum(t, axis=1) for t in terms]

    out = []
    for row in range(len(list(replicate_ids))):
        comp = np.zeros((sim.size, len(grid)))
        total = np.zeros(len(grid))
        direct = np.zeros(len(grid))
        for g, t in enumerate(grid):
            for i in range(1, sim.size + 1):
                k = sim.cutoff(n, t, i)
                comp[i - 1, g] = prefix[i - 1][row, k - 1] * scale if k else 0.0
                k_total = sim.reconstruction_cutoff(n, t, i)
                if k_total != int(n * t):
                    raise EngineAssertion("merged-sum cutoff must equal floor(n t)")
                total[g] += prefix[i - 1][row, k_total - 1] * scale if k_total else 0.0
                direct[g] += float(np.sum(terms[i - 1][row, :k_total])) * scale
        out.append(ComponentPaths(
            n=n, t_grid=grid, component_values=comp,
            total_values=total, direct_total=direct))
    return out


# ---------------------------------------------------------------------------
# replicate statistics
# ---------------------------------------------------------------------------

def _jackknife_var_se(samples: np.ndarray) -> float:
    r = len(samples)
    if r < 3:
        return float("inf")
    total = samples.sum()
    square = (samples ** 2).sum()
    mean_loo = (total - samples) / (r - 1)
    var_loo = (square - samples ** 2 - (r - 1) * mean_loo ** 2) / (r - 2)
    return float(np.sqrt((r - 1) / r * ((var_loo - var_loo.mean()) ** 2).sum()))


def _jackknife_cov_se(xs: np.ndarray, ys: np.ndarray) -> float:
    r = len(xs)
    if r < 3:
        return float("inf")
    sx, sy, sxy = xs.sum(), ys.sum(), (xs * ys).sum()
    mx = (sx - xs) / (r - 1)
    my = (sy - ys) / (r - 1)
    cov_loo = (sxy - xs * ys - (r - 1) * mx * my) / (r - 2)
    return float(np.sqrt((r - 1) / r * ((cov_loo - cov_loo.mean()) ** 2).sum()))


def _mean_se(samples: np.ndarray) -> float:
    return float(np.std(samples, ddof=1) / np.sqrt(len(samples)))


def _z(estimate: float, predicted: float, se: float) -> float:
    if se == 0:
        return 0.0 if estimate == predicted else float("inf")
    return (estimate - predicted) / se


def replicate_stats(ctx: ScenarioContext, report: CovarianceReport,
                    plan: SimulationPlan, threads: int = 1) -> SimulationReport:
    """Simulate the plan and compare every estimate with its prediction.

    For each ladder size: the merged-sum variance at t = 1 against the total
    limit variance, the same-time component covariance matrix at every grid
    point against min-scaled entries, and (largest size only) increment
    products and normality of the standardized merged sum.
    """
    sim = _Simulator(ctx)
    size = sim.size
    triple_times = sorted({Fraction(t) for triple in plan.increment_triples
                           for t in triple})
    grid = tuple(sorted({Fraction(1), *plan.t_grid, *triple_times}))
    grid_pos = {t: g for g, t in enumerate(grid)}

    variance_rows: list[ComparisonRow] = []
    covariance_rows: list[ComparisonRow] = []
    increment_rows: list[ComparisonRow] = []
    normality = None

    for n in plan.n_ladder:
        comp = np.empty((plan.replicates, size, len(grid)))
        total = np.empty((plan.replicates, len(grid)))
        residual_max = 0.0

        def run_chunk(start: int) -> tuple[int, list[ComponentPaths]]:
            ids = range(start, min(start + _CHUNK, plan.replicates))
            return start, _paths_for_block(sim, n, grid, plan.seed, list(ids))

        starts = list(range(0, plan.replicates, _CHUNK))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(run_chunk, starts))
        else:
            results = [run_chunk(s) for s in starts]
        for start, paths in results:
            for offset, path in enumerate(paths):
                comp[start + offset] = path.component_values
                total[start + offset] = path.total_values
                residual_max = max(residual_max, path.identity_residual())
        if residual_max > 1e-9:
            raise EngineAssertion(
                f"merged-sum reconstruction residual {residual_max} exceeds 1e-9")

        t1 = grid_pos[Fraction(1)]
        samples = total[:, t1]
        est = float(np.var(samples, ddof=1))
        se = _jackknife_var_se(samples)
        variance_rows.append(ComparisonRow(
            name="var_total(1)", n=n, estimate=est, std_error=se,
            predicted=report.total_variance.value,
            z=_z(est, report.total_variance.value, se)))

        for t in plan.t_grid:
            g = grid_pos[Fraction(t)]
            for i in range(1, size + 1):
                for j in range(i, size + 1):
                    xs, ys = comp[:, i - 1, g], comp[:, j - 1, g]
                    est = float(np.cov(xs, ys, ddof=1)[0, 1]) if i != j \
                        else float(np.var(xs, ddof=1))
                    se = (_jackknife_cov_se(xs, ys) if i != j
                          else _jackknife_var_se(xs))
                    predicted = float(t) * report.entry(i, j).value
                    covariance_rows.append(ComparisonRow(
                        name=f"cov_{i}{j}({t})", n=n, estimate=est, std_error=se,
                        predicted=predicted, z=_z(est, predicted, se)))

        if n == max(plan.n_ladder):
            for triple in plan.increment_triples:
                f1, f2, f3 = (Fraction(t) for t in triple)
                products = ((total[:, grid_pos[f3]] - total[:, grid_pos[f2]])
                            * total[:, grid_pos[f1]])
                est = float(products.mean())
                se = _mean_se(products)
                predicted = increment_covariance(report, f1, f2, f3).value
                increment_rows.append(ComparisonRow(
                    name=f"increment({float(f1)},{float(f2)},{float(f3)})", n=n,
                    estimate=est, std_error=se, predicted=predicted,
                    z=_z(est, predicted, se)))
            if plan.normality:
                normality = normality_check(total[:, t1], report)

    return SimulationReport(
        plan=plan,
        variance_rows=tuple(variance_rows),
        covariance_rows=tuple(covariance_rows),
        increment_rows=tuple(increment_rows),
        normality=normality,
        samples_per_row=plan.replicates,
    )


def increment_check(ctx: ScenarioContext, report: CovarianceReport,
                    plan: SimulationPlan, threads: int = 1
                    ) -> tuple[ComparisonRow, ...]:
    """Increment products against predictions (runs the largest ladder size)."""
    if not plan.increment_triples:
        raise BadTimes("no increment triples supplied")
    return replicate_stats(ctx, report, plan, threads=threads).increment_rows


def normality_check(samples: np.ndarray, report: CovarianceReport,
                    ks_slack: float = 1.5, skew_limit: float = 0.15,
                    kurt_limit: float = 0.3) -> NormalityStats:
    """Normality of the standardized merged sum against the engine variance.

    The KS threshold 1.63/sqrt(R) (the asymptotic 1% point) is widened by
    ``ks_slack`` to absorb the finite-n bias of the simulated sums; skewness
    and excess kurtosis get fixed documented limits.  With a vanishing
    engine variance there is nothing to standardize, which is reported as
    DegenerateVariance (the caller should check the variance trend instead).
    """
    variance = report.total_variance
    positive = (variance.exact is not None and variance.exact > 0) or \
        (variance.exact is None and variance.value > variance.tail)
    if not positive:
        raise DegenerateVariance("limit variance is zero; check Var -> 0 instead")
    replicates = len(samples)
    if replicates < 500:
        raise ConfigError("normality check needs at least 500 replicates")
    standardized = np.asarray(samples) / np.sqrt(variance.value)
    ks = float(spstats.kstest(standardized, "norm").statistic)
    threshold = 1.63 / np.sqrt(replicates) * ks_slack
    skew = float(spstats.skew(standardized))
    kurt = float(spstats.kurtosis(standardized))
    return NormalityStats(
        ks_distance=ks, ks_threshold=float(threshold), skewness=skew,
        excess_kurtosis=kurt,
        passed=bool(ks < threshold and abs(skew) < skew_limit
                    and abs(kurt) < kurt_limit))
