"""Exact limiting covariances of the component processes, and their assembly.

Everything here works on a reduced setup (consecutive time polynomials drift
apart) whose observable has been split into slot-prefix parts G_1..G_l.  The
normalized partial-sum component built from G_i along p_i converges jointly
with the others to a centered Gaussian vector; this module computes the
limit covariance matrix exactly and assembles the scalar limit quantities:

* entry (i, j) for linear p_i, p_j: a lattice series over the integer value
  differences, each term an exact integral of G_i x G_j against a product
  measure with finitely many dependent pairs.  The series has finite support
  for window models; for Markov models it is truncated under a geometric
  tail bound (the one source of inexactness, recorded per entry);
* entry (i, j) for nonlinear members: zero unless the two polynomials are
  affine-equivalent with rational time change, in which case a single paired
  integral weighted by an exact residue density;
* the total limit variance of the merged sum and the increment-dependence
  coefficient, via the per-class quadratic form with time-change weights;
* increment covariances of the limit process at arbitrary times;
* positivity certificates, and a Monte-Carlo long-run variance estimator for
  the linear part (the coboundary-degeneracy test).

Irrational time-change ratios never touch floating point on the exact path:
entries carry an m-th-root factor and a rational scalar separately, and
every assembled quantity multiplies roots pairwise into rationals (asserted).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import (
    BadTimes,
    CauchySchwarzViolated,
    EngineAssertion,
    ModelError,
    NoLinearPart,
    NoSolutionInTemplate,
    NotLinear,
    NotNonlinear,
    TolNotMet,
)
from .observables import DecomposedObservable, MultiPolynomial, ReducedSetup, decompose, reduce_setup
from .polynomials import (
    ExactRoot,
    FamilyStructure,
    IntegerValuedPolynomial,
    analyze_family,
    equivalence_witness,
    residue_count,
    validate_polynomial,
)
from .processes import DependenceHorizon, JointLaw, MovingAverage
from .rationals import format_rational

PROV_LINEAR = "linear-series"
PROV_NONLINEAR = "nonlinear-pairing"
PROV_DIAGONAL = "diagonal"
PROV_ZERO_DEGREE = "zero-by-degree"
PROV_ZERO_CLASS = "zero-by-class"
PROV_ZERO_M = "zero-by-M"
PROV_ZERO_IRRATIONAL = "zero-by-irrational-c"


# ---------------------------------------------------------------------------
# scenario context
# ---------------------------------------------------------------------------

@dataclass
class ScenarioContext:
    """Reduced setup plus decomposition and cached laws for one scenario."""

    setup: ReducedSetup
    decomposed: DecomposedObservable
    horizon: DependenceHorizon
    tol: float = 1e-10

    def __post_init__(self) -> None:
        self._pair_laws: dict[int, JointLaw] = {}
        self._diag_law: JointLaw | None = None

    @property
    def family(self) -> FamilyStructure:
        return self.setup.reduced_family

    @property
    def stationary(self) -> JointLaw:
        return self.decomposed.laws[0]

    def pair_law(self, gap: int) -> JointLaw:
        """Joint law of (Z(0), Z(gap)) for gap >= 1, cached."""
        law = self._pair_laws.get(gap)
        if law is None:
            law = self.setup.process.joint_law([0, gap])
            self._pair_laws[gap] = law
        return law

    def diagonal_law(self) -> JointLaw:
        if self._diag_law is None:
            nu = self.stationary
            self._diag_law = JointLaw.build(
                2, nu.dimension, (((pt[0], pt[0]), p) for pt, p in nu.atoms))
        return self._diag_law


def build_context(polynomials: Sequence[IntegerValuedPolynomial | Sequence],
                  observable: MultiPolynomial, model, tol: float = 1e-10
                  ) -> ScenarioContext:
    """Analyze, reduce, decompose; the standard entry into the engine."""
    polys = [p if isinstance(p, IntegerValuedPolynomial) else validate_polynomial(p)
             for p in polynomials]
    family = analyze_family(polys)
    setup = reduce_setup(family, observable, model)
    nu = setup.stationary
    decomposed = decompose(setup.observable, [nu] * setup.reduced_family.size)
    decomposed.verify_exact()
    return ScenarioContext(
        setup=setup,
        decomposed=decomposed,
        horizon=setup.process.dependence_horizon(),
        tol=tol,
    )


# ---------------------------------------------------------------------------
# entry values
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovEntry:
    """One covariance entry: (m-th root factor) x (scalar part).

    ``scalar_exact`` is None only when a Markov series was truncated, in
    which case ``truncation`` bounds the discarded tail of the scalar part.
    """

    i: int
    j: int
    provenance: str
    root: ExactRoot
    scalar_exact: Fraction | None
    scalar_float: float
    truncation: float = 0.0

    @property
    def value(self) -> float:
        return float(self.root) * self.scalar_float

    @property
    def exact(self) -> Fraction | None:
        base = self.root.value
        if base is None or self.scalar_exact is None:
            return None
        return base * self.scalar_exact

    def serialize(self) -> dict:
        return {
            "value": repr(self.value),
            "exact": format_rational(self.exact) if self.exact is not None else None,
            "provenance": self.provenance,
            "truncation": self.truncation,
        }


def _zero_entry(ctx: ScenarioContext, i: int, j: int, provenance: str) -> CovEntry:
    m = ctx.family.polys[i - 1].degree
    return CovEntry(i=i, j=j, provenance=provenance, root=ExactRoot(Fraction(1), m),
                    scalar_exact=Fraction(0), scalar_float=0.0)


# ---------------------------------------------------------------------------
# paired integrals
# ---------------------------------------------------------------------------

def _paired_integral(ctx: ScenarioContext, i: int, j: int,
                     couplings: Sequence[tuple[int, int, int]]) -> Fraction:
    """Integral of G_i(x_1..x_i) G_j(y_1..y_j) with dependent pairs.

    Each coupling (s, t, lag) makes x_s and y_t jointly distributed as the
    process at two times with time(x_s) - time(y_t) = lag; all other slots
    are independent with the stationary law.  Exact.
    """
    size = ctx.family.size
    g_i = ctx.decomposed.parts[i - 1]
    g_j = ctx.decomposed.parts[j - 1]
    shift = {(t, c): (size + t, c)
             for t in range(1, size + 1)
             for c in range(1, ctx.stationary.dimension + 1)}
    product = g_i * g_j.remap(shift)
    seen_s: set[int] = set()
    seen_t: set[int] = set()
    for s, t, lag in couplings:
        if s in seen_s or t in seen_t:
            raise EngineAssertion("a slot appears in two couplings")
        seen_s.add(s)
        seen_t.add(t)
        y_slot = size + t
        if lag == 0:
            product = product.integrate_slots([s, y_slot], ctx.diagonal_law())
        elif lag > 0:
            product = product.integrate_slots([y_slot, s], ctx.pair_law(lag))
        else:
            product = product.integrate_slots([s, y_slot], ctx.pair_law(-lag))
    for slot in sorted(product.slots_used()):
        product = product.integrate_slot(slot, ctx.stationary)
    return product.constant_term


def _sup_bound(poly: MultiPolynomial, law: JointLaw) -> Fraction:
    """Cheap uniform bound: sum of |coef| * max|value|**exp over the support."""
    max_abs = [max((abs(pt[0][c]) for pt, _ in law.atoms), default=Fraction(0))
               for c in range(law.dimension)]
    total = Fraction(0)
    for monomial, coeff in poly.terms:
        term = abs(coeff)
        for (_, coord), exp in monomial:
            term *= max_abs[coord - 1] ** exp
        total += term
    return total


# ---------------------------------------------------------------------------
# linear entries
# ---------------------------------------------------------------------------

def _linear_data(ctx: ScenarioContext, index: int) -> tuple[int, int]:
    poly = ctx.family.polys[index - 1]
    if poly.degree != 1:
        raise NotLinear(f"member {index} has degree {poly.degree}")
    slope, intercept = poly.coeffs[1], poly.coeffs[0]
    if slope.denominator != 1 or intercept.denominator != 1:
        raise EngineAssertion("integer-valued linear polynomials have integer "
                              "slope and intercept")
    return int(slope), int(intercept)


def covariance_linear(ctx: ScenarioContext, i: int, j: int) -> CovEntry:
    """Entry for two linear members: the absolutely convergent lattice series.

    The summation index runs over the lattice gcd(slope_i, slope_j) * Z of
    realizable value differences; the coupled slot pairs are those whose
    slope ratio matches slope_j/slope_i, with integer lags linear in the
    index.  Exact cutoff for window models; geometric tail bound for Markov.
    """
    i, j = min(i, j), max(i, j)
    slope_i, _ = _linear_data(ctx, i)
    slope_j, _ = _linear_data(ctx, j)
    slope_1, _ = _linear_data(ctx, 1)
    lattice = math.gcd(slope_i, slope_j)
    prefactor = Fraction(slope_1 * lattice, slope_i * slope_j)

    couplings: list[tuple[int, int, Fraction, Fraction]] = []
    for s in range(1, i + 1):
        slope_s, icept_s = _linear_data(ctx, s)
        for t in range(1, j + 1):
            slope_t, icept_t = _linear_data(ctx, t)
            if slope_t * slope_i == slope_s * slope_j:
                couplings.append((s, t, Fraction(slope_s, slope_i),
                                  Fraction(icept_s - icept_t)))
    if not any(s == i and t == j for s, t, _, _ in couplings):
        raise EngineAssertion("defining pair missing from linear couplings")

    def lags_at(x: int) -> list[tuple[int, int, int]]:
        out = []
        for s, t, rate, delta in couplings:
            lag = rate * x + delta
            if lag.denominator != 1:
                raise EngineAssertion("linear pairing lag must be an integer")
            out.append((s, t, int(lag)))
        return out

    if ctx.horizon.kind == "window":
        window = ctx.horizon.window  # stacked horizon already covers offsets
        lo, hi = None, None
        for _, _, rate, delta in couplings:
            pair_lo = math.ceil((-window - delta) / rate)
            pair_hi = math.floor((window - delta) / rate)
            lo = pair_lo if lo is None else min(lo, pair_lo)
            hi = pair_hi if hi is None else max(hi, pair_hi)
        total = Fraction(0)
        for k in range(math.ceil(lo / lattice), math.floor(hi / lattice) + 1):
            total += _paired_integral(ctx, i, j, lags_at(lattice * k))
        scalar = prefactor * total
        return CovEntry(i=i, j=j, provenance=PROV_LINEAR, root=ExactRoot(Fraction(1), 1),
                        scalar_exact=scalar, scalar_float=float(scalar))

    # Markov: geometric truncation.  Terms are exact; the stopping rule uses
    # a calibrated total-variation decay bound (conservative by a factor 4).
    rho = ctx.horizon.rate
    bound_const = 4.0 * float(_sup_bound(ctx.decomposed.parts[i - 1], ctx.stationary)
                              * _sup_bound(ctx.decomposed.parts[j - 1], ctx.stationary))
    calib = _markov_tv_calibration(ctx, rho)
    min_rate = min(rate for _, _, rate, _ in couplings)

    total = Fraction(0)
    tail = 0.0
    max_terms = 200_000
    k = 0
    while True:
        candidates = [k] if k == 0 else [k, -k]
        for kk in candidates:
            total += _paired_integral(ctx, i, j, lags_at(lattice * kk))
        gap_next = float(min_rate * lattice * (k + 1)) - max(
            abs(float(d)) for _, _, _, d in couplings)
        term_bound = bound_const * calib(max(gap_next, 0.0))
        decay = rho ** max(float(min_rate * lattice), 1.0) if rho > 0 else 0.0
        tail = 2.0 * term_bound / max(1.0 - decay, 1e-12)
        if tail < ctx.tol / 2:
            break
        k += 1
        if k > max_terms:
            raise TolNotMet(
                f"linear series for ({i},{j}) did not reach tol {ctx.tol} "
                f"within {max_terms} lattice points (rate {rho})")
    scalar = prefactor * total
    return CovEntry(i=i, j=j, provenance=PROV_LINEAR, root=ExactRoot(Fraction(1), 1),
                    scalar_exact=None, scalar_float=float(scalar),
                    truncation=float(prefactor) * tail)


def _markov_tv_calibration(ctx: ScenarioContext, rho: float) -> Callable[[float], float]:
    """Return gap -> bound on the chain's total-variation distance at the gap."""
    chain = ctx.setup.process.base
    transition = np.array([[float(p) for p in row] for row in chain.transition])
    pi = np.array([float(p) for p in chain.stationary])
    constant = 1.0
    power = np.eye(len(pi))
    for m in range(1, 64):
        power = power @ transition
        tv = float(np.abs(power - pi[None, :]).sum(axis=1).max()) / 2.0
        if tv == 0.0:
            break
        if rho > 0:
            constant = max(constant, tv / rho ** m)

    def bound(gap: float) -> float:
        if gap <= 0:
            return 1.0
        if rho == 0.0:
            return 0.0
        return min(1.0, constant * rho ** gap)

    return bound


# ---------------------------------------------------------------------------
# nonlinear entries
# ---------------------------------------------------------------------------

def covariance_nonlinear(ctx: ScenarioContext, i: int, j: int) -> CovEntry:
    """Entry for i <= j with p_j nonlinear.

    Zero when degrees differ, when no affine equivalence exists, when the
    time-change ratio is irrational, or when the residue density vanishes;
    otherwise a single paired integral scaled by (count / modulus) and the
    time change back to the block head.
    """
    if i > j:
        i, j = j, i
    family = ctx.family
    p_i, p_j = family.polys[i - 1], family.polys[j - 1]
    if p_j.degree <= 1:
        raise NotNonlinear(f"member {j} is linear; use the linear-series entry")
    if i == j:
        return covariance_diagonal(ctx, i)
    if p_i.degree != p_j.degree:
        return _zero_entry(ctx, i, j, PROV_ZERO_DEGREE)
    ratio = family.time_change(i, j)
    if not ratio.is_rational:
        return _zero_entry(ctx, i, j, PROV_ZERO_IRRATIONAL)
    # Witness in the j -> i direction: p_i(y) = p_j(c_{j,i} (y - x)) + offset.
    witness = equivalence_witness(p_j, p_i)
    if witness is None:
        return _zero_entry(ctx, i, j, PROV_ZERO_CLASS)
    count, modulus = residue_count(
        [(witness.c.numerator, witness.c.denominator, witness.x)])
    if count == 0:
        return _zero_entry(ctx, i, j, PROV_ZERO_M)

    anchor = witness.x  # the argument of p_i matched against p_j at 0
    couplings: list[tuple[int, int, int]] = []
    for s in range(1, i + 1):
        p_s = family.polys[s - 1]
        for t in range(1, j + 1):
            p_t = family.polys[t - 1]
            if p_s.degree != p_t.degree:
                continue
            composed = p_t.compose_affine(witness.c, -witness.c * anchor)
            if any(p_s.coeffs[u] != composed[u] for u in range(1, p_s.degree + 1)):
                continue
            lag = p_s(anchor) - p_t(0)
            if lag.denominator != 1:
                raise EngineAssertion(
                    f"pairing lag {lag} for slots ({s},{t}) is not an integer")
            couplings.append((s, t, int(lag)))
    if not any(s == i and t == j for s, t, _ in couplings):
        raise EngineAssertion("defining pair missing from nonlinear couplings")

    integral = _paired_integral(ctx, i, j, couplings)
    head = family.block_head(family.block_of(j))
    scalar = Fraction(count, modulus) * integral
    root = family.time_change(j, head)
    return CovEntry(i=i, j=j, provenance=PROV_NONLINEAR, root=root,
                    scalar_exact=scalar, scalar_float=float(scalar))


def covariance_diagonal(ctx: ScenarioContext, i: int) -> CovEntry:
    """Variance rate of one component: series for linear, single integral
    (scaled by the time change to the block head) for nonlinear members."""
    family = ctx.family
    poly = family.polys[i - 1]
    if poly.degree == 1:
        return covariance_linear(ctx, i, i)
    part = ctx.decomposed.parts[i - 1]
    square = part * part
    for slot in sorted(square.slots_used()):
        square = square.integrate_slot(slot, ctx.stationary)
    scalar = square.constant_term
    head = family.block_head(family.block_of(i))
    root = family.time_change(i, head)
    entry = CovEntry(i=i, j=i, provenance=PROV_DIAGONAL, root=root,
                     scalar_exact=scalar, scalar_float=float(scalar))
    if entry.value < 0:
        raise EngineAssertion("negative diagonal")
    return entry


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExactishValue:
    """Exact rational when available, float with a tail bound otherwise."""

    exact: Fraction | None
    value: float
    tail: float = 0.0

    @staticmethod
    def of(exact: Fraction) -> "ExactishValue":
        return ExactishValue(exact=exact, value=float(exact), tail=0.0)

    def serialize(self) -> dict:
        return {"value": repr(self.value),
                "exact": format_rational(self.exact) if self.exact is not None else None,
                "tail": self.tail}


@dataclass(frozen=True)
class ClassContribution:
    members: tuple[int, ...]
    weights: tuple[float, ...]
    contribution: ExactishValue


@dataclass(frozen=True)
class CovarianceReport:
    """Covariance matrix of the limit components plus assembled quantities.

    ``total_variance`` is the limit of Var of the merged normalized sum at
    time 1; ``increment_coefficient`` measures how much of it exceeds the
    independent-increment part (zero iff the limit has independent
    increments inside the admissible time window, when one exists).
    ``window_constant`` is the time-stretch bound delimiting that window,
    None when some equivalence class mixes equal leading coefficients.
    """

    family: FamilyStructure
    entries: dict[tuple[int, int], CovEntry]
    total_variance: ExactishValue
    increment_coefficient: ExactishValue
    class_contributions: tuple[ClassContribution, ...]
    window_constant: ExactRoot | None
    equal_lead_classes: bool

    @property
    def size(self) -> int:
        return self.family.size

    def entry(self, i: int, j: int) -> CovEntry:
        return self.entries[(min(i, j), max(i, j))]

    def weight(self, s: int) -> ExactRoot:
        """Time-change weight from the block head to member s."""
        head = self.family.block_head(self.family.block_of(s))
        return self.family.time_change(head, s)

    def serialize(self) -> dict:
        size = self.size
        matrix = [[self.entry(i, j).serialize() for j in range(1, size + 1)]
                  for i in range(1, size + 1)]
        return {
            "dmatrix": matrix,
            "total_variance": self.total_variance.serialize(),
            "increment_coefficient": self.increment_coefficient.serialize(),
            "classes": [list(c.members) for c in self.class_contributions],
            "class_contributions": [c.contribution.serialize()
                                    for c in self.class_contributions],
            "window_constant": (float(self.window_constant)
                                if self.window_constant is not None else None),
        }


def _root_times_entry(weight: ExactRoot, entry: CovEntry) -> ExactishValue:
    """weight * entry with the root product collapsing to a rational."""
    product = weight.mul(entry.root)
    base = product.value
    if base is None:
        if entry.scalar_float == 0.0 and entry.truncation == 0.0:
            return ExactishValue.of(Fraction(0))
        raise EngineAssertion(
            f"irrational root product {product.base}^(1/{product.index}) on a "
            "nonzero covariance entry")
    if entry.scalar_exact is not None:
        return ExactishValue.of(base * entry.scalar_exact)
    return ExactishValue(exact=None, value=float(base) * entry.scalar_float,
                         tail=float(base) * entry.truncation)


def _add(a: ExactishValue, b: ExactishValue, scale: int = 1) -> ExactishValue:
    if a.exact is not None and b.exact is not None:
        return ExactishValue.of(a.exact + scale * b.exact)
    return ExactishValue(exact=None, value=a.value + scale * b.value,
                         tail=a.tail + abs(scale) * b.tail)


def compute_report(ctx: ScenarioContext) -> CovarianceReport:
    """Compute every entry and assemble the scalar limits."""
    family = ctx.family
    size = family.size
    entries: dict[tuple[int, int], CovEntry] = {}
    for i in range(1, size + 1):
        entries[(i, i)] = covariance_diagonal(ctx, i)
        for j in range(i + 1, size + 1):
            if family.block_of(i) != family.block_of(j):
                entries[(i, j)] = _zero_entry(ctx, i, j, PROV_ZERO_DEGREE)
            elif family.polys[j - 1].degree == 1:
                entries[(i, j)] = covariance_linear(ctx, i, j)
            else:
                entries[(i, j)] = covariance_nonlinear(ctx, i, j)
    return assemble(ctx, entries)


def assemble(ctx: ScenarioContext,
             entries: dict[tuple[int, int], CovEntry]) -> CovarianceReport:
    """Class-wise quadratic form for the total variance, plus checks."""
    family = ctx.family
    size = family.size
    _check_matrix(entries, size)

    def weight(s: int) -> ExactRoot:
        head = family.block_head(family.block_of(s))
        return family.time_change(head, s)

    contributions = []
    total = ExactishValue.of(Fraction(0))
    for members in family.classes:
        members = tuple(sorted(members))
        part = ExactishValue.of(Fraction(0))
        for a_pos, s in enumerate(members):
            part = _add(part, _root_times_entry(weight(s), entries[(s, s)]))
            for t in members[a_pos + 1:]:
                part = _add(part, _root_times_entry(weight(s), entries[(s, t)]),
                            scale=2)
        contributions.append(ClassContribution(
            members=members,
            weights=tuple(float(weight(s)) for s in members),
            contribution=part,
        ))
        total = _add(total, part)

    # Cross-checks: the blockwise quadratic form must agree (cross-class
    # entries are zero), and the total cannot be negative.
    blockwise = ExactishValue.of(Fraction(0))
    for block in range(1, len(family.block_bounds)):
        for i in family.block_members(block):
            blockwise = _add(blockwise, _root_times_entry(weight(i), entries[(i, i)]))
            for j in family.block_members(block):
                if j > i:
                    blockwise = _add(
                        blockwise, _root_times_entry(weight(i), entries[(i, j)]),
                        scale=2)
    if total.exact is not None and blockwise.exact is not None:
        if total.exact != blockwise.exact:
            raise EngineAssertion("classwise and blockwise assemblies disagree")
    elif abs(total.value - blockwise.value) > total.tail + blockwise.tail + 1e-12:
        raise EngineAssertion("classwise and blockwise assemblies disagree")
    if (total.exact is not None and total.exact < 0) or total.value < -total.tail - 1e-12:
        raise EngineAssertion(f"negative total variance {total.value}")

    diag_sum = ExactishValue.of(Fraction(0))
    for s in range(1, size + 1):
        diag_sum = _add(diag_sum, _root_times_entry(weight(s), entries[(s, s)]))
    delta = _add(total, diag_sum, scale=-1)

    window_constant, equal_leads = _window_constant(family)
    return CovarianceReport(
        family=family,
        entries=dict(entries),
        total_variance=total,
        increment_coefficient=delta,
        class_contributions=tuple(contributions),
        window_constant=window_constant,
        equal_lead_classes=equal_leads,
    )


def _check_matrix(entries: dict[tuple[int, int], CovEntry], size: int) -> None:
    for i in range(1, size + 1):
        diag = entries[(i, i)]
        if diag.value < -1e-15:
            raise CauchySchwarzViolated(f"negative diagonal at {i}")
        for j in range(i + 1, size + 1):
            entry = entries[(i, j)]
            d_i, d_j = entries[(i, i)], entries[(j, j)]
            if (entry.exact is not None and d_i.exact is not None
                    and d_j.exact is not None):
                left = entry.exact * entry.exact
                right = d_i.exact * d_j.exact
                if left > right:
                    raise CauchySchwarzViolated(
                        f"entry ({i},{j})^2 = {left} exceeds {right}")
            else:
                slack = (entry.truncation + d_i.truncation + d_j.truncation + 1e-12)
                if entry.value ** 2 > d_i.value * d_j.value + slack:
                    raise CauchySchwarzViolated(f"entry ({i},{j}) fails Cauchy-Schwarz")


def _window_constant(family: FamilyStructure) -> tuple[ExactRoot | None, bool]:
    """Smallest within-class leading-coefficient stretch (> 1), when defined.

    Returns (constant, every_class_has_equal_leads).  The constant is None
    when no class has two members or when some class mixes equal and unequal
    leading coefficients improperly for the windowed increment formula.
    """
    best: ExactRoot | None = None
    any_pair = False
    equal_leads_everywhere = True
    mixed = False
    for members in family.classes:
        members = sorted(members)
        for a_pos, s in enumerate(members):
            for t in members[a_pos + 1:]:
                any_pair = True
                lead_s = family.polys[s - 1].leading
                lead_t = family.polys[t - 1].leading
                if lead_s == lead_t:
                    mixed = True
                    continue
                equal_leads_everywhere = False
                candidate = ExactRoot(lead_t / lead_s, family.polys[s - 1].degree)
                if candidate.compare_to_rational(Fraction(1)) <= 0:
                    raise EngineAssertion("within-class leads must increase")
                if best is None or _root_less(candidate, best):
                    best = candidate
    if not any_pair:
        return None, True
    if mixed and not equal_leads_everywhere:
        return None, False
    if equal_leads_everywhere:
        return None, True
    return best, False


def _root_less(a: ExactRoot, b: ExactRoot) -> bool:
    power = math.lcm(a.index, b.index)
    return a.base ** (power // a.index) < b.base ** (power // b.index)


# ---------------------------------------------------------------------------
# increments of the limit process
# ---------------------------------------------------------------------------

def increment_covariance(report: CovarianceReport,
                         t1: Fraction | float, t2: Fraction | float,
                         t3: Fraction | float) -> ExactishValue:
    """E[(limit(t3) - limit(t2)) * limit(t1)] for 0 <= t1 <= t2 <= t3.

    Evaluated from the general bilinear expansion over classes; inside the
    admissible window [t1, C*t1] this collapses to (t3 - t2)/2 times the
    increment coefficient, which is asserted when applicable.
    """
    times = [Fraction(t) for t in (t1, t2, t3)]
    if not (0 <= times[0] <= times[1] <= times[2]):
        raise BadTimes(f"need 0 <= t1 <= t2 <= t3, got {times}")
    t1f, t2f, t3f = times
    family = report.family
    total = ExactishValue.of(Fraction(0))
    for members in family.classes:
        members = sorted(members)
        for s1 in members:
            w1 = report.weight(s1)
            for s2 in members:
                w2 = report.weight(s2)
                # ratio = w2 / w1 = time change between s1 and s2; rational
                # inside a class, enabling exact comparisons of c*t products.
                ratio_root = w1.reciprocal().mul(w2)
                ratio = ratio_root.value
                if ratio is None:
                    raise EngineAssertion("irrational time-change inside a class")
                entry = report.entry(min(s1, s2), max(s1, s2))
                # T = min(c2 t3, c1 t1) - min(c2 t2, c1 t1) with c2 = ratio*c1:
                #   0 when c1 t1 <= c2 t2, i.e. t1 <= ratio*t2;
                #   c2 (t3 - t2) when c2 t3 <= c1 t1, i.e. ratio*t3 <= t1;
                #   c1 t1 - c2 t2 in between.
                if t1f <= ratio * t2f:
                    continue
                if ratio * t3f <= t1f:
                    term = _root_times_entry(w2, entry)
                    term = ExactishValue(
                        exact=None if term.exact is None else term.exact * (t3f - t2f),
                        value=term.value * float(t3f - t2f),
                        tail=term.tail * float(t3f - t2f))
                else:
                    part1 = _root_times_entry(w1, entry)
                    part2 = _root_times_entry(w2, entry)
                    if part1.exact is not None and part2.exact is not None:
                        term = ExactishValue.of(part1.exact * t1f - part2.exact * t2f)
                    else:
                        term = ExactishValue(
                            exact=None,
                            value=part1.value * float(t1f) - part2.value * float(t2f),
                            tail=part1.tail * float(t1f) + part2.tail * float(t2f))
                total = _add(total, term)
    constant = report.window_constant
    if (constant is not None and times[0] > 0
            and constant.compare_to_rational(times[2] / times[0]) >= 0):
        shortcut = report.increment_coefficient
        expect = (times[2] - times[1]) / 2
        if total.exact is not None and shortcut.exact is not None:
            if total.exact != expect * shortcut.exact:
                raise EngineAssertion("windowed increment formula mismatch")
    return total


# ---------------------------------------------------------------------------
# positivity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PositivityVerdict:
    """Whether the total limit variance is positive, and what certifies it.

    ``bound`` is the strongest class-gap lower bound when one applies
    (nonlinear class whose last member strictly dominates the previous one,
    or an isolated nonlinear member); ``method`` records the certificate:
    "class-gap", "linear-criterion", "numerical-sigma", or None when the
    verdict rests on the exact computed value alone.
    """

    verdict: str                 # "positive" | "zero" | "bounded-below"
    bound: Fraction | None
    method: str | None
    certificate_class: tuple[int, ...] | None = None

    def serialize(self) -> dict:
        return {"verdict": self.verdict,
                "bound": format_rational(self.bound) if self.bound is not None else None,
                "method": self.method,
                "certificate_class": (list(self.certificate_class)
                                      if self.certificate_class else None)}


def positivity_verdict(ctx: ScenarioContext,
                       report: CovarianceReport) -> PositivityVerdict:
    """Positivity of the total limit variance with the strongest certificate.

    The class-gap bound applies to nonlinear classes only: for linear
    members the diagonal is a full series that can degenerate (coboundary),
    so linear families fall back to the matrix criterion.
    """
    family = ctx.family
    best_bound: Fraction | None = None
    best_class: tuple[int, ...] | None = None
    for members in family.classes:
        members = tuple(sorted(members))
        last = members[-1]
        if family.polys[last - 1].degree == 1:
            continue
        if len(members) == 1:
            gap = Fraction(1)
        else:
            prev = members[-2]
            ratio = family.time_change(last, prev)  # (lead_prev / lead_last)^(1/m)
            value = ratio.value
            if value is None or value >= 1:
                continue
            gap = 1 - value
        part = ctx.decomposed.parts[last - 1]
        square = part * part
        for slot in sorted(square.slots_used()):
            square = square.integrate_slot(slot, ctx.stationary)
        bound = gap * square.constant_term
        if bound > 0 and (best_bound is None or bound > best_bound):
            best_bound = bound
            best_class = members
    all_linear = all(p.degree == 1 for p in family.polys)
    total = report.total_variance
    if total.exact is not None:
        positive = total.exact > 0
        zero = total.exact == 0
    else:
        positive = total.value > total.tail
        zero = not positive
    if best_bound is not None:
        verdict = "positive" if positive else "bounded-below"
        return PositivityVerdict(verdict=verdict, bound=best_bound,
                                 method="class-gap", certificate_class=best_class)
    if zero:
        return PositivityVerdict(
            verdict="zero", bound=None,
            method="linear-criterion" if all_linear else None)
    return PositivityVerdict(
        verdict="positive", bound=None,
        method="linear-criterion" if all_linear else None)


# ---------------------------------------------------------------------------
# vanishing-variance construction (two equivalent nonlinear members)
# ---------------------------------------------------------------------------

def solve_vanishing_variance(lag: int, r2: Fraction, r4: Fraction,
                             template: Sequence[Fraction],
                             initial_head: Fraction = Fraction(1),
                             max_doublings: int = 30) -> list[Fraction]:
    """Search the alternating-sign window family a_n = a*(-1)^n*d_n for
    coefficients making the paired limit variance of x^2*y + x vanish.

    The head weight d_0 is doubled up to ``max_doublings`` times; for each
    head the exact fourth moment of the window sum turns the vanishing
    condition into P*t^2 - 2*Q*t + 1 = 0 in t = a^2, solvable iff Q^2 >= P.
    With the fourth moment computed exactly the discriminant satisfies
    Q^2 - P <= -(r4 - r2^2) * sum(d^4) for every head scaling, so for any
    nondegenerate innovation law the search is provably exhausted and
    NoSolutionInTemplate is raised; the diagnostics carry the best quadratic.
    See also :func:`paper_series_proxy` and
    :func:`construct_vanishing_variance_scenario` for the attainable
    degeneracy with exactly matched (lag-zero) members.
    """
    lag = int(lag)
    r2, r4 = Fraction(r2), Fraction(r4)
    if lag == 0:
        raise ModelError("lag 0 pairs values at equal times; use the exact "
                         "telescoping construction instead")
    if r2 <= 0 or r4 < r2 ** 2:
        raise ModelError("innovation moments need r2 > 0 and r4 >= r2^2")
    template = [Fraction(d) for d in template]
    if any(d < 0 for d in template):
        raise ModelError("template weights must be nonnegative")
    head = Fraction(initial_head)
    best: tuple[Fraction, Fraction, Fraction] | None = None
    for _ in range(max_doublings + 1):
        d = [head] + template
        sum_d2 = sum(x ** 2 for x in d)
        sum_d4 = sum(x ** 4 for x in d)
        p_coef = (r4 - 3 * r2 ** 2) * sum_d4 + 3 * r2 ** 2 * sum_d2 ** 2
        cross = sum(d[u] * d[u + abs(lag)] for u in range(len(d) - abs(lag)))
        q_coef = (-1) ** (abs(lag) + 1) * r2 * cross
        disc = q_coef ** 2 - p_coef
        if best is None or disc > best[2]:
            best = (p_coef, q_coef, disc)
        if q_coef > 0 and disc >= 0:
            # Smaller root of P t^2 - 2 Q t + 1; t = a^2 may be irrational,
            # so return coefficients through a high-precision square root.
            root = ExactRoot(disc, 2).approx(40) if disc > 0 else Fraction(0)
            t = (q_coef - root) / p_coef
            a = ExactRoot(t, 2).approx(40)
            return [a * (-1) ** n * d[n] for n in range(len(d))]
        head *= 2
    p_coef, q_coef, disc = best
    raise NoSolutionInTemplate(
        f"discriminant stayed negative after {max_doublings} head doublings "
        f"(best Q^2 - P = {float(disc):.6g} with P = {float(p_coef):.6g}, "
        f"Q = {float(q_coef):.6g}); with the exact fourth moment "
        "Q^2 - P <= -(r4 - r2^2) * sum(d^4) < 0 for every head scaling")


def paper_series_proxy(head: Fraction, template: Sequence[Fraction],
                       r2: Fraction, r4: Fraction) -> Fraction:
    """The solvability proxy A + B with the head weight entering only the
    cross sum; strictly decreasing in the head, and < 1 would mean the
    shorthand quadratic admits a root.  Kept as a diagnostic alongside the
    exact solver, whose fourth moment also charges the head quartically."""
    d = [Fraction(head)] + [Fraction(x) for x in template]
    if len(d) < 2 or all(x == 0 for x in d[1:]):
        raise ModelError("proxy needs a nonempty template")
    cross = sum(d[u - 1] * d[u] for u in range(1, len(d)))
    if cross == 0:
        raise ModelError("proxy undefined for zero cross sum")
    tail2 = sum(x ** 2 for x in d[1:])
    tail4 = sum(x ** 4 for x in d[1:])
    a_term = Fraction(tail4, cross ** 2) * (r4 / r2 ** 2)
    b_term = 3 * Fraction(tail2 ** 2, cross ** 2)
    return a_term + b_term


def construct_vanishing_variance_scenario() -> ScenarioContext:
    """Moving-average scenario with nonvanishing parts but zero limit variance.

    Two equivalent quadratics taking identical values along matched
    arguments (n^2 and (n+1)^2) with the difference observable x - y: the
    merged sum telescopes, both decomposition parts are nonzero, and the
    engine certifies total variance exactly zero.
    """
    model = MovingAverage(
        [((Fraction(-1),), Fraction(1, 2)), ((Fraction(1),), Fraction(1, 2))],
        [Fraction(1, 2), Fraction(1, 2)])
    observable = MultiPolynomial.variable(1) - MultiPolynomial.variable(2)
    ctx = build_context([[0, 0, 1], [1, 2, 1]], observable, model)
    report = compute_report(ctx)
    if report.total_variance.exact != 0:
        raise EngineAssertion("telescoping scenario must have zero variance")
    if any(part.is_zero for part in ctx.decomposed.parts):
        raise EngineAssertion("telescoping scenario must keep nonzero parts")
    return ctx


# ---------------------------------------------------------------------------
# long-run variance of the linear part (coboundary test)
# ---------------------------------------------------------------------------

_COPY_STRIDE = 64  # replicate ids are spread out to key independent copies


@dataclass(frozen=True)
class LongRunPoint:
    n: int
    estimate: float
    std_error: float


@dataclass(frozen=True)
class LongRunVarianceReport:
    """Var(sum of the decoupled linear-part terms)/N along an N ladder.

    The sampled process replaces each slot's input with an independent copy
    of the stacked process, which preserves positivity/degeneracy of the
    limit; a vanishing trend indicates a coboundary representation.
    """

    which: str
    points: tuple[LongRunPoint, ...]
    extrapolated: float

    def serialize(self) -> dict:
        return {"which": self.which,
                "points": [{"n": p.n, "estimate": p.estimate,
                            "std_error": p.std_error} for p in self.points],
                "extrapolated": self.extrapolated}


def long_run_variance(ctx: ScenarioContext, which: str | tuple[str, int],
                      n_ladder: Sequence[int], replicates: int, seed: int,
                      ) -> LongRunVarianceReport:
    """Estimate the long-run variance of the linear part with independent
    copies per slot; ``which`` is "full" or ("part", s) for one component."""
    family = ctx.family
    linear = [s for s in range(1, family.size + 1)
              if family.polys[s - 1].degree == 1]
    if not linear:
        raise NoLinearPart("the reduced family has no linear members")
    if which == "full":
        part_indices = linear
        label = "full"
    else:
        kind, s = which
        if kind != "part" or s not in linear:
            raise ModelError(f"unknown long-run variance target {which!r}")
        part_indices = [s]
        label = f"part:{s}"
    max_slot = max(part_indices)
    process = ctx.setup.process
    tables = [_part_table(ctx, s) for s in part_indices]

    points = []
    for n in n_ladder:
        times = [family.polys[u - 1].values_upto(n) for u in range(1, max_slot + 1)]
        unique = [np.unique(t) for t in times]
        positions = [np.searchsorted(u, t) for u, t in zip(unique, times)]
        totals = np.empty(replicates, dtype=float)
        chunk = max(1, min(replicates, 4_000_000 // max(1, n)))
        cell_count = len(process.cell_values)
        for start in range(0, replicates, chunk):
            reps = range(start, min(start + chunk, replicates))
            streams = []
            for u in range(max_slot):
                ids = [r * _COPY_STRIDE + u for r in reps]
                cells = process.cells_batch(unique[u], seed, ids)
                streams.append(cells[:, positions[u]])
            block = np.zeros((len(list(reps)), n), dtype=float)
            for s, table in zip(part_indices, tables):
                flat = np.zeros_like(streams[0])
                for u in range(s):
                    flat = flat * cell_count + streams[u]
                block += table.reshape(-1)[flat]
            totals[start:start + len(block)] = block.sum(axis=1)
        variance = float(np.var(totals, ddof=1)) / n
        points.append(LongRunPoint(
            n=int(n), estimate=variance,
            std_error=_jackknife_variance_se(totals) / n))
    return LongRunVarianceReport(which=label, points=tuple(points),
                                 extrapolated=points[-1].estimate)


def _part_table(ctx: ScenarioContext, s: int) -> np.ndarray:
    """float64 table of part s over all cell-value combinations of slots 1..s."""
    values = ctx.setup.process.cell_values
    count = len(values)
    part = ctx.decomposed.parts[s - 1]
    table = np.empty((count,) * s, dtype=float)
    for combo in np.ndindex(*table.shape):
        point = [values[c] for c in combo]
        table[combo] = float(part.evaluate(point))
    return table


def _jackknife_variance_se(samples: np.ndarray) -> float:
    """Jackknife standard error of the unbiased sample variance."""
    r = len(samples)
    if r < 3:
        return float("inf")
    total = samples.sum()
    square = (samples ** 2).sum()
    mean_loo = (total - samples) / (r - 1)
    var_loo = (square - samples ** 2 - (r - 1) * mean_loo ** 2) / (r - 2)
    return float(np.sqrt((r - 1) / r * ((var_loo - var_loo.mean()) ** 2).sum()))
