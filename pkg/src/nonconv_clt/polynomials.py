"""Exact algebra of integer-valued polynomial families.

A time polynomial is held as an ascending tuple of Fractions.  Everything in
this module is exact: integer-valuedness is decided in the binomial basis
(finite differences at 0..m), ordering by leading-coefficient comparison, and
the asymptotic-density machinery by residue enumeration over an lcm modulus.

The structural notions computed here for a family q_1 < q_2 < ... < q_l:

* grouping of members whose pairwise differences are constant, together with
  the set of those constant offsets;
* degree blocks (maximal runs of equal degree) and the time-change ratio
  between two members of a block, which is an m-th root of the ratio of
  leading coefficients (an ``ExactRoot``: rational when the reduced numerator
  and denominator are perfect m-th powers, an irrational marker otherwise);
* affine equivalence q ~ p  iff  q(y) = p(a*y + b) + c with rational a, b, c,
  witnessed explicitly and verified as an exact polynomial identity;
* the asymptotic density, along one member, of hitting the value sets of the
  other members of its block, plus a brute-force empirical counterpart used
  as an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegreeMismatch,
    DegreeZero,
    DuplicatePolynomial,
    IrrationalPrefactor,
    NonPositiveLeading,
    NotEventuallyOrdered,
    NotIntegerValued,
    NotPositiveOnNaturals,
    TimeOverflow,
)
from .rationals import exact_kth_root, format_rational, parse_rational, root_approximation

_INT64_GUARD = 2 ** 62


# ---------------------------------------------------------------------------
# polynomials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntegerValuedPolynomial:
    """Polynomial with rational coefficients mapping {1,2,...} into itself.

    ``coeffs`` is ascending: coeffs[u] multiplies y**u.  Instances are only
    created through :func:`validate_polynomial`, which checks positivity of
    the leading coefficient, integrality in the binomial basis and q(n) >= 1
    on the naturals.
    """

    coeffs: tuple[Fraction, ...]

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def leading(self) -> Fraction:
        return self.coeffs[-1]

    def __call__(self, y: Fraction | int) -> Fraction:
        acc = Fraction(0)
        for c in reversed(self.coeffs):
            acc = acc * y + c
        return acc

    def derivative(self) -> tuple[Fraction, ...]:
        return tuple(u * c for u, c in enumerate(self.coeffs) if u >= 1)

    def compose_affine(self, a: Fraction, b: Fraction) -> tuple[Fraction, ...]:
        """Coefficients of y |-> self(a*y + b)."""
        acc: list[Fraction] = []
        for c in reversed(self.coeffs):
            acc = _poly_mul_affine(acc, a, b)
            acc = _poly_add_const(acc, c)
        return tuple(acc)

    def integer_form(self) -> tuple[int, tuple[int, ...]]:
        """Return (L, P) with q(n) = P(n) / L and P integer, L >= 1."""
        scale = math.lcm(*(c.denominator for c in self.coeffs))
        return scale, tuple(int(c * scale) for c in self.coeffs)

    def monotone_start(self) -> int:
        """Smallest bound past every real critical point, so q is strictly
        increasing on [n0, infinity)."""
        deriv = self.derivative()
        lead = deriv[-1]
        bound = Fraction(1) + max((abs(c) / lead for c in deriv[:-1]), default=Fraction(0))
        return max(1, math.ceil(bound))

    def values_upto(self, n_max: int) -> np.ndarray:
        """q(1..n_max) as an int64 array (exact; guards against overflow)."""
        scale, int_coeffs = self.integer_form()
        # Horner intermediates stay below |lead|*n^m * (m+1); guard on that.
        worst = (max(abs(c) for c in int_coeffs) + 1) * (n_max ** self.degree) * (self.degree + 1)
        if worst >= _INT64_GUARD * scale:
            raise TimeOverflow(
                f"values of degree-{self.degree} polynomial up to n={n_max} "
                "exceed the 64-bit range")
        n = np.arange(1, n_max + 1, dtype=np.int64)
        acc = np.zeros_like(n)
        for c in reversed(int_coeffs):
            acc = acc * n + c
        if scale != 1:
            quotient, remainder = np.divmod(acc, scale)
            if remainder.any():
                raise AssertionError("integer-valued polynomial produced a non-integer")
            acc = quotient
        return acc

    def inverse_floor(self, value: int) -> int:
        """Largest m >= 0 with q(m) <= value (0 when even q(1) > value)."""
        n0 = self.monotone_start()
        best = 0
        for m in range(1, n0 + 1):
            if self(m) <= value:
                best = m
        hi = n0
        while self(hi) <= value:
            hi *= 2
        lo = n0  # q is strictly increasing on [n0, inf)
        while lo + 1 < hi:
            mid = (lo + hi) // 2
            if self(mid) <= value:
                lo = mid
            else:
                hi = mid
        return max(best, lo if self(lo) <= value else best)

    def serialize(self) -> list[str]:
        return [format_rational(c) for c in self.coeffs]

    def __str__(self) -> str:
        parts = []
        for u in range(self.degree, -1, -1):
            c = self.coeffs[u]
            if c == 0:
                continue
            var = "" if u == 0 else ("n" if u == 1 else f"n^{u}")
            parts.append(f"{format_rational(c)}{('*' + var) if var else ''}")
        return " + ".join(parts) if parts else "0"


def _poly_mul_affine(coeffs: list[Fraction], a: Fraction, b: Fraction) -> list[Fraction]:
    if not coeffs:
        return []
    out = [Fraction(0)] * (len(coeffs) + 1)
    for u, c in enumerate(coeffs):
        out[u] += c * b
        out[u + 1] += c * a
    return out


def _poly_add_const(coeffs: list[Fraction], c: Fraction) -> list[Fraction]:
    if not coeffs:
        return [c]
    coeffs[0] += c
    return coeffs


def validate_polynomial(coeffs: Sequence[Fraction | int | str]) -> IntegerValuedPolynomial:
    """Build an IntegerValuedPolynomial, checking every invariant."""
    if not coeffs:
        raise DegreeZero("empty coefficient list")
    values = [parse_rational(c) if isinstance(c, str) else Fraction(c) for c in coeffs]
    while values and values[-1] == 0:
        values.pop()
    if len(values) < 2:
        raise DegreeZero("constant polynomials are not admitted")
    if values[-1] <= 0:
        raise NonPositiveLeading(f"leading coefficient {values[-1]} must be > 0")
    poly = IntegerValuedPolynomial(tuple(values))
    # Binomial-basis coordinates are the forward differences at 0..m.
    diffs = [poly(n) for n in range(poly.degree + 1)]
    for _ in range(poly.degree + 1):
        if diffs[0].denominator != 1:
            raise NotIntegerValued(f"{poly} is not integer valued on the naturals")
        diffs = [diffs[i + 1] - diffs[i] for i in range(len(diffs) - 1)]
    n0 = poly.monotone_start()
    for n in range(1, n0 + 2):
        if poly(n) < 1:
            raise NotPositiveOnNaturals(f"{poly} takes value {poly(n)} < 1 at n={n}")
    return poly


# ---------------------------------------------------------------------------
# exact roots (time-change ratios)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExactRoot:
    """base**(1/index) with exact rationality detection.

    ``value`` is the exact Fraction when base = (p/q)**index for integers p, q;
    otherwise None, and only the decimal approximation is available.  No
    arithmetic is ever performed on approximations inside this module.
    """

    base: Fraction
    index: int

    def __post_init__(self) -> None:
        if self.base <= 0 or self.index < 1:
            raise ValueError("ExactRoot needs positive base and index >= 1")

    @property
    def value(self) -> Fraction | None:
        if self.index == 1:
            return self.base
        return exact_kth_root(self.base, self.index)

    @property
    def is_rational(self) -> bool:
        return self.value is not None

    def approx(self, digits: int = 30) -> Fraction:
        exact = self.value
        if exact is not None:
            return exact
        return root_approximation(self.base, self.index, digits)

    def __float__(self) -> float:
        exact = self.value
        if exact is not None:
            return float(exact)
        return float(self.approx(25))

    def decimal_string(self, digits: int = 30) -> str:
        approx = self.approx(digits + 2)
        scaled = approx.numerator * 10 ** digits // approx.denominator
        text = str(scaled)
        int_digits = len(text) - digits
        if int_digits <= 0:
            text = "0" * (1 - int_digits) + text
            int_digits = 1
        return text[:int_digits] + "." + text[int_digits:]

    def mul(self, other: "ExactRoot") -> "ExactRoot":
        if self.index != other.index:
            raise ValueError("can only multiply roots with a common index")
        return ExactRoot(self.base * other.base, self.index)

    def reciprocal(self) -> "ExactRoot":
        return ExactRoot(1 / self.base, self.index)

    def compare_to_rational(self, t: Fraction) -> int:
        """Sign of (self - t), decided exactly."""
        if t < 0:
            return 1
        lhs, rhs = self.base, Fraction(t) ** self.index
        return (lhs > rhs) - (lhs < rhs)


def floor_times_root(amount: Fraction, root: ExactRoot) -> int:
    """floor(amount * root) for amount >= 0, decided exactly.

    Used for summation cutoffs floor(N * t * c) where c may be irrational.
    """
    if amount < 0:
        raise ValueError("amount must be >= 0")
    if amount == 0:
        return 0
    exact = root.value
    if exact is not None:
        return math.floor(amount * exact)
    k = int(float(amount) * float(root))
    k = max(k, 0)
    # k <= amount * root  <=>  k**index <= amount**index * base
    target = Fraction(amount) ** root.index * root.base
    while Fraction(k) ** root.index > target:
        k -= 1
    while Fraction(k + 1) ** root.index <= target:
        k += 1
    return k


# ---------------------------------------------------------------------------
# equivalence witnesses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EquivalenceWitness:
    """Verified identity  q_j(y) = q_i(c * (y - x)) + offset  for all y.

    ``c`` is the rational time-change ratio (leading_j / leading_i)**(1/m) in
    lowest terms.  ``strict`` witnesses additionally have offset == 0, i.e.
    the two polynomials take identical values along matched arguments.
    """

    c: Fraction
    x: Fraction
    offset: Fraction

    @property
    def is_strict(self) -> bool:
        return self.offset == 0


def equivalence_witness(
    q_i: IntegerValuedPolynomial, q_j: IntegerValuedPolynomial
) -> EquivalenceWitness | None:
    """Witness for q_j(y) = q_i(c(y - x)) + offset, or None.

    None when the degrees differ, the ratio of leading coefficients is not a
    perfect m-th power, or no rational x satisfies the remaining coefficient
    equations (for m >= 2 the y**(m-1) coefficient pins down a single
    candidate; the rest are verified exactly).
    """
    m = q_i.degree
    if m != q_j.degree:
        return None
    root = ExactRoot(q_j.leading / q_i.leading, m)
    c = root.value
    if c is None:
        return None
    if m == 1:
        x = (q_i.coeffs[0] - q_j.coeffs[0]) / q_j.leading
        return EquivalenceWitness(c=c, x=x, offset=Fraction(0))
    a_m1_i = q_i.coeffs[m - 1] if m - 1 < len(q_i.coeffs) else Fraction(0)
    a_m1_j = q_j.coeffs[m - 1]
    x = (a_m1_i * c ** (m - 1) - a_m1_j) / (m * q_j.leading)
    composed = q_i.compose_affine(c, -c * x)
    for u in range(1, m + 1):
        if composed[u] != q_j.coeffs[u]:
            return None
    offset = q_j.coeffs[0] - composed[0]
    return EquivalenceWitness(c=c, x=x, offset=offset)


def strict_witness(
    q_i: IntegerValuedPolynomial, q_j: IntegerValuedPolynomial
) -> EquivalenceWitness | None:
    """As equivalence_witness but requiring exact value equality (offset 0)."""
    witness = equivalence_witness(q_i, q_j)
    if witness is None or not witness.is_strict:
        return None
    return witness


# ---------------------------------------------------------------------------
# family structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FamilyStructure:
    """Derived algebra of an eventually ordered family q_1 < ... < q_l.

    Indices are 1-based throughout, matching the mathematical bookkeeping.

    * ``group_bounds``  0 = r_0 < ... < r_lhat = l: consecutive members inside
      a group differ by constants, across group boundaries the difference
      grows without bound.
    * ``constant_offsets``  the sorted set of those constant differences
      (always contains 0).
    * ``block_bounds`` / ``block_degrees``  0 = i_0 < ... < i_v = l with all
      degrees equal to block_degrees[k-1] on (i_{k-1}, i_k].
    * ``classes``  partition of {1..l} under affine equivalence; classes
      refine degree blocks.
    * ``reduced_polys``  group heads p_s = q_{r_{s-1}+1}, the family actually
      driving the analysis after stacking the constant offsets into the
      process state.
    """

    polys: tuple[IntegerValuedPolynomial, ...]
    group_bounds: tuple[int, ...]
    constant_offsets: tuple[int, ...]
    offsets_by_index: tuple[int, ...]
    block_bounds: tuple[int, ...]
    block_degrees: tuple[int, ...]
    classes: tuple[tuple[int, ...], ...]

    @property
    def size(self) -> int:
        return len(self.polys)

    @property
    def reduced_size(self) -> int:
        return len(self.group_bounds) - 1

    @property
    def reduced_polys(self) -> tuple[IntegerValuedPolynomial, ...]:
        return tuple(self.polys[self.group_bounds[s - 1]] for s in range(1, self.reduced_size + 1))

    def block_of(self, index: int) -> int:
        """1-based degree-block number containing 1-based ``index``."""
        for k in range(1, len(self.block_bounds)):
            if self.block_bounds[k - 1] < index <= self.block_bounds[k]:
                return k
        raise IndexError(f"index {index} outside family of size {self.size}")

    def block_head(self, block: int) -> int:
        return self.block_bounds[block - 1] + 1

    def block_members(self, block: int) -> range:
        return range(self.block_bounds[block - 1] + 1, self.block_bounds[block] + 1)

    def time_change(self, i: int, j: int) -> ExactRoot:
        """Ratio c_{i,j} = (leading_j / leading_i)**(1/m) inside one block."""
        if self.block_of(i) != self.block_of(j):
            raise DegreeMismatch(
                f"indices {i} and {j} lie in different degree blocks")
        m = self.polys[i - 1].degree
        return ExactRoot(self.polys[j - 1].leading / self.polys[i - 1].leading, m)

    def class_of(self, index: int) -> tuple[int, ...]:
        for cls in self.classes:
            if index in cls:
                return cls
        raise IndexError(f"index {index} outside family of size {self.size}")

    def ratio_table(self) -> dict[tuple[int, int], ExactRoot]:
        table: dict[tuple[int, int], ExactRoot] = {}
        for k in range(1, len(self.block_bounds)):
            for i in self.block_members(k):
                for j in self.block_members(k):
                    table[(i, j)] = self.time_change(i, j)
        return table


def analyze_family(polys: Sequence[IntegerValuedPolynomial]) -> FamilyStructure:
    """Compute the full structure of an eventually ordered family."""
    polys = tuple(polys)
    if not polys:
        raise NotEventuallyOrdered("empty family")
    for a in range(len(polys)):
        for b in range(a + 1, len(polys)):
            if polys[a].coeffs == polys[b].coeffs:
                raise DuplicatePolynomial(f"members {a + 1} and {b + 1} coincide")

    # Eventual strict ordering: each consecutive difference must be eventually
    # positive, i.e. have positive leading coefficient (a positive constant
    # counts).  Decided by comparing coefficients from the top down.
    nonconstant_diff: list[bool] = []
    for idx in range(len(polys) - 1):
        diff = _coeff_difference(polys[idx + 1], polys[idx])
        if not diff:
            raise DuplicatePolynomial(f"members {idx + 1} and {idx + 2} coincide")
        if diff[-1][1] <= 0:
            raise NotEventuallyOrdered(
                f"q_{idx + 2} - q_{idx + 1} is eventually negative")
        nonconstant_diff.append(diff[-1][0] >= 1)

    ell = len(polys)
    group_bounds = [0] + [i + 1 for i, nc in enumerate(nonconstant_diff) if nc] + [ell]

    offsets_by_index = []
    offsets: set[int] = set()
    for s in range(1, len(group_bounds)):
        head = polys[group_bounds[s - 1]]
        for i in range(group_bounds[s - 1] + 1, group_bounds[s] + 1):
            diff = polys[i - 1](0) - head(0)
            if polys[i - 1].coeffs[1:] != head.coeffs[1:] or diff.denominator != 1:
                raise AssertionError("constant-difference group is inconsistent")
            offsets_by_index.append(int(diff))
            offsets.add(int(diff))

    block_bounds = [0]
    block_degrees = []
    for i in range(1, ell + 1):
        deg = polys[i - 1].degree
        if not block_degrees or deg != block_degrees[-1]:
            if block_degrees and deg < block_degrees[-1]:
                raise NotEventuallyOrdered("degrees must be nondecreasing")
            block_degrees.append(deg)
            block_bounds.append(i)
        else:
            block_bounds[-1] = i
    if set(block_bounds) - set(group_bounds):
        raise AssertionError("degree-block boundaries must be group boundaries")

    # Affine-equivalence classes; equivalence is transitive so a linear sweep
    # against class representatives suffices.
    classes: list[list[int]] = []
    for i in range(1, ell + 1):
        for cls in classes:
            rep = cls[0]
            if polys[rep - 1].degree != polys[i - 1].degree:
                continue
            if equivalence_witness(polys[rep - 1], polys[i - 1]) is not None:
                cls.append(i)
                break
        else:
            classes.append([i])

    return FamilyStructure(
        polys=polys,
        group_bounds=tuple(group_bounds),
        constant_offsets=tuple(sorted(offsets)),
        offsets_by_index=tuple(offsets_by_index),
        block_bounds=tuple(block_bounds),
        block_degrees=tuple(block_degrees),
        classes=tuple(tuple(cls) for cls in classes),
    )


def _coeff_difference(
    a: IntegerValuedPolynomial, b: IntegerValuedPolynomial
) -> list[tuple[int, Fraction]]:
    """Sparse (power, coefficient) list of a - b, ascending, zeros dropped."""
    size = max(len(a.coeffs), len(b.coeffs))
    out = []
    for u in range(size):
        ca = a.coeffs[u] if u < len(a.coeffs) else Fraction(0)
        cb = b.coeffs[u] if u < len(b.coeffs) else Fraction(0)
        if ca != cb:
            out.append((u, ca - cb))
    return out


def leading_ratio(family: FamilyStructure, i: int, j: int) -> ExactRoot:
    """Time-change ratio c_{i,j} for two members of one degree block."""
    return family.time_change(i, j)


# ---------------------------------------------------------------------------
# asymptotic densities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityResult:
    """Density c_{t1,head} * count/modulus of hitting all listed value sets."""

    count: int
    modulus: int
    density: Fraction
    prefactor: Fraction


def residue_count(witnesses: Iterable[tuple[int, int, Fraction]]) -> tuple[int, int]:
    """Count compatible residues for strict-witness congruence conditions.

    Each witness is (alpha, beta, x) with alpha, beta coprime positive
    integers and x rational; the admitted residues mod alpha are
    W = {w in [0, alpha) : beta*w/alpha + x is an integer}.  Returns
    (count, modulus) where modulus = lcm of the alphas and count is the
    number of z in [0, modulus) with z mod alpha_i in W_i for every i.
    An empty witness list describes the one-member case: (1, 1).
    """
    witnesses = list(witnesses)
    if not witnesses:
        return 1, 1
    admitted: list[tuple[int, set[int]]] = []
    modulus = 1
    for alpha, beta, x in witnesses:
        if alpha < 1 or beta < 1 or math.gcd(alpha, beta) != 1:
            raise ValueError(f"witness ({alpha}, {beta}) must be coprime positive")
        x = Fraction(x)
        allowed = {w for w in range(alpha) if (Fraction(beta * w, alpha) + x).denominator == 1}
        admitted.append((alpha, allowed))
        modulus = math.lcm(modulus, alpha)
    if any(not allowed for _, allowed in admitted):
        return 0, modulus
    if modulus > 4096:
        z = np.arange(modulus, dtype=np.int64)
        mask = np.ones(modulus, dtype=bool)
        for alpha, allowed in admitted:
            mask &= np.isin(z % alpha, sorted(allowed))
        return int(mask.sum()), modulus
    count = 0
    for z in range(modulus):
        if all(z % alpha in allowed for alpha, allowed in admitted):
            count += 1
    return count, modulus


def subset_density(family: FamilyStructure, indices: Sequence[int]) -> DensityResult:
    """Density along q_{t1} of arguments whose value lies in every q_{ti}(N).

    Zero (with modulus 1) as soon as one strict witness is missing or one
    time-change ratio is irrational.  The prefactor is the ratio between
    q_{t1} and the head of its degree block; it must be rational whenever the
    residue count is positive, otherwise no exact rational density exists.
    """
    indices = sorted(indices)
    if not indices:
        raise ValueError("empty index subset")
    block = family.block_of(indices[0])
    for t in indices[1:]:
        if family.block_of(t) != block:
            raise DegreeMismatch("density subsets must stay inside one degree block")
    t1 = indices[0]
    head = family.block_head(block)
    witnesses: list[tuple[int, int, Fraction]] = []
    degenerate = False
    for t in indices[1:]:
        witness = strict_witness(family.polys[t1 - 1], family.polys[t - 1])
        if witness is None:
            degenerate = True
            break
        witnesses.append((witness.c.numerator, witness.c.denominator, witness.x))
    if degenerate:
        count, modulus = 0, 1
    else:
        count, modulus = residue_count(witnesses)
    prefactor_root = family.time_change(t1, head)
    prefactor = prefactor_root.value
    if prefactor is None:
        if count > 0:
            raise IrrationalPrefactor(
                f"density of subset {indices} is irrational "
                f"(prefactor {prefactor_root.base}**(1/{prefactor_root.index}))")
        prefactor = Fraction(0)
    return DensityResult(
        count=count,
        modulus=modulus,
        density=prefactor * Fraction(count, modulus),
        prefactor=prefactor,
    )


def family_density(family: FamilyStructure, block: int) -> Fraction:
    """Inclusion-exclusion density of the union of block value-set pullbacks.

    This is the constant >= 1 rescaling time when a whole degree block is
    merged onto the common clock of its first member.
    """
    members = list(family.block_members(block))
    if not members:
        raise DegreeMismatch(f"block {block} is empty")
    total = Fraction(0)
    for mask in range(1, 1 << len(members)):
        subset = [members[b] for b in range(len(members)) if mask >> b & 1]
        result = subset_density(family, subset)
        sign = -1 if len(subset) % 2 == 0 else 1
        total += sign * result.density
    if total < 1:
        raise AssertionError(f"union density {total} < 1; engine bug")
    return total


def empirical_subset_density(
    family: FamilyStructure, indices: Sequence[int], n_max: int
) -> Fraction:
    """Brute-force counterpart of :func:`subset_density`'s count/modulus part.

    Counts n <= n_max with q_{t1}(n) in the value set of every other listed
    member, via exact integer evaluation and sorted-set membership.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    indices = sorted(indices)
    t1 = indices[0]
    base = family.polys[t1 - 1]
    values = base.values_upto(n_max)
    keep = np.ones(n_max, dtype=bool)
    top = int(values[-1])
    for t in indices[1:]:
        other = family.polys[t - 1]
        m_max = other.inverse_floor(top)
        if m_max == 0:
            return Fraction(0)
        keep &= np.isin(values, other.values_upto(m_max))
    return Fraction(int(keep.sum()), n_max)
