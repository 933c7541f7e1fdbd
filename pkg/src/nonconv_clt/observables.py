"""Polynomial observables, their centering split, and the stacking reduction.

An observable is a polynomial in several "slots", one slot per time argument,
each slot holding a vector of coordinates.  It is stored sparsely as

    monomial -> coefficient,   monomial = tuple of ((slot, coord), exponent)

with slots and coordinates 1-based and coefficients exact rationals.  Because
the process laws are finite and rational, integrating any subset of slots
against them is again an exact polynomial operation, which is what makes the
whole analytic layer exact.

Two structural operations live here:

* ``decompose`` splits a centered observable F into parts F_1 + ... + F_l
  where F_i depends on slots 1..i only and integrates to zero in its last
  slot -- the split driving both the limit covariances and the martingale
  structure behind them.
* ``reduce_setup`` rewrites an observable over a family whose members may
  differ by constants into an observable over the stacked process carrying
  those constant offsets, after which consecutive time polynomials always
  drift apart.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .errors import ConfigError, EngineAssertion
from .polynomials import FamilyStructure, analyze_family
from .processes import JointLaw, StackedProcess
from .rationals import format_rational, parse_rational

Monomial = tuple[tuple[tuple[int, int], int], ...]


@dataclass(frozen=True)
class MultiPolynomial:
    """Sparse polynomial in (slot, coordinate) variables over the rationals."""

    terms: tuple[tuple[Monomial, Fraction], ...]

    # -- construction -------------------------------------------------------

    @staticmethod
    def build(data: Mapping[Monomial, Fraction] | Sequence[tuple[Monomial, Fraction]]
              ) -> "MultiPolynomial":
        items = data.items() if isinstance(data, Mapping) else data
        merged: dict[Monomial, Fraction] = {}
        for monomial, coeff in items:
            canon = tuple(sorted((var, exp) for var, exp in monomial if exp))
            if any(exp < 1 for _, exp in canon):
                raise ConfigError("exponents must be >= 1")
            if len({var for var, _ in canon}) != len(canon):
                raise ConfigError(f"duplicate variable in monomial {canon}")
            value = merged.get(canon, Fraction(0)) + Fraction(coeff)
            if value == 0:
                merged.pop(canon, None)
            else:
                merged[canon] = value
        return MultiPolynomial(tuple(sorted(merged.items())))

    @staticmethod
    def zero() -> "MultiPolynomial":
        return MultiPolynomial(())

    @staticmethod
    def constant(value: Fraction) -> "MultiPolynomial":
        return MultiPolynomial.build({(): Fraction(value)})

    @staticmethod
    def variable(slot: int, coord: int = 1) -> "MultiPolynomial":
        return MultiPolynomial.build({(((slot, coord), 1),): Fraction(1)})

    # -- algebra ------------------------------------------------------------

    def __add__(self, other: "MultiPolynomial") -> "MultiPolynomial":
        return MultiPolynomial.build(list(self.terms) + list(other.terms))

    def __sub__(self, other: "MultiPolynomial") -> "MultiPolynomial":
        return self + (-other)

    def __neg__(self) -> "MultiPolynomial":
        return MultiPolynomial(tuple((m, -c) for m, c in self.terms))

    def __mul__(self, other: "MultiPolynomial") -> "MultiPolynomial":
        out: dict[Monomial, Fraction] = {}
        for m1, c1 in self.terms:
            for m2, c2 in other.terms:
                powers: dict[tuple[int, int], int] = dict(m1)
                for var, exp in m2:
                    powers[var] = powers.get(var, 0) + exp
                key = tuple(sorted(powers.items()))
                out[key] = out.get(key, Fraction(0)) + c1 * c2
        return MultiPolynomial.build(out)

    def scale(self, factor: Fraction) -> "MultiPolynomial":
        if factor == 0:
            return MultiPolynomial.zero()
        return MultiPolynomial(tuple((m, c * factor) for m, c in self.terms))

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def constant_term(self) -> Fraction:
        for monomial, coeff in self.terms:
            if monomial == ():
                return coeff
        return Fraction(0)

    def max_slot(self) -> int:
        return max((var[0] for m, _ in self.terms for var, _ in m), default=0)

    def slots_used(self) -> set[int]:
        return {var[0] for m, _ in self.terms for var, _ in m}

    # -- evaluation and integration -----------------------------------------

    def evaluate(self, point: Sequence[Sequence[Fraction]]) -> Fraction:
        """Evaluate at one value vector per slot (1-based slots)."""
        total = Fraction(0)
        for monomial, coeff in self.terms:
            term = coeff
            for (slot, coord), exp in monomial:
                term *= Fraction(point[slot - 1][coord - 1]) ** exp
            total += term
        return total

    def integrate_slot(self, slot: int, law: JointLaw) -> "MultiPolynomial":
        """Exact expectation over the given slot's value vector.

        Variables of other slots are untouched, so the result is the
        conditional-expectation polynomial in the remaining slots.
        """
        out: dict[Monomial, Fraction] = {}
        moment_cache: dict[tuple[int, ...], Fraction] = {}
        for monomial, coeff in self.terms:
            own = [(var, exp) for var, exp in monomial if var[0] == slot]
            rest = tuple((var, exp) for var, exp in monomial if var[0] != slot)
            if own:
                exponents = [0] * law.dimension
                for (_, coord), exp in own:
                    if coord > law.dimension:
                        raise ConfigError(
                            f"slot {slot} has no coordinate {coord} under its law")
                    exponents[coord - 1] = exp
                key = tuple(exponents)
                if key not in moment_cache:
                    moment_cache[key] = law.moment([key])
                coeff = coeff * moment_cache[key]
            if coeff != 0:
                out[rest] = out.get(rest, Fraction(0)) + coeff
        return MultiPolynomial.build(out)

    def integrate_slots(self, slots: Sequence[int], law: JointLaw) -> "MultiPolynomial":
        """Joint expectation over several slots against one law.

        ``law`` has arity len(slots); position p of the law carries the value
        vector of slots[p].  Needed for paired slots that stay dependent in a
        limit, where slotwise integration would be wrong.
        """
        if law.arity != len(slots):
            raise ConfigError("law arity must match the number of slots")
        targets = set(slots)
        out: dict[Monomial, Fraction] = {}
        moment_cache: dict[tuple[tuple[int, ...], ...], Fraction] = {}
        for monomial, coeff in self.terms:
            own = [(var, exp) for var, exp in monomial if var[0] in targets]
            rest = tuple((var, exp) for var, exp in monomial if var[0] not in targets)
            if own:
                exponents = [[0] * law.dimension for _ in slots]
                for (slot, coord), exp in own:
                    exponents[slots.index(slot)][coord - 1] = exp
                key = tuple(tuple(e) for e in exponents)
                if key not in moment_cache:
                    moment_cache[key] = law.moment(key)
                coeff = coeff * moment_cache[key]
            if coeff != 0:
                out[rest] = out.get(rest, Fraction(0)) + coeff
        return MultiPolynomial.build(out)

    def remap(self, mapping: Mapping[tuple[int, int], tuple[int, int]]
              ) -> "MultiPolynomial":
        """Rename variables; used to push slots into stacked coordinates."""
        out: dict[Monomial, Fraction] = {}
        for monomial, coeff in self.terms:
            renamed: dict[tuple[int, int], int] = {}
            for var, exp in monomial:
                new = mapping.get(var, var)
                renamed[new] = renamed.get(new, 0) + exp
            key = tuple(sorted(renamed.items()))
            out[key] = out.get(key, Fraction(0)) + coeff
        return MultiPolynomial.build(out)

    # -- serialization ------------------------------------------------------

    def serialize(self) -> dict:
        return {
            "monomials": [
                {"coef": format_rational(c),
                 "powers": [[slot, coord, exp] for (slot, coord), exp in m]}
                for m, c in self.terms]}

    @staticmethod
    def deserialize(data: dict) -> "MultiPolynomial":
        if set(data) != {"monomials"}:
            raise ConfigError("observable must have exactly the 'monomials' field")
        terms = []
        for entry in data["monomials"]:
            if set(entry) != {"coef", "powers"}:
                raise ConfigError("monomial entries need exactly coef and powers")
            monomial = []
            for triple in entry["powers"]:
                if (not isinstance(triple, list) or len(triple) != 3
                        or not all(isinstance(v, int) for v in triple)):
                    raise ConfigError(f"bad power triple {triple!r}")
                slot, coord, exp = triple
                if slot < 1 or coord < 1 or exp < 1:
                    raise ConfigError(f"power triple {triple!r} must be >= 1")
                monomial.append(((slot, coord), exp))
            terms.append((tuple(monomial), parse_rational(entry["coef"])))
        return MultiPolynomial.build(terms)

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for monomial, coeff in self.terms:
            factors = [f"x[{slot},{coord}]" + (f"^{exp}" if exp > 1 else "")
                       for (slot, coord), exp in monomial]
            parts.append("*".join([format_rational(coeff)] + factors)
                         if factors else format_rational(coeff))
        return " + ".join(parts)


def evaluate(poly: MultiPolynomial, point: Sequence[Sequence[Fraction]]) -> Fraction:
    return poly.evaluate(point)


# ---------------------------------------------------------------------------
# centering and decomposition
# ---------------------------------------------------------------------------

def center(poly: MultiPolynomial, laws: Sequence[JointLaw]
           ) -> tuple[Fraction, MultiPolynomial]:
    """Full mean under the product of the slot laws, and the centered poly."""
    reduced = poly
    for slot in range(1, len(laws) + 1):
        reduced = reduced.integrate_slot(slot, laws[slot - 1])
    if reduced.slots_used():
        raise ConfigError(
            f"observable uses slots {sorted(poly.slots_used())} beyond the "
            f"{len(laws)} supplied laws")
    mean = reduced.constant_term
    return mean, poly - MultiPolynomial.constant(mean)


@dataclass(frozen=True)
class DecomposedObservable:
    """Centered observable split into parts using growing slot prefixes.

    parts[i-1] depends on slots 1..i only, and integrating its last slot
    against laws[i-1] gives the zero polynomial identically in the earlier
    slots.  The parts sum to the observable minus its mean.
    """

    mean: Fraction
    parts: tuple[MultiPolynomial, ...]
    laws: tuple[JointLaw, ...]

    @property
    def size(self) -> int:
        return len(self.parts)

    def verify_exact(self, probes: int = 25, seed: int = 0) -> None:
        """Exact self-checks: last-slot centering and the telescoping sum."""
        for i, part in enumerate(self.parts, start=1):
            if not part.integrate_slot(i, self.laws[i - 1]).is_zero:
                raise EngineAssertion(f"part {i} does not center in slot {i}")
            if any(s > i for s in part.slots_used()):
                raise EngineAssertion(f"part {i} uses slots beyond {i}")
        rng = random.Random(seed)
        total = self.parts[0]
        for part in self.parts[1:]:
            total = total + part
        for _ in range(probes):
            point = [tuple(Fraction(rng.randrange(-9, 10), rng.randrange(1, 7))
                           for _ in range(law.dimension)) for law in self.laws]
            lhs = total.evaluate(point)
            rhs = sum((p.evaluate(point) for p in self.parts), start=Fraction(0))
            if lhs != rhs:
                raise EngineAssertion("telescoping sum failed at a probe point")


def decompose(poly: MultiPolynomial, laws: Sequence[JointLaw]) -> DecomposedObservable:
    """Split F - mean(F) into slot-prefix parts with centered last slots.

    Part i is the conditional expectation given slots 1..i minus the one
    given slots 1..i-1; centering is applied internally so the caller may
    pass an uncentered observable.
    """
    laws = tuple(laws)
    size = len(laws)
    suffix_integrals: list[MultiPolynomial] = [poly]
    current = poly
    for slot in range(size, 0, -1):
        current = current.integrate_slot(slot, laws[slot - 1])
        suffix_integrals.append(current)
    suffix_integrals.reverse()  # [int over 1..l, ..., int over l..l, F]
    if suffix_integrals[0].slots_used():
        raise ConfigError(
            f"observable uses slots {sorted(poly.slots_used())} beyond the "
            f"{size} supplied laws")
    mean = suffix_integrals[0].constant_term
    parts = []
    for i in range(1, size + 1):
        upper = suffix_integrals[i]
        lower = suffix_integrals[i - 1]
        if i == 1:
            lower = MultiPolynomial.constant(mean)
        parts.append(upper - lower)
    return DecomposedObservable(mean=mean, parts=tuple(parts), laws=laws)


# ---------------------------------------------------------------------------
# reduction to a drifting family
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReducedSetup:
    """Observable and process rewritten over the stacked offset vector.

    ``observable`` takes ``reduced_family.size`` slots whose value vectors
    are the stacked process states; evaluating it along the reduced family
    reproduces the original observable along the original family exactly.
    """

    family: FamilyStructure
    reduced_family: FamilyStructure
    process: StackedProcess
    observable: MultiPolynomial
    slot_map: dict[tuple[int, int], tuple[int, int]]

    @property
    def stationary(self) -> JointLaw:
        return self.process.stationary_law()


def reduce_setup(family: FamilyStructure, poly: MultiPolynomial,
                 model) -> ReducedSetup:
    """Stack constant offsets into the process and remap observable slots.

    Original slot i (time q_i(n)) becomes a coordinate range of reduced slot
    s, where s is the constant-difference group of i and the range is picked
    by the offset q_i - q_{head(s)} inside the sorted offset set.
    """
    if poly.max_slot() > family.size:
        raise ConfigError(
            f"observable uses slot {poly.max_slot()} but the family has "
            f"{family.size} members")
    offsets = list(family.constant_offsets)
    stacked = StackedProcess(model, offsets)
    base_dim = model.dimension
    mapping: dict[tuple[int, int], tuple[int, int]] = {}
    for i in range(1, family.size + 1):
        group = next(s for s in range(1, family.reduced_size + 1)
                     if family.group_bounds[s - 1] < i <= family.group_bounds[s])
        position = offsets.index(family.offsets_by_index[i - 1])
        for coord in range(1, base_dim + 1):
            mapping[(i, coord)] = (group, position * base_dim + coord)
    reduced_polys = family.reduced_polys
    return ReducedSetup(
        family=family,
        reduced_family=analyze_family(reduced_polys),
        process=stacked,
        observable=poly.remap(mapping),
        slot_map=mapping,
    )
