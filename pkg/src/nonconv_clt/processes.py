"""Finite-state stationary process models with exact joint laws.

Three model kinds are supported, all fully stationary with exactly
measurable values (no sigma-algebra approximation layer):

* ``IIDProcess`` -- independent draws from a finite rational-valued law;
* ``MarkovChain`` -- a finite chain whose transition matrix has some
  strictly positive power, run from its exact stationary law;
* ``MovingAverage`` -- X(n) = sum_j a_j xi_{j+n} over a finite window of
  i.i.d. innovations.

Every model answers two kinds of queries:

* exact distributional queries: ``joint_law(offsets)`` returns the finite
  joint law of (X(t), X(t+o_2), ...) as Fractions, and ``moment`` integrates
  monomials against it;
* sampling queries with random access: ``sample_at`` returns draws at an
  arbitrary sorted list of 64-bit times whose joint distribution is the
  corresponding joint law.  For i.i.d. and moving-average models the draws
  are pure functions of (seed, replicate_id, time), so far-apart times cost
  nothing.  Markov chains traverse gaps through cached float64 powers
  P^(2^j) with per-use row renormalization (the one deliberately inexact
  corner, confined to simulation; laws stay exact).

``StackedProcess`` bundles X(t+k) for the finitely many constant offsets k
of a family into one vector-valued process, which is how families whose
members differ by constants are reduced to the generic case.

Internally each model exposes a per-time "cell": a small integer determining
the exact value vector at that time.  Simulation works on cell streams and
lookup tables so the hot path never touches rational arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ArityTooLarge,
    EngineAssertion,
    ModelError,
    NotDoeblin,
    StackTooLarge,
    TimeOverflow,
)
from .rng import ExactCategorical, stream_key, uniform01

DEFAULT_ATOM_CAP = 10 ** 6
_MAX_TIME = 2 ** 63 - 1

_SUB_VALUES = 0   # iid atoms / moving-average innovations
_SUB_START = 1    # markov initial state
_SUB_STEPS = 2    # markov gap traversal

Vector = tuple[Fraction, ...]


# ---------------------------------------------------------------------------
# joint laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JointLaw:
    """Exact finite law of a tuple of value vectors.

    ``atoms`` maps each support point -- a tuple of ``arity`` value vectors,
    each of length ``dimension`` -- to its rational probability.  Atoms are
    merged and sorted, so equal laws compare equal.
    """

    arity: int
    dimension: int
    atoms: tuple[tuple[tuple[Vector, ...], Fraction], ...]

    @staticmethod
    def build(arity: int, dimension: int,
              pairs: Iterable[tuple[tuple[Vector, ...], Fraction]]) -> "JointLaw":
        merged: dict[tuple[Vector, ...], Fraction] = {}
        for point, prob in pairs:
            if prob == 0:
                continue
            merged[point] = merged.get(point, Fraction(0)) + prob
        atoms = tuple(sorted(merged.items()))
        law = JointLaw(arity=arity, dimension=dimension, atoms=atoms)
        if sum(p for _, p in atoms) != 1:
            raise EngineAssertion("joint law probabilities do not sum to 1")
        return law

    def marginal(self, positions: Sequence[int]) -> "JointLaw":
        return JointLaw.build(
            len(positions), self.dimension,
            ((tuple(point[i] for i in positions), prob) for point, prob in self.atoms))

    def moment(self, exponents: Sequence[Sequence[int]]) -> Fraction:
        """E[prod_i prod_c X_i[c] ** exponents[i][c]], exactly."""
        total = Fraction(0)
        for point, prob in self.atoms:
            term = prob
            for vec, exps in zip(point, exponents):
                for value, e in zip(vec, exps):
                    if e:
                        term *= value ** e
            total += term
        return total


def _check_offsets(offsets: Sequence[int]) -> list[int]:
    offsets = [int(o) for o in offsets]
    if not offsets:
        raise ModelError("need at least one offset")
    if sorted(set(offsets)) != offsets:
        raise ModelError("offsets must be sorted and distinct")
    return [o - offsets[0] for o in offsets]


def _check_times(times: Sequence[int]) -> list[int]:
    times = [int(t) for t in times]
    if any(t < 0 or t > _MAX_TIME for t in times):
        raise TimeOverflow("times must lie in [0, 2**63)")
    if sorted(set(times)) != times:
        raise ModelError("times must be sorted and distinct")
    return times


# ---------------------------------------------------------------------------
# i.i.d. model
# ---------------------------------------------------------------------------

class IIDProcess:
    """Independent identically distributed draws from a finite law."""

    kind = "iid"

    def __init__(self, atoms: Sequence[tuple[Sequence[Fraction], Fraction]],
                 atom_cap: int = DEFAULT_ATOM_CAP):
        if not atoms:
            raise ModelError("empty support")
        self.values: list[Vector] = [tuple(Fraction(v) for v in vec) for vec, _ in atoms]
        self.probabilities = [Fraction(p) for _, p in atoms]
        dims = {len(v) for v in self.values}
        if len(dims) != 1:
            raise ModelError("all support vectors must share one dimension")
        if len(set(self.values)) != len(self.values):
            raise ModelError("support vectors must be distinct")
        self.dimension = dims.pop()
        self.atom_cap = atom_cap
        self._sampler = ExactCategorical(self.probabilities)

    # -- exact queries ------------------------------------------------------

    def stationary_law(self) -> JointLaw:
        return self.joint_law([0])

    def joint_law(self, offsets: Sequence[int]) -> JointLaw:
        offsets = _check_offsets(offsets)
        k = len(offsets)
        if len(self.values) ** k > self.atom_cap:
            raise ArityTooLarge(f"support size {len(self.values)}**{k} exceeds cap")
        pairs = []
        for combo in product(range(len(self.values)), repeat=k):
            prob = math.prod((self.probabilities[i] for i in combo), start=Fraction(1))
            pairs.append((tuple(self.values[i] for i in combo), prob))
        return JointLaw.build(k, self.dimension, pairs)

    # -- sampling -----------------------------------------------------------

    @property
    def cell_values(self) -> list[Vector]:
        return self.values

    def cells_batch(self, times: np.ndarray, seed: int,
                    replicate_ids: Sequence[int]) -> np.ndarray:
        out = np.empty((len(replicate_ids), len(times)), dtype=np.int64)
        for row, rep in enumerate(replicate_ids):
            key = stream_key(seed, rep, _SUB_VALUES)
            out[row] = self._sampler.draw(key, times)
        return out

    def dependence_horizon(self) -> "DependenceHorizon":
        return DependenceHorizon(kind="window", window=0)


# ---------------------------------------------------------------------------
# Markov chain
# ---------------------------------------------------------------------------

class MarkovChain:
    """Stationary finite Markov chain with exact rational transition matrix.

    Requires some power of the transition matrix to be strictly positive
    (checked up to |states|**2 powers), which guarantees a unique stationary
    law; the chain is always started from it.
    """

    kind = "markov"

    def __init__(self, states: Sequence[Sequence[Fraction]],
                 transition: Sequence[Sequence[Fraction]],
                 atom_cap: int = DEFAULT_ATOM_CAP):
        self.values: list[Vector] = [tuple(Fraction(v) for v in vec) for vec in states]
        if not self.values:
            raise ModelError("empty state list")
        dims = {len(v) for v in self.values}
        if len(dims) != 1:
            raise ModelError("all states must share one dimension")
        self.dimension = dims.pop()
        n = len(self.values)
        self.transition = [[Fraction(p) for p in row] for row in transition]
        if len(self.transition) != n or any(len(r) != n for r in self.transition):
            raise ModelError("transition matrix shape must match the state list")
        for row in self.transition:
            if any(p < 0 for p in row) or sum(row) != 1:
                raise ModelError("transition rows must be nonnegative and sum to 1")
        self.atom_cap = atom_cap
        self._check_doeblin()
        self.stationary = self._solve_stationary()
        self._start_sampler = ExactCategorical(self.stationary)
        self._float_pow2: list[np.ndarray] = [np.array(self.transition, dtype=float)]
        self._power_cache: dict[int, list[list[Fraction]]] = {}
        self._float_gap_cache: dict[int, np.ndarray] = {}

    def _check_doeblin(self) -> None:
        n = len(self.values)
        reach = np.array([[p > 0 for p in row] for row in self.transition], dtype=bool)
        power = reach.copy()
        for _ in range(n * n):
            if power.all():
                return
            power = (power.astype(np.int8) @ reach.astype(np.int8)) > 0
        raise NotDoeblin(
            f"no strictly positive power of the transition matrix within {n * n} steps")

    def _solve_stationary(self) -> list[Fraction]:
        n = len(self.values)
        # rows: (P^T - I) pi = 0 with the last equation replaced by sum = 1
        matrix = [[self.transition[j][i] - (1 if i == j else 0) for j in range(n)]
                  for i in range(n)]
        matrix[-1] = [Fraction(1)] * n
        rhs = [Fraction(0)] * (n - 1) + [Fraction(1)]
        pi = _solve_linear(matrix, rhs)
        for i in range(n):
            if sum(pi[j] * self.transition[j][i] for j in range(n)) != pi[i]:
                raise EngineAssertion("stationary law does not satisfy pi P = pi")
        if any(p <= 0 for p in pi):
            raise EngineAssertion("stationary law must be strictly positive")
        return pi

    # -- exact queries ------------------------------------------------------

    def exact_power(self, g: int) -> list[list[Fraction]]:
        if g in self._power_cache:
            return self._power_cache[g]
        n = len(self.values)
        result = [[Fraction(1 if i == j else 0) for j in range(n)] for i in range(n)]
        base = self.transition
        e = g
        while e:
            if e & 1:
                result = _mat_mul(result, base)
            e >>= 1
            if e:
                base = _mat_mul(base, base)
        self._power_cache[g] = result
        return result

    def stationary_law(self) -> JointLaw:
        return self.joint_law([0])

    def joint_law(self, offsets: Sequence[int]) -> JointLaw:
        offsets = _check_offsets(offsets)
        n = len(self.values)
        if n ** len(offsets) > self.atom_cap:
            raise ArityTooLarge(f"support size {n}**{len(offsets)} exceeds cap")
        gaps = [offsets[i + 1] - offsets[i] for i in range(len(offsets) - 1)]
        powers = [self.exact_power(g) for g in gaps]
        pairs = []
        for combo in product(range(n), repeat=len(offsets)):
            prob = self.stationary[combo[0]]
            for step, power in enumerate(powers):
                prob *= power[combo[step]][combo[step + 1]]
                if prob == 0:
                    break
            pairs.append((tuple(self.values[i] for i in combo), prob))
        return JointLaw.build(len(offsets), self.dimension, pairs)

    # -- sampling -----------------------------------------------------------

    @property
    def cell_values(self) -> list[Vector]:
        return self.values

    def _float_gap_matrix(self, g: int) -> np.ndarray:
        """Row-stochastic float64 approximation of the g-step matrix."""
        cached = self._float_gap_cache.get(g)
        if cached is not None:
            return cached
        n = len(self.values)
        result = np.eye(n)
        bit = 0
        e = g
        while e:
            while len(self._float_pow2) <= bit:
                square = self._float_pow2[-1] @ self._float_pow2[-1]
                self._float_pow2.append(_renormalize_rows(square))
            if e & 1:
                result = _renormalize_rows(result @ self._float_pow2[bit])
            e >>= 1
            bit += 1
        cumulative = np.cumsum(result, axis=1)
        self._float_gap_cache[g] = cumulative
        return cumulative

    def cells_batch(self, times: np.ndarray, seed: int,
                    replicate_ids: Sequence[int]) -> np.ndarray:
        reps = np.asarray(list(replicate_ids), dtype=np.int64)
        out = np.empty((len(reps), len(times)), dtype=np.int64)
        if len(times) == 0:
            return out
        start_u = np.empty(len(reps), dtype=np.int64)
        for row, rep in enumerate(reps):
            key = stream_key(seed, int(rep), _SUB_START)
            start_u[row] = self._start_sampler.draw(key, np.array([0], dtype=np.int64))[0]
        state = start_u
        out[:, 0] = state
        step_keys = [stream_key(seed, int(rep), _SUB_STEPS) for rep in reps]
        for pos in range(1, len(times)):
            gap = int(times[pos]) - int(times[pos - 1])
            cumulative = self._float_gap_matrix(gap)
            u = np.array([
                uniform01(k, np.array([pos], dtype=np.int64))[0] for k in step_keys])
            rows = cumulative[state]
            state = np.minimum(
                (u[:, None] >= rows).sum(axis=1), len(self.values) - 1).astype(np.int64)
            out[:, pos] = state
        return out

    def dependence_horizon(self) -> "DependenceHorizon":
        eigenvalues = np.linalg.eigvals(np.array(self.transition, dtype=float))
        moduli = np.sort(np.abs(eigenvalues))[::-1]
        if abs(moduli[0] - 1.0) > 1e-9:
            raise EngineAssertion("largest eigenvalue modulus of a stochastic "
                                  f"matrix should be 1, got {moduli[0]}")
        rho = float(moduli[1]) if len(moduli) > 1 else 0.0
        if rho >= 1.0 - 1e-12:
            raise NotDoeblin(f"second eigenvalue modulus {rho} too close to 1")
        return DependenceHorizon(kind="geometric", rate=max(rho, 0.0))


def _solve_linear(matrix: list[list[Fraction]], rhs: list[Fraction]) -> list[Fraction]:
    """Gaussian elimination over the rationals (square, nonsingular)."""
    n = len(matrix)
    a = [row[:] + [rhs[i]] for i, row in enumerate(matrix)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if a[r][col] != 0), None)
        if pivot is None:
            raise ModelError("singular system; stationary law is not unique")
        a[col], a[pivot] = a[pivot], a[col]
        inv = 1 / a[col][col]
        a[col] = [x * inv for x in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                factor = a[r][col]
                a[r] = [x - factor * y for x, y in zip(a[r], a[col])]
    return [a[r][n] for r in range(n)]


def _mat_mul(a: list[list[Fraction]], b: list[list[Fraction]]) -> list[list[Fraction]]:
    n = len(a)
    return [[sum((a[i][k] * b[k][j] for k in range(n)), start=Fraction(0))
             for j in range(n)] for i in range(n)]


def _renormalize_rows(matrix: np.ndarray) -> np.ndarray:
    matrix = np.clip(matrix, 0.0, None)
    sums = matrix.sum(axis=1, keepdims=True)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise EngineAssertion("float transition power drifted beyond 1e-9 per row")
    return matrix / sums


# ---------------------------------------------------------------------------
# moving average
# ---------------------------------------------------------------------------

class MovingAverage:
    """X(n) = sum_{j=0}^{w} a_j xi_{j+n} over i.i.d. finite innovations.

    Innovations are vectors in Q^dim and the window coefficients a_j are
    rational scalars applied coordinatewise.  The per-time cell is the tuple
    of the w+1 innovation atoms in the window, so a cell determines the value
    exactly and neighbouring times share innovations consistently.
    """

    kind = "moving_average"

    def __init__(self, innovation_atoms: Sequence[tuple[Sequence[Fraction], Fraction]],
                 coefficients: Sequence[Fraction],
                 atom_cap: int = DEFAULT_ATOM_CAP):
        if not coefficients:
            raise ModelError("empty coefficient window")
        self.coefficients = [Fraction(c) for c in coefficients]
        self.innovation_values: list[Vector] = [
            tuple(Fraction(v) for v in vec) for vec, _ in innovation_atoms]
        self.innovation_probs = [Fraction(p) for _, p in innovation_atoms]
        dims = {len(v) for v in self.innovation_values}
        if len(dims) != 1:
            raise ModelError("all innovation vectors must share one dimension")
        if len(set(self.innovation_values)) != len(self.innovation_values):
            raise ModelError("innovation vectors must be distinct")
        self.dimension = dims.pop()
        self.window = len(self.coefficients) - 1
        self.atom_cap = atom_cap
        base = len(self.innovation_values)
        if base ** (self.window + 1) > atom_cap:
            raise ArityTooLarge("moving-average cell space exceeds cap")
        self._sampler = ExactCategorical(self.innovation_probs)
        self._cell_values = [
            tuple(
                sum((a * vec[c] for a, vec in zip(self.coefficients, combo)),
                    start=Fraction(0))
                for c in range(self.dimension))
            for combo in product(self.innovation_values, repeat=self.window + 1)]

    # -- exact queries ------------------------------------------------------

    def stationary_law(self) -> JointLaw:
        return self.joint_law([0])

    def joint_law(self, offsets: Sequence[int]) -> JointLaw:
        offsets = _check_offsets(offsets)
        needed = sorted({o + j for o in offsets for j in range(self.window + 1)})
        base = len(self.innovation_values)
        if base ** len(needed) > self.atom_cap:
            raise ArityTooLarge(f"innovation paths {base}**{len(needed)} exceed cap")
        index = {m: i for i, m in enumerate(needed)}
        pairs = []
        for combo in product(range(base), repeat=len(needed)):
            prob = math.prod((self.innovation_probs[i] for i in combo), start=Fraction(1))
            point = []
            for o in offsets:
                vec = tuple(
                    sum((self.coefficients[j] * self.innovation_values[combo[index[o + j]]][c]
                         for j in range(self.window + 1)), start=Fraction(0))
                    for c in range(self.dimension))
                point.append(vec)
            pairs.append((tuple(point), prob))
        return JointLaw.build(len(offsets), self.dimension, pairs)

    # -- sampling -----------------------------------------------------------

    @property
    def cell_values(self) -> list[Vector]:
        return self._cell_values

    def cells_batch(self, times: np.ndarray, seed: int,
                    replicate_ids: Sequence[int]) -> np.ndarray:
        base = len(self.innovation_values)
        out = np.zeros((len(replicate_ids), len(times)), dtype=np.int64)
        for row, rep in enumerate(replicate_ids):
            key = stream_key(seed, rep, _SUB_VALUES)
            cells = np.zeros(len(times), dtype=np.int64)
            for j in range(self.window + 1):
                digits = self._sampler.draw(key, times + j)
                cells = cells * base + digits
            out[row] = cells
        return out

    def dependence_horizon(self) -> "DependenceHorizon":
        return DependenceHorizon(kind="window", window=self.window)


# ---------------------------------------------------------------------------
# stacking constant offsets
# ---------------------------------------------------------------------------

class StackedProcess:
    """Z(t) = (X(t + k_1), ..., X(t + k_m)) for fixed offsets k_1 < ... < k_m.

    Wraps any base model into a higher-dimensional one; joint laws delegate
    to the base model on the merged time set, so overlaps between shifted
    copies stay exactly correlated.
    """

    kind = "stacked"

    def __init__(self, base, offsets: Sequence[int], stack_cap: int = 4096):
        offsets = [int(k) for k in offsets]
        if sorted(set(offsets)) != offsets or offsets[0] != 0:
            raise ModelError("stack offsets must be sorted, distinct, starting at 0")
        self.base = base
        self.offsets = offsets
        self.dimension = base.dimension * len(offsets)
        base_cells = len(base.cell_values)
        if base_cells ** len(offsets) > stack_cap:
            raise StackTooLarge(
                f"stacked cell space {base_cells}**{len(offsets)} exceeds {stack_cap}")
        self._cell_values = [
            tuple(v for cell in combo for v in base.cell_values[cell])
            for combo in product(range(base_cells), repeat=len(offsets))]

    def stationary_law(self) -> JointLaw:
        return self.joint_law([0])

    def joint_law(self, offsets: Sequence[int]) -> JointLaw:
        offsets = _check_offsets(offsets)
        merged = sorted({o + k for o in offsets for k in self.offsets})
        base_law = self.base.joint_law(merged)
        index = {t: i for i, t in enumerate(merged)}
        positions = [[index[o + k] for k in self.offsets] for o in offsets]
        pairs = []
        for point, prob in base_law.atoms:
            stacked_point = tuple(
                tuple(v for pos in group for v in point[pos]) for group in positions)
            pairs.append((stacked_point, prob))
        return JointLaw.build(len(offsets), self.dimension, pairs)

    @property
    def cell_values(self) -> list[Vector]:
        return self._cell_values

    def cells_batch(self, times: np.ndarray, seed: int,
                    replicate_ids: Sequence[int]) -> np.ndarray:
        if len(times) and int(times[-1]) + self.offsets[-1] > _MAX_TIME:
            raise TimeOverflow("stacked times exceed the 64-bit range")
        merged = np.unique(
            np.concatenate([times + k for k in self.offsets]) if len(times) else times)
        base_cells = self.base.cells_batch(merged, seed, replicate_ids)
        n_base = len(self.base.cell_values)
        out = np.zeros((len(replicate_ids), len(times)), dtype=np.int64)
        for k in self.offsets:
            cols = np.searchsorted(merged, times + k)
            out = out * n_base + base_cells[:, cols]
        return out

    def dependence_horizon(self) -> "DependenceHorizon":
        base = self.base.dependence_horizon()
        if base.kind == "window":
            return DependenceHorizon(kind="window",
                                     window=base.window + self.offsets[-1])
        return base


# ---------------------------------------------------------------------------
# shared operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DependenceHorizon:
    """Exact dependence window, or geometric correlation decay rate."""

    kind: str                    # "window" | "geometric"
    window: int | None = None
    rate: float | None = None


def stationary_law(model) -> JointLaw:
    return model.stationary_law()


def joint_law(model, offsets: Sequence[int]) -> JointLaw:
    return model.joint_law(offsets)


def moment(model, times: Sequence[int], exponents: Sequence[Sequence[int]]) -> Fraction:
    """E[prod_i X(times[i]) ** exponents[i]] with per-coordinate exponents."""
    if len(times) != len(exponents):
        raise ModelError("times and exponents must align")
    law = model.joint_law(list(times))
    return law.moment(exponents)


def sample_at(model, seed: int, replicate_id: int, times: Sequence[int]) -> list[Vector]:
    """One exact draw of (X(t) for t in times); pure in (seed, replicate_id)."""
    times = _check_times(times)
    arr = np.array(times, dtype=np.int64)
    cells = model.cells_batch(arr, seed, [replicate_id])[0]
    return [model.cell_values[c] for c in cells]


def dependence_horizon(model) -> DependenceHorizon:
    return model.dependence_horizon()
