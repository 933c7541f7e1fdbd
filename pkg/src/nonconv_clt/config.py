"""Scenario configuration: strict JSON schema, canonical form, built-ins.

A scenario document pins everything needed to reproduce a run: the family of
time polynomials, the process model, the observable, the simulation plan and
analysis knobs.  Rationals travel as strings ("-3/4"); floats are accepted
only in time grids, increment triples and tolerances.  Unknown fields are
rejected everywhere so that typos cannot silently change a scenario.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

from .covariance import ScenarioContext, build_context
from .errors import ConfigError
from .montecarlo import SimulationPlan
from .observables import MultiPolynomial
from .polynomials import IntegerValuedPolynomial, validate_polynomial
from .processes import DEFAULT_ATOM_CAP, IIDProcess, MarkovChain, MovingAverage
from .rationals import format_rational, parse_rational

SCHEMA_VERSION = 1


def _require_keys(obj: dict, required: set[str], optional: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    keys = set(obj)
    unknown = keys - required - optional
    if unknown:
        raise ConfigError(f"{where}: unknown fields {sorted(unknown)}")
    missing = required - keys
    if missing:
        raise ConfigError(f"{where}: missing fields {sorted(missing)}")


def _time_fraction(value, where: str) -> Fraction:
    """Grid times may be ints or floats; floats convert via their decimal text."""
    if isinstance(value, bool) or isinstance(value, str):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    raise ConfigError(f"{where}: expected a number, got {value!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    """Parsed scenario, ready to feed the engine."""

    name: str
    polynomials: tuple[IntegerValuedPolynomial, ...]
    process: IIDProcess | MarkovChain | MovingAverage
    observable: MultiPolynomial
    plan: SimulationPlan
    tolerance: float
    atom_cap: int
    density_subsets: tuple[tuple[int, ...], ...]
    density_n: int

    def context(self) -> ScenarioContext:
        return build_context(list(self.polynomials), self.observable,
                             self.process, tol=self.tolerance)


def parse_config(document: dict) -> ScenarioConfig:
    _require_keys(document, {"schema", "polynomials", "process", "observable"},
                  {"name", "simulation", "analysis", "density"}, "config")
    if document["schema"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {document['schema']!r}")

    polys = []
    if not isinstance(document["polynomials"], list) or not document["polynomials"]:
        raise ConfigError("polynomials: expected a nonempty list")
    for k, coeffs in enumerate(document["polynomials"]):
        if not isinstance(coeffs, list):
            raise ConfigError(f"polynomials[{k}]: expected a coefficient list")
        polys.append(validate_polynomial([parse_rational(c) for c in coeffs]))

    analysis = document.get("analysis", {})
    _require_keys(analysis, set(), {"tolerance", "atom_cap"}, "analysis")
    tolerance = analysis.get("tolerance", 1e-10)
    if not isinstance(tolerance, (int, float)) or isinstance(tolerance, bool) \
            or not 0 < tolerance < 1:
        raise ConfigError("analysis.tolerance must be a float in (0, 1)")
    atom_cap = analysis.get("atom_cap", DEFAULT_ATOM_CAP)
    if not isinstance(atom_cap, int) or atom_cap < 1:
        raise ConfigError("analysis.atom_cap must be a positive integer")

    process = _parse_process(document["process"], atom_cap)
    observable = MultiPolynomial.deserialize(document["observable"])

    sim = document.get("simulation", {})
    _require_keys(sim, set(), {"n_ladder", "replicates", "t_grid",
                               "increment_triples", "seed", "normality"},
                  "simulation")
    n_ladder = sim.get("n_ladder", [1000])
    if (not isinstance(n_ladder, list) or not n_ladder
            or not all(isinstance(n, int) and n >= 1 for n in n_ladder)):
        raise ConfigError("simulation.n_ladder must be a list of sizes >= 1")
    replicates = sim.get("replicates", 200)
    if not isinstance(replicates, int) or replicates < 2:
        raise ConfigError("simulation.replicates must be an integer >= 2")
    seed = sim.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("simulation.seed must fit in 64 bits")
    normality = sim.get("normality", True)
    if not isinstance(normality, bool):
        raise ConfigError("simulation.normality must be a boolean")
    t_grid = tuple(_time_fraction(t, "simulation.t_grid")
                   for t in sim.get("t_grid", [1]))
    triples = []
    for k, triple in enumerate(sim.get("increment_triples", [])):
        if not isinstance(triple, list) or len(triple) != 3:
            raise ConfigError(f"simulation.increment_triples[{k}] must have 3 times")
        triples.append(tuple(_time_fraction(t, "increment_triples") for t in triple))
    plan = SimulationPlan(
        n_ladder=tuple(n_ladder), replicates=replicates, t_grid=t_grid,
        increment_triples=tuple(triples), seed=seed, normality=normality)

    density = document.get("density", {})
    _require_keys(density, set(), {"subsets", "n_empirical"}, "density")
    subsets = []
    for k, subset in enumerate(density.get("subsets", [])):
        if (not isinstance(subset, list) or not subset
                or not all(isinstance(i, int) and 1 <= i <= len(polys) for i in subset)):
            raise ConfigError(f"density.subsets[{k}] must list family indices")
        subsets.append(tuple(sorted(subset)))
    density_n = density.get("n_empirical", 10 ** 6)
    if not isinstance(density_n, int) or density_n < 1:
        raise ConfigError("density.n_empirical must be a positive integer")

    name = document.get("name", "scenario")
    if not isinstance(name, str):
        raise ConfigError("name must be a string")
    return ScenarioConfig(
        name=name, polynomials=tuple(polys), process=process,
        observable=observable, plan=plan, tolerance=float(tolerance),
        atom_cap=atom_cap, density_subsets=tuple(subsets), density_n=density_n)


def _parse_process(obj: dict, atom_cap: int):
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError("process: expected an object with a 'kind' field")
    kind = obj["kind"]
    if kind == "iid":
        _require_keys(obj, {"kind", "atoms"}, set(), "process")
        return IIDProcess(_parse_atoms(obj["atoms"], "process.atoms"),
                          atom_cap=atom_cap)
    if kind == "markov":
        _require_keys(obj, {"kind", "states", "transition"}, set(), "process")
        states = [_parse_vector(v, f"process.states[{k}]")
                  for k, v in enumerate(obj["states"])]
        transition = [[parse_rational(p) for p in row] for row in obj["transition"]]
        return MarkovChain(states, transition, atom_cap=atom_cap)
    if kind == "moving_average":
        _require_keys(obj, {"kind", "innovations", "coefficients"}, set(), "process")
        return MovingAverage(
            _parse_atoms(obj["innovations"], "process.innovations"),
            [parse_rational(c) for c in obj["coefficients"]],
            atom_cap=atom_cap)
    raise ConfigError(f"process.kind must be iid|markov|moving_average, got {kind!r}")


def _parse_vector(value, where: str) -> list[Fraction]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where}: expected a nonempty list of rationals")
    return [parse_rational(v) for v in value]


def _parse_atoms(entries, where: str) -> list[tuple[list[Fraction], Fraction]]:
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{where}: expected a nonempty list")
    atoms = []
    for k, entry in enumerate(entries):
        _require_keys(entry, {"value", "prob"}, set(), f"{where}[{k}]")
        atoms.append((_parse_vector(entry["value"], f"{where}[{k}].value"),
                      parse_rational(entry["prob"])))
    return atoms


# ---------------------------------------------------------------------------
# canonical serialization
# ---------------------------------------------------------------------------

def canonical_document(config: ScenarioConfig) -> dict:
    """Normalized document: reduced rationals, defaults made explicit."""
    process = config.process
    if isinstance(process, IIDProcess):
        proc = {"kind": "iid",
                "atoms": [{"value": [format_rational(v) for v in vec],
                           "prob": format_rational(p)}
                          for vec, p in zip(process.values, process.probabilities)]}
    elif isinstance(process, MarkovChain):
        proc = {"kind": "markov",
                "states": [[format_rational(v) for v in vec] for vec in process.values],
                "transition": [[format_rational(p) for p in row]
                               for row in process.transition]}
    else:
        proc = {"kind": "moving_average",
                "innovations": [{"value": [format_rational(v) for v in vec],
                                 "prob": format_rational(p)}
                                for vec, p in zip(process.innovation_values,
                                                  process.innovation_probs)],
                "coefficients": [format_rational(c) for c in process.coefficients]}
    return {
        "schema": SCHEMA_VERSION,
        "name": config.name,
        "polynomials": [p.serialize() for p in config.polynomials],
        "process": proc,
        "observable": config.observable.serialize(),
        "simulation": {
            "n_ladder": list(config.plan.n_ladder),
            "replicates": config.plan.replicates,
            "t_grid": [_time_json(t) for t in config.plan.t_grid],
            "increment_triples": [[_time_json(t) for t in triple]
                                  for triple in config.plan.increment_triples],
            "seed": config.plan.seed,
            "normality": config.plan.normality,
        },
        "analysis": {"tolerance": config.tolerance, "atom_cap": config.atom_cap},
        "density": {"subsets": [list(s) for s in config.density_subsets],
                    "n_empirical": config.density_n},
    }


def _time_json(t: Fraction):
    return int(t) if t.denominator == 1 else float(t)


def dumps_config(config: ScenarioConfig) -> str:
    return json.dumps(canonical_document(config), indent=2) + "\n"


# ---------------------------------------------------------------------------
# built-in scenarios
# ---------------------------------------------------------------------------

def _pm_one_iid() -> dict:
    return {"kind": "iid", "atoms": [{"value": ["-1"], "prob": "1/2"},
                                     {"value": ["1"], "prob": "1/2"}]}


def _mono(coef: str, *powers: tuple[int, int, int]) -> dict:
    return {"coef": coef, "powers": [list(p) for p in powers]}


def _builtin_classical_clt() -> dict:
    return {
        "schema": 1, "name": "classical-clt",
        "polynomials": [["0", "1"]],
        "process": _pm_one_iid(),
        "observable": {"monomials": [_mono("1", (1, 1, 1))]},
        "simulation": {"n_ladder": [1000, 10000], "replicates": 2000,
                       "t_grid": [0.5, 1], "seed": 20260801},
    }


def _builtin_odd_squares_density() -> dict:
    return {
        "schema": 1, "name": "odd-squares-density",
        "polynomials": [["0", "0", "1"], ["1", "-4", "4"]],
        "process": _pm_one_iid(),
        "observable": {"monomials": [_mono("1", (1, 1, 2), (2, 1, 1)),
                                     _mono("1", (1, 1, 1))]},
        "simulation": {"n_ladder": [1000], "replicates": 100, "seed": 1,
                       "normality": False},
        "density": {"subsets": [[1], [2], [1, 2]], "n_empirical": 1000000},
    }


def _builtin_degree_mismatch() -> dict:
    return {
        "schema": 1, "name": "degree-mismatch",
        "polynomials": [["0", "1"], ["0", "0", "1"]],
        "process": _pm_one_iid(),
        "observable": {"monomials": [_mono("1", (1, 1, 1), (2, 1, 1)),
                                     _mono("1", (1, 1, 1))]},
        "simulation": {"n_ladder": [10000], "replicates": 2000,
                       "t_grid": [1], "seed": 20260806},
    }


def _builtin_equivalent_nonlinear() -> dict:
    return {
        "schema": 1, "name": "equivalent-nonlinear",
        "polynomials": [["0", "0", "1"], ["1", "-4", "4"]],
        "process": _pm_one_iid(),
        "observable": {"monomials": [_mono("1", (1, 1, 2), (2, 1, 1)),
                                     _mono("1", (1, 1, 1))]},
        "simulation": {"n_ladder": [10000], "replicates": 10000,
                       "t_grid": [0.5, 1],
                       "increment_triples": [[1, 1.5, 2], [0.5, 0.6, 2]],
                       "seed": 20260805},
    }


def _builtin_constant_difference() -> dict:
    return {
        "schema": 1, "name": "constant-difference",
        "polynomials": [["0", "1"], ["2", "1"]],
        "process": _pm_one_iid(),
        "observable": {"monomials": [_mono("1", (1, 1, 1), (2, 1, 1))]},
        "simulation": {"n_ladder": [10000], "replicates": 2000,
                       "t_grid": [1], "seed": 20260807},
    }


def _builtin_linear_pair() -> dict:
    return {
        "schema": 1, "name": "linear-pair",
        "polynomials": [["0", "1"], ["1", "2"]],
        "process": _pm_one_iid(),
        "observable": {"monomials": [_mono("1", (1, 1, 1), (2, 1, 1)),
                                     _mono("1", (1, 1, 1)),
                                     _mono("1", (2, 1, 1))]},
        "simulation": {"n_ladder": [10000], "replicates": 2000,
                       "t_grid": [1], "increment_triples": [[1, 1.5, 2]],
                       "seed": 20260808},
    }


def _builtin_sec8_zero_variance() -> dict:
    # Two equivalent quadratics taking identical values along matched
    # arguments, with a telescoping difference observable over a genuine
    # moving-average model: both decomposition parts are nonzero but the
    # limit variance is exactly zero (the coboundary degeneracy).
    return {
        "schema": 1, "name": "sec8-zero-variance",
        "polynomials": [["0", "0", "1"], ["1", "2", "1"]],
        "process": {"kind": "moving_average",
                    "innovations": [{"value": ["-1"], "prob": "1/2"},
                                    {"value": ["1"], "prob": "1/2"}],
                    "coefficients": ["1/2", "1/2"]},
        "observable": {"monomials": [_mono("1", (1, 1, 1)),
                                     _mono("-1", (2, 1, 1))]},
        "simulation": {"n_ladder": [1000, 10000, 100000], "replicates": 400,
                       "t_grid": [1], "seed": 20260810, "normality": False},
    }


BUILTINS: dict[str, Callable[[], dict]] = {
    "classical-clt": _builtin_classical_clt,
    "odd-squares-density": _builtin_odd_squares_density,
    "degree-mismatch": _builtin_degree_mismatch,
    "equivalent-nonlinear": _builtin_equivalent_nonlinear,
    "constant-difference": _builtin_constant_difference,
    "linear-pair": _builtin_linear_pair,
    "sec8-zero-variance": _builtin_sec8_zero_variance,
}


def builtin_document(name: str) -> dict:
    if name not in BUILTINS:
        raise ConfigError(
            f"unknown built-in {name!r}; available: {sorted(BUILTINS)}")
    return BUILTINS[name]()
