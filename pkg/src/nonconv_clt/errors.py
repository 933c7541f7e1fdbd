"""Exception hierarchy.

Three families matter to callers:

* ``ConfigError`` -- the input document itself is malformed (CLI exit 1).
* ``ModelError`` -- well-formed input describing a model outside the supported
  assumptions, e.g. a polynomial that is not integer valued (CLI exit 2).
* ``EngineAssertion`` -- an internal consistency check failed; this always
  indicates a bug in the engine, never bad user input (CLI exit 4).

Verification failures (simulation disagreeing with analytic predictions) are
not exceptions; they are reported and mapped to CLI exit 3 by the driver.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """Malformed configuration document (unknown field, bad rational, ...)."""


class ModelError(ValueError):
    """Input violates a model assumption the engine relies on."""


class EngineAssertion(AssertionError):
    """Internal invariant broken; indicates an engine bug."""


# --- polynomial family ------------------------------------------------------

class DegreeZero(ModelError):
    """Constant polynomials are not admitted as time sequences."""


class NonPositiveLeading(ModelError):
    """Leading coefficient must be positive."""


class NotIntegerValued(ModelError):
    """Polynomial does not map naturals to integers."""


class NotPositiveOnNaturals(ModelError):
    """Polynomial takes a value < 1 at some natural argument."""


class NotEventuallyOrdered(ModelError):
    """Family is not strictly increasing for all large arguments."""


class DuplicatePolynomial(ModelError):
    """Two family members are identical."""


class DegreeMismatch(ModelError):
    """Operation requires indices from a single degree block."""


class IrrationalPrefactor(ModelError):
    """A density prefactor is irrational, so no exact rational exists."""


# --- process models ---------------------------------------------------------

class NotDoeblin(ModelError):
    """No power of the transition matrix is strictly positive."""


class ArityTooLarge(ModelError):
    """Requested joint law would exceed the support-size cap."""


class TimeOverflow(ModelError):
    """A requested time index does not fit in a signed 64-bit integer."""


class StackTooLarge(ModelError):
    """Stacked process dimension exceeds the configured cap."""


# --- covariance engine ------------------------------------------------------

class NotLinear(ModelError):
    """Entry formula for linear polynomials applied to a nonlinear index."""


class NotNonlinear(ModelError):
    """Entry formula for nonlinear polynomials applied to a linear pair."""


class TolNotMet(ModelError):
    """Series truncation could not reach the requested tolerance."""


class NoSolutionInTemplate(ModelError):
    """No coefficient scaling in the template family kills the variance."""


class NoLinearPart(ModelError):
    """Long-run variance estimation requires at least one linear polynomial."""


class CauchySchwarzViolated(EngineAssertion):
    """Computed covariance matrix fails Cauchy-Schwarz; engine bug."""


# --- simulation -------------------------------------------------------------

class BadTimes(ModelError):
    """Increment times must satisfy 0 <= t1 <= t2 <= t3."""


class DegenerateVariance(ModelError):
    """Limiting variance is zero; normality is not claimed."""
