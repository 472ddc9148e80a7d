"""Exception types shared across the package."""

from __future__ import annotations


class CtxApproxError(Exception):
    """Base class for package-specific failures."""


class DimensionError(CtxApproxError, ValueError):
    """Array shapes are mutually inconsistent."""


class EmptyGridError(CtxApproxError, ValueError):
    """An evaluation grid with no points was supplied."""


class IllConditionedError(CtxApproxError):
    """A matrix exceeded the conditioning threshold for a solve/inverse."""

    def __init__(self, name: str, cond: float, limit: float):
        self.name = name
        self.cond = float(cond)
        self.limit = float(limit)
        super().__init__(f"matrix {name!r} has condition {cond:.3e} >= limit {limit:.3e}")


class EpsilonRangeError(CtxApproxError):
    """Requested accuracy is not representable in floating-point range."""


class KroneckerCapExceeded(CtxApproxError):
    """No integer witness found below the q cap."""

    def __init__(self, beta: float, epsilon: float, q_cap: int, best_q: int, best_error: float):
        self.beta = beta
        self.epsilon = epsilon
        self.q_cap = q_cap
        self.best_q = best_q
        self.best_error = best_error
        super().__init__(
            f"no q <= {q_cap} with |{beta} - q*sqrt2 + l| < {epsilon} "
            f"(best: q={best_q}, error={best_error:.3e}); raise the cap or loosen epsilon"
        )


class PositionScanExhausted(CtxApproxError):
    """Position scan hit its cap before meeting all token demands."""

    def __init__(self, j_cap: int, unmet: list[dict]):
        self.j_cap = j_cap
        self.unmet = unmet
        detail = "; ".join(
            f"target {u['target_index']}: {u['remaining']} tokens missing, "
            f"best distance {u['best_distance']:.3e} vs tol {u['tol']:.3e}"
            for u in unmet
        )
        super().__init__(f"scan exhausted at j_cap={j_cap}: {detail}")


class BudgetError(CtxApproxError):
    """A construction stage exceeded its error budget."""

    def __init__(self, stage: str, measured: float, budget: float):
        self.stage = stage
        self.measured = float(measured)
        self.budget = float(budget)
        super().__init__(f"stage {stage!r} measured error {measured:.6g} exceeds budget {budget:.6g}")


class ConfigError(CtxApproxError, ValueError):
    """A run configuration is missing or has an invalid field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field {field!r}: {message}")
