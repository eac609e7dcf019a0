"""Discretization of continuous LTI models at a fixed sampling period."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .models import ContinuousLtiModel

#: Condition-number cutoff beyond which the continuous A matrix is treated
#: as non-invertible for the exact method.
CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class DiscreteLtiModel:
    """Discrete-time pair (A_d, B_d) at sampling period ``t_s``."""

    a_d: np.ndarray
    b_d: np.ndarray
    t_s: float
    method: str  # "euler" or "exact"
    state_labels: tuple[str, ...] = ()
    input_labels: tuple[str, ...] = ()

    def __post_init__(self):
        a = np.asarray(self.a_d, dtype=float)
        b = np.asarray(self.b_d, dtype=float)
        object.__setattr__(self, "a_d", a)
        object.__setattr__(self, "b_d", b)
        if self.t_s <= 0.0 or not np.isfinite(self.t_s):
            raise ValueError("t_s must be strictly positive")
        if a.ndim != 2 or a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
            raise ValueError(f"inconsistent dimensions: A_d {a.shape}, B_d {b.shape}")
        if self.method not in ("euler", "exact"):
            raise ValueError(f"unknown discretization method {self.method!r}")

    @property
    def n_states(self) -> int:
        return self.a_d.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.b_d.shape[1]


def discretize_euler(m: ContinuousLtiModel, t_s: float) -> DiscreteLtiModel:
    """First-order forward-Euler discretization: A_d = I + T_s A, B_d = T_s B."""
    if t_s <= 0.0 or not np.isfinite(t_s):
        raise ValueError("t_s must be strictly positive")
    a_d = np.eye(m.n_states) + t_s * m.a
    b_d = t_s * m.b
    return DiscreteLtiModel(a_d, b_d, t_s, "euler", m.state_labels, m.input_labels)


def matrix_exponential(a: np.ndarray) -> np.ndarray:
    """Matrix exponential e^A (scaling-and-squaring Pade via scipy)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("matrix entries must be finite")
    return scipy.linalg.expm(a)


def discretize_exact(m: ContinuousLtiModel, t_s: float) -> DiscreteLtiModel:
    """Zero-order-hold discretization A_d = e^{T_s A}, B_d = A^{-1}(A_d - I)B.

    Requires an invertible continuous A; near-singular matrices
    (condition number above ``CONDITION_LIMIT``) are rejected.
    """
    if t_s <= 0.0 or not np.isfinite(t_s):
        raise ValueError("t_s must be strictly positive")
    cond = np.linalg.cond(m.a)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise np.linalg.LinAlgError(
            f"continuous A is singular or near-singular (cond={cond:.3e}); "
            "use discretize_euler for this model"
        )
    a_d = matrix_exponential(t_s * m.a)
    b_d = np.linalg.solve(m.a, (a_d - np.eye(m.n_states)) @ m.b)
    return DiscreteLtiModel(a_d, b_d, t_s, "exact", m.state_labels, m.input_labels)
