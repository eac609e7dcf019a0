"""Kalman filter recursion with full-state measurements and noisy-input correction.

The measurement model is fixed to identity (every state channel is
measured directly), so the innovation covariance is simply R + P.  Input
measurements carry their own zero-mean noise; its effect on the state
prediction is folded into an effective process covariance
``Q_eff = B_d M B_d^T + Q`` once at construction time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import get_lapack_funcs

from .discretize import DiscreteLtiModel

_sysv, = get_lapack_funcs(("sysv",), (np.empty((1, 1), dtype=float),))

#: Tolerances for covariance validation.
SYMMETRY_TOL = 1e-10
EIGENVALUE_TOL = -1e-10


def _check_covariance(name: str, m: np.ndarray, dim: int | None = None) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    if dim is not None and m.shape[0] != dim:
        raise ValueError(f"{name} must be {dim}x{dim}, got {m.shape[0]}x{m.shape[0]}")
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > SYMMETRY_TOL * scale:
        raise ValueError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(m).min() < EIGENVALUE_TOL * scale:
        raise ValueError(f"{name} is not positive semidefinite")
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class NoiseSpec:
    """Process (q), measurement (r) and input-measurement (m) covariances."""

    q: np.ndarray
    r: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        q = _check_covariance("q", self.q)
        r = _check_covariance("r", self.r, dim=q.shape[0])
        m = _check_covariance("m", self.m)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "m", m)

    @classmethod
    def from_std(cls, q_std, r_std, m_std) -> "NoiseSpec":
        """Diagonal covariances from per-channel standard deviations."""
        return cls(
            q=np.diag(np.square(np.asarray(q_std, dtype=float))),
            r=np.diag(np.square(np.asarray(r_std, dtype=float))),
            m=np.diag(np.square(np.asarray(m_std, dtype=float))),
        )


def effective_process_noise(q: np.ndarray, b_d: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Process covariance corrected for input-measurement noise: B_d M B_d^T + Q."""
    q = np.asarray(q, dtype=float)
    b_d = np.asarray(b_d, dtype=float)
    m = np.asarray(m, dtype=float)
    if q.shape != (b_d.shape[0], b_d.shape[0]):
        raise ValueError(f"q shape {q.shape} does not match state dimension {b_d.shape[0]}")
    if m.shape != (b_d.shape[1], b_d.shape[1]):
        raise ValueError(f"m shape {m.shape} does not match input dimension {b_d.shape[1]}")
    out = b_d @ m @ b_d.T + q
    return 0.5 * (out + out.T)


class KalmanEstimator:
    """Stateful predict/update recursion over a discrete LTI model.

    One instance is owned by exactly one caller at a time; distinct
    instances are fully independent and may run in parallel.
    """

    def __init__(
        self,
        model: DiscreteLtiModel,
        noise: NoiseSpec | None = None,
        *,
        q_eff: np.ndarray | None = None,
        r: np.ndarray | None = None,
        x0: np.ndarray | None = None,
        p0: np.ndarray | None = None,
    ):
        self.model = model
        n = model.n_states
        if noise is not None:
            if q_eff is not None or r is not None:
                raise ValueError("pass either a NoiseSpec or explicit q_eff/r, not both")
            q_eff = effective_process_noise(noise.q, model.b_d, noise.m)
            r = noise.r
        if q_eff is None or r is None:
            raise ValueError("q_eff and r are required when no NoiseSpec is given")
        self.q_eff = _check_covariance("q_eff", q_eff, dim=n)
        self.r = _check_covariance("r", r, dim=n)
        self.x_hat = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
        if self.x_hat.shape != (n,):
            raise ValueError(f"x0 must have shape ({n},)")
        p0 = self.r.copy() if p0 is None else p0
        self.p = _check_covariance("p0", p0, dim=n)
        self.innovation: np.ndarray | None = None
        self.innovation_cov: np.ndarray | None = None
        self.nis: float | None = None
        self._a_d = model.a_d
        self._b_d = model.b_d
        self._eye = np.eye(n)

    @property
    def n_states(self) -> int:
        return self.model.n_states

    def predict(self, u: np.ndarray) -> None:
        """Propagate estimate and covariance one step using input sample ``u``."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.model.n_inputs,):
            raise ValueError(
                f"input must have shape ({self.model.n_inputs},), got {u.shape}"
            )
        self.x_hat = self._a_d @ self.x_hat + self._b_d @ u
        p = self._a_d @ self.p @ self._a_d.T + self.q_eff
        self.p = 0.5 * (p + p.T)

    def update(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Fold in a full-state measurement; returns (innovation, post-fit residual).

        The covariance is updated in Joseph form and re-symmetrized.  The
        innovation covariance R + P is inverted through a symmetric LDL^T
        factorization, rejecting matrices that are indefinite or
        numerically singular.
        """
        z = np.asarray(z, dtype=float)
        n = self.model.n_states
        if z.shape != (n,):
            raise ValueError(f"measurement must have shape ({n},), got {z.shape}")
        p_prior = self.p
        s = self.r + p_prior
        innovation = z - self.x_hat
        rhs = np.empty((n, n + 1))
        rhs[:, :n] = p_prior
        rhs[:, n] = innovation
        factor, ipiv, sol, info = _sysv(s, rhs, lower=1)
        if info != 0:
            raise np.linalg.LinAlgError(
                f"innovation covariance is singular (sysv info={info})"
            )
        diag = np.diagonal(factor)
        if (ipiv <= 0).any() or (diag <= 0.0).any():
            raise np.linalg.LinAlgError(
                "innovation covariance is not positive definite; "
                "check that R is PSD and P has not collapsed"
            )
        # the pivot spread lower-bounds the condition number of S
        if diag.max() > 1e12 * diag.min():
            raise np.linalg.LinAlgError(
                "innovation covariance is numerically singular (condition number > 1e12)"
            )
        k = sol[:, :n].T
        self.x_hat = self.x_hat + k @ innovation
        i_k = self._eye - k
        p = (i_k @ p_prior) @ i_k.T + (k @ self.r) @ k.T
        self.p = 0.5 * (p + p.T)
        self.nis = float(innovation @ sol[:, n])
        self.innovation = innovation
        self.innovation_cov = s
        return innovation, z - self.x_hat

    def step(self, u: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Predict with ``u`` then update with ``z``."""
        self.predict(u)
        return self.update(z)


def innovation_consistency(
    innovations: np.ndarray, innovation_covariances: np.ndarray
) -> float:
    """Mean normalized innovation squared over a window.

    For a consistent filter the statistic is close to the state dimension;
    at least ~30 samples are needed for it to be meaningful.
    """
    innovations = np.asarray(innovations, dtype=float)
    covariances = np.asarray(innovation_covariances, dtype=float)
    if innovations.size == 0:
        raise ValueError("empty innovation history")
    if innovations.ndim != 2 or covariances.shape != innovations.shape + innovations.shape[-1:]:
        raise ValueError(
            f"expected (N, n) innovations with (N, n, n) covariances, "
            f"got {innovations.shape} and {covariances.shape}"
        )
    solved = np.linalg.solve(covariances, innovations[..., None])[..., 0]
    return float(np.mean(np.sum(innovations * solved, axis=1)))


def steady_state_covariance(
    a_d: np.ndarray,
    q_eff: np.ndarray,
    r: np.ndarray,
    tol: float = 1e-13,
    max_iter: int = 1_000_000,
) -> np.ndarray:
    """Posterior covariance fixed point of the predict/update recursion."""
    a_d = np.asarray(a_d, dtype=float)
    n = a_d.shape[0]
    eye = np.eye(n)
    p = np.asarray(r, dtype=float).copy()
    for _ in range(max_iter):
        p_prior = a_d @ p @ a_d.T + q_eff
        s = r + p_prior
        k = np.linalg.solve(s, p_prior).T
        i_k = eye - k
        p_next = (i_k @ p_prior) @ i_k.T + (k @ r) @ k.T
        p_next = 0.5 * (p_next + p_next.T)
        if np.abs(p_next - p).max() <= tol * max(1.0, np.abs(p_next).max()):
            return p_next
        p = p_next
    raise RuntimeError("covariance iteration did not converge")
