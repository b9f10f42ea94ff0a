"""LQR guidance policy designed on an (intentionally wrong) linear model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import PlantParams

RESIDUAL_TOL = 1e-8


class LqrDesignError(ValueError):
    """The pair (A, B) cannot be stabilised or the weights are invalid."""


class RiccatiNumericError(ArithmeticError):
    def __init__(self, msg: str, residual: float):
        self.residual = residual
        super().__init__(f"{msg} (residual {residual:.3e})")


@dataclass(frozen=True)
class StateSpace:
    A: np.ndarray
    B: np.ndarray


def state_space(p: PlantParams) -> StateSpace:
    A = np.array([[0.0, 1.0], [-p.k / p.m, -p.c / p.m]])
    B = np.array([[0.0], [1.0 / p.m]])
    return StateSpace(A, B)


def controllable(A, B) -> bool:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    blocks, M = [], B
    for _ in range(A.shape[0]):
        blocks.append(M)
        M = A @ M
    return np.linalg.matrix_rank(np.hstack(blocks)) == A.shape[0]


def care_residual(A, B, Q, R, P) -> float:
    A, B, Q, P = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (A, B, Q, P))
    B = B.reshape(A.shape[0], -1)
    Rinv = np.linalg.inv(np.atleast_2d(R))
    res = A.T @ P + P @ A - P @ B @ Rinv @ B.T @ P + Q
    return float(np.max(np.abs(res)))


def _lyapunov(Acl, Qcl) -> np.ndarray:
    # solve Acl^T X + X Acl + Qcl = 0 by vectorisation (tiny systems only)
    n = Acl.shape[0]
    eye = np.eye(n)
    lhs = np.kron(eye, Acl.T) + np.kron(Acl.T, eye)
    X = np.linalg.solve(lhs, -Qcl.reshape(-1, order="F")).reshape((n, n), order="F")
    return 0.5 * (X + X.T)


def kleinman_step(A, B, Q, R, K) -> np.ndarray:
    """One Newton step: the cost matrix of the stabilising gain ``K``.

    Solves (A - BK)'P + P(A - BK) + Q + K'RK = 0.  Iterating K <- R^-1 B'P
    from any stabilising gain converges monotonically to the CARE solution.
    """
    R = np.atleast_2d(R)
    return _lyapunov(A - B @ K, Q + K.T @ R @ K)


def solve_care(A, B, Q, R, newton_steps: int = 2) -> np.ndarray:
    """Stabilising solution of A'P + PA - P B R^-1 B' P + Q = 0.

    The stable invariant subspace of the Hamiltonian matrix gives P; its
    eigenvalues are taken in ascending order of real part.  A couple of
    Kleinman-Newton sweeps then polish the residual.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if np.any(np.linalg.eigvalsh(R) <= 0):
        raise LqrDesignError("R must be positive definite")
    if not np.allclose(Q, Q.T) or np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-12:
        raise LqrDesignError("Q must be symmetric positive semidefinite")
    if not controllable(A, B):
        raise LqrDesignError("(A, B) is not controllable")

    Rinv = np.linalg.inv(R)
    G = B @ Rinv @ B.T
    H = np.block([[A, -G], [-Q, -A.T]])
    evals, evecs = np.linalg.eig(H)
    order = np.argsort(evals.real, kind="stable")
    stable = order[:n]
    if np.any(evals[stable].real >= 0):
        raise RiccatiNumericError("Hamiltonian has eigenvalues on the imaginary axis",
                                  float("nan"))
    U = evecs[:, stable]
    U1, U2 = U[:n], U[n:]
    try:
        P = np.real(np.linalg.solve(U1.T, U2.T).T)
    except np.linalg.LinAlgError as exc:
        raise RiccatiNumericError("singular stable-subspace basis", float("nan")) from exc
    P = 0.5 * (P + P.T)

    for _ in range(newton_steps):
        K = Rinv @ B.T @ P
        if np.max(np.linalg.eigvals(A - B @ K).real) >= 0:
            break
        P_new = kleinman_step(A, B, Q, R, K)
        if care_residual(A, B, Q, R, P_new) > care_residual(A, B, Q, R, P):
            break
        P = P_new

    residual = care_residual(A, B, Q, R, P)
    scale = max(1.0, float(np.max(np.abs(P))), float(np.max(np.abs(Q))))
    if not residual < RESIDUAL_TOL * scale:
        raise RiccatiNumericError("CARE solution failed the residual check", residual)
    return P


def lqr_gain(P, B, R) -> np.ndarray:
    """K = R^-1 B' P as a row vector (1 x n for a single input)."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    B = np.asarray(B, dtype=float).reshape(P.shape[0], -1)
    return np.linalg.solve(np.atleast_2d(R), B.T @ P)


@dataclass(frozen=True)
class LqrPolicy:
    K: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: float
    assumed: PlantParams | None = None

    def closed_loop(self, ss: StateSpace) -> np.ndarray:
        return ss.A - ss.B @ self.K

    def provenance(self) -> str:
        lines = ["# LQR guidance policy (designed on the assumed model)"]
        if self.assumed is not None:
            a = self.assumed
            lines.append(f"assumed.m = {a.m!r}")
            lines.append(f"assumed.c = {a.c!r}")
            lines.append(f"assumed.k = {a.k!r}")
            lines.append(f"assumed.k3 = {a.k3!r}")
        lines.append(f"R = {self.R!r}")
        lines.append("Q = " + _fmt_matrix(self.Q))
        lines.append("P = " + _fmt_matrix(self.P))
        lines.append("K = " + _fmt_matrix(self.K))
        return "\n".join(lines) + "\n"


def _fmt_matrix(M) -> str:
    return "[" + "; ".join(" ".join(f"{v:.17g}" for v in row) for row in np.atleast_2d(M)) + "]"


def design_lqr(assumed: PlantParams, Q=None, R: float = 1e-3) -> LqrPolicy:
    ss = state_space(assumed)
    Q = np.eye(2) if Q is None else np.asarray(Q, dtype=float)
    P = solve_care(ss.A, ss.B, Q, R)
    K = lqr_gain(P, ss.B, R)
    if np.max(np.linalg.eigvals(ss.A - ss.B @ K).real) >= 0:
        raise RiccatiNumericError("closed loop is not Hurwitz", care_residual(ss.A, ss.B, Q, R, P))
    return LqrPolicy(K, P, Q, float(R), assumed)


def lqr_force(policy: LqrPolicy, x: float, v: float) -> float:
    K = policy.K
    return -(float(K[0, 0]) * x + float(K[0, 1]) * v)


# bounds used when the assumed model is re-drawn at random
RANDOM_ASSUMED_RANGES = {"m": (0.5, 3.0), "c": (-1.0, 1.0), "k": (50.0, 300.0)}


def random_assumed_plant(rng: np.random.Generator) -> PlantParams:
    lo_hi = RANDOM_ASSUMED_RANGES
    return PlantParams(m=float(rng.uniform(*lo_hi["m"])),
                       c=float(rng.uniform(*lo_hi["c"])),
                       k=float(rng.uniform(*lo_hi["k"])), k3=0.0)
