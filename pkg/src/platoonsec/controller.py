"""Distributed formation controller and closed-loop stability analysis.

Control runs over the chain graph (each vehicle listens to its immediate
predecessor and follower, the first one also to the virtual leader), which
is deliberately independent of the wider sensing topology.  The analysis
half of the module certifies the gain pair: a grounded-Laplacian eigenvalue
condition, the closed-loop spectral radius (computed two independent ways),
and a Lyapunov-based ISS gain that converts bounded estimation error into a
bounded formation tracking error.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dynamics import PlantMatrix, plant_norm

log = logging.getLogger(__name__)


def controller_neighbors(i: int, n: int) -> tuple:
    """Control neighbours of vehicle ``i`` on the chain; ``0`` is the leader."""
    if not 1 <= i <= n:
        raise ValueError(f"vehicle index {i} outside 1..{n}")
    if i == n:
        return (n - 1,) if n > 1 else (0,)
    return (i - 1, i + 1)


def control_input(x_own, neighbor_terms, g_s: float, g_v: float) -> float:
    """Acceleration command from the own state estimate and neighbour data.

    ``neighbor_terms`` is a sequence of ``(x_j, delta_ji)`` pairs where
    ``x_j`` is the neighbour's broadcast state and ``delta_ji`` the desired
    offset making ``x_j + delta_ji`` the spot this vehicle should occupy.
    """
    u = 0.0
    for x_j, delta in neighbor_terms:
        u += g_s * (x_j[0] - x_own[0] + delta[0])
        u += g_v * (x_j[1] - x_own[1] + delta[1])
    return u


def grounded_laplacian(n: int) -> np.ndarray:
    """Laplacian of the chain graph with the leader link grounding node 1."""
    if n < 1:
        raise ValueError("need at least one vehicle")
    lg = np.zeros((n, n))
    for k in range(n):
        lg[k, k] = 2.0 if k < n - 1 else 1.0
        if k > 0:
            lg[k, k - 1] = -1.0
            lg[k - 1, k] = -1.0
    return lg


@dataclass(frozen=True)
class GainReport:
    """Outcome of the gain-feasibility test with per-condition margins."""
    ok: bool
    lambda_max: float
    #: g_v - T*g_s, must be positive (velocity coupling dominates)
    velocity_margin: float
    #: T^2*g_s - 2*T*g_v + 4/lambda_max, must be positive (damping not excessive)
    rate_margin: float


def check_gains(g_s: float, g_v: float, T: float, n: int) -> GainReport:
    """Certify that the gain pair stabilises the ``n``-vehicle closed loop."""
    if n < 1:
        raise ValueError("need at least one vehicle")
    lam_max = float(np.max(np.linalg.eigvalsh(grounded_laplacian(n))))
    velocity_margin = g_v - T * g_s
    rate_margin = T * T * g_s - 2.0 * T * g_v + 4.0 / lam_max
    ok = g_s > 0.0 and velocity_margin > 0.0 and rate_margin > 0.0
    return GainReport(ok=ok, lambda_max=lam_max,
                      velocity_margin=velocity_margin, rate_margin=rate_margin)


def closed_loop_matrix(n: int, T: float, g_s: float, g_v: float) -> np.ndarray:
    """Error dynamics matrix ``kron(I, A) - kron(L_g, F)`` of the platoon."""
    plant = PlantMatrix.build(T)
    feedback = np.array([[0.0, 0.0], [T * g_s, T * g_v]])
    lg = grounded_laplacian(n)
    return np.kron(np.eye(n), plant.A) - np.kron(lg, feedback)


def spectral_radius(mat: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(mat))))


def block_spectrum(n: int, T: float, g_s: float, g_v: float) -> np.ndarray:
    """Closed-loop eigenvalues via the per-mode 2x2 blocks.

    Diagonalising the grounded Laplacian decouples the ``2n x 2n`` loop into
    ``n`` blocks ``[[1, T], [-l*T*g_s, 1 - l*T*g_v]]``, one per Laplacian
    eigenvalue ``l``; their union is the full spectrum.  Kept separate from
    :func:`spectral_radius` so the two routes can be cross-checked.
    """
    eigs = []
    for lam in np.linalg.eigvalsh(grounded_laplacian(n)):
        block = np.array([[1.0, T], [-lam * T * g_s, 1.0 - lam * T * g_v]])
        eigs.extend(np.linalg.eigvals(block))
    return np.array(sorted(eigs, key=lambda z: (abs(z), z.real, z.imag)))


def lyapunov_series(mat: np.ndarray, tol: float = 1e-12, max_terms: int = 200000) -> np.ndarray:
    """``sum_k (P^T)^k P^k`` summed directly; only converges for Schur ``P``."""
    if spectral_radius(mat) >= 1.0:
        raise ValueError("matrix is not Schur stable; series diverges")
    dim = mat.shape[0]
    total = np.eye(dim)
    term = np.eye(dim)
    for _ in range(max_terms):
        term = mat.T @ term @ mat
        total += term
        if np.linalg.norm(term) < tol:
            return total
    raise RuntimeError("Lyapunov series failed to converge within the term budget")


@dataclass(frozen=True)
class IssCertificate:
    """Lyapunov data bounding the steady effect of a bounded disturbance."""
    M: np.ndarray
    kappa: float
    spectral_radius: float

    def xi(self, sigma: float) -> float:
        """Ultimate tracking-error radius for disturbances of norm ``sigma``."""
        lam_max = float(np.max(np.linalg.eigvalsh(self.M)))
        lam_min = float(np.min(np.linalg.eigvalsh(self.M)))
        return float(np.sqrt(2.0 * self.kappa * sigma * sigma * lam_max / lam_min))


def iss_certificate(mat: np.ndarray, cross_check_tol: float = 1e-6) -> IssCertificate:
    """Solve ``P^T M P - M = -I`` and derive the ISS constant ``kappa``.

    The solver result is cross-checked against the direct series sum; a
    disagreement beyond ``cross_check_tol`` (relative) aborts, since both
    routes must describe the same closed loop.
    """
    radius = spectral_radius(mat)
    if radius >= 1.0:
        raise ValueError(
            f"closed loop is not Schur stable (spectral radius {radius:.6f} >= 1)")
    M = scipy.linalg.solve_discrete_lyapunov(mat.T, np.eye(mat.shape[0]))
    M_series = lyapunov_series(mat)
    gap = np.linalg.norm(M - M_series)
    if gap > cross_check_tol * max(1.0, np.linalg.norm(M)):
        raise RuntimeError(
            f"Lyapunov solver and series route disagree by {gap:.3e}; "
            "refusing to certify the closed loop")
    norm_M = float(np.linalg.norm(M, 2))
    norm_MP = float(np.linalg.norm(M @ mat, 2))
    kappa = norm_M + 2.0 * norm_MP * norm_MP
    return IssCertificate(M=M, kappa=kappa, spectral_radius=radius)


def estimation_disturbance(alpha_hat: float, n: int, T: float,
                           g_s: float, g_v: float, eps: float) -> float:
    """Worst-case loop disturbance caused by estimation error ``alpha_hat``.

    Feeding estimates instead of true states perturbs every control input by
    at most ``2*T*(g_s*(norm_A + 1) + 2*g_v)*alpha_hat`` per step (own
    estimate plus two neighbour predictions), on top of process noise.
    """
    norm_A = plant_norm(T)
    return (2.0 * np.sqrt(n) * T * alpha_hat * (g_s * (norm_A + 1.0) + 2.0 * g_v)
            + np.sqrt(n) * eps)


@dataclass(frozen=True)
class TrackingBound:
    """End-to-end formation guarantee: estimation radius plus ISS response."""
    alpha_hat: float
    sigma: float
    xi: float

    @property
    def total(self) -> float:
        return self.alpha_hat + self.xi


def tracking_bound(alpha_hat: float, n: int, T: float, g_s: float, g_v: float,
                   eps: float, cert: IssCertificate = None) -> TrackingBound:
    """Ultimate bound on ``||x_i - x_i*||`` under resilient estimation.

    ``alpha_hat`` is the worst asymptotic estimation radius across vehicles;
    the certificate is recomputed from the loop matrix when not supplied.
    """
    if cert is None:
        cert = iss_certificate(closed_loop_matrix(n, T, g_s, g_v))
    sigma = estimation_disturbance(alpha_hat, n, T, g_s, g_v, eps)
    return TrackingBound(alpha_hat=alpha_hat, sigma=sigma, xi=cert.xi(sigma))
