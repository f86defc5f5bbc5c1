"""Saturated resilient observer: state estimation under sensor attacks.

Interior vehicles fuse all ``2L+1`` reconstructed absolute measurements of
their own state through innovation gains that are saturated at a threshold
``beta``: a compromised source can then shift the estimate per step by at
most ``beta / 2L`` no matter how large the injected signal is, while honest
sources keep their full correction weight.  Edge vehicles, whose window is
truncated, instead track either their own sensor (once proven attack-free)
or a chain surrogate built from the nearest dependable vehicle.

The same structure yields computable error bounds: ``rho`` for interior
vehicles, ``lambda`` for edge vehicles with a cleared own sensor, ``tau``
for the rest.  All three are sound envelopes of the true estimation error
and are what the detector consumes as decision thresholds.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, DetectionSets, Topology

DEFAULT_OMEGA_GRID = tuple(round(0.01 * k, 2) for k in range(1, 100))


class InfeasibleThresholdError(RuntimeError):
    """No saturation threshold satisfies the design inequalities."""


class InfeasibleBoundError(RuntimeError):
    """An asymptotic error bound diverges for the given parameters."""


@dataclass(frozen=True)
class ObserverParams:
    """Scalar problem data shared by every observer formula."""

    L: int
    b: int
    q: float
    eps: float
    mu: float
    norm_A: float
    varpi: float

    def __post_init__(self):
        hi = self.norm_A / (self.norm_A - 1.0)
        if not 1.0 < self.varpi < hi:
            raise ConfigError(f"varpi must lie in (1, {hi:.6g}), got {self.varpi}")

    @property
    def mu_bar(self) -> float:
        """Worst-case noise of a chained reconstruction: ``(L+1) * mu``."""
        return (self.L + 1) * self.mu

    @property
    def contraction(self) -> float:
        """Error decay factor of the edge-vehicle observer."""
        return (self.varpi - 1.0) * self.norm_A / self.varpi

    @property
    def beta_max(self) -> float:
        """Innovation level a saturation threshold can never exceed usefully:
        the worst honest innovation ``norm_A * q + eps + mu_bar``."""
        return self.norm_A * self.q + self.eps + self.mu_bar

    @classmethod
    def from_config(cls, config) -> "ObserverParams":
        from . import dynamics
        return cls(L=config.L, b=config.b, q=config.q, eps=config.epsilon,
                   mu=config.mu, norm_A=dynamics.plant_norm(config.T),
                   varpi=config.varpi)


@dataclass
class ObserverState:
    """Per-vehicle mutable observer memory."""

    x_hat: np.ndarray
    x_bar: np.ndarray
    rho: float
    lam: float
    tau: float
    alpha: float
    trusted_since: int | None = None


# --------------------------------------------------------------------------
# state updates
# --------------------------------------------------------------------------

def time_update(x_hat: np.ndarray, u: float, plant) -> np.ndarray:
    """One-step prediction ``A x_hat + (0, T u)``."""
    return np.array([x_hat[0] + plant.T * x_hat[1], x_hat[1] + plant.T * u])


def saturation_gain(innovation: np.ndarray, sensor: int, sets: DetectionSets,
                    beta: float) -> float:
    """Weight of one innovation block.

    Confirmed-attacked sources are cut off entirely, proven attack-free
    sources pass unsaturated, and unknown sources are clipped so their
    weighted innovation never exceeds ``beta`` in norm.  A zero innovation
    needs no clipping and keeps full weight.
    """
    if sensor in sets.attacked:
        return 0.0
    if sensor in sets.trusted:
        return 1.0
    nrm = math.hypot(innovation[0], innovation[1])
    if nrm <= beta:
        return 1.0
    return beta / nrm


def measurement_update_v1(x_bar: np.ndarray, stacked, sets: DetectionSets,
                          beta: float, L: int) -> tuple[np.ndarray, np.ndarray]:
    """Interior-vehicle correction: saturated average of all local innovations.

    Returns the new estimate and the gain applied to each source, ordered as
    ``stacked.labels``.
    """
    xb0 = float(x_bar[0])
    xb1 = float(x_bar[1])
    rows = stacked.blocks.tolist()
    attacked = sets.attacked
    trusted = sets.trusted
    gains = [0.0] * len(stacked.labels)
    corr0 = 0.0
    corr1 = 0.0
    for s, sensor in enumerate(stacked.labels):
        row = rows[s]
        e0 = row[0] - xb0
        e1 = row[1] - xb1
        if sensor in attacked:
            continue
        if sensor in trusted:
            k = 1.0
        else:
            nrm = math.hypot(e0, e1)
            k = 1.0 if nrm <= beta else beta / nrm
        gains[s] = k
        corr0 += k * e0
        corr1 += k * e1
    scale = 2.0 * L
    return np.array((xb0 + corr0 / scale, xb1 + corr1 / scale)), np.array(gains)


def measurement_update_v2(x_bar: np.ndarray, y_source: np.ndarray,
                          varpi: float) -> np.ndarray:
    """Edge-vehicle correction: fractional step toward the chosen source."""
    xb0 = float(x_bar[0])
    xb1 = float(x_bar[1])
    return np.array((xb0 + (float(y_source[0]) - xb0) / varpi,
                     xb1 + (float(y_source[1]) - xb1) / varpi))


def nearest_trusted(i: int, sets: DetectionSets, topo: Topology) -> int:
    """Source vehicle for an edge vehicle that cannot use its own sensor.

    Candidates are neighbours that either run the full interior observer or
    have had their own sensor proven attack-free; chain readings beyond the
    neighbourhood are not available, so farther vehicles are not considered.
    Ties break toward the smaller index.
    """
    nbrs = topo.neighbors[i]
    candidates = (nbrs & topo.v1) | (nbrs & sets.trusted)
    if not candidates:
        raise ConfigError(f"vehicle {i} has no dependable source to lean on")
    return min(candidates, key=lambda j: (abs(j - i), j))


# --------------------------------------------------------------------------
# error-bound recursions
# --------------------------------------------------------------------------

def _contraction_and_drive(s1: int, sa1: int, sa: int, kfloor: float,
                           beta_t: float, p: ObserverParams) -> tuple[float, float]:
    """Factor and offset of one interior-bound step, for local sensor counts.

    ``s1``/``sa1`` count trusted / confirmed-attacked sensors inside the
    ``2L+1`` window, ``sa`` counts all confirmed-attacked sensors, and
    ``kfloor`` lower-bounds the gain of an unknown attack-free source.

    When more than ``2L+1-b`` local sensors are already trusted (possible
    once detection completes and fewer than ``b`` attacks landed nearby) the
    total correction weight can exceed ``2L``, the update overshoots, and
    the nominal factor would go negative; the error then contracts by the
    worst absolute deviation of the weight sum from ``2L``, and the drive
    must count every local source as a noise contributor.  The second branch
    covers that regime soundly.
    """
    two_l = 2.0 * p.L
    window = 2 * p.L + 1
    lbar = window - p.b
    if s1 <= lbar:
        m = 1.0 - (s1 + (lbar - s1) * kfloor) / two_l
        drive = ((p.eps + p.mu_bar) * lbar + max(p.b - sa, 0) * beta_t) / two_l
    else:
        c_hi = window - sa1
        m = max(abs(1.0 - s1 / two_l), abs(1.0 - c_hi / two_l))
        unknown = max(0, min(p.b - sa, window - s1 - sa1))
        drive = m * p.eps + (c_hi / two_l) * p.mu_bar + unknown * beta_t / two_l
    return m, drive


def _local_counts(sets: DetectionSets, i: int, topo: Topology) -> tuple[int, int, int]:
    local = topo.local_group(i)
    return len(sets.trusted & local), len(sets.attacked & local), len(sets.attacked)


def rho_update(rho_prev: float, sets: DetectionSets, i: int, topo: Topology,
               beta_t: float, p: ObserverParams) -> float:
    """Advance the interior-vehicle error bound one step."""
    s1, sa1, sa = _local_counts(sets, i, topo)
    ceiling = p.norm_A * rho_prev + p.eps + p.mu_bar
    # a zero ceiling means every honest innovation is exactly zero, and a
    # zero innovation passes the saturation gate at full gain
    kbar = min(1.0, beta_t / ceiling) if ceiling > 0.0 else 1.0
    m, drive = _contraction_and_drive(s1, sa1, sa, kbar, beta_t, p)
    return m * p.norm_A * rho_prev + drive


def lambda_update(lam_prev: float, p: ObserverParams) -> float:
    """Advance the bound of an edge vehicle tracking its own cleared sensor."""
    return p.contraction * lam_prev + (p.eps * (p.varpi - 1.0) + p.mu) / p.varpi


def tau_update(tau_prev: float, dist: int, s_prev: float, p: ObserverParams) -> float:
    """Advance the bound of an edge vehicle leaning on a source ``dist`` hops
    away whose own broadcast error bound was ``s_prev`` last step."""
    drive = (p.eps * p.varpi + p.mu * dist + p.norm_A * s_prev) / p.varpi
    return p.contraction * tau_prev + drive


def realtime_bound(i: int, sets: DetectionSets, topo: Topology,
                   rho_i: float, lam_i: float, tau_i: float) -> float:
    """The currently-valid error bound of vehicle ``i``."""
    if i in topo.v1:
        return rho_i
    if i in sets.trusted:
        return lam_i
    return tau_i


# --------------------------------------------------------------------------
# saturation-threshold design
# --------------------------------------------------------------------------

def static_threshold_interval(omega: float, p: ObserverParams) -> tuple[float, float]:
    """Admissible static-threshold interval for contraction target ``omega``.

    A feasible threshold must be large enough that honest saturated gains
    keep the error contracting at rate ``omega`` (lower end) and small
    enough that the at-most-``b`` compromised sources cannot push the bound
    back above its previous value (upper end).
    """
    if not 0.0 < omega < 1.0:
        raise ConfigError(f"omega must lie in (0, 1), got {omega}")
    window = 2 * p.L + 1
    if p.b >= window:
        raise ConfigError(f"attack budget b={p.b} saturates the whole window of {window} sensors")
    two_l = 2.0 * p.L
    lbar = window - p.b
    beta0 = p.beta_max
    lower = (two_l / lbar) * ((omega + p.norm_A - 1.0) * beta0 / p.norm_A)
    upper = min(beta0, (two_l / p.b) * (omega * p.q - (p.eps + p.mu_bar) * lbar / two_l))
    return lower, upper


def feasibility_check(omega: float, p: ObserverParams) -> bool:
    """Sufficient condition for a non-empty threshold interval at ``omega``."""
    if not 0.0 < omega < 1.0:
        raise ConfigError(f"omega must lie in (0, 1), got {omega}")
    window = 2 * p.L + 1
    if p.b >= window:
        return False
    two_l = 2.0 * p.L
    lbar = window - p.b
    f1 = (p.eps + p.mu_bar) * lbar / two_l
    f2 = (omega * (p.eps + p.mu_bar) + (p.norm_A - 1.0) * p.beta_max) / p.norm_A
    den = omega * p.q - f1
    if den <= 0.0:
        return False
    ratio = (omega * p.q + f2) / den
    cond_budget = lbar / p.b > ratio > 0.0
    cond_rate = lbar / two_l > (omega + p.norm_A - 1.0) / p.norm_A
    return cond_budget and cond_rate


def feasible_omegas(p: ObserverParams, grid=DEFAULT_OMEGA_GRID) -> list:
    """Grid points with a non-empty, positive threshold interval."""
    if p.b >= 2 * p.L + 1:
        return []
    out = []
    for w in grid:
        lo, hi = static_threshold_interval(w, p)
        if 0.0 < lo < hi:
            out.append(w)
    return out


@dataclass(frozen=True)
class ThresholdConfig:
    """Resolved saturation-threshold policy.

    ``beta0`` is the static threshold itself, or the design value the
    adaptive rule scales: ``beta(t) = k0 * (norm_A * rho(t-1) + eps +
    mu_bar)`` with ``k0 = beta0 / beta_max``, so the adaptive threshold
    starts at ``beta0`` and tightens as the bound shrinks.
    """

    mode: str
    beta0: float
    k0: float
    omega: float | None = None
    interval: tuple | None = None

    def beta_at(self, rho_prev: float, p: ObserverParams) -> float:
        if self.mode == "static":
            return self.beta0
        return self.k0 * (p.norm_A * rho_prev + p.eps + p.mu_bar)


def design_threshold(p: ObserverParams, mode: str, beta: float | None = None,
                     omega: float | None = None) -> ThresholdConfig:
    """Resolve the threshold policy, searching the ``omega`` grid if needed.

    With no explicit ``beta`` the widest admissible interval on the grid is
    located and its midpoint chosen; if the grid holds no feasible point the
    design fails loudly rather than running an observer with no guarantees.
    """
    import logging
    log = logging.getLogger(__name__)
    if mode not in ("static", "adaptive"):
        raise ConfigError(f"unknown threshold mode {mode!r}")
    interval = None
    if beta is None:
        if omega is not None:
            lo, hi = static_threshold_interval(omega, p)
            if not 0.0 < lo < hi:
                raise InfeasibleThresholdError(
                    f"threshold interval empty at omega={omega}: ({lo:.6g}, {hi:.6g})")
            interval = (lo, hi)
        else:
            best = None
            for w in feasible_omegas(p):
                lo, hi = static_threshold_interval(w, p)
                if best is None or hi - lo > best[2] - best[1]:
                    best = (w, lo, hi)
            if best is None:
                raise InfeasibleThresholdError(
                    "no omega in (0,1) admits a saturation threshold for these parameters")
            omega, lo, hi = best
            interval = (lo, hi)
        beta = 0.5 * (interval[0] + interval[1])
    else:
        if beta >= p.beta_max:
            log.warning("threshold beta=%.6g is at or above the honest innovation "
                        "ceiling %.6g; saturation will never engage", beta, p.beta_max)
        if omega is not None:
            lo, hi = static_threshold_interval(omega, p)
            interval = (lo, hi)
            if not lo < beta < hi:
                log.warning("explicit beta=%.6g lies outside the designed interval "
                            "(%.6g, %.6g) at omega=%.3g", beta, lo, hi, omega)
    return ThresholdConfig(mode=mode, beta0=float(beta), k0=float(beta) / p.beta_max,
                           omega=omega, interval=interval)


# --------------------------------------------------------------------------
# asymptotic bounds
# --------------------------------------------------------------------------

def _edge_bound(a1: float, p: ObserverParams, sets: DetectionSets,
                topo: Topology) -> tuple[float, float]:
    den = p.varpi - (p.varpi - 1.0) * p.norm_A
    a2 = (p.eps * (p.varpi - 1.0) + p.mu) / den
    worst = 0.0
    for i in sorted(topo.v2):
        dist = abs(nearest_trusted(i, sets, topo) - i)
        worst = max(worst, (p.eps * p.varpi + p.mu * dist + p.norm_A * max(a1, a2)) / den)
    return a2, worst


def asymptotic_bounds_static(sets: DetectionSets, topo: Topology, beta: float,
                             p: ObserverParams) -> tuple[float, float, float]:
    """Steady-state error bounds under a static threshold, evaluated at the
    given (frozen) detection sets; each entry is the worst case over its
    vehicle class (interior, cleared edge, leaning edge)."""
    kstar = min(1.0, beta / p.beta_max)
    a1 = 0.0
    for i in sorted(topo.v1):
        s1, sa1, sa = _local_counts(sets, i, topo)
        m, drive = _contraction_and_drive(s1, sa1, sa, kstar, beta, p)
        den = 1.0 - m * p.norm_A
        if den <= 0.0:
            raise InfeasibleBoundError(
                f"interior bound diverges for vehicle {i}: contraction {m * p.norm_A:.6g} >= 1")
        a1 = max(a1, drive / den)
    a2, a3 = _edge_bound(a1, p, sets, topo)
    return a1, a2, a3


def asymptotic_bounds_adaptive(sets: DetectionSets, topo: Topology, beta0: float,
                               p: ObserverParams) -> tuple[float, float, float]:
    """Steady-state error bounds under the adaptive threshold.

    Substituting ``beta(t) = k0 * (norm_A * rho(t-1) + eps + mu_bar)`` into
    the interior recursion makes it affine in ``rho``, so its limit no
    longer carries the large initial-uncertainty term — the reason the
    adaptive bound is tighter than the static one.
    """
    k0 = beta0 / p.beta_max
    two_l = 2.0 * p.L
    window = 2 * p.L + 1
    lbar = window - p.b
    a1 = 0.0
    for i in sorted(topo.v1):
        s1, sa1, sa = _local_counts(sets, i, topo)
        if s1 <= lbar:
            bp = max(p.b - sa, 0)
            factor = 1.0 - (s1 + (lbar - s1) * k0) / two_l + bp * k0 / two_l
            offset = (lbar + bp * k0) * (p.eps + p.mu_bar) / two_l
        else:
            m, _ = _contraction_and_drive(s1, sa1, sa, k0, 0.0, p)
            c_hi = window - sa1
            bp = max(0, min(p.b - sa, window - s1 - sa1))
            factor = m + bp * k0 / two_l
            offset = (m * p.eps + (c_hi / two_l) * p.mu_bar
                      + (bp * k0 / two_l) * (p.eps + p.mu_bar))
        den = 1.0 - factor * p.norm_A
        if den <= 0.0:
            raise InfeasibleBoundError(
                f"interior bound diverges for vehicle {i}: contraction {factor * p.norm_A:.6g} >= 1")
        a1 = max(a1, offset / den)
    a2, a3 = _edge_bound(a1, p, sets, topo)
    return a1, a2, a3
