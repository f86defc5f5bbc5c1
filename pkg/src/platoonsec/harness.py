"""Deterministic closed-loop simulation, Monte Carlo aggregation, persistence.

One simulated step runs, in order: plant propagation under the previous
control, reference/formation propagation, sensing with attack injection, a
message-exchange snapshot, set fusion plus detection, the observer update,
the error-bound recursions, and finally the controller.  The detector runs
before the observer on purpose — the observer's gains and the edge
vehicles' source selection consume the *current* step's sets, while the
detection tests themselves only use previous-step bounds and predictions.

Every random draw comes from a counter-based generator keyed by
``(seed, run, t, vehicle, stream)``, so a run is reproducible bit for bit
regardless of execution order, and Monte Carlo runs are independent.
"""

import csv
import json
import logging
import math
import operator
import os
from dataclasses import dataclass

import numpy as np

from . import controller, detector, observer, sensing
from .core import (ConfigError, DetectionSets, Message, ScenarioConfig,
                   fuse_sets)
from .dynamics import advance_deltas, desired_state_chain, reference_step
from .rng import RunRandom

LOG = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """The scenario cannot be simulated with guarantees (infeasible design)."""


# --------------------------------------------------------------------------
# performance metrics
# --------------------------------------------------------------------------

def performance_phi(xs, x_hats, x_stars) -> float:
    """Mean over vehicles of estimation-error norm plus tracking-error norm."""
    if not len(xs) == len(x_hats) == len(x_stars):
        raise ValueError("state, estimate and target lists must have equal length")
    xs = np.asarray(xs, dtype=float)
    xh = np.asarray(x_hats, dtype=float)
    xt = np.asarray(x_stars, dtype=float)
    est = np.hypot(xh[:, 0] - xs[:, 0], xh[:, 1] - xs[:, 1])
    trk = np.hypot(xs[:, 0] - xt[:, 0], xs[:, 1] - xt[:, 1])
    return float((est + trk).sum()) / len(xs)


def platoon_phi(xs, x_stars) -> float:
    """Mean over vehicles of the tracking-error norm alone."""
    if len(xs) != len(x_stars):
        raise ValueError("state and target lists must have equal length")
    xs = np.asarray(xs, dtype=float)
    xt = np.asarray(x_stars, dtype=float)
    return float(np.hypot(xs[:, 0] - xt[:, 0], xs[:, 1] - xt[:, 1]).sum()) / len(xs)


def _phi_pair(xs, x_hats, x_stars) -> tuple:
    """Both performance metrics at once, sharing the tracking-error norms."""
    total = 0.0
    track = 0.0
    for (s, v), (hs, hv), (ts, tv) in zip(xs.tolist(), x_hats.tolist(),
                                          x_stars.tolist()):
        est_i = math.hypot(hs - s, hv - v)
        trk_i = math.hypot(s - ts, v - tv)
        total += est_i + trk_i
        track += trk_i
    n = len(xs)
    return total / n, track / n


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------

@dataclass(slots=True)
class StepTrace:
    """Complete state of the simulation after one step (treat as read-only)."""

    t: int
    x: np.ndarray        # (N, 2) true states
    x_star: np.ndarray   # (N, 2) desired formation states
    x_leader: np.ndarray  # (2,) reference state
    x_hat: np.ndarray    # (N, 2) estimates
    x_bar: np.ndarray    # (N, 2) predictions used this step
    u: np.ndarray        # (N,) control inputs computed this step
    rho: tuple           # (N,) interior bound, NaN for edge vehicles
    lam: tuple           # (N,) cleared-edge bound, NaN for interior
    tau: tuple           # (N,) leaning-edge bound, NaN for interior
    alpha: tuple         # (N,) active real-time error bound
    beta: tuple          # (N,) saturation threshold used, NaN for edge / t=0
    gains: np.ndarray    # (N, 2L+1) innovation gains, NaN where not applicable
    sets: tuple          # per-vehicle DetectionSets
    fired: tuple         # (N, 4) detector rule flags
    attack_norms: np.ndarray  # (N,) injected attack magnitude per sensor
    phi: float
    phi_platoon: float


def stack_traces(traces) -> dict:
    """Bundle a trace list into time-major arrays for analysis."""
    if not traces:
        return {}
    return {
        "t": np.array([tr.t for tr in traces]),
        "x": np.stack([tr.x for tr in traces]),
        "x_star": np.stack([tr.x_star for tr in traces]),
        "x_leader": np.stack([tr.x_leader for tr in traces]),
        "x_hat": np.stack([tr.x_hat for tr in traces]),
        "u": np.stack([tr.u for tr in traces]),
        "alpha": np.array([tr.alpha for tr in traces]),
        "rho": np.array([tr.rho for tr in traces]),
        "lam": np.array([tr.lam for tr in traces]),
        "tau": np.array([tr.tau for tr in traces]),
        "phi": np.array([tr.phi for tr in traces]),
        "phi_platoon": np.array([tr.phi_platoon for tr in traces]),
    }


# --------------------------------------------------------------------------
# single deterministic run
# --------------------------------------------------------------------------

def _validated_design(config: ScenarioConfig):
    """Threshold policy and gain certificate, or a structured failure."""
    params = observer.ObserverParams.from_config(config)
    try:
        thr = observer.design_threshold(params, config.threshold_mode,
                                        beta=config.beta, omega=config.omega)
    except (observer.InfeasibleThresholdError, ConfigError) as exc:
        raise SimulationError(f"threshold design failed: {exc}") from exc
    gains = controller.check_gains(config.g_s, config.g_v, config.T, config.N)
    if not gains.ok:
        raise SimulationError(
            "controller gains violate the stability condition: "
            f"velocity margin {gains.velocity_margin:.6g}, "
            f"rate margin {gains.rate_margin:.6g}")
    return params, thr, gains


def _control_all(n, x_star, x_leader, own_src, nb_src, g_s, g_v) -> np.ndarray:
    """Whole-platoon control law, term for term the per-vehicle rule.

    Vehicle ``i`` couples to its physical neighbours ``i-1`` (the virtual
    leader for ``i=1``) and ``i+1`` (absent for ``i=N``); each coupling adds
    a spring term on position and a damper term on velocity, offset by the
    desired formation gap.
    """
    stars = x_star.tolist() if isinstance(x_star, np.ndarray) else x_star
    own = own_src.tolist() if isinstance(own_src, np.ndarray) else own_src
    nb = nb_src.tolist() if isinstance(nb_src, np.ndarray) else nb_src
    lead = x_leader.tolist() if isinstance(x_leader, np.ndarray) else list(x_leader)
    u = [0.0] * n
    for k in range(n):
        star_s, star_v = stars[k]
        own_s, own_v = own[k]
        front = lead if k == 0 else nb[k - 1]
        front_star = lead if k == 0 else stars[k - 1]
        uk = g_s * (front[0] - own_s + (star_s - front_star[0]))
        uk += g_v * (front[1] - own_v + (star_v - front_star[1]))
        if k < n - 1:
            rear = nb[k + 1]
            rear_star = stars[k + 1]
            uk += g_s * (rear[0] - own_s + (star_s - rear_star[0]))
            uk += g_v * (rear[1] - own_v + (star_v - rear_star[1]))
        u[k] = uk
    return np.array(u)


def run_simulation(config: ScenarioConfig, *, seed: int | None = None,
                   run_index: int = 0) -> list:
    """Simulate one closed-loop run and return a trace row per step.

    ``seed`` overrides ``config.seed``; ``run_index`` separates Monte Carlo
    runs in the random stream.  Identical arguments give identical traces.
    """
    params, thr, _ = _validated_design(config)
    topo = config.topology()
    plant = config.plant()
    if config.horizon == 0:
        return []

    n = config.N
    T = config.T
    Lw = config.L
    width = 2 * Lw + 1
    vehicles = range(1, n + 1)
    interior = [i in topo.v1 for i in vehicles]
    nbr_lists = [sorted(topo.neighbors[i]) for i in vehicles]
    pwm = config.controller_mode == "pwm"
    g_s, g_v = config.g_s, config.g_v
    mu, eps, b = config.mu, config.epsilon, config.b
    norm_A = plant.norm_A
    varpi = config.varpi
    nan = math.nan
    has_attack = bool(config.attack.attacked)
    rnd = RunRandom(config.seed if seed is None else seed, run_index)

    x = np.asarray(config.x_init, dtype=float)
    x_hat = np.asarray(config.x_hat_init, dtype=float)
    x_leader = np.asarray(config.x0, dtype=float)
    deltas = np.asarray(config.delta_x, dtype=float)
    x_star = desired_state_chain(x_leader, deltas)

    sets = [DetectionSets.empty()] * n
    # bounds that never apply to a vehicle's class stay NaN in the trace
    rho = [params.q if flag else nan for flag in interior]
    lam = [nan if flag else params.q for flag in interior]
    tau = [nan if flag else params.q for flag in interior]
    alpha = [params.q] * n

    att_state = sensing.AttackState(config.attack)
    frame = sensing.measure(x, config.attack, mu, att_state, 0,
                            rnd.measurement(0) if mu else None,
                            rnd.attack(0) if has_attack else None)
    ctrl_src = frame.y_abs if pwm else x_hat
    u = _control_all(n, x_star, x_leader, ctrl_src, ctrl_src, g_s, g_v)

    phi0, phi0_platoon = _phi_pair(x, x_hat, x_star)
    traces = [StepTrace(
        t=0, x=x, x_star=x_star, x_leader=x_leader, x_hat=x_hat, x_bar=x_hat,
        u=u, rho=tuple(rho), lam=tuple(lam), tau=tuple(tau), alpha=tuple(alpha),
        beta=(nan,) * n, gains=np.full((n, width), np.nan), sets=tuple(sets),
        fired=((False,) * 4,) * n, attack_norms=frame.attack_norms,
        phi=phi0, phi_platoon=phi0_platoon)]

    # fusion and source-selection are pure functions of their input sets, so
    # their results are reused as long as the very same set objects recur
    fuse_in = [None] * n
    fuse_out = [None] * n
    near_in = [None] * n
    near_out = [0] * n
    nan_gains = np.full((n, width), np.nan)

    zero_noise = np.zeros((n, 2))
    for t in range(1, config.horizon + 1):
        d = sensing.sample_noise(rnd.process(t), eps, n) if eps else zero_noise
        x_new = np.empty_like(x)
        x_new[:, 0] = x[:, 0] + T * x[:, 1]
        x_new[:, 1] = x[:, 1] + T * u
        x_new += d
        x = x_new
        x_leader = reference_step(x_leader, plant)
        deltas = advance_deltas(deltas, plant)
        x_star = desired_state_chain(x_leader, deltas)

        frame = sensing.measure(x, config.attack, mu, att_state, t,
                                rnd.measurement(t) if mu else None,
                                rnd.attack(t) if has_attack else None)
        y_abs = frame.y_abs
        y_rel = frame.y_rel
        x_bar = np.empty_like(x_hat)
        x_bar[:, 0] = x_hat[:, 0] + T * x_hat[:, 1]
        x_bar[:, 1] = x_hat[:, 1] + T * u
        msgs = [Message(sender=i, t=t, y_abs=y_abs[i - 1],
                        y_rel=y_rel[i - 2] if i >= 2 else None,
                        x_bar=x_bar[i - 1], sets=sets[i - 1],
                        alpha=alpha[i - 1])
                for i in vehicles]

        new_sets = []
        flags = []
        for i in vehicles:
            k = i - 1
            own = sets[k]
            nb_sets = tuple(msgs[j - 1].sets for j in nbr_lists[k])
            cached = fuse_in[k]
            if (cached is not None and cached[0] is own
                    and all(map(operator.is_, cached[1], nb_sets))):
                fused = fuse_out[k]
            else:
                for j in nbr_lists[k]:
                    if msgs[j - 1].t != t:
                        raise SimulationError(
                            f"stale message from {j} consumed at step {t}")
                fused = fuse_sets(own, nb_sets)
                fuse_in[k] = (own, nb_sets)
                fuse_out[k] = fused
            bound_prev = rho[k] if interior[k] else tau[k]
            res = detector.detector_step(
                i, fused, y_rel[i - 2] if i >= 2 else None,
                y_abs[i - 2] if i >= 2 else None, y_abs[k],
                x_bar[k], bound_prev, n, b, mu, eps, norm_A)
            new_sets.append(res.sets)
            flags.append((res.pairwise, res.innovation, res.exhaustion,
                          res.completion))

        x_hat_new = np.empty_like(x_hat)
        gains_rows = nan_gains.copy()
        beta_row = [nan] * n
        alpha_new = [0.0] * n
        for i in vehicles:
            k = i - 1
            si = new_sets[k]
            if interior[k]:
                bt = thr.beta_at(rho[k], params)
                beta_row[k] = bt
                stacked = sensing.stack_measurements(frame, i, topo)
                x_hat_new[k], gains_rows[k] = observer.measurement_update_v1(
                    x_bar[k], stacked, si, bt, Lw)
                rho[k] = observer.rho_update(rho[k], si, i, topo, bt, params)
                alpha_new[k] = rho[k]
            else:
                if near_in[k] is si:
                    j = near_out[k]
                else:
                    j = observer.nearest_trusted(i, si, topo)
                    near_in[k] = si
                    near_out[k] = j
                if i in si.trusted:
                    src = y_abs[k]
                else:
                    src = sensing.estimate_based_measurement(
                        msgs[j - 1].x_bar, frame, i, j)
                x_hat_new[k] = observer.measurement_update_v2(x_bar[k], src, varpi)
                tau[k] = observer.tau_update(tau[k], abs(j - i),
                                             msgs[j - 1].alpha, params)
                if i in si.trusted:
                    lam[k] = observer.lambda_update(lam[k], params)
                    alpha_new[k] = lam[k]
                else:
                    lam[k] = tau[k]
                    alpha_new[k] = tau[k]

        sets = new_sets
        x_hat = x_hat_new
        alpha = alpha_new
        if pwm:
            u = _control_all(n, x_star, x_leader, y_abs, y_abs, g_s, g_v)
        else:
            u = _control_all(n, x_star, x_leader, x_hat, x_bar, g_s, g_v)

        phi_t, phi_t_platoon = _phi_pair(x, x_hat, x_star)
        traces.append(StepTrace(
            t=t, x=x, x_star=x_star, x_leader=x_leader, x_hat=x_hat, x_bar=x_bar,
            u=u, rho=tuple(rho), lam=tuple(lam), tau=tuple(tau),
            alpha=tuple(alpha), beta=tuple(beta_row), gains=gains_rows,
            sets=tuple(new_sets), fired=tuple(flags),
            attack_norms=frame.attack_norms,
            phi=phi_t, phi_platoon=phi_t_platoon))
    return traces


# --------------------------------------------------------------------------
# Monte Carlo
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MonteCarloSummary:
    """Per-step aggregates over independent runs, per the usual conventions:
    ``eta`` is the mean absolute estimation error per vehicle and component,
    ``zeta`` the mean state relative to the reference vehicle."""

    runs: int
    base_seed: int
    horizon: int
    n: int
    eta_pos: np.ndarray       # (H+1, N)
    eta_vel: np.ndarray       # (H+1, N)
    zeta_pos: np.ndarray      # (H+1, N)
    zeta_vel: np.ndarray      # (H+1, N)
    phi: np.ndarray           # (H+1,)
    phi_platoon: np.ndarray   # (H+1,)
    final_phi: np.ndarray     # (runs,)

    def to_json(self) -> dict:
        return {
            "runs": self.runs, "base_seed": self.base_seed,
            "horizon": self.horizon, "N": self.n,
            "phi": list(self.phi), "phi_platoon": list(self.phi_platoon),
            "final_phi": list(self.final_phi),
            "eta_pos": [list(r) for r in self.eta_pos],
            "eta_vel": [list(r) for r in self.eta_vel],
            "zeta_pos": [list(r) for r in self.zeta_pos],
            "zeta_vel": [list(r) for r in self.zeta_vel],
        }


def _run_metrics(traces) -> dict:
    data = stack_traces(traces)
    err = data["x_hat"] - data["x"]
    rel = data["x"] - data["x_leader"][:, None, :]
    return {
        "eta_pos": np.abs(err[:, :, 0]), "eta_vel": np.abs(err[:, :, 1]),
        "zeta_pos": rel[:, :, 0], "zeta_vel": rel[:, :, 1],
        "phi": data["phi"], "phi_platoon": data["phi_platoon"],
    }


def monte_carlo(config: ScenarioConfig, runs: int,
                base_seed: int | None = None) -> MonteCarloSummary:
    """Aggregate ``runs`` independent simulations; run ``k`` is seeded with
    ``base_seed + k`` so the ensemble is reproducible and order-independent."""
    if runs < 1:
        raise ValueError(f"need at least one run, got {runs}")
    base = config.seed if base_seed is None else base_seed
    per_run = []
    for k in range(runs):
        traces = run_simulation(config, seed=base + k, run_index=k)
        if traces:
            per_run.append(_run_metrics(traces))
    if config.horizon == 0:
        shape = (0, config.N)
        zero = np.zeros(shape)
        return MonteCarloSummary(runs=runs, base_seed=base, horizon=0, n=config.N,
                                 eta_pos=zero, eta_vel=zero.copy(),
                                 zeta_pos=zero.copy(), zeta_vel=zero.copy(),
                                 phi=np.zeros(0), phi_platoon=np.zeros(0),
                                 final_phi=np.zeros(runs))
    agg = {key: sum(m[key] for m in per_run) / runs for key in per_run[0]}
    return MonteCarloSummary(
        runs=runs, base_seed=base, horizon=config.horizon, n=config.N,
        eta_pos=agg["eta_pos"], eta_vel=agg["eta_vel"],
        zeta_pos=agg["zeta_pos"], zeta_vel=agg["zeta_vel"],
        phi=agg["phi"], phi_platoon=agg["phi_platoon"],
        final_phi=np.array([m["phi"][-1] for m in per_run]))


# --------------------------------------------------------------------------
# feasibility report and offline bound envelopes
# --------------------------------------------------------------------------

def feasibility_report(config: ScenarioConfig) -> dict:
    """Every design check in one JSON-ready document: threshold interval,
    gain margins, closed-loop spectrum, Lyapunov data, and the asymptotic
    estimation/tracking bounds evaluated with empty detection sets."""
    topo = config.topology()
    plant = config.plant()
    params = observer.ObserverParams.from_config(config)
    empty = DetectionSets.empty()

    report = {
        "plant": {"T": config.T, "norm_A": plant.norm_A, "varpi": config.varpi,
                  "edge_contraction": params.contraction, "mu_bar": params.mu_bar},
        "topology": {"N": config.N, "L": config.L,
                     "interior": sorted(topo.v1), "edge": sorted(topo.v2),
                     "diameter": topo.diameter()},
    }

    feasible_omegas = observer.feasible_omegas(params)
    try:
        thr = observer.design_threshold(params, config.threshold_mode,
                                        beta=config.beta, omega=config.omega)
        report["threshold"] = {
            "mode": thr.mode, "feasible": True, "beta0": thr.beta0, "k0": thr.k0,
            "omega": thr.omega,
            "interval": list(thr.interval) if thr.interval else None,
            "feasible_omega_count": len(feasible_omegas),
        }
    except (observer.InfeasibleThresholdError, ConfigError) as exc:
        thr = None
        report["threshold"] = {
            "mode": config.threshold_mode, "feasible": False, "error": str(exc),
            "feasible_omega_count": len(feasible_omegas),
        }

    g = controller.check_gains(config.g_s, config.g_v, config.T, config.N)
    report["gains"] = {"ok": g.ok, "lambda_max": g.lambda_max,
                       "velocity_margin": g.velocity_margin,
                       "rate_margin": g.rate_margin}

    P = controller.closed_loop_matrix(config.N, config.T, config.g_s, config.g_v)
    radius = controller.spectral_radius(P)
    block = controller.block_spectrum(config.N, config.T, config.g_s, config.g_v)
    full = np.array(sorted(np.linalg.eigvals(P), key=lambda z: (abs(z), z.real, z.imag)))
    report["closed_loop"] = {"spectral_radius": radius, "schur": radius < 1.0,
                             "spectrum_gap": float(np.max(np.abs(block - full)))}

    cert = None
    if radius < 1.0:
        cert = controller.iss_certificate(P)
        residual = np.linalg.norm(P.T @ cert.M @ P - cert.M + np.eye(2 * config.N))
        report["closed_loop"]["lyapunov_residual"] = float(residual)
        report["closed_loop"]["kappa"] = cert.kappa

    def _triple(fn, level):
        try:
            a1, a2, a3 = fn(empty, topo, level, params)
            return {"interior": a1, "edge_cleared": a2, "edge_leaning": a3}
        except observer.InfeasibleBoundError as exc:
            return {"error": str(exc)}

    if thr is not None:
        bounds = {"static": _triple(observer.asymptotic_bounds_static, thr.beta0),
                  "adaptive": _triple(observer.asymptotic_bounds_adaptive, thr.beta0)}
        report["estimation_bounds"] = bounds
        if cert is not None:
            tracking = {}
            for mode, entry in bounds.items():
                if "error" in entry:
                    tracking[mode] = {"error": entry["error"]}
                    continue
                tb = controller.tracking_bound(
                    max(entry.values()), config.N, config.T,
                    config.g_s, config.g_v, config.epsilon, cert)
                tracking[mode] = {"alpha_hat": tb.alpha_hat, "sigma": tb.sigma,
                                  "xi": tb.xi, "total": tb.total}
            report["tracking_bounds"] = tracking
    return report


def bound_envelopes(config: ScenarioConfig) -> list:
    """Offline worst-case bound trajectories with detection sets held empty.

    Returns one row per (t, vehicle): ``(t, i, rho, lam, tau, alpha)`` with
    NaN where a bound does not apply to the vehicle's class.
    """
    topo = config.topology()
    params = observer.ObserverParams.from_config(config)
    try:
        thr = observer.design_threshold(params, config.threshold_mode,
                                        beta=config.beta, omega=config.omega)
    except (observer.InfeasibleThresholdError, ConfigError) as exc:
        raise SimulationError(f"threshold design failed: {exc}") from exc
    empty = DetectionSets.empty()
    nan = float("nan")

    rho = {i: params.q for i in topo.v1}
    tau = {i: params.q for i in topo.v2}
    alpha = {i: params.q for i in topo.vehicles()}
    source = {i: observer.nearest_trusted(i, empty, topo) for i in topo.v2}

    rows = []
    for i in topo.vehicles():
        if i in topo.v1:
            rows.append((0, i, params.q, nan, nan, params.q))
        else:
            rows.append((0, i, nan, params.q, params.q, params.q))
    for t in range(1, config.horizon + 1):
        new_rho = {i: observer.rho_update(rho[i], empty, i, topo,
                                          thr.beta_at(rho[i], params), params)
                   for i in topo.v1}
        new_tau = {i: observer.tau_update(tau[i], abs(source[i] - i),
                                          alpha[source[i]], params)
                   for i in topo.v2}
        rho, tau = new_rho, new_tau
        alpha = {**rho, **tau}
        for i in topo.vehicles():
            if i in topo.v1:
                rows.append((t, i, rho[i], nan, nan, rho[i]))
            else:
                rows.append((t, i, nan, tau[i], tau[i], tau[i]))
    return rows


# --------------------------------------------------------------------------
# persistence (deterministic byte-stable formats)
# --------------------------------------------------------------------------

def _fmt(value) -> str:
    """Serialize one cell; floats use 17 significant digits (round-trip exact)."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, default=_json_default)
        fh.write("\n")


def trace_columns(L: int) -> list:
    gains = [f"gain_{s}" for s in range(1, 2 * L + 2)]
    return ["t", "i", "x_s", "x_v", "x_star_s", "x_star_v", "x_hat_s", "x_hat_v",
            "x_bar_s", "x_bar_v", "u", "rho", "lambda", "tau", "alpha", "beta",
            "attack_norm", "phi", "phi_platoon"] + gains


def write_trace_csv(path: str, traces, L: int) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_columns(L))
        for tr in traces:
            for i in range(1, len(tr.x) + 1):
                row = [tr.t, i,
                       tr.x[i - 1][0], tr.x[i - 1][1],
                       tr.x_star[i - 1][0], tr.x_star[i - 1][1],
                       tr.x_hat[i - 1][0], tr.x_hat[i - 1][1],
                       tr.x_bar[i - 1][0], tr.x_bar[i - 1][1],
                       tr.u[i - 1], tr.rho[i - 1], tr.lam[i - 1], tr.tau[i - 1],
                       tr.alpha[i - 1], tr.beta[i - 1], tr.attack_norms[i - 1],
                       tr.phi, tr.phi_platoon, *tr.gains[i - 1]]
                w.writerow([_fmt(v) for v in row])


def write_detection_csv(path: str, traces) -> None:
    cols = ["t", "i", "trusted", "attacked", "suspected",
            "pairwise", "innovation", "exhaustion", "completion"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for tr in traces:
            for i in range(1, len(tr.x) + 1):
                s = tr.sets[i - 1]
                w.writerow([str(tr.t), str(i),
                            "|".join(map(str, sorted(s.trusted))),
                            "|".join(map(str, sorted(s.attacked))),
                            "|".join(map(str, sorted(s.suspected))),
                            *(_fmt(f) for f in tr.fired[i - 1])])


def summarize_run(config: ScenarioConfig, traces) -> dict:
    """Scalar digest of one run for summary.json."""
    if not traces:
        return {"horizon": 0, "steps": 0}
    data = stack_traces(traces)
    err = np.linalg.norm(data["x_hat"] - data["x"], axis=2)
    violations = int(np.sum(err > data["alpha"] + 1e-9))
    true_attacked = frozenset(config.attack.attacked)
    trusted_goal = frozenset(range(1, config.N + 1)) - true_attacked
    first_full = None
    if true_attacked:
        for tr in traces:
            if all(s.attacked == true_attacked and s.trusted == trusted_goal
                   for s in tr.sets):
                first_full = tr.t
                break
    return {
        "horizon": config.horizon,
        "steps": len(traces),
        "final_phi": traces[-1].phi,
        "final_phi_platoon": traces[-1].phi_platoon,
        "max_estimation_error": float(np.max(err)),
        "bound_violations": violations,
        "first_full_detection": first_full,
        "final_sets": [s.sorted_lists() for s in traces[-1].sets],
    }


def write_run_dir(outdir: str, config: ScenarioConfig, traces) -> dict:
    """Persist one run: resolved scenario, feasibility report, both trace
    CSVs, and a scalar summary.  Returns the path of each artifact."""
    os.makedirs(outdir, exist_ok=True)
    paths = {
        "scenario": os.path.join(outdir, "scenario.json"),
        "feasibility": os.path.join(outdir, "feasibility.json"),
        "trace": os.path.join(outdir, "trace.csv"),
        "detection": os.path.join(outdir, "detection.csv"),
        "summary": os.path.join(outdir, "summary.json"),
    }
    write_json(paths["scenario"], config.to_json())
    write_json(paths["feasibility"], feasibility_report(config))
    write_trace_csv(paths["trace"], traces, config.L)
    write_detection_csv(paths["detection"], traces)
    write_json(paths["summary"], summarize_run(config, traces))
    return paths


def write_monte_carlo_dir(outdir: str, config: ScenarioConfig,
                          summary: MonteCarloSummary) -> dict:
    os.makedirs(outdir, exist_ok=True)
    paths = {
        "scenario": os.path.join(outdir, "scenario.json"),
        "feasibility": os.path.join(outdir, "feasibility.json"),
        "summary": os.path.join(outdir, "summary.json"),
        "metrics": os.path.join(outdir, "metrics.csv"),
    }
    write_json(paths["scenario"], config.to_json())
    write_json(paths["feasibility"], feasibility_report(config))
    write_json(paths["summary"], summary.to_json())
    with open(paths["metrics"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "i", "eta_pos", "eta_vel", "zeta_pos", "zeta_vel",
                    "phi", "phi_platoon"])
        for t in range(summary.phi.shape[0]):
            for i in range(1, summary.n + 1):
                w.writerow([str(t), str(i),
                            _fmt(summary.eta_pos[t][i - 1]),
                            _fmt(summary.eta_vel[t][i - 1]),
                            _fmt(summary.zeta_pos[t][i - 1]),
                            _fmt(summary.zeta_vel[t][i - 1]),
                            _fmt(summary.phi[t]), _fmt(summary.phi_platoon[t])])
    return paths
