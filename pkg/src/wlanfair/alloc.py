"""Load-aware proportional-fair throughput allocation over per-station attempt probabilities.

The allocator maximises ``sum_s w_s * log(S_s)`` over ``tau`` in (0, 1)^N,
with ``S_s(tau)`` the model throughput, and then picks for every station
the minimum contention window whose backoff chain produces ``tau*``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, root
from scipy.special import expit, logit

from . import analytic
from .scenario import DurationClassing, NetworkScenario, classify_stations, station_durations

CRITERIA = ("dcf", "pf", "lpf", "mlpf")
FD_STEP = 1e-6
BARRIER_SCHEDULE = (1e-2, 1e-4, 0.0)
TAU_BOUNDS = (1e-7, 1 - 1e-7)


class AllocationError(RuntimeError):
    def __init__(self, message: str, tau=None, residual: float = math.nan):
        super().__init__(f"{message} (stationarity residual {residual:.3g})")
        self.tau = tau
        self.residual = residual


@dataclass(frozen=True)
class FairnessWeights:
    criterion: str
    weights: np.ndarray
    lambda_eff: np.ndarray
    lambda_max: float

    @property
    def c(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class AllocationResult:
    criterion: str
    tau: np.ndarray
    cw: np.ndarray
    cw_exact: np.ndarray
    throughput: np.ndarray
    aggregate: float
    utility: float
    jain: float
    stationarity_residual: float
    weights: FairnessWeights
    p_eq: np.ndarray
    b_idle: np.ndarray
    # False where no window reaches tau* (the station's load is too low)
    reachable: np.ndarray
    rates: np.ndarray

    @property
    def normalized(self) -> np.ndarray:
        return self.throughput / self.rates


def effective_lambdas(scenario: NetworkScenario) -> FairnessWeights:
    """Packet rates clamped to what each station's bit rate can carry."""
    lam = scenario.lambdas
    cap = scenario.rates / scenario.payload_bits
    eff = np.where(lam * scenario.payload_bits <= scenario.rates, lam, cap)
    return _normalised("mlpf", eff)


def _normalised(criterion: str, lam_eff: np.ndarray) -> FairnessWeights:
    lam_max = float(np.max(lam_eff))
    if not lam_max > 0:
        raise ValueError("all packet rates are zero: utility undefined")
    if math.isinf(lam_max):
        w = np.where(np.isinf(lam_eff), 1.0, 0.0)
    else:
        w = lam_eff / lam_max
    return FairnessWeights(criterion, w, lam_eff, lam_max)


def fairness_weights(scenario: NetworkScenario, criterion: str) -> FairnessWeights:
    criterion = criterion.lower()
    if criterion == "mlpf":
        return effective_lambdas(scenario)
    if criterion in ("lpf", "dcf"):
        return _normalised(criterion, scenario.lambdas)
    if criterion == "pf":
        n = len(scenario)
        return FairnessWeights("pf", np.ones(n), scenario.lambdas, float(np.max(scenario.lambdas)))
    raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")


def utility(throughputs, weights: FairnessWeights) -> float:
    s = np.asarray(throughputs, dtype=float)
    if np.any(s <= 0):
        return -math.inf
    return float(np.dot(weights.weights, np.log(s)))


def jain_index(values, capacities=None) -> float:
    """Jain's fairness index, of ``values / capacities`` when capacities are given."""
    x = np.asarray(values, dtype=float)
    if capacities is not None:
        x = x / np.asarray(capacities, dtype=float)
    if np.any(x < 0):
        raise ValueError("Jain index needs non-negative values")
    top = float(x.max()) if x.size else 0.0
    if top == 0:
        raise ValueError("Jain index undefined for an all-zero vector")
    x = x / top  # scale first so tiny values don't underflow when squared
    return float(np.sum(x) ** 2 / (len(x) * np.sum(x * x)))


def slot_gradient(taus, scenario: NetworkScenario, classing: DurationClassing | None = None) -> np.ndarray:
    """Central differences of T_av with respect to each tau_j."""
    classing = classing or classify_stations(scenario)
    taus = np.asarray(taus, dtype=float)
    g = np.empty(len(taus))
    for j in range(len(taus)):
        h = FD_STEP * min(taus[j], 1.0 - taus[j], 0.5)
        up, dn = taus.copy(), taus.copy()
        up[j] += h
        dn[j] -= h
        g[j] = (analytic.expected_slot(up, scenario, classing).t_av
                - analytic.expected_slot(dn, scenario, classing).t_av) / (2 * h)
    return g


def stationarity_components(taus, weights: FairnessWeights, scenario: NetworkScenario,
                            classing: DurationClassing | None = None) -> np.ndarray:
    """First-order optimality terms per station, each scaled by its own magnitude.

    Component j is (w_j/tau_j - (C - w_j)/(1 - tau_j) - C/T_av dT_av/dtau_j)
    divided by the sum of the absolute values of those three terms.
    """
    classing = classing or classify_stations(scenario)
    taus = np.asarray(taus, dtype=float)
    w = weights.weights
    c = weights.c
    t_av = analytic.expected_slot(taus, scenario, classing).t_av
    a = w / taus
    b = (c - w) / (1.0 - taus)
    r = c / t_av * slot_gradient(taus, scenario, classing)
    return (a - b - r) / (np.abs(a) + np.abs(b) + np.abs(r))


def stationarity_residual(taus, weights: FairnessWeights, scenario: NetworkScenario,
                          classing: DurationClassing | None = None) -> float:
    return float(np.max(np.abs(stationarity_components(taus, weights, scenario, classing))))


def invert_to_w0(tau_star: float, m: int, p_eq: float, b_idle: float) -> int:
    """Contention window, rounded and floored at 2, whose chain attempts with ``tau_star``."""
    return max(2, int(round(analytic.w0_from_tau(tau_star, m, p_eq, b_idle))))


# ---------------------------------------------------------------------------
# optimisation


def _objective(x, weights, scenario, classing, mu):
    tau = expit(x)
    per, _ = analytic.throughput(tau, scenario, classing)
    u = utility(per, weights)
    if not math.isfinite(u):
        return 1e300
    val = -u
    if mu > 0:
        slack = 1.0 - per / scenario.rates
        if np.any(slack <= 0):
            return 1e300
        val -= mu * float(np.sum(np.log(slack)))
    return val


def _fd_grad(f, x):
    g = np.empty_like(x)
    for j in range(len(x)):
        up, dn = x.copy(), x.copy()
        up[j] += FD_STEP
        dn[j] -= FD_STEP
        g[j] = (f(up) - f(dn)) / (2 * FD_STEP)
    return g


def _logit_gradient(x, weights, scenario, classing):
    # dU/dx_j = tau_j (1 - tau_j) dU/dtau_j, with dU/dtau_j the unscaled stationarity terms
    tau = expit(x)
    w = weights.weights
    c = weights.c
    t_av = analytic.expected_slot(tau, scenario, classing).t_av
    du = w / tau - (c - w) / (1.0 - tau) - c / t_av * slot_gradient(tau, scenario, classing)
    return tau * (1.0 - tau) * du


def start_points(scenario: NetworkScenario, weights: FairnessWeights,
                 dcf_tau: np.ndarray) -> list[np.ndarray]:
    """Plain-DCF equilibrium plus four deterministic spreads."""
    n = len(scenario)
    t_s, _ = station_durations(scenario)
    share = weights.weights / weights.c
    airtime = np.clip(0.5 * share * scenario.phy.slot * n / t_s * 10, 1e-4, 0.5)
    pts = [dcf_tau, airtime, np.full(n, 0.01), np.full(n, 0.05), np.clip(0.2 * weights.weights, 1e-4, 0.5)]
    return [np.clip(p, 1e-4, 0.9) for p in pts]


def maximise(scenario: NetworkScenario, weights: FairnessWeights,
             starts: list[np.ndarray]) -> tuple[np.ndarray, float]:
    """Best tau over the multi-start barrier runs, polished on the gradient condition."""
    classing = classify_stations(scenario)
    best_x, best_f = None, math.inf
    for t0 in starts:
        x = logit(t0)
        for mu in BARRIER_SCHEDULE:
            f = lambda z, mu=mu: _objective(z, weights, scenario, classing, mu)
            res = minimize(f, x, jac=lambda z, f=f: _fd_grad(f, z), method="BFGS",
                           options={"gtol": 1e-10, "maxiter": 2000})
            x = res.x
        fx = _objective(x, weights, scenario, classing, 0.0)
        if fx < best_f:
            best_x, best_f = x, fx

    sol = root(lambda z: _logit_gradient(z, weights, scenario, classing), best_x, method="hybr")
    if sol.success and np.all(np.isfinite(sol.x)):
        f_pol = _objective(sol.x, weights, scenario, classing, 0.0)
        if f_pol <= best_f + 1e-9 * abs(best_f):
            best_x, best_f = sol.x, f_pol
    tau = np.clip(expit(best_x), *TAU_BOUNDS)
    return tau, -best_f


def realise_windows(scenario: NetworkScenario, tau: np.ndarray, max_iter: int = 200,
                    tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray, dict]:
    """Windows (unrounded) making every station's chain attempt with ``tau``.

    The idle share depends on the window itself through the service time,
    so the inversion is iterated to a fixed point.
    """
    m = scenario.phy.m
    n = len(tau)
    cw = scenario.cw.astype(float)
    reachable = np.ones(n, dtype=bool)
    state = {}
    for _ in range(max_iter):
        state = analytic.traffic_state(tau, scenario, cw=cw)
        new = cw.copy()
        for s in range(n):
            try:
                new[s] = max(1.0, analytic.w0_from_tau(tau[s], m, state["p_eq"][s], state["b_idle"][s]))
                reachable[s] = True
            except ValueError:
                new[s] = 1.0
                reachable[s] = False
        done = np.max(np.abs(new - cw) / cw) < tol
        cw = new
        if done:
            break
    state = analytic.traffic_state(tau, scenario, cw=cw)
    return cw, reachable, state


def optimize(scenario: NetworkScenario, criterion: str = "mlpf") -> AllocationResult:
    criterion = criterion.lower()
    weights = fairness_weights(scenario, criterion)
    classing = classify_stations(scenario)
    dcf = analytic.solve_equilibrium(scenario)

    if criterion == "dcf":
        tau = dcf.tau
        cw_exact = scenario.cw
        cw = scenario.cw.astype(int)
        p_eq, b_idle = dcf.p_eq, dcf.b_idle
        reachable = np.ones(len(scenario), dtype=bool)
    else:
        if np.any(weights.weights <= 0):
            raise AllocationError(f"{criterion}: every station needs a positive weight")
        tau, _ = maximise(scenario, weights, start_points(scenario, weights, dcf.tau))
        cw_exact, reachable, state = realise_windows(scenario, tau)
        cw = np.maximum(2, np.rint(cw_exact)).astype(int)
        p_eq, b_idle = state["p_eq"], state["b_idle"]

    per, agg = analytic.throughput(tau, scenario, classing)
    res = AllocationResult(
        criterion=criterion, tau=tau, cw=cw, cw_exact=np.asarray(cw_exact, dtype=float),
        throughput=per, aggregate=agg, utility=utility(per, weights),
        jain=jain_index(per, scenario.rates),
        stationarity_residual=stationarity_residual(tau, weights, scenario, classing),
        weights=weights, p_eq=p_eq, b_idle=b_idle, reachable=reachable,
        rates=scenario.rates,
    )
    if criterion != "dcf" and res.stationarity_residual > 1e-4:
        raise AllocationError(f"{criterion}: optimiser did not reach a stationary point",
                              tau, res.stationarity_residual)
    return res
