"""Markov-chain DCF model for heterogeneous, non-saturated stations.

Probabilities follow the per-station decoupling approximation: station ``s``
transmits in a virtual slot with probability ``tau[s]`` independently of the
others. Times are in microseconds, rates in bit/s, packet rates in packets/s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import DurationClassing, NetworkScenario, classify_stations, station_durations

DAMPING = 0.5
TOLERANCE = 1e-9
MAX_ITERATIONS = 10_000


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3g} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SlotTimeBreakdown:
    t_idle: float
    t_success: float
    t_collision: float
    t_error: float

    @property
    def t_av(self) -> float:
        return self.t_idle + self.t_collision + self.t_success + self.t_error


@dataclass(frozen=True)
class EquilibriumSolution:
    tau: np.ndarray
    p_col: np.ndarray
    p_eq: np.ndarray
    q: np.ndarray
    p_i0: np.ndarray
    b_idle: np.ndarray
    slot: SlotTimeBreakdown
    p_tr: float
    p_succ: np.ndarray
    throughput: np.ndarray
    aggregate: float
    iterations: int
    residual: float


def _backoff_sum(p_eq: float, m: int) -> float:
    # (1 - (2p)^m) / (1 - 2p) written as a finite geometric sum: no singularity at p = 1/2
    x = 2.0 * p_eq
    return sum(x ** k for k in range(m))


def tau_from_chain(w0: float, m: int, p_eq: float, b_idle: float) -> float:
    """Per-slot attempt probability of one station's backoff chain.

    Equivalent to 2(1-b)(1-2p) / ((W+1)(1-2p) + W p (1-(2p)^m)) after
    cancelling the common (1-2p) factor.
    """
    if not w0 >= 1 or m < 1 or not 0 <= p_eq < 1 or not 0 <= b_idle <= 1:
        raise ValueError(f"tau_from_chain domain error: w0={w0}, m={m}, p_eq={p_eq}, b_idle={b_idle}")
    return 2.0 * (1.0 - b_idle) / ((w0 + 1.0) + w0 * p_eq * _backoff_sum(p_eq, m))


def w0_from_tau(tau: float, m: int, p_eq: float, b_idle: float) -> float:
    """Unrounded contention window that makes ``tau_from_chain`` return ``tau``."""
    if not 0 < tau <= 1 or m < 1 or not 0 <= p_eq < 1 or not 0 <= b_idle <= 1:
        raise ValueError(f"w0_from_tau domain error: tau={tau}, p_eq={p_eq}, b_idle={b_idle}")
    if tau >= 2.0 * (1.0 - b_idle):
        raise ValueError(f"tau={tau:.4g} is unreachable: exceeds 2(1 - b_idle)={2 * (1 - b_idle):.4g}")
    return (2.0 * (1.0 - b_idle) / tau - 1.0) / (1.0 + p_eq * _backoff_sum(p_eq, m))


def p_transmit_any(taus) -> float:
    taus = np.asarray(taus, dtype=float)
    return float(1.0 - np.prod(1.0 - taus))


def _others_product(omt: np.ndarray) -> np.ndarray:
    """prod_{j != s} omt[j] for every s, exact even when some entries are zero."""
    n = len(omt)
    out = np.empty(n)
    for s in range(n):
        out[s] = np.prod(omt[:s]) * np.prod(omt[s + 1:])
    return out


def p_success_all(taus) -> np.ndarray:
    taus = np.asarray(taus, dtype=float)
    return taus * _others_product(1.0 - taus)


def p_success(taus, s: int) -> float:
    taus = np.asarray(taus, dtype=float)
    if not 0 <= s < len(taus):
        raise IndexError(f"station index {s} out of range")
    return float(p_success_all(taus)[s])


def class_tx_probs(taus, classing: DurationClassing, d: int) -> tuple[float, float, float]:
    """(p_lower, p_higher, p_same): someone in a slower / faster / the same class transmits."""
    classing.check_index(d)
    omt = 1.0 - np.asarray(taus, dtype=float)
    idle = [np.prod(omt[list(m)]) for m in classing.members]
    p_lower = 1.0 - float(np.prod(idle[:d]))
    p_higher = 1.0 - float(np.prod(idle[d + 1:]))
    p_same = 1.0 - float(idle[d])
    return p_lower, p_higher, p_same


def class_collision_prob(taus, classing: DurationClassing, d: int) -> tuple[float, float, float]:
    """(internal, external, total) probability of a collision whose slowest class is ``d``."""
    p_lower, p_higher, p_same = class_tx_probs(taus, classing, d)
    taus = np.asarray(taus, dtype=float)
    idx = list(classing.members[d])
    t = taus[idx]
    exactly_one = float(np.sum(t * _others_product(1.0 - t)))
    internal = (1.0 - p_higher) * (1.0 - p_lower) * (p_same - exactly_one)
    external = p_same * p_higher * (1.0 - p_lower)
    return internal, external, internal + external


def collision_probs_all(taus, classing: DurationClassing) -> np.ndarray:
    return np.array([class_collision_prob(taus, classing, d)[2] for d in range(classing.n_classes)])


def expected_slot(taus, scenario: NetworkScenario,
                  classing: DurationClassing | None = None) -> SlotTimeBreakdown:
    classing = classing or classify_stations(scenario)
    taus = np.asarray(taus, dtype=float)
    t_s, t_e = station_durations(scenario)
    pe = scenario.p_err
    ps = p_success_all(taus)
    p_tr = p_transmit_any(taus)
    pc = collision_probs_all(taus, classing)
    return SlotTimeBreakdown(
        t_idle=(1.0 - p_tr) * scenario.phy.slot,
        t_success=float(np.sum(ps * (1.0 - pe) * t_s)),
        t_collision=float(np.dot(pc, classing.collision_duration)),
        t_error=float(np.sum(ps * pe * t_e)),
    )


def slot_excluding(taus, scenario: NetworkScenario, classing: DurationClassing | None = None) -> np.ndarray:
    """Expected slot seen while station s is silent, for every s."""
    classing = classing or classify_stations(scenario)
    taus = np.asarray(taus, dtype=float)
    out = np.empty(len(taus))
    for s in range(len(taus)):
        t = taus.copy()
        t[s] = 0.0
        out[s] = expected_slot(t, scenario, classing).t_av
    return out


def traffic_probs(lam: float, t_av: float, t_av_excl: float) -> tuple[float, float]:
    """(q, p_i0): arrival within one average slot / within one slot the station sits out."""
    if lam < 0 or t_av <= 0 or t_av_excl <= 0:
        raise ValueError("traffic_probs needs lam >= 0 and positive slot times")
    if math.isinf(lam):
        return 1.0, 1.0
    return -math.expm1(-lam * t_av * 1e-6), -math.expm1(-lam * t_av_excl * 1e-6)


def _backoff_pgf(z: float, w: float) -> float:
    # E[z^U] for the backoff counter U uniform on [0, w-1]
    if z == 1.0:
        return 1.0
    return (1.0 - z ** w) / (w * (1.0 - z))


def service_empty_prob(z_slot: float, z_success: float, z_fail: float,
                       p_eq: float, w0: float, m: int) -> float:
    """Probability that no packet arrives while one head-of-line packet is served.

    ``z_slot`` is the no-arrival probability of a backoff slot (station
    silent), ``z_success`` / ``z_fail`` of the station's own successful /
    failed attempt. Retries are unlimited, the window doubling caps at ``m``.
    """
    total = 0.0
    reach = 1.0
    x = p_eq * z_fail
    for i in range(m):
        reach *= _backoff_pgf(z_slot, w0 * 2 ** i)
        total += reach
        reach *= x
    b_m = _backoff_pgf(z_slot, w0 * 2 ** m)
    total += reach * b_m / (1.0 - x * b_m)
    return (1.0 - p_eq) * z_success * total


def mean_service_slots(p_eq: float, w0: float, m: int) -> float:
    """Expected virtual slots, attempts included, to deliver one packet."""
    return 1.0 / ((1.0 - p_eq) * tau_from_chain(w0, m, p_eq, 0.0))


def idle_prob(q: float, p_i0: float, p_eq: float, w0: float = 32, m: int = 5) -> float:
    """Share of slots a station spends in the empty-queue idle state.

    Renewal cycle: a busy period of back-to-back services, each taking the
    mean number of backoff-chain slots, ends when a service finishes with an
    empty queue (probability 1 - q); the idle sojourn then lasts 1/p_i0 slots.
    """
    for name, v in (("q", q), ("p_i0", p_i0), ("p_eq", p_eq)):
        if not 0 <= v <= 1:
            raise ValueError(f"idle_prob domain error: {name}={v}")
    if q >= 1.0 or p_eq >= 1.0:
        return 0.0
    denom = (1.0 - q) + p_i0 * mean_service_slots(p_eq, w0, m)
    return (1.0 - q) / denom if denom > 0 else 1.0


def slot_expectation(taus, scenario: NetworkScenario, fn,
                     classing: DurationClassing | None = None) -> float:
    """E[fn(D)] over the virtual-slot duration D (idle, success, error, collision)."""
    classing = classing or classify_stations(scenario)
    taus = np.asarray(taus, dtype=float)
    t_s, t_e = station_durations(scenario)
    pe = scenario.p_err
    ps = p_success_all(taus)
    pc = collision_probs_all(taus, classing)
    return float(
        (1.0 - p_transmit_any(taus)) * fn(np.array(scenario.phy.slot))
        + np.sum(ps * ((1.0 - pe) * fn(t_s) + pe * fn(t_e)))
        + np.dot(pc, fn(np.asarray(classing.collision_duration)))
    )


def slot_no_arrival(taus, scenario: NetworkScenario, lam: float,
                    classing: DurationClassing | None = None) -> float:
    """E[exp(-lam * D)] over the virtual-slot duration D; ``lam`` in packets/s."""
    r = lam * 1e-6
    return slot_expectation(taus, scenario, lambda d: np.exp(-r * d), classing)


def attempt_no_arrival(taus, scenario: NetworkScenario, s: int, lam: float,
                       classing: DurationClassing | None = None) -> tuple[float, float]:
    """No-arrival probability during station s's own (successful, failed) attempt."""
    classing = classing or classify_stations(scenario)
    taus = np.asarray(taus, dtype=float)
    t_s, t_e = station_durations(scenario)
    r = lam * 1e-6
    pe = scenario.p_err[s]
    omt = 1.0 - taus
    omt[s] = 1.0
    p_clear = float(np.prod(omt))
    p_fail = (1.0 - p_clear) + p_clear * pe
    z_success = math.exp(-r * t_s[s])
    if p_fail <= 0.0:
        return z_success, z_success
    acc = p_clear * pe * math.exp(-r * t_e[s])
    own = classing.station_class[s]
    slower_silent = 1.0
    for d, members in enumerate(classing.members):
        silent_d = float(np.prod(omt[list(members)]))
        p_d = (1.0 - silent_d) * slower_silent
        acc += p_d * math.exp(-r * classing.collision_duration[min(d, own)])
        slower_silent *= silent_d
    return z_success, acc / p_fail


def _mean_slot_traffic(taus, scenario, classing, p_eq, cw):
    slot = expected_slot(taus, scenario, classing)
    excl = slot_excluding(taus, scenario, classing)
    n = len(taus)
    q = np.empty(n)
    p_i0 = np.empty(n)
    for s, st in enumerate(scenario.stations):
        q[s], p_i0[s] = traffic_probs(st.lambda_pkt_s, slot.t_av, excl[s])
    return q, p_i0


def _renewal_traffic(taus, scenario, classing, p_eq, cw):
    n = len(taus)
    m = scenario.phy.m
    q = np.empty(n)
    p_i0 = np.empty(n)
    for s, st in enumerate(scenario.stations):
        lam = st.lambda_pkt_s
        if math.isinf(lam):
            q[s], p_i0[s] = 1.0, 1.0
            continue
        if lam == 0:
            q[s], p_i0[s] = 0.0, 0.0
            continue
        r = lam * 1e-6
        silent = taus.copy()
        silent[s] = 0.0
        z_slot = slot_no_arrival(silent, scenario, lam, classing)
        z_ok, z_fail = attempt_no_arrival(taus, scenario, s, lam, classing)
        p_i0[s] = 1.0 - z_slot
        empty = service_empty_prob(z_slot, z_ok, z_fail, p_eq[s], cw[s], m)
        # the slot that ends an idle period may already carry a second arrival
        lone = slot_expectation(silent, scenario, lambda d: r * d * np.exp(-r * d), classing) / p_i0[s]
        first_empty = lone * empty
        services = 1.0 + (1.0 - first_empty) / empty if empty > 0 else math.inf
        q[s] = 1.0 - 1.0 / services
    return q, p_i0


TRAFFIC_MODELS = {"renewal": _renewal_traffic, "mean-slot": _mean_slot_traffic}


def throughput(taus, scenario: NetworkScenario,
               classing: DurationClassing | None = None) -> tuple[np.ndarray, float]:
    """Per-station payload throughput (bit/s) and the aggregate."""
    taus = np.asarray(taus, dtype=float)
    t_av = expected_slot(taus, scenario, classing).t_av
    per = p_success_all(taus) * (1.0 - scenario.p_err) * scenario.payload_bits / t_av * 1e6
    return per, float(per.sum())


def collision_per_station(taus) -> np.ndarray:
    taus = np.asarray(taus, dtype=float)
    return 1.0 - _others_product(1.0 - taus)


def traffic_state(taus, scenario: NetworkScenario, classing: DurationClassing | None = None,
                  cw=None, traffic: str = "renewal") -> dict:
    """Everything the backoff chain needs at a given operating point ``taus``."""
    classing = classing or classify_stations(scenario)
    taus = np.asarray(taus, dtype=float)
    cw = scenario.cw if cw is None else np.asarray(cw, dtype=float)
    pe = scenario.p_err
    p_col = collision_per_station(taus)
    p_eq = p_col + pe - pe * p_col
    q, p_i0 = TRAFFIC_MODELS[traffic](taus, scenario, classing, p_eq, cw)
    m = scenario.phy.m
    b = np.array([idle_prob(q[s], p_i0[s], p_eq[s], cw[s], m) for s in range(len(taus))])
    return {"p_col": p_col, "p_eq": p_eq, "q": q, "p_i0": p_i0, "b_idle": b,
            "slot": expected_slot(taus, scenario, classing)}


def solve_equilibrium(scenario: NetworkScenario, damping: float = DAMPING,
                      tol: float = TOLERANCE, max_iter: int = MAX_ITERATIONS,
                      traffic: str = "renewal") -> EquilibriumSolution:
    """Damped fixed point of the per-station chains coupled through the channel.

    ``traffic="mean-slot"`` uses the single-average-slot arrival probabilities of
    ``traffic_probs``; the default ``"renewal"`` averages over the slot and
    service-time distributions instead.
    """
    classing = classify_stations(scenario)
    cw = scenario.cw
    m = scenario.phy.m
    tau = 2.0 / (cw + 1.0)
    residual = math.inf
    for it in range(1, max_iter + 1):
        st = traffic_state(tau, scenario, classing, traffic=traffic)
        new = np.array([tau_from_chain(cw[s], m, st["p_eq"][s], st["b_idle"][s])
                        for s in range(len(tau))])
        residual = float(np.max(np.abs(new - tau)))
        if residual < tol:
            tau = new
            break
        tau = (1.0 - damping) * tau + damping * new
    else:
        raise ConvergenceError("equilibrium did not converge", residual, max_iter)

    st = traffic_state(tau, scenario, classing, traffic=traffic)
    per, agg = throughput(tau, scenario, classing)
    return EquilibriumSolution(
        tau=tau, p_col=st["p_col"], p_eq=st["p_eq"], q=st["q"], p_i0=st["p_i0"],
        b_idle=st["b_idle"], slot=st["slot"], p_tr=p_transmit_any(tau),
        p_succ=p_success_all(tau), throughput=per, aggregate=agg,
        iterations=it, residual=residual,
    )
