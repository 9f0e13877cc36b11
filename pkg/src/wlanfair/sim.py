"""Slot-synchronous CSMA/CA simulator for heterogeneous stations.

Contention follows the DCF basic access scheme: every backlogged station
decrements its counter once per virtual slot (an idle slot or a busy
period it did not take part in), transmits when the counter is zero, and
binary-exponentially widens its window on failure up to stage ``m``.
Retries are unlimited. Each station holds one head-of-line packet plus a
one-packet queue; arrivals to a full queue are dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .scenario import NetworkScenario, classify_stations, station_durations

WARMUP_FRACTION = 0.05
_CHUNK = 4096


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimOutcome:
    station_ids: tuple[str, ...]
    delivered_bits: np.ndarray
    throughput: np.ndarray
    successes: np.ndarray
    collisions: np.ndarray
    errors: np.ndarray
    drops: np.ndarray
    arrivals: np.ndarray
    attempts: np.ndarray
    in_system_start: np.ndarray
    in_system_end: np.ndarray
    backlogged_slots: np.ndarray
    refills: np.ndarray
    measured_time_s: float
    simulated_time_s: float
    busy_fraction: float
    slots: int
    events: int
    seed: int

    @property
    def aggregate(self) -> float:
        return float(self.throughput.sum())

    @property
    def busy_share(self) -> np.ndarray:
        """Share of virtual slots a station holds a head-of-line packet (1 - b_I)."""
        return self.backlogged_slots / max(self.slots, 1)

    @property
    def tau(self) -> np.ndarray:
        """Attempts per virtual slot inside the measurement window."""
        return self.attempts / max(self.slots, 1)


class _Stream:
    """Chunked draws from one numpy generator; keeps the per-draw cost low."""

    __slots__ = ("_rng", "_kind", "_scale", "_buf", "_pos")

    def __init__(self, rng: np.random.Generator, kind: str, scale: float = 1.0):
        self._rng = rng
        self._kind = kind
        self._scale = scale
        self._buf: list[float] = []
        self._pos = 0

    def next(self) -> float:
        if self._pos >= len(self._buf):
            if self._kind == "exp":
                self._buf = self._rng.exponential(self._scale, _CHUNK).tolist()
            else:
                self._buf = self._rng.random(_CHUNK).tolist()
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return v


def station_streams(seed: int, index: int) -> tuple[np.random.Generator, ...]:
    """(arrivals, backoff, channel errors) generators for station ``index``."""
    return tuple(np.random.default_rng([seed, index, k]) for k in range(3))


def run(scenario: NetworkScenario, cw_overrides: Sequence[int] | None = None,
        duration_s: float = 100.0, seed: int = 0, trace: IO[str] | None = None,
        warmup_fraction: float = WARMUP_FRACTION) -> SimOutcome:
    if not duration_s > 0:
        raise SimulationError("duration must be positive")
    if len(scenario) == 0:
        raise SimulationError("empty scenario")
    n = len(scenario)
    cw = list(scenario.cw.astype(int)) if cw_overrides is None else [int(w) for w in cw_overrides]
    if len(cw) != n or min(cw) < 1:
        raise SimulationError("cw_overrides needs one positive value per station")

    phy = scenario.phy
    m = phy.m
    sigma = phy.slot
    t_s, t_e = (a.tolist() for a in station_durations(scenario))
    classing = classify_stations(scenario)
    t_coll = [classing.collision_duration[classing.station_class[i]] for i in range(n)]
    p_err = scenario.p_err.tolist()
    bits = scenario.payload_bits.tolist()
    ids = scenario.ids

    t_end = duration_s * 1e6
    t_warm = warmup_fraction * t_end

    arrival_streams, backoff_streams, error_streams = [], [], []
    next_arrival = []
    for i, st in enumerate(scenario.stations):
        ra, rb, re = station_streams(seed, i)
        lam = st.lambda_pkt_s
        if lam > 0 and not math.isinf(lam):
            a = _Stream(ra, "exp", 1e6 / lam)
            next_arrival.append(a.next())
        else:
            a = None
            # zero load never arrives; infinite load keeps the queue full
            next_arrival.append(math.inf if lam == 0 else 0.0)
        arrival_streams.append(a)
        backoff_streams.append(_Stream(rb, "uni"))
        error_streams.append(_Stream(re, "uni"))
    saturated = [math.isinf(s.lambda_pkt_s) for s in scenario.stations]

    hol = [False] * n
    queued = [0] * n
    stage = [0] * n
    counter = [0] * n

    arrivals = [0] * n
    drops = [0] * n
    succ = [0] * n
    coll = [0] * n
    errs = [0] * n
    attempts = [0] * n
    backlogged = [0] * n
    refills = [0] * n
    pre_in = [0] * n    # accepted before warm-up
    pre_out = [0] * n   # delivered before warm-up
    slots = 0
    busy = 0.0
    events = 0

    # events of one step can be discovered out of time order; flush them sorted
    pending: list[tuple[float, int, str]] = []

    def emit(t, i, ev):
        if trace is not None:
            pending.append((t, len(pending), f"{t:.3f},{ids[i]},{ev}\n"))

    def flush():
        if pending:
            pending.sort()
            trace.writelines(line for _, _, line in pending)
            pending.clear()

    def draw(i):
        w = cw[i] << stage[i]
        return int(backoff_streams[i].next() * w)

    def take_arrivals(i, now):
        # Poisson arrivals with time <= now, in order; returns nothing
        a_stream = arrival_streams[i]
        ta = next_arrival[i]
        while ta <= now:
            counted = ta >= t_warm
            if counted:
                arrivals[i] += 1
            if not hol[i]:
                hol[i] = True
                stage[i] = 0
                counter[i] = draw(i)
                accepted = True
            elif queued[i] == 0:
                queued[i] = 1
                accepted = True
            else:
                accepted = False
                if counted:
                    drops[i] += 1
                    emit(ta, i, "DROP")
            if accepted:
                if not counted:
                    pre_in[i] += 1
                emit(ta, i, "ARRIVAL")
            ta += a_stream.next()
        next_arrival[i] = ta

    for i in range(n):
        if saturated[i]:
            hol[i] = True
            queued[i] = 1
            counter[i] = draw(i)

    t = 0.0
    rng_n = range(n)
    while t < t_end:
        flush()
        for i in rng_n:
            if next_arrival[i] <= t and not saturated[i]:
                take_arrivals(i, t)

        k = math.inf
        for i in rng_n:
            if hol[i]:
                if counter[i] < k:
                    k = counter[i]
            elif next_arrival[i] < math.inf:
                # becomes backlogged at the first boundary after its arrival
                wait = math.ceil((next_arrival[i] - t) / sigma)
                if wait < k:
                    k = wait
        if k == math.inf:
            t = t_end
            break
        if k > 0:
            k = int(min(k, math.ceil((t_end - t) / sigma)))
            if t >= t_warm:
                w = k
            elif t + k * sigma > t_warm:
                w = int(math.ceil((t + k * sigma - t_warm) / sigma))
            else:
                w = 0
            slots += w
            for i in rng_n:
                if hol[i]:
                    counter[i] -= k
                    backlogged[i] += w
            t += k * sigma
            continue

        tx = [i for i in rng_n if hol[i] and counter[i] == 0]
        events += 1
        in_window = t >= t_warm
        if len(tx) == 1:
            s = tx[0]
            failed = p_err[s] > 0 and error_streams[s].next() < p_err[s]
            dur = t_e[s] if failed else t_s[s]
        else:
            failed = True
            dur = max(t_coll[i] for i in tx)
        t_done = t + dur
        if t_done > t_end:
            # unfinished at the horizon: the frame stays in the system
            t = t_end
            break
        for i in rng_n:
            if hol[i] and counter[i] > 0:
                counter[i] -= 1
        if in_window:
            slots += 1
            busy += dur
            for i in rng_n:
                if hol[i]:
                    backlogged[i] += 1
            for i in tx:
                attempts[i] += 1
        # arrivals during the busy period join the queue before the outcome frees the HOL slot
        for i in rng_n:
            if next_arrival[i] <= t_done and not saturated[i]:
                take_arrivals(i, t_done)
        counted = t_done >= t_warm
        for i in tx:
            if failed:
                if counted:
                    if len(tx) > 1:
                        coll[i] += 1
                    else:
                        errs[i] += 1
                emit(t_done, i, "COLLISION" if len(tx) > 1 else "TX_ERR")
                if stage[i] < m:
                    stage[i] += 1
                counter[i] = draw(i)
                continue
            if counted:
                succ[i] += 1
            elif t_done < t_warm:
                pre_out[i] += 1
            emit(t_done, i, "TX_OK")
            stage[i] = 0
            if saturated[i]:
                counter[i] = draw(i)
            elif queued[i]:
                queued[i] = 0
                counter[i] = draw(i)
                if counted:
                    refills[i] += 1
            else:
                hol[i] = False
        t = t_done

    for i in rng_n:
        if not saturated[i]:
            take_arrivals(i, t_end)
    flush()

    in_end = [int(hol[i]) + queued[i] for i in rng_n]
    in_start = [pre_in[i] - pre_out[i] for i in rng_n]
    window_s = (t_end - t_warm) * 1e-6
    delivered = np.array(succ, dtype=float) * np.array(bits)
    return SimOutcome(
        station_ids=tuple(ids),
        delivered_bits=delivered,
        throughput=delivered / window_s,
        successes=np.array(succ),
        collisions=np.array(coll),
        errors=np.array(errs),
        drops=np.array(drops),
        arrivals=np.array(arrivals),
        attempts=np.array(attempts),
        in_system_start=np.array(in_start),
        in_system_end=np.array(in_end),
        backlogged_slots=np.array(backlogged),
        refills=np.array(refills),
        measured_time_s=window_s,
        simulated_time_s=max(t, t_end) * 1e-6,
        busy_fraction=busy / (t_end - t_warm),
        slots=slots,
        events=events,
        seed=seed,
    )


def run_many(scenario: NetworkScenario, seeds: Sequence[int], duration_s: float = 100.0,
             cw_overrides: Sequence[int] | None = None, jobs: int = 1) -> list[SimOutcome]:
    """Independent runs, returned in ``seeds`` order whatever the completion order."""
    if jobs <= 1 or len(seeds) <= 1:
        return [run(scenario, cw_overrides, duration_s, s) for s in seeds]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run, scenario, cw_overrides, duration_s, s) for s in seeds]
        return [f.result() for f in futures]
