"""Network description: PHY/MAC timing, stations, duration classes and the JSON scenario format."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

# Frames whose channel occupancy differs by less than this share a class.
CLASS_TOLERANCE_US = 0.5


class ScenarioError(ValueError):
    """Raised for invalid scenario parameters or malformed scenario files."""


@dataclass(frozen=True)
class PhyMacParams:
    """802.11b long-preamble DSSS defaults. Times in microseconds, sizes in bits."""

    slot: float = 20.0
    sifs: float = 10.0
    difs: float = 50.0
    phy_header: float = 192.0
    mac_header: float = 224.0
    ack_frame: float = 112.0
    ack_rate: float = 1e6
    max_backoff_stage: int = 5
    default_cw_min: int = 32
    propagation_delay: float = 1.0
    # False sends the MAC header at ack_rate (the basic rate) instead of R_d.
    mac_header_at_data_rate: bool = True

    def __post_init__(self):
        for name in ("slot", "sifs", "difs", "phy_header", "mac_header", "ack_frame",
                     "ack_rate", "propagation_delay"):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"phy.{name} must be strictly positive")
        if self.max_backoff_stage < 1:
            raise ScenarioError("phy.max_backoff_stage must be >= 1")
        if self.default_cw_min < 2:
            raise ScenarioError("phy.default_cw_min must be >= 2")
        if not self.difs > self.sifs:
            raise ScenarioError("phy.difs must exceed phy.sifs")

    @property
    def m(self) -> int:
        return self.max_backoff_stage

    @property
    def ack_duration(self) -> float:
        return self.phy_header + self.ack_frame / self.ack_rate * 1e6


@dataclass(frozen=True)
class StationConfig:
    id: str
    lambda_pkt_s: float
    rate_bps: float
    payload_bytes: float
    cw_min: int = 32
    p_err: float = 0.0

    def __post_init__(self):
        if not self.lambda_pkt_s >= 0:
            raise ScenarioError(f"station {self.id}: lambda_pkt_s must be >= 0")
        if not self.rate_bps > 0:
            raise ScenarioError(f"station {self.id}: rate_bps must be > 0")
        if not self.payload_bytes > 0:
            raise ScenarioError(f"station {self.id}: payload_bytes must be > 0")
        if int(self.cw_min) != self.cw_min or self.cw_min < 2:
            raise ScenarioError(f"station {self.id}: cw_min must be an integer >= 2")
        if not 0 <= self.p_err < 1:
            raise ScenarioError(f"station {self.id}: p_err must lie in [0, 1)")

    @property
    def payload_bits(self) -> float:
        return 8.0 * self.payload_bytes

    @property
    def offered_load_bps(self) -> float:
        return self.lambda_pkt_s * self.payload_bits


@dataclass(frozen=True)
class NetworkScenario:
    stations: tuple[StationConfig, ...]
    phy: PhyMacParams = field(default_factory=PhyMacParams)
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(self.stations))
        if not self.stations:
            raise ScenarioError("scenario needs at least one station")
        ids = [s.id for s in self.stations]
        if len(set(ids)) != len(ids):
            raise ScenarioError(f"duplicate station ids in {ids}")

    def __len__(self) -> int:
        return len(self.stations)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.stations]

    def index_of(self, station_id: str) -> int:
        try:
            return self.ids.index(station_id)
        except ValueError:
            raise ScenarioError(f"no station with id {station_id!r}") from None

    def with_cw(self, cws: Sequence[int]) -> NetworkScenario:
        if len(cws) != len(self.stations):
            raise ScenarioError("one cw value per station required")
        stations = tuple(replace(s, cw_min=int(w)) for s, w in zip(self.stations, cws))
        return replace(self, stations=stations)

    def with_lambda(self, station_id: str, lam: float) -> NetworkScenario:
        i = self.index_of(station_id)
        stations = list(self.stations)
        stations[i] = replace(stations[i], lambda_pkt_s=float(lam))
        return replace(self, stations=tuple(stations))

    def permuted(self, order: Sequence[int]) -> NetworkScenario:
        return replace(self, stations=tuple(self.stations[i] for i in order))

    # arrays reused by the analytic engine and the simulator
    @property
    def cw(self) -> np.ndarray:
        return np.array([s.cw_min for s in self.stations], dtype=float)

    @property
    def p_err(self) -> np.ndarray:
        return np.array([s.p_err for s in self.stations], dtype=float)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([s.lambda_pkt_s for s in self.stations], dtype=float)

    @property
    def rates(self) -> np.ndarray:
        return np.array([s.rate_bps for s in self.stations], dtype=float)

    @property
    def payload_bits(self) -> np.ndarray:
        return np.array([s.payload_bits for s in self.stations], dtype=float)


@dataclass(frozen=True)
class DurationClassing:
    """Partition of stations into channel-occupancy classes; class 0 is the slowest.

    Class and station indices are 0-based positions in ``scenario.stations``.
    """

    members: tuple[tuple[int, ...], ...]
    collision_duration: tuple[float, ...]
    station_class: tuple[int, ...]

    @property
    def n_classes(self) -> int:
        return len(self.members)

    @property
    def class_sizes(self) -> tuple[int, ...]:
        return tuple(len(m) for m in self.members)

    def check_index(self, d: int) -> None:
        if not 0 <= d < self.n_classes:
            raise IndexError(f"class index {d} outside [0, {self.n_classes})")


def frame_durations(station: StationConfig, phy: PhyMacParams) -> tuple[float, float]:
    """Return (T_s, T_e) in microseconds for one station's data frame.

    An errored frame waits an ACK timeout of SIFS + ACK before DIFS, so T_e == T_s.
    """
    header_rate = station.rate_bps if phy.mac_header_at_data_rate else phy.ack_rate
    data = (phy.phy_header
            + phy.mac_header / header_rate * 1e6
            + station.payload_bits / station.rate_bps * 1e6)
    t_s = data + phy.sifs + phy.ack_duration + phy.difs + 2 * phy.propagation_delay
    t_e = data + (phy.sifs + phy.ack_duration) + phy.difs + 2 * phy.propagation_delay
    return t_s, t_e


@lru_cache(maxsize=256)
def station_durations(scenario: NetworkScenario) -> tuple[np.ndarray, np.ndarray]:
    ts, te = zip(*(frame_durations(s, scenario.phy) for s in scenario.stations))
    t_s = np.array(ts)
    t_e = np.array(te)
    t_s.flags.writeable = False
    t_e.flags.writeable = False
    return t_s, t_e


@lru_cache(maxsize=256)
def classify_stations(scenario: NetworkScenario) -> DurationClassing:
    """Group stations by equal occupancy T_e, ordered by decreasing duration."""
    _, te = station_durations(scenario)
    order = sorted(range(len(te)), key=lambda i: (-te[i], i))
    groups: list[list[int]] = []
    for i in order:
        # compare against the group's slowest (first) member so classes cannot drift
        if groups and abs(te[groups[-1][0]] - te[i]) <= CLASS_TOLERANCE_US:
            groups[-1].append(i)
        else:
            groups.append([i])
    station_class = [0] * len(te)
    for d, g in enumerate(groups):
        for i in g:
            station_class[i] = d
    return DurationClassing(
        members=tuple(tuple(sorted(g)) for g in groups),
        collision_duration=tuple(float(te[g[0]]) for g in groups),
        station_class=tuple(station_class),
    )


# ---------------------------------------------------------------------------
# JSON scenario files

_STATION_REQUIRED = {"id", "lambda_pkt_s", "rate_bps", "payload_bytes"}
_STATION_OPTIONAL = {"cw_min", "p_err"}
_PHY_KEYS = {f.name for f in fields(PhyMacParams)}
_TOP_KEYS = {"phy", "stations", "name"}


def scenario_from_dict(doc: Any, name: str = "scenario") -> NetworkScenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ScenarioError(f"unknown top-level key(s): {sorted(unknown)}")
    phy_doc = doc.get("phy", {}) or {}
    if not isinstance(phy_doc, dict):
        raise ScenarioError("'phy' must be an object")
    unknown = set(phy_doc) - _PHY_KEYS
    if unknown:
        raise ScenarioError(f"unknown key(s) in 'phy': {sorted(unknown)}")
    try:
        phy = PhyMacParams(**phy_doc)
    except TypeError as exc:
        raise ScenarioError(f"bad 'phy' section: {exc}") from None

    raw = doc.get("stations")
    if not isinstance(raw, list) or not raw:
        raise ScenarioError("'stations' must be a non-empty array")
    stations = []
    for k, st in enumerate(raw):
        where = f"stations[{k}]"
        if not isinstance(st, dict):
            raise ScenarioError(f"{where} must be an object")
        missing = _STATION_REQUIRED - set(st)
        if missing:
            raise ScenarioError(f"{where}: missing key(s) {sorted(missing)}")
        unknown = set(st) - _STATION_REQUIRED - _STATION_OPTIONAL
        if unknown:
            raise ScenarioError(f"{where}: unknown key(s) {sorted(unknown)}")
        for key in st.keys() - {"id"}:
            if isinstance(st[key], bool) or not isinstance(st[key], (int, float)):
                raise ScenarioError(f"{where}.{key} must be a number")
        stations.append(StationConfig(
            id=str(st["id"]),
            lambda_pkt_s=float(st["lambda_pkt_s"]),
            rate_bps=float(st["rate_bps"]),
            payload_bytes=float(st["payload_bytes"]),
            cw_min=st.get("cw_min", phy.default_cw_min),
            p_err=float(st.get("p_err", 0.0)),
        ))
    return NetworkScenario(tuple(stations), phy, name=str(doc.get("name", name)))


def scenario_to_dict(scenario: NetworkScenario) -> dict:
    default_phy = asdict(PhyMacParams())
    phy = {k: v for k, v in asdict(scenario.phy).items() if default_phy[k] != v}
    doc: dict[str, Any] = {"name": scenario.name}
    if phy:
        doc["phy"] = phy
    doc["stations"] = [
        {"id": s.id, "lambda_pkt_s": s.lambda_pkt_s, "rate_bps": s.rate_bps,
         "payload_bytes": s.payload_bytes, "cw_min": s.cw_min, "p_err": s.p_err}
        for s in scenario.stations
    ]
    return doc


BUNDLED_DIR = Path(__file__).parent / "data"


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in BUNDLED_DIR.glob("*.json"))


def load_scenario(path: str | Path) -> NetworkScenario:
    """Load a scenario file; a bare bundled name such as ``scenario_a`` also works."""
    p = Path(path)
    if not p.exists() and (BUNDLED_DIR / f"{p.name}.json").exists():
        p = BUNDLED_DIR / f"{p.name}.json"
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{p}: line {exc.lineno} col {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(doc, name=p.stem)


def save_scenario(scenario: NetworkScenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")


def scenario_digest(scenario: NetworkScenario) -> str:
    blob = json.dumps(scenario_to_dict(scenario), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def make_scenario(rows: Iterable[tuple], phy: PhyMacParams | None = None,
                  name: str = "scenario") -> NetworkScenario:
    """Build a scenario from ``(lambda, rate_bps, payload_bytes[, cw, p_err])`` tuples."""
    phy = phy or PhyMacParams()
    stations = []
    for i, row in enumerate(rows):
        lam, rate, pl, *rest = row
        cw = rest[0] if len(rest) > 0 else phy.default_cw_min
        pe = rest[1] if len(rest) > 1 else 0.0
        stations.append(StationConfig(str(i + 1), float(lam), float(rate), float(pl), cw, pe))
    return NetworkScenario(tuple(stations), phy, name=name)
