"""Scenario constants, deployment geometry and seeded random streams."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

# Named substreams of one master seed. Order is part of the reproducibility
# contract: appending is fine, reordering changes every experiment.
STREAM_NAMES = ("channel", "exploration", "replay", "weights", "placement", "onoff")

# User x-coordinates are drawn over [0, STRIP_SPANS * spacing].
STRIP_SPANS = 5


def dbm_to_watt(level: float) -> float:
    if not math.isfinite(level):
        raise ValueError(f"power level must be finite, got {level!r}")
    return 10.0 ** ((level - 30.0) / 10.0)


def watt_to_dbm(power: float) -> float:
    if not (power > 0 and math.isfinite(power)):
        raise ValueError(f"power must be positive and finite, got {power!r}")
    return 10.0 * math.log10(power) + 30.0


def noise_power_dbm(bandwidth_hz: float) -> float:
    if not (bandwidth_hz > 0 and math.isfinite(bandwidth_hz)):
        raise ValueError(f"bandwidth must be positive, got {bandwidth_hz!r}")
    return -174.0 + 10.0 * math.log10(bandwidth_hz)


def noise_power_watt(bandwidth_hz: float) -> float:
    """Thermal noise power over ``bandwidth_hz`` (-174 dBm/Hz floor)."""
    return dbm_to_watt(noise_power_dbm(bandwidth_hz))


@dataclass(frozen=True)
class ScenarioConfig:
    m_antennas: int = 5
    n_elements: int = 16
    v_surfaces: int = 2
    i_regions: int = 3
    users_per_region: tuple[int, ...] = (2, 2, 6)
    bandwidth_hz: float = 100e6
    carrier_ghz: float = 28.0
    bs_power_budget_dbm: float = 33.0
    element_power_dbm: float = 17.0
    rician_factor: float = 3.0
    surface_spacing_m: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "users_per_region", tuple(int(k) for k in self.users_per_region))
        for name in ("m_antennas", "n_elements", "v_surfaces", "i_regions"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.i_regions != self.v_surfaces + 1:
            raise ValueError(
                f"i_regions must equal v_surfaces + 1 ({self.v_surfaces + 1}), got {self.i_regions}"
            )
        if len(self.users_per_region) != self.i_regions:
            raise ValueError("users_per_region needs one entry per region")
        if any(k < 1 for k in self.users_per_region):
            raise ValueError("every region needs at least one user")
        for name in ("bandwidth_hz", "carrier_ghz", "surface_spacing_m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.rician_factor < 0:
            raise ValueError("rician_factor must be non-negative")
        for name in ("bs_power_budget_dbm", "element_power_dbm"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def total_users(self) -> int:
        return sum(self.users_per_region)

    @property
    def p_max_watt(self) -> float:
        return dbm_to_watt(self.bs_power_budget_dbm)

    @property
    def element_power_watt(self) -> float:
        return dbm_to_watt(self.element_power_dbm)

    @property
    def noise_watt(self) -> float:
        return noise_power_watt(self.bandwidth_hz)

    @property
    def strip_length_m(self) -> float:
        # keeps the last region non-empty when V >= STRIP_SPANS
        return max(STRIP_SPANS, self.i_regions) * self.surface_spacing_m

    def region_bounds(self) -> list[tuple[float, float]]:
        s = self.surface_spacing_m
        bounds = [((i - 1) * s, i * s) for i in range(1, self.i_regions)]
        bounds.append(((self.i_regions - 1) * s, self.strip_length_m))
        return bounds

    def with_users(self, total: int) -> "ScenarioConfig":
        return replace(self, users_per_region=split_users(total, self.v_surfaces, self.surface_spacing_m))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["users_per_region"] = list(self.users_per_region)
        return d


def split_users(total: int, v_surfaces: int, spacing: float = 1.0) -> tuple[int, ...]:
    """Share ``total`` users among the V+1 regions proportionally to region width.

    Largest-remainder rounding with at least one user per region.
    """
    widths = np.array([b - a for a, b in ScenarioConfig(
        v_surfaces=v_surfaces, i_regions=v_surfaces + 1,
        users_per_region=(1,) * (v_surfaces + 1), surface_spacing_m=spacing,
    ).region_bounds()])
    n = len(widths)
    if total < n:
        raise ValueError(f"need at least {n} users for {n} regions, got {total}")
    share = widths / widths.sum() * total
    counts = np.maximum(np.floor(share).astype(int), 1)
    frac = share - np.floor(share)
    while counts.sum() < total:
        i = int(np.argmax(frac))
        counts[i] += 1
        frac[i] = -1.0
    while counts.sum() > total:
        counts[int(np.argmax(counts))] -= 1
    return tuple(int(c) for c in counts)


CONFIG_KEYS = {f.name for f in fields(ScenarioConfig)}


def config_from_dict(data: Mapping[str, Any]) -> tuple[ScenarioConfig, int]:
    """Build a config from a flat mapping; returns ``(config, master_seed)``.

    Unknown keys are rejected. ``total_users`` may stand in for
    ``users_per_region`` and is split by region width.
    """
    data = dict(data)
    seed = int(data.pop("master_seed", 0))
    total = data.pop("total_users", None)
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise KeyError(f"unknown configuration keys: {sorted(unknown)}")
    v = int(data.get("v_surfaces", ScenarioConfig.v_surfaces))
    data.setdefault("i_regions", v + 1)
    if total is not None:
        if "users_per_region" in data:
            raise KeyError("give either total_users or users_per_region, not both")
        data["users_per_region"] = split_users(
            int(total), v, data.get("surface_spacing_m", ScenarioConfig.surface_spacing_m)
        )
    elif "users_per_region" not in data and v != ScenarioConfig.v_surfaces:
        data["users_per_region"] = split_users(10, v)
    return ScenarioConfig(**data), seed


def load_config(path: str | Path, overrides: Sequence[str] = ()) -> tuple[ScenarioConfig, int]:
    """Read a JSON config file and apply ``--key=value`` overrides."""
    data = json.loads(Path(path).read_text())
    data.update(parse_overrides(overrides))
    return config_from_dict(data)


def parse_overrides(items: Sequence[str]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for item in items:
        key, sep, raw = item.lstrip("-").partition("=")
        if not sep:
            raise ValueError(f"override must look like --key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


class RngStreams:
    """Independent numpy generators derived from one master seed."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        root = np.random.SeedSequence(self.master_seed)
        self._streams = {
            name: np.random.default_rng(child)
            for name, child in zip(STREAM_NAMES, root.spawn(len(STREAM_NAMES)))
        }

    def __getitem__(self, name: str) -> np.random.Generator:
        return self._streams[name]

    def __getattr__(self, name: str) -> np.random.Generator:
        try:
            return self.__dict__["_streams"][name]
        except KeyError:
            raise AttributeError(name) from None


@dataclass(frozen=True)
class Geometry:
    bs_position: np.ndarray
    surface_positions: np.ndarray  # (V, 2)
    user_positions: np.ndarray  # (K_total, 2), grouped by region
    region_of_user: np.ndarray  # (K_total,), 1-based region index

    def users_in_region(self, i: int) -> np.ndarray:
        return self.user_positions[self.region_of_user == i]


def surface_positions(config: ScenarioConfig) -> np.ndarray:
    s = config.surface_spacing_m
    return np.array([[(v - 1) * s, s] for v in range(1, config.v_surfaces + 1)], dtype=float)


def region_of_x(x: float | np.ndarray, config: ScenarioConfig) -> np.ndarray:
    """1-based region index for x-coordinates; intervals are closed below."""
    idx = np.floor(np.asarray(x, dtype=float) / config.surface_spacing_m).astype(int) + 1
    return np.clip(idx, 1, config.i_regions)


def geometry_from_users(config: ScenarioConfig, user_xy: np.ndarray) -> Geometry:
    user_xy = np.asarray(user_xy, dtype=float).reshape(-1, 2)
    regions = region_of_x(user_xy[:, 0], config)
    order = np.argsort(regions, kind="stable")
    return Geometry(
        bs_position=np.zeros(2),
        surface_positions=surface_positions(config),
        user_positions=user_xy[order],
        region_of_user=regions[order],
    )


def sample_user_positions(config: ScenarioConfig, rng: RngStreams | np.random.Generator,
                          max_tries: int = 1_000_000) -> Geometry:
    """Drop users uniformly on the strip, redrawing until region counts match."""
    gen = rng["placement"] if isinstance(rng, RngStreams) else rng
    want = np.array(config.users_per_region)
    s = config.surface_spacing_m
    for _ in range(max_tries):
        xy = np.column_stack([
            gen.uniform(0.0, config.strip_length_m, config.total_users),
            gen.uniform(0.0, s, config.total_users),
        ])
        counts = np.bincount(region_of_x(xy[:, 0], config) - 1, minlength=config.i_regions)
        if np.array_equal(counts, want):
            return geometry_from_users(config, xy)
    raise RuntimeError("could not match users_per_region; check the counts")
