"""Multi-hop path enumeration, Rician channel sampling and the effective channel."""

from __future__ import annotations

import itertools
import logging
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .scenario import Geometry, RngStreams, ScenarioConfig
from .starris import ThetaPair

log = logging.getLogger(__name__)

Path_ = tuple[int, ...]


def enumerate_paths(v_surfaces: int) -> list[Path_]:
    """All ascending surface chains, grouped by hop count, lexicographic within a group.

    Surfaces are 1-based; a signal may only move to a higher-indexed surface.
    """
    if int(v_surfaces) != v_surfaces or v_surfaces < 1:
        raise ValueError(f"need at least one surface, got {v_surfaces!r}")
    surfaces = range(1, v_surfaces + 1)
    return [c for j in surfaces for c in itertools.combinations(surfaces, j)]


_clamped: set[float] = set()  # distances already reported


def pathloss_db(carrier_ghz: float, distance_m: float) -> float:
    if carrier_ghz <= 0 or distance_m <= 0:
        raise ValueError("carrier and distance must be positive")
    if distance_m < 1.0:
        if distance_m not in _clamped:
            _clamped.add(distance_m)
            log.warning("link distance %.3g m below 1 m; clamped", distance_m)
        distance_m = 1.0
    return 32.4 + 20.0 * math.log10(carrier_ghz) + 21.0 * math.log10(distance_m)


def steering(n: int, cos_angle: float) -> np.ndarray:
    """Half-wavelength ULA response along the x-axis."""
    return np.exp(1j * math.pi * np.arange(n) * cos_angle)


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def rician_link(rng: np.random.Generator, tx: np.ndarray, rx: np.ndarray, n_tx: int, n_rx: int,
                rician_factor: float, carrier_ghz: float) -> np.ndarray:
    """One Rician link from a ``n_tx`` array at ``tx`` to a ``n_rx`` array at ``rx``.

    Returns an ``(n_rx, n_tx)`` matrix; callers squeeze single-antenna ends.
    The NLoS draw is always consumed, so stream positions do not depend on K.
    """
    delta = np.asarray(rx, float) - np.asarray(tx, float)
    dist = float(np.hypot(*delta))
    if dist == 0.0:
        raise ValueError(f"co-located nodes at {tuple(tx)}")
    cos_dep = delta[0] / dist
    los = np.outer(steering(n_rx, -cos_dep), steering(n_tx, cos_dep).conj())
    nlos = _cn(rng, (n_rx, n_tx))
    rho = 10.0 ** (pathloss_db(carrier_ghz, dist) / 10.0)
    k = rician_factor
    if math.isinf(k):
        mix = los
    else:
        mix = math.sqrt(k / (k + 1.0)) * los + math.sqrt(1.0 / (k + 1.0)) * nlos
    return mix / math.sqrt(rho)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One draw of every link.

    ``direct[k]``, ``transmit_link[v-1, k]`` and ``reflect_link[v-1, k]`` are the
    column vectors whose Hermitian forms enter the effective channel;
    ``bs_to_surface[v-1]`` is (N, M) and ``surface_to_surface[(v, w)]`` is the
    (N, N) map from surface v to a later surface w.
    """

    direct: np.ndarray  # (K, M)
    transmit_link: np.ndarray  # (V, K, N)
    reflect_link: np.ndarray  # (V, K, N)
    bs_to_surface: np.ndarray  # (V, N, M)
    surface_to_surface: dict[tuple[int, int], np.ndarray]

    @cached_property
    def rows(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Hermitian (row) forms of direct, transmit and reflect links."""
        return self.direct.conj(), self.transmit_link.conj(), self.reflect_link.conj()

    @property
    def dims(self) -> tuple[int, int, int, int]:
        v, k, n = self.transmit_link.shape
        return self.direct.shape[1], n, v, k


def sample_channel(geometry: Geometry, config: ScenarioConfig,
                   rng: RngStreams | np.random.Generator) -> ChannelRealization:
    gen = rng["channel"] if isinstance(rng, RngStreams) else rng
    m, n, v = config.m_antennas, config.n_elements, config.v_surfaces
    kf, f = config.rician_factor, config.carrier_ghz
    bs = geometry.bs_position
    surf = geometry.surface_positions
    users = geometry.user_positions
    direct = np.stack([rician_link(gen, bs, u, m, 1, kf, f)[0] for u in users])
    bs_to_surface = np.stack([rician_link(gen, bs, s, m, n, kf, f) for s in surf])
    pairs = {}
    for a, b in itertools.combinations(range(1, v + 1), 2):
        pairs[(a, b)] = rician_link(gen, surf[a - 1], surf[b - 1], n, n, kf, f)
    trans = np.stack([[rician_link(gen, s, u, n, 1, kf, f)[0] for u in users] for s in surf])
    refl = np.stack([[rician_link(gen, s, u, n, 1, kf, f)[0] for u in users] for s in surf])
    # stored as column vectors; the effective channel takes their Hermitian
    return ChannelRealization(direct.conj(), trans.conj(), refl.conj(), bs_to_surface, pairs)


def cascade_product(path: Sequence[int], realization: ChannelRealization,
                    thetas: Sequence[ThetaPair]) -> np.ndarray:
    """BS -> last surface of ``path`` cascade, (N, M); intermediate hops transmit."""
    casc = realization.bs_to_surface[path[0] - 1]
    for a, b in zip(path[:-1], path[1:]):
        casc = realization.surface_to_surface[(a, b)] @ (thetas[a - 1].t[:, None] * casc)
    return casc


def effective_channels(realization: ChannelRealization, thetas: Sequence[ThetaPair],
                       regions: np.ndarray, paths: Sequence[Path_]) -> np.ndarray:
    """Effective BS->user rows for every user, shape (K, M).

    A path's last surface transmits towards users in later regions and
    reflects towards users in its own or earlier regions.
    """
    direct, trans, refl = realization.rows
    omega = direct.copy()
    regions = np.asarray(regions)
    for path in paths:
        last = path[-1]
        th = thetas[last - 1]
        if not (th.t.any() or th.r.any()):
            continue
        casc = cascade_product(path, realization, thetas)
        beyond = last < regions
        rows = np.where(
            beyond[:, None],
            trans[last - 1] * th.t,
            refl[last - 1] * th.r,
        )
        omega += rows @ casc
    return omega


def effective_channel(user: int, realization: ChannelRealization, thetas: Sequence[ThetaPair],
                      regions: np.ndarray, paths: Sequence[Path_]) -> np.ndarray:
    """Effective channel row (length M) of one user (0-based index)."""
    sub = ChannelRealization(
        realization.direct[user:user + 1],
        realization.transmit_link[:, user:user + 1],
        realization.reflect_link[:, user:user + 1],
        realization.bs_to_surface,
        realization.surface_to_surface,
    )
    return effective_channels(sub, thetas, np.asarray(regions)[user:user + 1], paths)[0]


_MAGIC = b"STARCH01"


def dump_channel(realization: ChannelRealization, fh: BinaryIO | str | Path) -> None:
    """Binary dump: magic, four little-endian uint32 dims (M, N, V, K), then
    direct, transmit, reflect, bs_to_surface and the surface pairs in
    lexicographic order, each row-major complex64."""
    if isinstance(fh, (str, Path)):
        with open(fh, "wb") as f:
            return dump_channel(realization, f)
    m, n, v, k = realization.dims
    fh.write(_MAGIC + struct.pack("<4I", m, n, v, k))
    blocks = [realization.direct, realization.transmit_link, realization.reflect_link,
              realization.bs_to_surface]
    blocks += [realization.surface_to_surface[p] for p in sorted(realization.surface_to_surface)]
    for b in blocks:
        fh.write(np.ascontiguousarray(b, dtype="<c8").tobytes())


def load_channel(fh: BinaryIO | str | Path) -> ChannelRealization:
    if isinstance(fh, (str, Path)):
        with open(fh, "rb") as f:
            return load_channel(f)
    if fh.read(len(_MAGIC)) != _MAGIC:
        raise ValueError("not a channel dump")
    m, n, v, k = struct.unpack("<4I", fh.read(16))

    def take(*shape):
        count = int(np.prod(shape))
        buf = fh.read(8 * count)
        if len(buf) != 8 * count:
            raise ValueError("truncated channel dump")
        return np.frombuffer(buf, dtype="<c8").astype(complex).reshape(shape)

    direct = take(k, m)
    trans = take(v, k, n)
    refl = take(v, k, n)
    bs = take(v, n, m)
    pairs = {p: take(n, n) for p in itertools.combinations(range(1, v + 1), 2)}
    return ChannelRealization(direct, trans, refl, bs, pairs)
