"""Fast built-in invariant checks, runnable without the test suite."""

from __future__ import annotations

import itertools
import math

import numpy as np

from .channel import effective_channels, enumerate_paths, pathloss_db, sample_channel
from .marl import Hyperparams, train
from .metrics import BeamformerSet, normalize_beamformer
from .nn import Batch, QNetwork, td_loss_and_gradient
from .scenario import (RngStreams, ScenarioConfig, dbm_to_watt, noise_power_dbm,
                       sample_user_positions, split_users)
from .starris import SurfaceState, build_theta


def _brute_force_omega(real, thetas, regions, v):
    """Expand every ascending chain with explicit per-entry loops."""
    k_users, m = real.direct.shape
    n = real.bs_to_surface.shape[1]
    out = np.zeros((k_users, m), dtype=complex)
    for k in range(k_users):
        for mm in range(m):
            acc = np.conj(real.direct[k, mm])
            for j in range(1, v + 1):
                for chain in itertools.combinations(range(1, v + 1), j):
                    last = chain[-1]
                    if last < regions[k]:
                        link, coef = real.transmit_link[last - 1, k], thetas[last - 1].t
                    else:
                        link, coef = real.reflect_link[last - 1, k], thetas[last - 1].r
                    # column mm of the cascade, built hop by hop
                    col = real.bs_to_surface[chain[0] - 1][:, mm].copy()
                    for a, b in zip(chain[:-1], chain[1:]):
                        phi = real.surface_to_surface[(a, b)]
                        col = np.array([sum(phi[r, c] * thetas[a - 1].t[c] * col[c] for c in range(n))
                                        for r in range(n)])
                    acc += sum(np.conj(link[r]) * coef[r] * col[r] for r in range(n))
            out[k, mm] = acc
    return out


def random_surface(n: int, rng: np.random.Generator) -> SurfaceState:
    return SurfaceState(
        alpha=rng.integers(0, 2, n).astype(np.int8),
        beta_r=rng.uniform(0, 1, n),
        theta_r=rng.uniform(0, 2 * math.pi, n),
        phase_sign=rng.choice([-1, 1], n).astype(np.int8),
    )


def check_channel_oracle(trials: int = 5, seed: int = 0) -> float:
    """Largest |difference| between the vectorized and brute-force effective channel."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        v = int(rng.integers(1, 4))
        m, n = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        cfg = ScenarioConfig(m_antennas=m, n_elements=n, v_surfaces=v, i_regions=v + 1,
                             users_per_region=split_users(v + 2, v))
        geo = sample_user_positions(cfg, rng)
        real = sample_channel(geo, cfg, rng)
        # unit-scale channels keep the absolute tolerance meaningful
        real = type(real)(real.direct * 1e4, real.transmit_link * 1e4, real.reflect_link * 1e4,
                          real.bs_to_surface * 1e4,
                          {k: x * 1e4 for k, x in real.surface_to_surface.items()})
        thetas = [build_theta(random_surface(n, rng)) for _ in range(v)]
        fast = effective_channels(real, thetas, geo.region_of_user, enumerate_paths(v))
        slow = _brute_force_omega(real, thetas, geo.region_of_user, v)
        worst = max(worst, float(np.max(np.abs(fast - slow))))
    return worst


def check_gradient(trials: int = 5, seed: int = 0) -> float:
    """Largest relative gap between analytic and central-difference TD gradients."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    h = 1e-5
    for _ in range(trials):
        sizes = [int(rng.integers(2, 5)), int(rng.integers(2, 6)), int(rng.integers(2, 4))]
        net = QNetwork(sizes, rng)
        for b in net.biases:
            b[:] = rng.normal(0, 0.5, b.shape)
        target = QNetwork(sizes, rng)
        bsz = int(rng.integers(1, 6))
        batch = Batch(rng.normal(size=(bsz, sizes[0])), rng.integers(0, sizes[-1], bsz),
                      rng.normal(size=bsz), rng.normal(size=(bsz, sizes[0])))
        _, grads = td_loss_and_gradient(net, target, batch, 0.9)
        for p, g in zip(net.params, grads):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                lp, _ = td_loss_and_gradient(net, target, batch, 0.9)
                p[idx] = old - h
                lm, _ = td_loss_and_gradient(net, target, batch, 0.9)
                p[idx] = old
                fd = (lp - lm) / (2 * h)
                if abs(g[idx]) > 1e-8:
                    worst = max(worst, abs(fd - g[idx]) / abs(g[idx]))
    return worst


def run_selftest() -> int:
    checks = []

    checks.append(("path counts 2^V-1", all(len(enumerate_paths(v)) == 2 ** v - 1 for v in range(1, 7))))
    checks.append(("pathloss 28 GHz, 10 m", abs(pathloss_db(28, 10) - 82.3432) <= 1e-3))
    checks.append(("noise at 100 MHz", abs(noise_power_dbm(1e8) + 94) <= 1e-9))
    checks.append(("33 dBm in watts", abs(dbm_to_watt(33) / 1.99526 - 1) <= 1e-5))

    rng = np.random.default_rng(1)
    energy_ok = True
    for _ in range(50):
        st = random_surface(8, rng)
        th = build_theta(st)
        energy_ok &= bool(np.all(np.abs(np.abs(th.r) ** 2 + np.abs(th.t) ** 2 - st.alpha) <= 1e-12))
    checks.append(("energy conservation", energy_ok))

    w = BeamformerSet([rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))])
    wn = normalize_beamformer(w, 2.0)
    checks.append(("beamformer normalization", abs(wn.power() - 2.0) <= 1e-12 * 2.0))

    checks.append(("channel oracle", check_channel_oracle() <= 1e-10))
    checks.append(("TD gradient", check_gradient() <= 1e-4))

    cfg = ScenarioConfig(m_antennas=2, n_elements=4, v_surfaces=1, i_regions=2, users_per_region=(1, 1))
    res = train(cfg, Hyperparams(episodes=1, slots=30, hidden=(16,), batch_size=8, t_q=5),
                "MAGAR", 0, check_constraints=True)
    checks.append(("constraints along a short run", res.ok and all(r.violations == 0 for r in res.records)))

    failed = 0
    for name, ok in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
        failed += not ok
    return 1 if failed else 0
