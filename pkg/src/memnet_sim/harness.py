"""Scenario orchestration: trial schedules, samplers, reports.

Everything in this module is glue.  The physics lives in the node, optics,
events and witness modules; the harness turns a validated ExperimentConfig
into count tables and derived estimates and serializes them.

Two contracts shape the code:

* Determinism.  Every random draw comes from a counter-based Philox stream
  keyed by ``(master seed, chunk index)``, chunk indices are allocated in a
  fixed code order, and partial tallies merge in chunk order.  The report
  body is therefore a pure function of (config, seed), independent of the
  worker count; wall time and worker count live in the report meta block.
* Conditional sampling.  Six-fold coincidences occur at ~1e-8 per trial, so
  the heralded scenarios draw events directly from the enumerated
  conditional distribution (events module) and carry the herald probability
  as an importance weight instead of simulating raw trials.

Sample budgets: the heralded scenarios (ghz6, ghz3) split ``cfg.samples``
heralded events round-robin over the witness settings; the sweep scenarios
use ``cfg.samples`` raw trials per sweep point; pair_tomography uses
``cfg.samples`` raw trials per basis.  Detector efficiency is treated as
already folded into ``p_w`` and ``eta_r0`` (see the node module), so the
samplers here ignore ``DetectorConfig.efficiency``.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from . import __version__
from . import config as cf
from . import detection as det
from . import events as ev
from . import node as nd
from . import optics as op
from . import quantum as q
from . import witness as w

CHUNK_SIZE = 512

# Spin analyzer bases, columns ordered so that channel 0 corresponds to the
# read photon's R channel (up -> R, down -> L under retrieval). With this
# ordering the correlated coincidences land in the cross-labeled cells,
# matching the sign convention of detection.visibility_raw.
_SPIN_RL = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


def _spin_super_basis(theta: float) -> np.ndarray:
    """Equatorial spin analyzer aligned for positive visibility at ``theta``."""
    return q.equatorial_basis(theta + math.pi)


def _chunk_rng(seed: int, chunk_index: int) -> np.random.Generator:
    key = np.array([seed, chunk_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _chunk_sizes(n: int) -> list[int]:
    full, rest = divmod(int(n), CHUNK_SIZE)
    return [CHUNK_SIZE] * full + ([rest] if rest else [])


def _split_budget(n: int, k: int) -> list[int]:
    base, rest = divmod(int(n), k)
    return [base + (1 if i < rest else 0) for i in range(k)]


def _run_tasks(tasks, workers: int) -> list:
    """Execute callables, preserving submission order in the results."""
    if workers <= 1 or len(tasks) <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda t: t(), tasks))


def _plain(obj):
    """Recursively convert numpy scalars and arrays for JSON emission."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


# ---------------------------------------------------------------------------
# Pair coincidence machinery (pair_tomography, raman_delay_sweep,
# lifetime_sweep). One write-read pair per trial; the full joint click
# pattern over the four detectors is enumerated exactly, including dark
# counts, double excitations and retrieval failures, and then sampled with
# one multinomial per chunk.


def _real_click_joint(channel: int, dark: float) -> np.ndarray:
    """Joint (ch0, ch1) click pattern when a photon fires ``channel``."""
    j = np.zeros((2, 2))
    other = dark
    if channel == 0:
        j[1, 0] = 1.0 - other
        j[1, 1] = other
    else:
        j[0, 1] = 1.0 - other
        j[1, 1] = other
    return j


def _dark_click_joint(dark: float) -> np.ndarray:
    j = np.array(
        [
            [(1.0 - dark) ** 2, (1.0 - dark) * dark],
            [dark * (1.0 - dark), dark**2],
        ]
    )
    return j


def _read_click_joint(
    r_probs: np.ndarray | None, eta: float, dark: float
) -> np.ndarray:
    """Analyzer joint for the read arm: retrieval then Born, darks always."""
    j = (1.0 - eta) * _dark_click_joint(dark)
    if eta > 0.0:
        if r_probs is None:
            r_probs = np.array([0.5, 0.5])
        for ch in (0, 1):
            j = j + eta * float(r_probs[ch]) * _real_click_joint(ch, dark)
    return j


def _conditional_spins(pair: q.DensityMatrix, write_basis: np.ndarray):
    """Write-photon Born probabilities and conditional spin states."""
    rho = pair.matrix.reshape(2, 2, 2, 2)
    rot = np.einsum("ai,asbt,bj->isjt", write_basis.conj(), rho, write_basis)
    out = []
    for i in (0, 1):
        block = rot[i, :, i, :]
        prob = float(np.real(np.trace(block)))
        state = block / prob if prob > 1e-300 else np.eye(2, dtype=complex) / 2.0
        out.append((prob, state))
    return out


def _aged_born(
    node_cfg: nd.NodeConfig, spin: np.ndarray, basis: np.ndarray, dt_us: float
) -> np.ndarray:
    label = q.spin(node_cfg.node_id)
    aged = nd.storage_channel(node_cfg, q.DensityMatrix((label,), spin), dt_us)
    rot = basis.conj().T @ aged.matrix @ basis
    return np.clip(np.real(np.diag(rot)), 0.0, 1.0)


def _pair_trial_distribution(
    node_cfg: nd.NodeConfig,
    detector: det.DetectorConfig,
    write_basis: np.ndarray,
    read_basis: np.ndarray,
    dt_us: float,
) -> np.ndarray:
    """Exact 16-cell click distribution of one write-read trial.

    Cell index packs the four click bits ``(w0, w1, r0, r1)`` big-endian.
    Write branches: vacuum (dark-only), single excitation (pair state,
    write-conditioned memory aged by ``dt_us``), double excitation reduced
    to one unpolarized write photon plus a contaminated memory retrieved
    with ``1 - (1 - eta)^2`` and a uniform outcome.
    """
    dark = detector.dark_count_prob
    p_vac, p_sng, p_dbl = nd.write_probabilities(node_cfg)
    eta = nd.retrieval_efficiency(node_cfg, dt_us)
    eta_dbl = 1.0 - (1.0 - eta) ** 2

    cases = []  # (weight, write joint, read joint)
    darks_w = _dark_click_joint(dark)
    darks_r = _dark_click_joint(dark)
    cases.append((p_vac, darks_w, darks_r))

    pair = nd.entangled_pair_state(node_cfg)
    for ch, (prob, spin) in enumerate(_conditional_spins(pair, write_basis)):
        r_probs = _aged_born(node_cfg, spin, read_basis, dt_us)
        cases.append(
            (
                p_sng * prob,
                _real_click_joint(ch, dark),
                _read_click_joint(r_probs, eta, dark),
            )
        )

    if p_dbl > 0.0:
        read_dbl = _read_click_joint(None, eta_dbl, dark)
        for ch in (0, 1):
            cases.append((p_dbl * 0.5, _real_click_joint(ch, dark), read_dbl))

    dist = np.zeros((2, 2, 2, 2))
    for weight, jw, jr in cases:
        dist += weight * np.einsum("ab,cd->abcd", jw, jr)
    dist = dist.reshape(16)
    total = dist.sum()
    if not math.isclose(total, 1.0, rel_tol=0.0, abs_tol=1e-9):
        raise AssertionError(f"pair trial distribution sums to {total}")
    return dist / total


_IDX = {
    (wr, wl, rr, rl): 8 * wr + 4 * wl + 2 * rr + rl
    for wr in (0, 1)
    for wl in (0, 1)
    for rr in (0, 1)
    for rl in (0, 1)
}


def _counts_to_table(counts16: np.ndarray) -> det.CoincidenceTable:
    c = counts16
    return det.CoincidenceTable(
        n_RL=float(c[_IDX[1, 0, 0, 1]]),
        n_LR=float(c[_IDX[0, 1, 1, 0]]),
        n_LL=float(c[_IDX[0, 1, 0, 1]]),
        n_RR=float(c[_IDX[1, 0, 1, 0]]),
        n_woR=float(sum(c[i] for bits, i in _IDX.items() if bits[0])),
        n_woL=float(sum(c[i] for bits, i in _IDX.items() if bits[1])),
        n_roR=float(sum(c[i] for bits, i in _IDX.items() if bits[2])),
        n_roL=float(sum(c[i] for bits, i in _IDX.items() if bits[3])),
        N=float(c.sum()),
    )


class _ChunkCounter:
    """Sequential chunk-id allocator; allocation order is code order."""

    def __init__(self) -> None:
        self.next_id = 0

    def take(self, n_chunks: int) -> int:
        base = self.next_id
        self.next_id += n_chunks
        return base


def _sample_pair_table(
    dist16: np.ndarray, n: int, seed: int, alloc: _ChunkCounter, workers: int
) -> det.CoincidenceTable:
    sizes = _chunk_sizes(n)
    base = alloc.take(len(sizes))

    def make_task(k: int, size: int):
        def task():
            rng = _chunk_rng(seed, base + k)
            return rng.multinomial(size, dist16)

        return task

    tallies = _run_tasks([make_task(k, s) for k, s in enumerate(sizes)], workers)
    total = np.sum(tallies, axis=0) if tallies else np.zeros(16, dtype=np.int64)
    return _counts_to_table(np.asarray(total, dtype=np.int64))


def _visibility_sigma(v: float, n_coinc: float) -> float:
    if n_coinc <= 0.0:
        return float("inf")
    return math.sqrt(max(1.0 - v * v, 0.0) / n_coinc) or 1.0 / n_coinc


def _table_dict(t: det.CoincidenceTable) -> dict:
    return {name: getattr(t, name) for name in det.CSV_HEADER.split(",")}


# ---------------------------------------------------------------------------
# Rate arithmetic


def rate_arithmetic(cfg: cf.ExperimentConfig, duty_factor: float = 1.0) -> dict:
    """Closed-form efficiency budget for the six-fold coincidence rate.

    ``joint_write_read`` is the bare product of the per-node overall
    efficiencies ``p_w * eta_r0``. ``sixfold_probability`` folds in the
    polarization routing acceptance (the chance that three mapped write
    photons leave one per station port: 1/4 for balanced pairs), which is
    the per-trial probability of a six-fold coincidence with ideal
    detectors; the published counting rate corresponds to this value.
    ``duty_factor`` scales the wall-clock rate for measurement-time
    bookkeeping (basis switching and similar overheads) and defaults to 1.
    """
    if duty_factor < 0.0:
        raise ValueError("duty_factor must be non-negative")
    p_nodes = [node.p_w * node.eta_r0 for node in cfg.nodes]
    joint = float(np.prod(p_nodes))
    ph, pv = [], []
    for idx, node in enumerate(cfg.nodes):
        a_eff = (1.0 - node.depol_weight) * node.branch_weight_down
        a_eff += node.depol_weight * 0.5
        # nodes I and II map the down-branch photon to H, node III to V
        p_h = a_eff if idx < 2 else 1.0 - a_eff
        ph.append(p_h)
        pv.append(1.0 - p_h)
    acceptance = float(np.prod(ph) + np.prod(pv))
    sixfold = joint * acceptance
    tps = cfg.timing.trials_per_second
    return {
        "p_node": [float(p) for p in p_nodes],
        "p_node_mean": float(np.mean(p_nodes)),
        "joint_write_read": joint,
        "pattern_acceptance": acceptance,
        "sixfold_probability": sixfold,
        "trials_per_second": float(tps),
        "duty_factor": float(duty_factor),
        "rate_per_hour": sixfold * tps * 3600.0 * duty_factor,
    }


# ---------------------------------------------------------------------------
# Scenario runners. Each returns (body_dict, artifacts) where artifacts maps
# a relative output path to a payload emit_report knows how to write.


def _scenario_params(cfg: cf.ExperimentConfig, allowed: tuple[str, ...]) -> dict:
    params = dict(cfg.scenario_params)
    unknown = set(params) - set(allowed)
    if unknown:
        raise ValueError(
            f"unknown scenario_params {sorted(unknown)} for {cfg.scenario}; "
            f"allowed: {sorted(allowed)}"
        )
    return params


def _run_pair_tomography(cfg: cf.ExperimentConfig, alloc: _ChunkCounter):
    params = _scenario_params(cfg, ("node",))
    node_cfg = cfg.node(params.get("node", "I"))
    dt = cfg.read_delay_us
    theta = nd.zeeman_phase(node_cfg, dt)

    bases = {
        "eigen": (q.BASIS_RL, _SPIN_RL),
        "super": (q.BASIS_Z, _spin_super_basis(theta)),
    }
    body_tables = {}
    visibilities = {}
    csv_tables = {}
    for name, (wb, rb) in bases.items():
        dist = _pair_trial_distribution(node_cfg, cfg.detector, wb, rb, dt)
        table = _sample_pair_table(dist, cfg.samples, cfg.seed, alloc, cfg.workers)
        corrected, clamped = det.subtract_accidentals(table)
        v_raw = det.visibility_raw(table)
        v_corr = det.visibility_raw(corrected)
        visibilities[name] = {
            "raw": v_raw,
            "raw_sigma": _visibility_sigma(v_raw, table.coincidence_sum()),
            "corrected": v_corr,
            "corrected_sigma": _visibility_sigma(
                v_corr, corrected.coincidence_sum()
            ),
            "accidentals_clamped": clamped,
        }
        body_tables[name] = _table_dict(table)
        csv_tables[name] = table

    clip = lambda v: min(max(v, -1.0), 1.0)
    fidelities = {
        kind: w.bell_fidelity_from_visibilities(
            clip(visibilities["eigen"][kind]), clip(visibilities["super"][kind])
        )
        for kind in ("raw", "corrected")
    }
    body = {
        "node": node_cfg.node_id,
        "trials_per_basis": cfg.samples,
        "tables": body_tables,
        "visibilities": visibilities,
        "bell_fidelity": fidelities,
    }
    artifacts = {
        "counts/pair_eigen.csv": ("coincidence", [csv_tables["eigen"]]),
        "counts/pair_super.csv": ("coincidence", [csv_tables["super"]]),
    }
    return body, artifacts


def _run_raman_delay_sweep(cfg: cf.ExperimentConfig, alloc: _ChunkCounter):
    params = _scenario_params(cfg, ("node", "delays_us"))
    node_cfg = cfg.node(params.get("node", "I"))
    period = node_cfg.zeeman_period_us
    delays = np.asarray(
        params.get("delays_us", np.linspace(0.0, 3.0 * period, 33)), dtype=float
    )
    if delays.size < 5:
        raise ValueError("raman_delay_sweep needs at least 5 delay points")

    write_basis = q.BASIS_Z
    read_basis = _spin_super_basis(node_cfg.phi0)
    rows = []
    tables = []
    for dt in delays:
        dist = _pair_trial_distribution(
            node_cfg, cfg.detector, write_basis, read_basis, float(dt)
        )
        table = _sample_pair_table(dist, cfg.samples, cfg.seed, alloc, cfg.workers)
        tables.append(table)
        n = table.N
        rows.append(
            {
                "delay_us": float(dt),
                "ncop_parallel": (table.n_RL + table.n_LR) / n,
                "ncop_cross": (table.n_LL + table.n_RR) / n,
                "n_parallel": table.n_RL + table.n_LR,
                "n_cross": table.n_LL + table.n_RR,
                "n_trials": n,
            }
        )

    ncop = np.array([r["ncop_parallel"] for r in rows])
    tau_vis = node_cfg.tau_vis_us

    def model(t, amp, period_fit, phase, floor):
        envelope = np.exp(-t / tau_vis) if math.isfinite(tau_vis) else 1.0
        return amp * envelope * np.cos(2.0 * np.pi * t / period_fit + phase) + floor

    p0 = [0.5 * (ncop.max() - ncop.min()), period, 0.0, float(ncop.mean())]
    popt, pcov = curve_fit(model, delays, ncop, p0=p0, maxfev=20000)
    period_fit = float(abs(popt[1]))
    period_sigma = float(math.sqrt(max(pcov[1, 1], 0.0)))

    body = {
        "node": node_cfg.node_id,
        "samples_per_point": cfg.samples,
        "points": rows,
        "fit": {
            "period_us": period_fit,
            "period_sigma_us": period_sigma,
            "amplitude": float(popt[0]),
            "phase_rad": float(popt[2]),
            "floor": float(popt[3]),
            "configured_period_us": period,
        },
    }
    header = ["delay_us", "ncop_parallel", "ncop_cross", "n_parallel", "n_cross", "n_trials"]
    artifacts = {
        "sweeps/raman_delay.csv": ("rows", header, [[r[h] for h in header] for r in rows]),
        "counts/raman_delay_tables.csv": ("coincidence", tables),
    }
    return body, artifacts


def _run_lifetime_sweep(cfg: cf.ExperimentConfig, alloc: _ChunkCounter):
    params = _scenario_params(cfg, ("node", "delays_us"))
    node_cfg = cfg.node(params.get("node", "I"))
    period = node_cfg.zeeman_period_us
    delays = np.asarray(
        params.get("delays_us", period * np.arange(23)), dtype=float
    )
    if delays.size < 4:
        raise ValueError("lifetime_sweep needs at least 4 delay points")

    rows = []
    eigen_tables = []
    super_tables = []
    for dt in delays:
        dt = float(dt)
        dist_e = _pair_trial_distribution(
            node_cfg, cfg.detector, q.BASIS_RL, _SPIN_RL, dt
        )
        t_eigen = _sample_pair_table(dist_e, cfg.samples, cfg.seed, alloc, cfg.workers)
        theta = nd.zeeman_phase(node_cfg, dt)
        dist_s = _pair_trial_distribution(
            node_cfg, cfg.detector, q.BASIS_Z, _spin_super_basis(theta), dt
        )
        t_super = _sample_pair_table(dist_s, cfg.samples, cfg.seed, alloc, cfg.workers)
        eigen_tables.append(t_eigen)
        super_tables.append(t_super)

        corr_e, _ = det.subtract_accidentals(t_eigen)
        corr_s, _ = det.subtract_accidentals(t_super)
        writes = corr_e.n_woR + corr_e.n_woL
        eta_raw = t_eigen.coincidence_sum() / max(t_eigen.n_woR + t_eigen.n_woL, 1.0)
        eta_corr = corr_e.coincidence_sum() / max(writes, 1.0)
        v_raw = det.visibility_raw(t_super) if t_super.coincidence_sum() else 0.0
        v_corr = (
            det.visibility_raw(corr_s) if corr_s.coincidence_sum() else 0.0
        )
        rows.append(
            {
                "delay_us": dt,
                "eta_raw": eta_raw,
                "eta_corrected": eta_corr,
                "visibility_raw": v_raw,
                "visibility_corrected": v_corr,
                "n_write_heralds": writes,
                "n_coincidences": corr_e.coincidence_sum(),
                "n_super_coincidences": corr_s.coincidence_sum(),
            }
        )

    t_arr = delays
    eta_arr = np.array([r["eta_corrected"] for r in rows])
    mean_eta = float(np.mean(eta_arr))
    # fit an exponential only when the data actually resolves a decay:
    # log-efficiency must correlate clearly with storage time, otherwise
    # the decay constant is unconstrained (e.g. an ideal memory)
    ok = eta_arr > 0.0
    resolves_decay = False
    if np.count_nonzero(ok) >= 3 and np.ptp(t_arr[ok]) > 0.0:
        r = float(np.corrcoef(t_arr[ok], np.log(eta_arr[ok]))[0, 1])
        resolves_decay = r < -0.5
    if resolves_decay:
        tau_guess = (
            node_cfg.tau_mem_us
            if math.isfinite(node_cfg.tau_mem_us)
            else float(t_arr[-1])
        )
        popt, pcov = curve_fit(
            lambda t, eta0, tau: eta0 * np.exp(-t / tau),
            t_arr,
            eta_arr,
            p0=[max(eta_arr[0], 1e-3), tau_guess],
            maxfev=20000,
        )
        eta0_fit = float(popt[0])
        tau_fit = float(popt[1])
        tau_sigma = float(math.sqrt(max(pcov[1, 1], 0.0)))
    else:
        # no resolvable decay over the scanned window (e.g. ideal memory)
        eta0_fit = mean_eta
        tau_fit = None
        tau_sigma = None

    # single-parameter amplitude fit of the visibility envelope; the decay
    # constant is the calibrated tau_vis of the node
    tau_vis = node_cfg.tau_vis_us
    decay = (
        np.exp(-t_arr / tau_vis) if math.isfinite(tau_vis) else np.ones_like(t_arr)
    )
    v_arr = np.array([r["visibility_corrected"] for r in rows])
    n_coinc = np.array([max(r["n_super_coincidences"], 1.0) for r in rows])
    weights = n_coinc / np.clip(1.0 - v_arr**2, 1e-6, 1.0)
    denom = float(np.sum(weights * decay * decay))
    v0 = float(np.sum(weights * decay * v_arr) / denom)
    v0_sigma = float(1.0 / math.sqrt(denom))
    # accidental subtraction adds noise beyond the binomial term the weights
    # assume, so calibrate the quoted sigma against the residual scatter
    if len(v_arr) > 1:
        chi2 = float(np.sum(weights * (v_arr - v0 * decay) ** 2))
        v0_sigma *= math.sqrt(max(chi2 / (len(v_arr) - 1), 1.0))
    if math.isfinite(tau_vis) and v0 * math.sqrt(2.0) > 1.0:
        crossing = tau_vis * math.log(v0 * math.sqrt(2.0))
        crossing_sigma = tau_vis * v0_sigma / v0
    else:
        crossing = None
        crossing_sigma = None

    body = {
        "node": node_cfg.node_id,
        "samples_per_point": cfg.samples,
        "points": rows,
        "fit": {
            "lifetime_us": tau_fit,
            "lifetime_sigma_us": tau_sigma,
            "eta0": eta0_fit,
            "visibility0": v0,
            "visibility0_sigma": v0_sigma,
            "tau_vis_us": tau_vis if math.isfinite(tau_vis) else None,
            "visibility_crossing_us": crossing,
            "visibility_crossing_sigma_us": crossing_sigma,
        },
    }
    header = [
        "delay_us",
        "eta_raw",
        "eta_corrected",
        "visibility_raw",
        "visibility_corrected",
        "n_write_heralds",
        "n_coincidences",
    ]
    artifacts = {
        "sweeps/lifetime.csv": ("rows", header, [[r[h] for h in header] for r in rows]),
        "counts/lifetime_eigen.csv": ("coincidence", eigen_tables),
        "counts/lifetime_super.csv": ("coincidence", super_tables),
    }
    return body, artifacts


def _run_two_node_swap(cfg: cf.ExperimentConfig, alloc: _ChunkCounter):
    params = _scenario_params(
        cfg, ("delta_omega_rad_per_us", "width_us", "point_width_us")
    )
    node_cfg = cfg.node("I")
    dw0 = 2.0 * math.pi / node_cfg.zeeman_period_us
    dws = np.asarray(
        params.get(
            "delta_omega_rad_per_us", dw0 * np.array([0.25, 0.5, 1.0, 2.0, 4.0])
        ),
        dtype=float,
    )
    widths = np.asarray(
        params.get("width_us", [0.02, 0.05, 0.1, 0.2, 0.4]), dtype=float
    )
    point_width = float(params.get("point_width_us", 0.05))

    def envelopes(width: float):
        f = op.Envelope.gaussian(0.0, width)
        return f, f

    f, g = envelopes(point_width)
    point = {
        "delta_omega_rad_per_us": dw0,
        "width_us": point_width,
        "fidelity_flip": op.averaged_swap_fidelity(True, f, g, dw0),
        "fidelity_noflip": op.averaged_swap_fidelity(False, f, g, dw0),
    }

    grid_rows = []
    for width in widths:
        f, g = envelopes(float(width))
        for dw in dws:
            grid_rows.append(
                [
                    float(dw),
                    float(width),
                    op.averaged_swap_fidelity(True, f, g, float(dw)),
                    op.averaged_swap_fidelity(False, f, g, float(dw)),
                ]
            )

    flips = np.array([r[2] for r in grid_rows])
    noflips = np.array([r[3] for r in grid_rows])
    body = {
        "point": point,
        "grid": grid_rows,
        "flip_min": float(flips.min()),
        "flip_max": float(flips.max()),
        "noflip_min": float(noflips.min()),
        "noflip_max": float(noflips.max()),
        "ordering_holds": bool(np.all(noflips < flips)),
    }
    header = ["delta_omega_rad_per_us", "width_us", "fidelity_flip", "fidelity_noflip"]
    artifacts = {"sweeps/two_node_swap.csv": ("rows", header, grid_rows)}
    return body, artifacts


def _setting_counts(
    settings, counts: list[np.ndarray], n_bits: int
) -> dict[str, w.SettingCounts]:
    out = {}
    for spec, arr in zip(settings, counts):
        table = {
            np.binary_repr(i, n_bits): int(c) for i, c in enumerate(arr) if c
        }
        out[spec.setting_id] = w.SettingCounts(
            spec.setting_id, table, total=float(arr.sum())
        )
    return out


def _exact_setting_counts(tables, n_bits: int, reducer=None) -> dict:
    scale = 1e12
    out = {}
    for table in tables:
        dist = table.outcome_distribution()
        if reducer is not None:
            dist = reducer(dist)
        counts = {
            np.binary_repr(i, n_bits): scale * p
            for i, p in enumerate(dist)
            if p > 1e-15
        }
        out[table.setting_id] = w.SettingCounts(table.setting_id, counts)
    return out


def _sample_event_tables(cfg, tables, alloc: _ChunkCounter) -> list[np.ndarray]:
    budgets = _split_budget(cfg.samples, len(tables))
    plans = []
    for table, budget in zip(tables, budgets):
        sizes = _chunk_sizes(budget)
        base = alloc.take(len(sizes))
        plans.append((table, sizes, base))

    tasks = []
    for ti, (table, sizes, base) in enumerate(plans):
        for k, size in enumerate(sizes):
            def task(table=table, size=size, chunk=base + k):
                rng = _chunk_rng(cfg.seed, chunk)
                return table.sample(size, rng)

            tasks.append((ti, task))

    results = _run_tasks([t for _, t in tasks], cfg.workers)
    counts = [np.zeros(64, dtype=np.int64) for _ in tables]
    for (ti, _), tally in zip(tasks, results):
        counts[ti] += tally
    return counts


def _ghz_common_body(cfg, tables) -> dict:
    return {
        "event_tables": {
            t.setting_id: {
                "p_sixfold": t.p_sixfold,
                "clean_probability": t.clean_probability,
                "clean_fraction": t.clean_probability / t.p_sixfold,
            }
            for t in tables
        },
        "conditional_success_estimate": ev.conditional_success_estimate(cfg),
        "rate": rate_arithmetic(cfg),
    }


def _run_ghz6(cfg: cf.ExperimentConfig, alloc: _ChunkCounter):
    _scenario_params(cfg, ())
    settings = ev.ghz6_settings()
    tables = ev.build_event_tables(cfg, settings)
    counts = _sample_event_tables(cfg, tables, alloc)

    sampled = _setting_counts(settings, counts, 6)
    fid, sigma = w.fidelity_from_counts(
        ev.GHZ6_SPEC, sampled, weights=cfg.calibration_weights
    )
    exact = _exact_setting_counts(tables, 6)
    fid_exact, _ = w.fidelity_from_counts(ev.GHZ6_SPEC, exact)
    p0, p1 = w.populations_from_counts(
        ev.GHZ6_SPEC, sampled["population"], weights=cfg.calibration_weights
    )

    body = {
        "heralded_samples": cfg.samples,
        "setting_counts": {
            sid: dict(sc.counts) for sid, sc in sampled.items()
        },
        "fidelity": {"estimate": fid, "sigma": sigma, "exact": fid_exact},
        "populations": {"pattern0": p0, "pattern1": p1},
    }
    body.update(_ghz_common_body(cfg, tables))
    artifacts = {
        "counts/ghz6_settings.csv": ("settings", list(sampled.values())),
    }
    return body, artifacts


def _run_ghz3(cfg: cf.ExperimentConfig, alloc: _ChunkCounter):
    _scenario_params(cfg, ())
    settings = ev.ghz3_settings()
    tables = ev.build_event_tables(cfg, settings)
    counts = _sample_event_tables(cfg, tables, alloc)

    mem_counts = [arr.reshape(8, 8).sum(axis=0) for arr in counts]
    herald_counts = np.sum([arr.reshape(8, 8).sum(axis=1) for arr in counts], axis=0)
    sampled = _setting_counts(settings, mem_counts, 3)
    fid, sigma = w.fidelity_from_counts(
        ev.GHZ3_SPEC, sampled, weights=cfg.calibration_weights
    )
    exact = _exact_setting_counts(
        tables, 3, reducer=lambda d: d.reshape(8, 8).sum(axis=0)
    )
    fid_exact, _ = w.fidelity_from_counts(ev.GHZ3_SPEC, exact)
    p0, p1 = w.populations_from_counts(
        ev.GHZ3_SPEC, sampled["population"], weights=cfg.calibration_weights
    )

    heralds = w.SettingCounts(
        "herald_patterns",
        {np.binary_repr(i, 3): int(c) for i, c in enumerate(herald_counts)},
        total=float(herald_counts.sum()),
    )
    body = {
        "heralded_samples": cfg.samples,
        "setting_counts": {sid: dict(sc.counts) for sid, sc in sampled.items()},
        "herald_pattern_counts": dict(heralds.counts),
        "fidelity": {"estimate": fid, "sigma": sigma, "exact": fid_exact},
        "populations": {"pattern0": p0, "pattern1": p1},
    }
    body.update(_ghz_common_body(cfg, tables))
    artifacts = {
        "counts/ghz3_settings.csv": ("settings", list(sampled.values())),
        "counts/ghz3_heralds.csv": ("settings", [heralds]),
    }
    return body, artifacts


_RUNNERS = {
    "pair_tomography": _run_pair_tomography,
    "raman_delay_sweep": _run_raman_delay_sweep,
    "lifetime_sweep": _run_lifetime_sweep,
    "two_node_swap": _run_two_node_swap,
    "ghz6": _run_ghz6,
    "ghz3": _run_ghz3,
}


@dataclass
class RunReport:
    """Scenario result: a deterministic body plus execution metadata.

    ``body`` is a pure function of (config, seed); ``body_json()`` is the
    byte-exact serialization the determinism contract applies to.  Wall
    time, worker count and software version live in ``meta``.  ``artifacts``
    maps relative output paths to payloads for ``emit_report``.
    """

    scenario: str
    seed: int
    body: dict
    meta: dict
    artifacts: dict = field(default_factory=dict, repr=False)

    def body_json(self) -> str:
        return json.dumps(self.body, sort_keys=True, indent=2)


def run_scenario(cfg: cf.ExperimentConfig) -> RunReport:
    """Execute the configured scenario and assemble its report.

    Heralded scenarios (ghz6, ghz3) interpret ``cfg.samples`` as the total
    number of heralded events, split round-robin over witness settings;
    sweep scenarios use it per sweep point and pair_tomography per basis.
    """
    if cfg.scenario not in _RUNNERS:
        raise ValueError(f"unknown scenario {cfg.scenario!r}")
    started = time.perf_counter()
    alloc = _ChunkCounter()
    body, artifacts = _RUNNERS[cfg.scenario](cfg, alloc)

    config_echo = cfg.to_dict()
    # execution details must not influence the deterministic body
    for volatile in ("workers", "out_dir"):
        config_echo.pop(volatile, None)
    full_body = {
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "samples": cfg.samples,
        "config": config_echo,
        **body,
    }
    meta = {
        "version": __version__,
        "wall_time_s": time.perf_counter() - started,
        "workers": cfg.workers,
    }
    return RunReport(
        scenario=cfg.scenario,
        seed=cfg.seed,
        body=_plain(full_body),
        meta=meta,
        artifacts=artifacts,
    )


def emit_report(report: RunReport, out_dir) -> list[str]:
    """Write report.json plus the scenario's counts/ and sweeps/ CSV files."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    written = []
    report_path = out / "report.json"
    payload = {
        "schema_version": cf.SCHEMA_VERSION,
        "scenario": report.scenario,
        "seed": report.seed,
        "body": report.body,
        "meta": report.meta,
    }
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    written.append(str(report_path))

    for rel, payload in report.artifacts.items():
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        kind = payload[0]
        if kind == "coincidence":
            det.write_coincidence_csv(path, payload[1])
        elif kind == "settings":
            w.write_setting_counts_csv(path, payload[1])
        elif kind == "rows":
            _, header, rows = payload
            lines = [",".join(header)]
            for row in rows:
                lines.append(",".join(_csv_cell(v) for v in row))
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write("\n".join(lines) + "\n")
        else:
            raise ValueError(f"unknown artifact kind {kind!r}")
        written.append(str(path))
    return written


def _csv_cell(v) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return repr(v) if isinstance(v, float) else str(v)
