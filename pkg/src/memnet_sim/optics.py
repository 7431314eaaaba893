"""Connection station optics: polarization maps, PBS routing, heralding.

Station layout and conventions, pinned once here:

* Write-out photons arrive from nodes I, II, III with circular polarization
  correlated to the spin.  Before the station each photon passes a
  quarter-wave plate implementing ``polarization_map``: nodes I and II map
  ``sigma+ -> H``, node III maps ``sigma+ -> V``.
* Every polarizing beamsplitter transmits H and reflects V.  The cascade of
  beamsplitters acts as a pure mode permutation from (input node, linear
  polarization) to output port::

      node I:   H -> port 0    V -> port 2
      node II:  H -> port 1    V -> port 0
      node III: H -> port 2    V -> port 1

  Ports 0, 1, 2 are the three analysis arms (the primed modes of the
  station).  Only the all-H and all-V input patterns put one photon in each
  port, so a threefold coincidence post-selects exactly those two branches.
  Photons that collide in a port always carry opposite polarizations, so no
  two-photon bunching amplitudes arise anywhere in the cascade.
* The two surviving branches can carry different frequency tags.  A node's
  ``sigma+`` photon is detuned by +dw/2 and ``sigma-`` by -dw/2 (Zeeman
  splitting dw).  Tracing over unresolved detection times then multiplies
  the branch coherence by temporal-overlap integrals; with one envelope per
  node only port 0 mixes different frequencies and contributes a beat factor
  ``integral(conj(e_II) e_I exp(i dw t) dt)``.

Register order of the heralded six-qubit state: port photons
``photon("S", 0..2)`` then memory spins of nodes I, II, III.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import quantum as q

NODE_IDS = ("I", "II", "III")

# (input index, linear polarization) -> station output port
ROUTE = {
    (0, "H"): 0,
    (0, "V"): 2,
    (1, "H"): 1,
    (1, "V"): 0,
    (2, "H"): 2,
    (2, "V"): 1,
}

_MAP_CIRCULAR_TO_H = np.array([[1, -1j], [1, 1j]], dtype=complex) / math.sqrt(2)
_MAP_CIRCULAR_TO_V = np.array([[1, 1j], [1, -1j]], dtype=complex) / math.sqrt(2)

STATION_PORTS = tuple(q.photon("S", k) for k in range(3))
MEMORY_SPINS = tuple(q.spin(nid) for nid in NODE_IDS)


def polarization_map(node_id: str) -> np.ndarray:
    """Waveplate unitary applied to a node's write-out photon.

    Nodes I and II send ``sigma+`` to H; node III sends ``sigma+`` to V,
    which makes the two heralded branches all-H and all-V.
    """
    if node_id in ("I", "II"):
        return _MAP_CIRCULAR_TO_H.copy()
    if node_id == "III":
        return _MAP_CIRCULAR_TO_V.copy()
    raise ValueError(f"unknown node_id {node_id!r}")


@dataclass(frozen=True)
class Envelope:
    """Temporal amplitude profile on a uniform grid, unit squared-norm.

    ``values[k]`` is the complex amplitude at ``start_us + k * step_us``.
    The squared modulus integrates to one (trapezoidal rule), so it is the
    detection-time probability density of the photon.
    """

    start_us: float
    step_us: float
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=complex)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("envelope needs a 1-D grid of at least two samples")
        if not self.step_us > 0.0:
            raise ValueError("step_us must be positive")
        norm = np.trapezoid(np.abs(vals) ** 2, dx=self.step_us)
        if norm <= 0.0:
            raise ValueError("envelope has zero norm")
        vals = vals / math.sqrt(norm)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def times_us(self) -> np.ndarray:
        return self.start_us + self.step_us * np.arange(self.values.size)

    @property
    def end_us(self) -> float:
        return self.start_us + self.step_us * (self.values.size - 1)

    def values_at(self, t_us) -> np.ndarray:
        """Amplitude at arbitrary times, zero outside the grid."""
        t = np.asarray(t_us, dtype=float)
        grid = self.times_us
        re = np.interp(t, grid, self.values.real, left=0.0, right=0.0)
        im = np.interp(t, grid, self.values.imag, left=0.0, right=0.0)
        return re + 1j * im

    def overlap(self, other: "Envelope", delta_omega_rad_per_us: float = 0.0) -> complex:
        """Mode overlap ``integral(conj(other) * self * exp(i dw t) dt)``.

        This is the inner product of the two temporal modes when ``self`` is
        detuned by ``+delta_omega`` relative to ``other``; its modulus never
        exceeds one.
        """
        same_grid = (
            self.start_us == other.start_us
            and self.step_us == other.step_us
            and self.values.size == other.values.size
        )
        if same_grid:
            t = self.times_us
            a, b = self.values, other.values
        else:
            t = np.union1d(self.times_us, other.times_us)
            a, b = self.values_at(t), other.values_at(t)
        integrand = np.conj(b) * a * np.exp(1j * delta_omega_rad_per_us * t)
        return complex(np.trapezoid(integrand, t))

    @classmethod
    def gaussian(
        cls, center_us: float, width_us: float, n: int = 512, span_widths: float = 4.0
    ) -> "Envelope":
        """Gaussian intensity profile with standard deviation ``width_us``."""
        if width_us <= 0.0:
            raise ValueError("width_us must be positive")
        start = center_us - span_widths * width_us
        step = 2.0 * span_widths * width_us / (n - 1)
        t = start + step * np.arange(n)
        amp = np.exp(-((t - center_us) ** 2) / (4.0 * width_us**2))
        return cls(start, step, amp)

    @classmethod
    def square(cls, start_us: float, width_us: float, n: int = 512) -> "Envelope":
        if width_us <= 0.0:
            raise ValueError("width_us must be positive")
        step = width_us / (n - 1)
        return cls(start_us, step, np.ones(n))

    @classmethod
    def exponential_decay(
        cls, start_us: float, tau_us: float, n: int = 512, span_taus: float = 8.0
    ) -> "Envelope":
        """One-sided decay with intensity lifetime ``tau_us``."""
        if tau_us <= 0.0:
            raise ValueError("tau_us must be positive")
        step = span_taus * tau_us / (n - 1)
        t = step * np.arange(n)
        return cls(start_us, step, np.exp(-t / (2.0 * tau_us)))

    def to_csv(self, path) -> None:
        rows = np.column_stack([self.times_us, self.values.real, self.values.imag])
        np.savetxt(path, rows, delimiter=",", header="time_us,re,im", comments="")

    @classmethod
    def from_csv(cls, path) -> "Envelope":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "time_us,re,im":
                raise ValueError(f"bad envelope CSV header {header!r}")
            rows = np.loadtxt(fh, delimiter=",", ndmin=2)
        if rows.shape[1] != 3 or rows.shape[0] < 2:
            raise ValueError("envelope CSV needs columns time_us,re,im")
        t = rows[:, 0]
        steps = np.diff(t)
        if steps.min() <= 0 or not np.allclose(steps, steps[0], rtol=1e-6, atol=0.0):
            raise ValueError("envelope CSV times must be uniformly increasing")
        return cls(float(t[0]), float(steps.mean()), rows[:, 1] + 1j * rows[:, 2])


@dataclass(frozen=True)
class PhotonMode:
    """One photonic mode: polarization amplitudes plus optional tags.

    ``polarization`` holds (H, V) amplitudes.  ``freq_tag`` marks the Zeeman
    sideband ("+" or "-") and ``envelope`` the temporal profile; both default
    to None for a mode where the distinction does not matter.
    """

    polarization: np.ndarray
    freq_tag: str | None = None
    envelope: Envelope | None = None

    def __post_init__(self) -> None:
        pol = np.asarray(self.polarization, dtype=complex).reshape(-1)
        if pol.size != 2:
            raise ValueError("polarization must have two amplitudes")
        if abs(np.linalg.norm(pol) - 1.0) > q.TOL:
            raise ValueError("polarization amplitudes must be normalized")
        if self.freq_tag not in (None, "+", "-"):
            raise ValueError(f"freq_tag must be '+', '-' or None, got {self.freq_tag!r}")
        pol.setflags(write=False)
        object.__setattr__(self, "polarization", pol)


def pbs_transform(in_a: PhotonMode, in_b: PhotonMode) -> dict:
    """Two photons through one polarizing beamsplitter.

    Input a transmits to port 0 and reflects to port 1; input b transmits to
    port 1 and reflects to port 0 (H transmits, V reflects).  Returns a map
    from the sorted pair ``((port, pol), (port, pol))`` to its amplitude.
    Opposite polarizations never share a creation operator, so no bunching
    factors appear.
    """
    routes = {(0, "H"): 0, (0, "V"): 1, (1, "H"): 1, (1, "V"): 0}
    joint: dict[tuple, complex] = {}
    for pol_a, amp_a in zip("HV", in_a.polarization):
        for pol_b, amp_b in zip("HV", in_b.polarization):
            amp = amp_a * amp_b
            if amp == 0:
                continue
            key = tuple(
                sorted([(routes[(0, pol_a)], pol_a), (routes[(1, pol_b)], pol_b)])
            )
            joint[key] = joint.get(key, 0.0) + amp
    return joint


def post_select_one_per_port(joint: dict) -> tuple[dict, float]:
    """Keep only terms with the two photons in distinct ports."""
    kept = {k: v for k, v in joint.items() if k[0][0] != k[1][0]}
    prob = sum(abs(v) ** 2 for v in kept.values())
    return kept, float(prob)


def _branch_coherence(envelopes, delta_omega_rad_per_us: float) -> complex:
    """Temporal-mode overlap factor between the all-H and all-V branches.

    Port 0 receives node I's sigma+ photon in one branch and node II's
    sigma- photon in the other, hence the beat at ``delta_omega``; ports 1
    and 2 mix equal frequencies.
    """
    if envelopes is None:
        return 1.0
    if hasattr(envelopes, "keys"):
        env = [envelopes[nid] for nid in NODE_IDS]
    else:
        env = list(envelopes)
    if len(env) != 3:
        raise ValueError("need one envelope per node")
    kappa0 = env[0].overlap(env[1], delta_omega_rad_per_us)
    kappa1 = env[1].overlap(env[2])
    kappa2 = env[2].overlap(env[0])
    return kappa0 * kappa1 * kappa2


def connect_three(
    pairs,
    *,
    envelopes=None,
    delta_omega_rad_per_us: float = 0.0,
    extra_coherence: float = 1.0,
    rng: np.random.Generator | None = None,
) -> tuple[q.DensityMatrix, float]:
    """Herald station: three photon-spin pairs in, six-qubit state out.

    ``pairs`` are the three pair states for nodes I, II, III with the
    polarization maps already applied (photons in the H/V frame).  The
    station post-selects one photon per output port, which keeps exactly the
    all-H and all-V routing branches.  Returns the heralded state over
    ``(port photons 0..2, spins I..III)`` and the success probability; the
    discarded probability is its complement by construction.

    ``envelopes`` (optional, one per node) and ``delta_omega_rad_per_us``
    set the temporal-mode overlap of the two branches; ``extra_coherence``
    multiplies the branch coherence on top of that, as a catch-all for
    interference imperfections.  The transformation itself is deterministic;
    ``rng`` is accepted for interface uniformity and never drawn from.
    """
    del rng
    pairs = tuple(pairs)
    if len(pairs) != 3:
        raise ValueError(f"connect_three needs exactly three pairs, got {len(pairs)}")
    if not 0.0 <= extra_coherence <= 1.0:
        raise ValueError("extra_coherence must lie in [0, 1]")
    rho = None
    for nid, pair in zip(NODE_IDS, pairs):
        expected = (q.photon(nid), q.spin(nid))
        if pair.register != expected:
            raise ValueError(
                f"pair for node {nid} must have register {expected}, "
                f"got {pair.register}"
            )
        rho = pair if rho is None else q.tensor_product(rho, pair)
    if isinstance(rho, q.StateVector):
        rho = rho.density()

    # branch blocks over the three spins: photons pinned to all-H or all-V
    t = rho.matrix.reshape([2] * 12)
    blocks = {}
    for b_row in (0, 1):
        for b_col in (0, 1):
            sel: list = [slice(None)] * 12
            sel[0] = sel[2] = sel[4] = b_row
            sel[6] = sel[8] = sel[10] = b_col
            blocks[(b_row, b_col)] = t[tuple(sel)].reshape(8, 8)

    success = float(np.real(np.trace(blocks[(0, 0)]) + np.trace(blocks[(1, 1)])))
    if success < 1e-15:
        raise ValueError("post-selection has zero probability for these pairs")

    xi = extra_coherence * _branch_coherence(envelopes, delta_omega_rad_per_us)
    out = np.zeros((8, 8, 8, 8), dtype=complex)
    out[0, :, 0, :] = blocks[(0, 0)]
    out[7, :, 7, :] = blocks[(1, 1)]
    out[0, :, 7, :] = xi * blocks[(0, 1)]
    out[7, :, 0, :] = np.conj(xi) * blocks[(1, 0)]
    register = STATION_PORTS + MEMORY_SPINS
    return q.DensityMatrix(register, out.reshape(64, 64) / success), success


@dataclass(frozen=True)
class HeraldPattern:
    """Diagonal-basis outcomes of the three station ports."""

    outcomes: tuple[str, str, str]

    def __post_init__(self) -> None:
        if len(self.outcomes) != 3 or any(o not in ("D", "A") for o in self.outcomes):
            raise ValueError(f"outcomes must be three of D/A, got {self.outcomes!r}")
        object.__setattr__(self, "outcomes", tuple(self.outcomes))

    @classmethod
    def from_bits(cls, bits) -> "HeraldPattern":
        return cls(tuple("DA"[b] for b in bits))

    @classmethod
    def from_string(cls, s: str) -> "HeraldPattern":
        return cls(tuple(s))

    @property
    def bits(self) -> tuple[int, ...]:
        return tuple(0 if o == "D" else 1 for o in self.outcomes)

    @property
    def string(self) -> str:
        return "".join(self.outcomes)

    @property
    def needs_feedforward(self) -> bool:
        """True when the number of A outcomes is odd (negative-phase branch)."""
        return sum(self.bits) % 2 == 1


ALL_HERALD_PATTERNS = tuple(
    HeraldPattern.from_bits(q.index_to_bits(i, 3)) for i in range(8)
)


def herald_probabilities(state6: q.State) -> np.ndarray:
    """Probabilities of the 8 diagonal-basis port patterns, index = bits."""
    probs = q.measurement_probabilities(state6, q.BASIS_DA, list(STATION_PORTS))
    return probs.reshape(-1)


def project_and_feedforward(
    state6: q.State,
    rng: np.random.Generator | None = None,
    outcome: HeraldPattern | str | None = None,
) -> tuple[HeraldPattern, q.DensityMatrix]:
    """Measure the port photons in D/A and correct the memory phase.

    Half of the patterns (odd number of A clicks) herald the negative-phase
    branch; those get a phase flip on node I's memory so every pattern
    leaves the memories in the same state.  Pass ``outcome`` to force a
    pattern instead of sampling it with ``rng``.
    """
    if isinstance(outcome, str):
        outcome = HeraldPattern.from_string(outcome)
    forced = None if outcome is None else outcome.bits
    bits, _prob, post = q.measure_projective(
        state6, q.BASIS_DA, list(STATION_PORTS), rng=rng, outcome=forced
    )
    pattern = HeraldPattern.from_bits(bits)
    memories = q.partial_trace(post, STATION_PORTS)
    if pattern.needs_feedforward:
        memories = q.apply_unitary(memories, q.PAULI_Z, [q.spin("I")])
    return pattern, memories


def _require_in_span(t_us: float, f: Envelope, g: Envelope, name: str) -> None:
    lo = min(f.start_us, g.start_us)
    hi = max(f.end_us, g.end_us)
    if not lo <= t_us <= hi:
        raise ValueError(f"{name} = {t_us} outside the envelope grids [{lo}, {hi}]")


def swap_two_node(
    flip: bool,
    t3_us: float,
    t4_us: float,
    f: Envelope,
    g: Envelope,
    delta_omega_rad_per_us: float,
    branch: int = 1,
) -> q.StateVector:
    """Conditional two-memory state after a two-node swap herald.

    Two read photons, one per node, interfere at a central beamsplitter and
    are detected at times ``t3_us`` and ``t4_us``.  A spin in ``down`` emits
    into envelope ``f`` on the upper Zeeman sideband; ``up`` emits into
    ``g`` detuned by ``-delta_omega``.  Without the conditional spin flip
    the herald leaves the memories in

        f(t3) f(t4) |down,down> + branch * exp(-i dw (t3+t4)) g(t3) g(t4) |up,up>

    normalized, so the detection times set both the amplitude ratio and the
    relative phase.  With the flip protocol the two branches share one
    detection amplitude and the state is a fixed Bell state, independent of
    times, envelopes and detuning.  ``branch`` (+1 or -1) selects which
    detector combination fired.
    """
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    _require_in_span(t3_us, f, g, "t3_us")
    _require_in_span(t4_us, f, g, "t4_us")
    register = (q.spin("I"), q.spin("II"))
    if flip:
        amp = np.array([0.0, 1.0, branch, 0.0], dtype=complex) / math.sqrt(2)
        return q.StateVector(register, amp)
    a_down = complex(f.values_at(t3_us)) * complex(f.values_at(t4_us))
    if a_down == 0:
        raise ValueError(
            "conditional state undefined: f vanishes at a detection time"
        )
    phase = np.exp(-1j * delta_omega_rad_per_us * (t3_us + t4_us))
    a_up = branch * phase * complex(g.values_at(t3_us)) * complex(g.values_at(t4_us))
    amp = np.array([a_down, 0.0, 0.0, a_up], dtype=complex)
    return q.StateVector(register, amp / np.linalg.norm(amp))


def averaged_swap_fidelity(
    flip: bool,
    f: Envelope,
    g: Envelope,
    delta_omega_rad_per_us: float,
    branch: int = 1,
) -> float:
    """Bell fidelity after averaging the herald over detection times.

    Integrates the conditional state against the joint detection-time
    density on the envelope grid (trapezoidal rule in both times) and
    evaluates the result against the ideal Bell state of the respective
    setting.  In the flip setting the conditional state is time independent
    and the average stays at fidelity one; without the flip the detection
    time pair dephases the herald and the average drops.
    """
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    t = np.union1d(f.times_us, g.times_us)
    fa = f.values_at(t)
    ga = g.values_at(t) * np.exp(-1j * delta_omega_rad_per_us * t)
    if flip:
        common = np.outer(fa, ga)
        amps = {1: common, 2: branch * common}
        target = {1: 1.0 / math.sqrt(2), 2: branch / math.sqrt(2)}
    else:
        amps = {0: np.outer(fa, fa), 3: branch * np.outer(ga, ga)}
        target = {0: 1.0 / math.sqrt(2), 3: branch / math.sqrt(2)}

    overlap = sum(np.conj(target[j]) * amps[j] for j in amps)
    numerator = np.abs(overlap) ** 2
    density = sum(np.abs(c) ** 2 for c in amps.values())

    def integrate(grid2d):
        return np.trapezoid(np.trapezoid(grid2d, t, axis=1), t)

    return float(integrate(numerator) / integrate(density))
