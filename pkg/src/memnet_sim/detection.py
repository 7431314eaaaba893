"""Detector layer: clicks, coincidence tables, accidental subtraction.

Two-channel polarization analysis of the write-out/read-out photon pair.
Coincidences are labeled ``n_ij`` with ``i`` the write-out and ``j`` the
read-out outcome in the circular basis; ``n_woR`` etc. are the raw singles
of each channel and ``N`` the number of trials.  Accidental coincidences
between uncorrelated singles are estimated as ``n_woI * n_roJ / N`` and
subtracted cell by cell; corrected counts stay fractional on purpose since
every downstream quantity is a count ratio.

``p_w`` and ``eta_r0`` in the node model are detected probabilities, so
``DetectorConfig.efficiency`` defaults to 1 and exists for sensitivity
studies only; setting it below 1 on top of the node defaults would double
count losses.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import quantum as q

_TOL = 1e-9

CSV_HEADER = "n_RL,n_LR,n_LL,n_RR,n_woR,n_woL,n_roR,n_roL,N"
_FIELDS = CSV_HEADER.split(",")


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float = 1.0
    dark_count_prob: float = 0.0
    window_us: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError(f"efficiency {self.efficiency} outside [0, 1]")
        if not 0.0 <= self.dark_count_prob <= 1.0:
            raise ValueError(f"dark_count_prob {self.dark_count_prob} outside [0, 1]")
        if self.window_us <= 0.0:
            raise ValueError("window_us must be positive")


@dataclass(frozen=True)
class CoincidenceTable:
    """Pair coincidences, channel singles and the trial count.

    Fields are reals: raw tables hold integer values, corrected tables
    fractional ones.  Tables merge by field-wise addition.
    """

    n_RL: float = 0.0
    n_LR: float = 0.0
    n_LL: float = 0.0
    n_RR: float = 0.0
    n_woR: float = 0.0
    n_woL: float = 0.0
    n_roR: float = 0.0
    n_roL: float = 0.0
    N: float = 0.0

    def __post_init__(self) -> None:
        for name in _FIELDS:
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        pairings = [
            ("n_woR", self.n_RL + self.n_RR),
            ("n_woL", self.n_LL + self.n_LR),
            ("n_roR", self.n_RR + self.n_LR),
            ("n_roL", self.n_RL + self.n_LL),
        ]
        for name, used in pairings:
            if getattr(self, name) < used - _TOL:
                raise ValueError(
                    f"{name} smaller than the coincidences it participates in"
                )

    def __add__(self, other: "CoincidenceTable") -> "CoincidenceTable":
        return CoincidenceTable(
            **{name: getattr(self, name) + getattr(other, name) for name in _FIELDS}
        )

    def coincidence_sum(self) -> float:
        return self.n_RL + self.n_LR + self.n_LL + self.n_RR


def detect(
    polarization,
    cfg: DetectorConfig,
    rng: np.random.Generator,
    basis: np.ndarray | None = None,
    n: int | None = None,
):
    """Click pattern of a two-channel analyzer for one photonic mode.

    ``polarization`` is a two-amplitude H/V state or None for vacuum.  The
    photon is routed to one analyzer output by the Born rule in ``basis``
    (circular R/L by default, channel 0 = first basis column) and produces a
    click there with probability ``cfg.efficiency``; each channel fires on
    its own with ``cfg.dark_count_prob`` per window.  Returns a boolean pair
    for a single window, or an ``(n, 2)`` array when ``n`` is given.
    """
    scalar = n is None
    count = 1 if scalar else int(n)
    dark = rng.random((count, 2)) < cfg.dark_count_prob
    if polarization is None:
        clicks = dark
    else:
        if basis is None:
            basis = q.BASIS_RL
        pol = np.asarray(polarization, dtype=complex).reshape(2)
        p0 = abs(np.vdot(basis[:, 0], pol)) ** 2
        channel = (rng.random(count) >= p0).astype(int)
        fires = rng.random(count) < cfg.efficiency
        clicks = dark.copy()
        clicks[np.arange(count), channel] |= fires
    if scalar:
        return bool(clicks[0, 0]), bool(clicks[0, 1])
    return clicks


def visibility_raw(table: CoincidenceTable) -> float:
    """Polarization correlation visibility of the four coincidence counts."""
    total = table.coincidence_sum()
    if total <= 0.0:
        raise ValueError("visibility undefined: no coincidences")
    return (table.n_RL + table.n_LR - table.n_LL - table.n_RR) / total


def subtract_accidentals(table: CoincidenceTable) -> tuple[CoincidenceTable, bool]:
    """Remove the uncorrelated-singles floor from each coincidence cell.

    Each cell loses the accidental estimate ``n_wo(i) * n_ro(j) / N``.  The
    singles and trial count pass through unchanged.  Returns the corrected
    table and a flag that is True when any cell went negative and was
    clamped to zero.
    """
    if table.N <= 0.0:
        raise ValueError("subtract_accidentals needs N > 0")
    corrected = {
        "n_RL": table.n_RL - table.n_woR * table.n_roL / table.N,
        "n_LR": table.n_LR - table.n_woL * table.n_roR / table.N,
        "n_LL": table.n_LL - table.n_woL * table.n_roL / table.N,
        "n_RR": table.n_RR - table.n_woR * table.n_roR / table.N,
    }
    clamped = any(v < 0.0 for v in corrected.values())
    corrected = {k: max(v, 0.0) for k, v in corrected.items()}
    return replace(table, **corrected), clamped


def _fmt(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def write_coincidence_csv(path, tables) -> None:
    if isinstance(tables, CoincidenceTable):
        tables = [tables]
    lines = [CSV_HEADER]
    for t in tables:
        lines.append(",".join(_fmt(getattr(t, name)) for name in _FIELDS))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_coincidence_csv(path) -> list[CoincidenceTable]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"bad coincidence CSV header {header!r}")
        tables = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            values = line.split(",")
            if len(values) != len(_FIELDS):
                raise ValueError(f"bad coincidence CSV row {line!r}")
            tables.append(
                CoincidenceTable(**dict(zip(_FIELDS, map(float, values))))
            )
    return tables
