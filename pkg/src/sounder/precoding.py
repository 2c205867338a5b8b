"""MRT and phase-only precoding vectors and beam power maps."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class Precoder:
    """Transmit weight vector; both kinds carry unit total power."""

    weights: np.ndarray
    kind: str  # "mrt" | "po"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=complex)
        if self.kind not in ("mrt", "po"):
            raise ValueError(f"unknown precoder kind {self.kind!r}")


def similarity(h: np.ndarray, c) -> float:
    """|<h, c>| - magnitude of the conjugated inner product."""
    w = c.weights if isinstance(c, Precoder) else np.asarray(c)
    h = np.asarray(h)
    if h.shape != w.shape:
        raise ValueError(f"length mismatch: {h.shape} vs {w.shape}")
    return float(np.abs(np.vdot(w, h)))


def mrt_weights(h: np.ndarray) -> Precoder:
    """Unit-norm matched precoder: similarity(h, mrt(h)) equals ||h||."""
    h = np.asarray(h, dtype=complex)
    norm = np.linalg.norm(h)
    if norm == 0:
        raise ValueError("cannot match a zero channel vector")
    return Precoder(weights=h / norm, kind="mrt")


def po_weights(h: np.ndarray) -> Precoder:
    """Constant-modulus precoder from the channel phases, entries 1/sqrt(N).

    Zero entries take phase 0 by convention (logged, since their phase is
    undefined).
    """
    h = np.asarray(h, dtype=complex)
    n_zero = int(np.count_nonzero(h == 0))
    if n_zero:
        log.warning("po_weights: %d zero entries, using phase 0 for them", n_zero)
    return Precoder(weights=np.exp(1j * np.angle(h)) / np.sqrt(h.size), kind="po")


def beam_power_map(dataset, precoder, subcarrier_policy: str = "power_mean"):
    """Received beam power per record as ``(x, y, power_db)`` rows.

    ``power_mean`` (default) averages |<h_f, c>|^2 over the active bins;
    the remaining policies first collapse the record to a narrowband vector
    (see ``clustering.reduce_subcarriers``) and take a single inner product.
    """
    from .clustering import reduce_subcarriers

    w = precoder.weights if isinstance(precoder, Precoder) else np.asarray(precoder)
    rows = []
    for rec in dataset.records:
        if subcarrier_policy == "power_mean":
            p = float(np.mean(np.abs(w.conj() @ rec.h) ** 2))
        else:
            v = reduce_subcarriers(rec, subcarrier_policy)
            p = similarity(v, w) ** 2
        rows.append((rec.tag.x, rec.tag.y, 10.0 * np.log10(max(p, 1e-300))))
    return rows


def write_map_csv(rows, path, value_name: str = "power_db") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", value_name])
        for x, y, v in rows:
            writer.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
