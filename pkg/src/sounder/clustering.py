"""k-means user clustering with MRT and phase-only centroid updates.

Both variants share the same assignment rule (largest matched-filter response,
ties to the lowest cluster index) and the same random initialization: K
distinct record indices drawn from the seed.  They differ only in how a
center is built from its members:

* MRT: Euclidean-normalized vector sum of the member channel vectors.
* PO: arithmetic mean of the per-entry unit phasors.  Interior iterations
  keep that literal mean; the constant-modulus projection is applied only
  when a center is exported as a transmit precoder.

A fixed iteration count is run with no convergence exit (an optional
early-exit on unchanged labels exists behind a flag).  A cluster that loses
all members is re-seeded from the record with the lowest similarity to its
assigned center.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

KINDS = ("mrt", "po")
POLICIES = ("center_bin", "mean_coherent", "principal_direction")


@dataclass
class ClusterModel:
    """Result of one clustering run; centers are in interior (update) form."""

    kind: str
    centers: np.ndarray  # (K, n_antennas)
    assignments: np.ndarray  # (M,)
    iterations_run: int
    seed: int

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.centers.shape[1]


def reduce_subcarriers(record, policy: str = "principal_direction") -> np.ndarray:
    """Collapse a record's antenna x subcarrier matrix to one vector per antenna.

    center_bin: the active bin nearest DC (ties toward positive frequency).
    mean_coherent: per-antenna average after de-rotating each bin by its
        first-antenna phase.
    principal_direction: dominant left singular direction scaled by
        sigma_1 / sqrt(n_bins), with the global phase fixed so the
        largest-magnitude entry is real positive.
    """
    h = np.asarray(record.h, dtype=complex)
    if policy == "center_bin":
        # active bins are stored in natural FFT order, so column 0 is the
        # bin nearest DC (positive side wins the distance tie)
        return h[:, 0].copy()
    if policy == "mean_coherent":
        ref = np.exp(-1j * np.angle(h[0]))
        return (h * ref[None, :]).mean(axis=1)
    if policy == "principal_direction":
        gram = h @ h.conj().T
        w, v = np.linalg.eigh(gram)
        vec = v[:, -1] * np.sqrt(max(w[-1], 0.0) / h.shape[1])
        anchor = int(np.argmax(np.abs(vec)))
        return vec * np.exp(-1j * np.angle(vec[anchor]))
    raise ValueError(f"unknown subcarrier policy {policy!r}")


def channel_views(dataset, policy: str = "principal_direction") -> np.ndarray:
    """(M, n_antennas) matrix of per-record channel vectors under one policy."""
    return np.array([reduce_subcarriers(rec, policy) for rec in dataset.records])


def init_indices(n_records: int, k: int, seed: int) -> np.ndarray:
    """The K distinct record indices both variants use for a given seed."""
    if k > n_records:
        raise ValueError(f"K ({k}) exceeds record count ({n_records})")
    if k < 1:
        raise ValueError("K must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.choice(n_records, size=k, replace=False)


def _project(v: np.ndarray, kind: str) -> np.ndarray:
    if kind == "mrt":
        return v / np.linalg.norm(v)
    return np.exp(1j * np.angle(v))


def init_centers(views: np.ndarray, k: int, kind: str, seed: int) -> np.ndarray:
    """Seed centers from K random records: normalized (MRT) or phase-only (PO)."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    idx = init_indices(views.shape[0], k, seed)
    return np.array([_project(views[i], kind) for i in idx])


def assign(views: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Label each record with the center of largest |<h, c>|, ties to lowest index."""
    if centers.shape[0] < 1:
        raise ValueError("need at least one center")
    sim = np.abs(views @ centers.conj().T)
    return np.argmax(sim, axis=1)


def update_centers(views: np.ndarray, labels: np.ndarray, centers: np.ndarray,
                   kind: str) -> np.ndarray:
    """One centroid update; empty clusters re-seed from the worst-served record.

    ``centers`` are the centers that produced ``labels`` (needed to rank how
    well each record is served).  Multiple empty clusters take successive
    worst records.
    """
    k = centers.shape[0]
    new = np.empty_like(centers)
    empties = []
    for j in range(k):
        members = views[labels == j]
        if members.shape[0] == 0:
            empties.append(j)
            continue
        if kind == "mrt":
            s = members.sum(axis=0)
            new[j] = s / np.linalg.norm(s)
        else:
            new[j] = np.exp(1j * np.angle(members)).mean(axis=0)
    if empties:
        sim = np.abs(views @ centers.conj().T)
        served = sim[np.arange(views.shape[0]), labels]
        order = np.argsort(served, kind="stable")
        for rank, j in enumerate(empties):
            new[j] = _project(views[order[rank]], kind)
    return new


def kmeans(views, k: int, kind: str, iterations: int = 30, seed: int = 0,
           policy: str = "principal_direction", early_exit: bool = False) -> ClusterModel:
    """Run the fixed-iteration clustering loop and return the fitted model.

    ``views`` is either an (M, n_antennas) complex matrix or a Dataset (then
    ``policy`` selects the subcarrier collapse).  Exactly ``iterations``
    assign/update rounds run unless ``early_exit`` is set and labels stop
    changing; the returned assignment is recomputed against the final centers.
    """
    if not isinstance(views, np.ndarray):
        views = channel_views(views, policy)
    views = np.asarray(views, dtype=complex)
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    centers = init_centers(views, k, kind, seed)
    labels = None
    ran = 0
    for _ in range(iterations):
        new_labels = assign(views, centers)
        centers = update_centers(views, new_labels, centers, kind)
        ran += 1
        if early_exit and labels is not None and np.array_equal(labels, new_labels):
            labels = new_labels
            break
        labels = new_labels
    final = assign(views, centers)
    return ClusterModel(kind=kind, centers=centers, assignments=final,
                        iterations_run=ran, seed=seed)


def export_precoders(model: ClusterModel) -> np.ndarray:
    """Transmit precoders from a model: unit power for both kinds.

    MRT centers are already unit norm; PO centers are projected to constant
    modulus 1/sqrt(N) so SIR comparisons across kinds are power-fair.
    """
    if model.kind == "mrt":
        return model.centers.copy()
    n = model.centers.shape[1]
    return np.exp(1j * np.angle(model.centers)) / np.sqrt(n)


def _fmt_complex(z: complex) -> str:
    sign = "+" if z.imag >= 0 else "-"
    return f"{z.real!r}{sign}{abs(z.imag)!r}j"


def save_model(model: ClusterModel, path) -> None:
    """Plain-text model export: header lines, one center per line, assignments."""
    with open(path, "w") as fh:
        fh.write(f"k = {model.k}\n")
        fh.write(f"kind = {model.kind}\n")
        fh.write(f"seed = {model.seed}\n")
        fh.write(f"iterations = {model.iterations_run}\n")
        fh.write(f"n_antennas = {model.n_antennas}\n")
        for j in range(model.k):
            fh.write(" ".join(_fmt_complex(z) for z in model.centers[j]) + "\n")
        fh.write("assignments = " + " ".join(str(int(a)) for a in model.assignments) + "\n")


def load_model(path) -> ClusterModel:
    header, center_rows, assignments = {}, [], None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if " = " in line:
                key, value = (p.strip() for p in line.split("=", 1))
                if key == "assignments":
                    assignments = np.array([int(v) for v in value.split()], dtype=int)
                else:
                    header[key] = value
            else:
                center_rows.append(np.array([complex(tok) for tok in line.split()]))
    centers = np.array(center_rows)
    return ClusterModel(
        kind=header["kind"],
        centers=centers,
        assignments=assignments if assignments is not None else np.zeros(0, dtype=int),
        iterations_run=int(header["iterations"]),
        seed=int(header["seed"]),
    )


def write_assignments_csv(dataset, model: ClusterModel, path) -> None:
    """Scatter-plot input: record index, position and cluster label."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record", "x", "y", "label"])
        for i, rec in enumerate(dataset.records):
            writer.writerow([i, repr(rec.tag.x), repr(rec.tag.y), int(model.assignments[i])])
