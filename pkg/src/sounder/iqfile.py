"""Raw IQ capture files: little-endian complex64 stream plus a text sidecar.

The sidecar lives next to the stream as ``<path>.hdr`` with one ``key = value``
per line.  Required keys: ``sample_rate_hz``, ``carrier_hz``.  Optional keys
carry the OFDM layout, the pilot seed and candidate frame-start offsets so a
capture is self-describing for the extractor.
"""

from __future__ import annotations

import os

import numpy as np

from .ofdm import OfdmConfig

_OPTIONAL_INT_KEYS = ("n_sub", "n_cp", "n_guard_low", "n_guard_high", "pilot_seed")


def sidecar_path(iq_path) -> str:
    return str(iq_path) + ".hdr"


def write_iq(path, samples: np.ndarray, config: OfdmConfig, pilot_seed: int = None,
             t0_candidates=None) -> None:
    """Write the sample stream and its sidecar header."""
    np.asarray(samples, dtype=np.complex64).astype("<c8").tofile(path)
    lines = [
        f"sample_rate_hz = {config.sample_rate_hz!r}",
        f"carrier_hz = {config.carrier_hz!r}",
        f"n_sub = {config.n_sub}",
        f"n_cp = {config.n_cp}",
        f"n_guard_low = {config.n_guard_low}",
        f"n_guard_high = {config.n_guard_high}",
        f"dc_null = {'true' if config.dc_null else 'false'}",
    ]
    if pilot_seed is not None:
        lines.append(f"pilot_seed = {pilot_seed}")
    if t0_candidates:
        lines.append("t0_candidates = " + " ".join(str(int(t)) for t in t0_candidates))
    with open(sidecar_path(path), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_iq(path):
    """Read a capture; returns ``(samples, config, meta)``.

    ``meta`` holds ``pilot_seed`` (or None) and ``t0_candidates`` (possibly
    empty).  Raises ``FileNotFoundError`` for a missing stream or sidecar and
    ``ValueError`` for an empty or malformed capture.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    samples = np.fromfile(path, dtype="<c8")
    if samples.size == 0:
        raise ValueError(f"IQ file is empty: {path}")

    fields = {}
    with open(sidecar_path(path)) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{sidecar_path(path)}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            fields[key] = value

    for req in ("sample_rate_hz", "carrier_hz"):
        if req not in fields:
            raise ValueError(f"sidecar missing required key {req!r}")

    kwargs = {
        "sample_rate_hz": float(fields["sample_rate_hz"]),
        "carrier_hz": float(fields["carrier_hz"]),
    }
    for key in ("n_sub", "n_cp", "n_guard_low", "n_guard_high"):
        if key in fields:
            kwargs[key] = int(fields[key])
    if "dc_null" in fields:
        kwargs["dc_null"] = fields["dc_null"].lower() in ("1", "true", "yes")
    config = OfdmConfig(**kwargs)

    meta = {
        "pilot_seed": int(fields["pilot_seed"]) if "pilot_seed" in fields else None,
        "t0_candidates": [int(t) for t in fields.get("t0_candidates", "").split()],
    }
    return samples.astype(complex), config, meta
