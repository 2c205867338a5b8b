"""Run manifests: the reproducibility record written beside every CLI output.

A manifest captures the resolved arguments, seeds and input/output hashes of
one command.  Replaying it re-runs the command with the same arguments
(optionally into a fresh directory) and verifies the outputs hash-identically.
"""

from __future__ import annotations

import hashlib
import json


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, args: dict, inputs: dict, outputs: dict,
                   duration_s: float, version: str, extra: dict = None) -> None:
    doc = {
        "command": command,
        "args": args,
        "inputs": {str(p): file_sha256(p) for p in inputs.values() if p},
        "input_paths": {k: str(v) for k, v in inputs.items() if v},
        "outputs": {str(p): file_sha256(p) for p in outputs.values() if p},
        "output_paths": {k: str(v) for k, v in outputs.items() if v},
        "tool_version": version,
        "duration_s": duration_s,
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def manifest_path(out_path) -> str:
    return str(out_path) + ".manifest.json"
