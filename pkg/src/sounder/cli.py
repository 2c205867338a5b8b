"""Batch command-line front end.

Subcommands: generate, loopback, extract, cluster, sweep, map, stats, replay.
Exit codes: 0 success, 2 usage/configuration error, 3 data error.
Every command writes a ``<output>.manifest.json`` beside its primary output;
``sounder replay`` re-runs a manifest and verifies byte-identical outputs.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import __version__
from .channel import (ArrayGeometry, LinkBudget, SceneConfig, SceneFileError,
                      load_scene_file, synth_dataset)
from .clustering import channel_views, kmeans, save_model, write_assignments_csv, POLICIES
from .dataset import (CsidFormatError, antenna_subset, even_antenna_indices,
                      export_records_csv, gps_accuracy_cdf, read_dataset,
                      write_dataset)
from .evaluation import mean_snr_map, sweep
from .iqfile import read_iq, write_iq
from .manifest import file_sha256, manifest_path, read_manifest, write_manifest
from .ofdm import (OfdmConfig, apply_channel, build_frame, correct_cfo,
                   detect_frames, extract_record_csi, antenna_snr_db)
from .dataset import CsiRecord, Dataset, GpsTag
from .precoding import beam_power_map, mrt_weights, po_weights, write_map_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3


class DataError(RuntimeError):
    pass


class UsageError(RuntimeError):
    pass


def _int_bits(value: int, n_bits: int) -> np.ndarray:
    return np.array([(value >> (n_bits - 1 - i)) & 1 for i in range(n_bits)], dtype=np.uint8)


def _bits_int(bits: np.ndarray) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


# --- command implementations --------------------------------------------------
# each returns (inputs, outputs, extra) dicts of name -> path / metadata

def cmd_generate(args):
    scene, geometry, lb, config = (
        load_scene_file(args.scene) if args.scene
        else (SceneConfig(), ArrayGeometry(), LinkBudget(), OfdmConfig())
    )
    if args.seed is not None:
        scene.seed = args.seed
    dataset = synth_dataset(scene, geometry, config, args.grid_step,
                            threads=max(args.threads, 1))
    write_dataset(dataset, args.out)
    outputs = {"dataset": args.out}
    if args.format == "csv":
        csv_path = str(args.out) + ".csv"
        export_records_csv(dataset, csv_path)
        outputs["summary_csv"] = csv_path
    return ({"scene": args.scene} if args.scene else {}), outputs, {
        "n_records": dataset.n_records, "seed": scene.seed,
    }


def cmd_loopback(args):
    config = OfdmConfig()
    rng = np.random.default_rng(args.seed)
    frames_meta = []
    stream = [np.zeros(args.pad, dtype=complex)]
    t0s = []
    pos = args.pad
    for i in range(args.frames):
        frame = build_frame(config, args.pilot_seed, _int_bits(args.frame_id + i, 32))
        taps = np.zeros(args.taps, dtype=complex)
        taps[0] = 1.0
        if args.taps > 1:
            taps[1:] = 0.5 * (rng.standard_normal(args.taps - 1)
                              + 1j * rng.standard_normal(args.taps - 1)) / np.sqrt(2 * args.taps)
        h_full = np.fft.fft(taps, config.n_sub)
        h_used = h_full[config.used_mask]
        rx = apply_channel(frame, h_used, cfo_hz=0.0, snr_db=np.inf)
        stream.append(rx)
        t0s.append(pos)
        pos += rx.size
        frames_meta.append({"frame_id": args.frame_id + i, "t0": t0s[-1]})
    stream.append(np.zeros(args.pad, dtype=complex))
    rx_all = np.concatenate(stream)
    if args.cfo_hz:
        rx_all = correct_cfo(rx_all, -args.cfo_hz, config)
    if np.isfinite(args.snr_db):
        p_sig = np.mean(np.abs(rx_all[args.pad: pos]) ** 2)
        noise = np.sqrt(p_sig * 10 ** (-args.snr_db / 10) / 2) * (
            rng.standard_normal(rx_all.size) + 1j * rng.standard_normal(rx_all.size))
        rx_all = rx_all + noise
    write_iq(args.out, rx_all, config, pilot_seed=args.pilot_seed, t0_candidates=t0s)
    return {}, {"iq": args.out, "sidecar": str(args.out) + ".hdr"}, {
        "frames": frames_meta, "cfo_hz": args.cfo_hz, "snr_db": args.snr_db,
        "taps": args.taps,
    }


def cmd_extract(args):
    try:
        rx, config, meta = read_iq(args.iq)
    except FileNotFoundError as exc:
        raise DataError(f"missing IQ file: {exc}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    pilot_seed = args.pilot_seed if args.pilot_seed is not None else meta["pilot_seed"]
    if pilot_seed is None:
        raise UsageError("pilot seed not in sidecar; pass --pilot-seed")
    frame = build_frame(config, pilot_seed)
    t0s, diag = detect_frames(rx, frame, threshold=args.threshold)
    if not t0s:
        raise DataError(
            "no frame detected: peak normalized correlation "
            f"{diag['metric_max']:.3f} at sample {diag['metric_argmax']} "
            f"(threshold {diag['threshold']})"
        )
    records = []
    frames_info = []
    for t0 in t0s:
        h, info = extract_record_csi(rx, frame, t0, n_taps=args.n_taps)
        h2 = h[None, :]
        # per-antenna SNR against the guard-bin noise floor estimate
        body = correct_cfo(rx, info["cfo_hz"], config)[
            t0 + config.n_cp: t0 + config.symbol_len]
        spec = np.fft.fft(body)
        guard = spec[~config.used_mask]
        floor_db = 10 * np.log10(max(np.mean(np.abs(guard) ** 2), 1e-30))
        snr = antenna_snr_db(h2 * np.sqrt(config.n_sub), floor_db)
        gps_id = _bits_int(info["data_bits"][:32]) if info["data_bits"].size >= 32 else 0
        tag = GpsTag(x=0.0, y=0.0, z=0.0, timestamp=t0 / config.sample_rate_hz)
        records.append(CsiRecord(tag=tag, h=h2, snr_db=snr))
        frames_info.append({"t0": int(t0), "cfo_hz": info["cfo_hz"], "gps_id": gps_id})
    dataset = Dataset(config=config, records=records, origin="measured", seed=None)
    write_dataset(dataset, args.out)
    outputs = {"dataset": args.out}
    if args.format == "csv":
        csv_path = str(args.out) + ".csv"
        export_records_csv(dataset, csv_path)
        outputs["summary_csv"] = csv_path
    return {"iq": args.iq}, outputs, {"frames": frames_info, "detection": diag}


def _load_dataset(path):
    try:
        return read_dataset(path)
    except FileNotFoundError as exc:
        raise DataError(f"missing dataset: {exc}") from exc
    except CsidFormatError as exc:
        raise DataError(f"bad dataset file: {exc}") from exc


def cmd_cluster(args):
    dataset = _load_dataset(args.dataset)
    if args.k > dataset.n_records:
        raise UsageError(f"K ({args.k}) exceeds record count ({dataset.n_records})")
    views = channel_views(dataset, args.policy)
    model = kmeans(views, args.k, args.kind, iterations=args.iterations,
                   seed=args.seed if args.seed is not None else 0)
    save_model(model, args.out)
    outputs = {"model": args.out}
    csv_path = args.csv or str(args.out) + ".assignments.csv"
    write_assignments_csv(dataset, model, csv_path)
    outputs["assignments"] = csv_path
    if args.plot:
        _scatter_plot(
            [(r.tag.x, r.tag.y, int(l)) for r, l in zip(dataset.records, model.assignments)],
            args.plot, discrete=True, title=f"k={args.k} {args.kind} clustering",
        )
        outputs["plot"] = args.plot
    return {"dataset": args.dataset}, outputs, {"k": args.k, "kind": args.kind}


def cmd_sweep(args):
    dataset = _load_dataset(args.dataset)
    if args.antennas is not None and args.antennas != dataset.n_antennas:
        idx = (
            [int(v) for v in args.antenna_indices.split(",")]
            if args.antenna_indices
            else even_antenna_indices(dataset.n_antennas, args.antennas)
        )
        dataset = antenna_subset(dataset, idx)
    k_values = sorted({int(v) for v in args.k.split(",")})
    if max(k_values) > dataset.n_records:
        raise UsageError(
            f"max K ({max(k_values)}) exceeds record count ({dataset.n_records})")
    result = sweep(dataset, k_values, realizations=args.realizations,
                   iterations=args.iterations,
                   base_seed=args.seed if args.seed is not None else 0,
                   policy=args.policy, threads=max(args.threads, 1))
    result.to_csv(args.out)
    outputs = {"sweep": args.out}
    if args.plot:
        _sweep_plot(result, args.plot)
        outputs["plot"] = args.plot
    return {"dataset": args.dataset}, outputs, {
        "k_values": k_values, "realizations": args.realizations,
        "n_antennas": dataset.n_antennas,
    }


def cmd_map(args):
    dataset = _load_dataset(args.dataset)
    if args.mode == "snr":
        rows = mean_snr_map(dataset)
        value_name = "mean_snr_db"
        extra = {"mode": "snr"}
    else:
        tx, ty = (float(v) for v in args.target.split(","))
        dists = [(r.tag.x - tx) ** 2 + (r.tag.y - ty) ** 2 for r in dataset.records]
        target_idx = int(np.argmin(dists))
        from .clustering import reduce_subcarriers

        v = reduce_subcarriers(dataset.records[target_idx], args.policy
                               if args.policy != "power_mean" else "principal_direction")
        prec = mrt_weights(v) if args.kind == "mrt" else po_weights(v)
        rows = beam_power_map(dataset, prec, subcarrier_policy=args.policy)
        value_name = "power_db"
        extra = {"mode": "beam", "target_record": target_idx,
                 "target_xy": [dataset.records[target_idx].tag.x,
                               dataset.records[target_idx].tag.y]}
    write_map_csv(rows, args.out, value_name=value_name)
    outputs = {"map": args.out}
    if args.plot:
        _scatter_plot(rows, args.plot, discrete=False,
                      title=f"{value_name} map")
        outputs["plot"] = args.plot
    return {"dataset": args.dataset}, outputs, extra


def cmd_stats(args):
    dataset = _load_dataset(args.dataset)
    cdf = gps_accuracy_cdf(dataset)
    import csv as _csv

    with open(args.out, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["axis", "sigma_m", "cdf"])
        for axis, curve in cdf.items():
            for sigma, frac in curve:
                writer.writerow([axis, repr(sigma), repr(frac)])
    return {"dataset": args.dataset}, {"stats": args.out}, {}


def cmd_replay(args):
    doc = read_manifest(args.manifest)
    command = doc["command"]
    stored = dict(doc["args"])
    for path, digest in doc["inputs"].items():
        if not os.path.exists(path):
            raise DataError(f"replay input missing: {path}")
        if file_sha256(path) != digest:
            raise DataError(f"replay input changed since manifest: {path}")
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        for name, path in doc["output_paths"].items():
            stored[_OUTPUT_ARGS[command][name]] = os.path.join(
                args.out_dir, os.path.basename(path))
    ns = argparse.Namespace(**stored)
    _, outputs, _ = _COMMANDS[command](ns)
    originals = doc["output_paths"]
    mismatch = []
    for name, new_path in outputs.items():
        if name not in originals:
            continue
        old_digest = doc["outputs"][originals[name]]
        new_digest = file_sha256(new_path)
        status = "match" if new_digest == old_digest else "MISMATCH"
        print(f"{name}: {status} ({new_path})")
        if new_digest != old_digest:
            mismatch.append(name)
    if mismatch:
        raise DataError(f"replay outputs differ: {', '.join(mismatch)}")
    return {}, {}, None  # replay writes no manifest of its own


_COMMANDS = {
    "generate": cmd_generate,
    "loopback": cmd_loopback,
    "extract": cmd_extract,
    "cluster": cmd_cluster,
    "sweep": cmd_sweep,
    "map": cmd_map,
    "stats": cmd_stats,
}

# maps manifest output names to the argparse destination holding that path
_OUTPUT_ARGS = {
    "generate": {"dataset": "out", "summary_csv": "out"},
    "loopback": {"iq": "out", "sidecar": "out"},
    "extract": {"dataset": "out", "summary_csv": "out"},
    "cluster": {"model": "out", "assignments": "csv", "plot": "plot"},
    "sweep": {"sweep": "out", "plot": "plot"},
    "map": {"map": "out", "plot": "plot"},
    "stats": {"stats": "out"},
}


def _scatter_plot(rows, path, discrete=False, title=""):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = [r[0] for r in rows]
    ys = [r[1] for r in rows]
    vs = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 6))
    sc = ax.scatter(xs, ys, c=vs, s=8, cmap="tab20" if discrete else "viridis")
    if not discrete:
        fig.colorbar(sc, ax=ax)
    ax.plot([0], [0], "rx", markersize=10)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(title)
    ax.set_aspect("equal")
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def _sweep_plot(result, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for kind in ("mrt", "po"):
        rows = [r for r in result.rows if r.kind == kind]
        if rows:
            ax.errorbar([r.k for r in rows], [r.mean_sum_rate for r in rows],
                        yerr=[r.std_sum_rate for r in rows], label=kind.upper(),
                        marker="o", capsize=3)
    ax.set_xlabel("number of clusters k")
    ax.set_ylabel("mean sum-rate [bit/s/Hz]")
    ax.grid(True, alpha=0.4)
    ax.legend()
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sounder",
        description="Massive MIMO channel sounding and clustering toolkit",
    )
    parser.add_argument("--version", action="version", version=f"sounder {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--format", choices=("bin", "csv"), default="bin",
                       help="also emit a CSV summary where applicable")
        p.add_argument("--threads", type=int, default=1)
        if needs_out:
            p.add_argument("--out", required=True, help="primary output path")

    p = sub.add_parser("generate", help="synthesize a gridded dataset from a scene file")
    p.add_argument("--scene", help="scene configuration file (key = value)")
    p.add_argument("--grid-step", type=float, default=10.0, dest="grid_step")
    common(p)

    p = sub.add_parser("loopback", help="synthesize an IQ capture for extract testing")
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--cfo-hz", type=float, default=0.0, dest="cfo_hz")
    p.add_argument("--snr-db", type=float, default=np.inf, dest="snr_db")
    p.add_argument("--taps", type=int, default=1, help="channel impulse-response taps")
    p.add_argument("--pad", type=int, default=4096, help="zero padding around frames")
    p.add_argument("--pilot-seed", type=int, default=0, dest="pilot_seed")
    p.add_argument("--frame-id", type=int, default=0, dest="frame_id")
    common(p)

    p = sub.add_parser("extract", help="extract CSI records from an IQ capture")
    p.add_argument("--iq", required=True)
    p.add_argument("--pilot-seed", type=int, default=None, dest="pilot_seed")
    p.add_argument("--n-taps", type=int, default=128, dest="n_taps")
    p.add_argument("--threshold", type=float, default=0.5)
    common(p)

    p = sub.add_parser("cluster", help="k-means clustering of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--kind", choices=("mrt", "po"), required=True)
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--policy", choices=POLICIES, default="principal_direction")
    p.add_argument("--csv", help="assignments CSV path")
    p.add_argument("--plot", help="optional scatter rendering (svg/png)")
    common(p)

    p = sub.add_parser("sweep", help="mean sum-rate versus cluster count")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", required=True, help="comma-separated cluster counts")
    p.add_argument("--realizations", type=int, default=1000)
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--antennas", type=int, default=None,
                   help="restrict to this many antennas (even-index decimation)")
    p.add_argument("--antenna-indices", dest="antenna_indices",
                   help="explicit comma-separated antenna indices")
    p.add_argument("--policy", choices=POLICIES, default="principal_direction")
    p.add_argument("--plot", help="optional line rendering (svg/png)")
    common(p)

    p = sub.add_parser("map", help="mean-SNR or beam-power map export")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=("snr", "beam"), default="snr")
    p.add_argument("--target", default="110,-120",
                   help="beam mode: focus position as 'x,y'")
    p.add_argument("--kind", choices=("mrt", "po"), default="mrt")
    p.add_argument("--policy", default="power_mean",
                   choices=("power_mean",) + POLICIES)
    p.add_argument("--plot", help="optional scatter rendering (svg/png)")
    common(p)

    p = sub.add_parser("stats", help="GPS accuracy CDF export")
    p.add_argument("--dataset", required=True)
    common(p)

    p = sub.add_parser("replay", help="re-run a manifest and verify outputs")
    p.add_argument("manifest")
    p.add_argument("--out-dir", dest="out_dir",
                   help="redirect outputs here instead of overwriting")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.monotonic()
    try:
        if args.command == "replay":
            cmd_replay(args)
            return EXIT_OK
        inputs, outputs, extra = _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SceneFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    duration = time.monotonic() - started
    primary = outputs.get(next(iter(outputs)))
    manifest_args = {k: v for k, v in vars(args).items() if k != "command"}
    write_manifest(manifest_path(primary), args.command, manifest_args,
                   inputs, outputs, duration, __version__, extra=extra)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
