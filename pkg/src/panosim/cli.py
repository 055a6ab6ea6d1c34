"""``pano`` command line: gen, prepare, simulate, compare, report.

Set ``PANO_LOG`` (DEBUG, INFO, WARNING, ...) to change log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

from . import simulator as sim
from .jnd import load_jnd_config
from .manifest import build_manifest, load_manifest, manifest_to_json, section_sizes, serialize_manifest
from .synth import ARCHETYPES, SceneSpec, generate_network_trace, generate_synthetic_video, generate_viewpoint_trace
from .tiling import build_tiling, efficiency_scores, load_tiling, save_tiling
from .traces import (
    UNIT_COLS,
    UNIT_ROWS,
    load_network_trace,
    load_video_descriptor,
    load_viewpoint_trace,
    save_network_trace,
    save_video_descriptor,
    save_viewpoint_trace,
)

log = logging.getLogger("panosim")

NETWORK_MARGIN_S = 10.0


class CliError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("PANO_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _atomic(path: Path, write) -> None:
    """Run ``write(tmp_path)`` then move the result over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.stem}.", suffix=path.suffix, dir=path.parent)
    os.close(fd)
    try:
        write(Path(tmp))
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _write_csv(path: Path, header, rows) -> None:
    def write(tmp):
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    _atomic(path, write)


def _write_bytes(path: Path, blob: bytes) -> None:
    _atomic(path, lambda tmp: tmp.write_bytes(blob))


def _save_video(video, path: Path) -> None:
    # the descriptor has a JSON sidecar, so both files are moved into place
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=path.parent) as tmpdir:
        tmp = Path(tmpdir) / path.name
        save_video_descriptor(video, tmp)
        os.replace(tmp.with_suffix(".json"), path.with_suffix(".json"))
        os.replace(tmp, path)


# --------------------------------------------------------------------------
# gen
# --------------------------------------------------------------------------


def cmd_gen(args) -> int:
    spec = SceneSpec(archetype=args.scene, duration_s=args.duration, chunk_duration_s=args.chunk_duration,
                     object_speed=args.object_speed)
    out = Path(args.out)
    video = generate_synthetic_video(spec, args.seed)
    _save_video(video, out / "video.csv")
    for u in range(args.users):
        name = "viewpoint.csv" if u == 0 else f"viewpoint_{u}.csv"
        trace = generate_viewpoint_trace(spec, args.seed, u)
        _atomic(out / name, lambda tmp, tr=trace: save_viewpoint_trace(tr, tmp))
    for u in range(args.history):
        trace = generate_viewpoint_trace(spec, args.seed, 1000 + u)
        _atomic(out / "history" / f"history_{u}.csv", lambda tmp, tr=trace: save_viewpoint_trace(tr, tmp))
    net = generate_network_trace(args.duration + NETWORK_MARGIN_S, args.network_mean, args.seed)
    _atomic(out / "network.csv", lambda tmp: save_network_trace(net, tmp))
    print(f"seed {args.seed}: {video.num_chunks} chunks written to {out}")
    return 0


# --------------------------------------------------------------------------
# prepare
# --------------------------------------------------------------------------


def cmd_prepare(args) -> int:
    if not 1 <= args.n_tiles <= UNIT_ROWS * UNIT_COLS:
        raise CliError(f"--n-tiles must be in [1, {UNIT_ROWS * UNIT_COLS}]")
    video = load_video_descriptor(args.video)
    traces = [load_viewpoint_trace(p) for p in args.viewpoint]
    model = load_jnd_config(args.jnd_config)
    out = Path(args.out)
    t0 = time.perf_counter()
    if args.tiling:
        tiling = load_tiling(args.tiling, video.num_chunks)
    else:
        scores = efficiency_scores(video, traces, model)
        tiling = build_tiling(scores, args.n_tiles, static=not args.per_chunk)
    log.info("tiling ready in %.2fs", time.perf_counter() - t0)
    manifest, _ = build_manifest(video, tiling, model)
    blob = serialize_manifest(manifest)
    _atomic(out / "tiling.csv", lambda tmp: save_tiling(tiling, tmp))
    _write_bytes(out / "manifest.pano", blob)
    if args.json:
        _atomic(out / "manifest.json", lambda tmp: tmp.write_text(manifest_to_json(manifest)))
    sizes = section_sizes(blob)
    table = sizes.get("TDIC", 0) + sizes.get("TREF", 0)
    print(f"{tiling.num_tiles} tiles; manifest {len(blob)} bytes (lookup table {table} bytes)")
    return 0


# --------------------------------------------------------------------------
# simulate / compare
# --------------------------------------------------------------------------


def _workloads(args):
    video = load_video_descriptor(args.video)
    manifest = load_manifest(args.manifest) if args.manifest else None
    views = [(Path(p).stem, load_viewpoint_trace(p)) for p in args.viewpoint]
    nets = [(Path(p).stem, load_network_trace(p)) for p in args.network]
    return [sim.Workload(video, v, n, manifest, f"{vn}+{nn}") for vn, v in views for nn, n in nets]


def cmd_simulate(args) -> int:
    workloads = _workloads(args)
    if "pano" in args.scheme and workloads[0].manifest is None:
        raise CliError("--scheme pano needs --manifest")
    out = Path(args.out)
    rows, timeline = [], []
    session = 0
    for name in args.scheme:
        scheme = sim.Scheme(name, target_buffer_s=args.target_buffer)
        for res in sim.run_many(workloads, scheme, args.seed, args.workers):
            rows.append(sim.result_row(session, args.seed, res))
            timeline.extend(sim.timeline_rows(session, res))
            log.info("session %d %s %s: %.2f dB", session, name, res.label, res.pspnr_db)
            session += 1
    _write_csv(out / "results.csv", sim.RESULT_FIELDS, rows)
    _write_csv(out / "summary.csv", sim.SUMMARY_FIELDS,
               sim.summary_rows(sim.read_results(out / "results.csv")))
    if args.timeline:
        _write_csv(out / "timeline.csv", sim.TIMELINE_FIELDS, timeline)
    print(f"{len(rows)} sessions written to {out / 'results.csv'}")
    return 0


def _summary_dict(s: sim.Summary | None):
    return None if s is None else {k: getattr(s, k) for k in s.__dataclass_fields__}


def cmd_compare(args) -> int:
    workloads = _workloads(args)
    first = sim.Scheme(args.first, target_buffer_s=args.target_buffer)
    second = sim.Scheme(args.second, target_buffer_s=args.target_buffer)
    if "pano" in (first.name, second.name) and workloads[0].manifest is None:
        raise CliError("comparing pano needs --manifest")
    c = sim.compare_schemes(workloads, first, second, args.seed, args.workers)
    doc = {
        "first": c.first,
        "second": c.second,
        "base": {k: _summary_dict(v) for k, v in c.base.items()},
        "equal_bandwidth": [_summary_dict(s) for s in c.equal_bandwidth],
        "matched_quality": None if c.matched_quality is None else [_summary_dict(s) for s in c.matched_quality],
        "pspnr_gain_db": c.pspnr_gain_db,
        "bandwidth_match": c.bandwidth_match,
        "bandwidth_saving": c.bandwidth_saving,
    }
    out = Path(args.out)
    _atomic(out / "comparison.json", lambda tmp: tmp.write_text(json.dumps(doc, indent=2) + "\n"))
    print(f"{c.first} vs {c.second}: {c.pspnr_gain_db:+.2f} dB at equal bandwidth, "
          f"{100 * c.bandwidth_saving:.1f}% bandwidth saved at matched PSPNR")
    return 0


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

PLOT_FIELDS = ("scheme", "label", "bandwidth_bps", "pspnr_db", "buffering_ratio")


def cmd_report(args) -> int:
    results = Path(args.results)
    if results.is_dir():
        results = results / "results.csv"
    rows = sim.read_results(results)
    if not rows:
        raise CliError(f"{results}: no sessions")
    out = Path(args.out) if args.out else results.parent
    summary = sim.summary_rows(rows)
    _write_csv(out / "summary.csv", sim.SUMMARY_FIELDS, summary)
    _write_csv(out / "plot.csv", PLOT_FIELDS,
               [[r["scheme"], r["label"], r["bandwidth_bps"], r["pspnr_db"], r["buffering_ratio"]] for r in rows])
    print(f"{'scheme':<18}{'n':>4}{'PSPNR dB':>10}{'kbps':>10}{'buffering':>11}{'MOS':>6}")
    for name, n, p, _, bw, buf, mos in summary:
        print(f"{name:<18}{n:>4}{float(p):>10.2f}{float(bw) / 1e3:>10.1f}{float(buf):>11.4f}{float(mos):>6.2f}")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _add_inputs(p, manifest_required=False):
    p.add_argument("--video", required=True, help="video descriptor CSV")
    p.add_argument("--viewpoint", nargs="+", required=True, help="viewpoint trace CSV(s)")
    p.add_argument("--network", nargs="+", required=True, help="network trace CSV(s)")
    p.add_argument("--manifest", required=manifest_required, help="manifest written by prepare")
    p.add_argument("--target-buffer", type=float, default=sim.DEFAULT_TARGET_BUFFER_S,
                   help="buffer target in seconds (default %(default)s)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="results", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pano", description="360 degree video streaming simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic video, viewpoint and network traces")
    g.add_argument("--scene", choices=ARCHETYPES, default="tracked-object")
    g.add_argument("--duration", type=float, default=60.0, help="seconds")
    g.add_argument("--chunk-duration", type=float, default=1.0)
    g.add_argument("--object-speed", type=float, default=SceneSpec.object_speed, help="deg/s")
    g.add_argument("--users", type=int, default=1, help="viewpoint traces to write")
    g.add_argument("--history", type=int, default=0, help="extra history traces for prepare")
    g.add_argument("--network-mean", type=float, default=1e6, help="mean throughput, bps")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="data")
    g.set_defaults(func=cmd_gen)

    p = sub.add_parser("prepare", help="build the tiling and manifest")
    p.add_argument("--video", required=True)
    p.add_argument("--viewpoint", nargs="+", required=True, help="history viewpoint traces")
    p.add_argument("--jnd-config", help="TOML multiplier curves (defaults built in)")
    p.add_argument("--n-tiles", type=int, default=30)
    p.add_argument("--per-chunk", action="store_true", help="one tiling per chunk instead of a static one")
    p.add_argument("--tiling", help="reuse an existing tiling.csv")
    p.add_argument("--json", action="store_true", help="also write a readable manifest.json")
    p.add_argument("--seed", type=int, default=0, help="accepted for symmetry; preparation is deterministic")
    p.add_argument("--out", default="prepared")
    p.set_defaults(func=cmd_prepare)

    s = sub.add_parser("simulate", help="replay sessions and write results.csv")
    _add_inputs(s)
    s.add_argument("--scheme", nargs="+", choices=sim.SCHEMES, default=list(sim.SCHEMES))
    s.add_argument("--timeline", action="store_true", help="also write per-chunk timeline.csv")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="equal-bandwidth and matched-quality comparison")
    _add_inputs(c)
    c.add_argument("--first", choices=sim.SCHEMES, default="pano")
    c.add_argument("--second", choices=sim.SCHEMES, default="viewport_uniform")
    c.set_defaults(func=cmd_compare)

    r = sub.add_parser("report", help="summarise a results.csv")
    r.add_argument("--results", default="results", help="results.csv or its directory")
    r.add_argument("--out", help="output directory (default: next to results)")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        log.debug("command failed", exc_info=True)
        print(f"pano {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
