"""Client manifest: tile geometry, tile features and the PSPNR lookup table.

The raw table holds, for every (chunk, tile, quality level), the tile PSPNR
on an n x n x n grid of representative (speed, luminance change, DoF
difference) values. Because the action terms only enter through the product
of their multipliers, each raw table collapses to a curve P(A), which is
fitted by ``P = a * A**b`` over a recorded domain ``[1, hi]``.

Homogeneous cells make P(A) jump to the ceiling once ``c * A`` reaches the
cell error, so the fit domain is the widest range of table A values (from
A = 1 up) that the power law follows within ``DOMAIN_TOLERANCE_DB``; outside
it the evaluation clamps A, which under-estimates quality.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .jnd import ContentJndParams, JndModel, MultiplierCurve
from .pspnr import DEFAULT_CEILING_DB, pspnr_from_pmse
from .tiling import Tiling
from .traces import DEFAULT_SAMPLE_PERIOD, Rect, VideoDescriptor

MAGIC = b"PANO1"
FORMAT_VERSION = 1

DEFAULT_REPRESENTATIVES = 5
DEFAULT_FACTOR_MAX = (20.0, 240.0, 2.0)  # speed deg/s, luminance gray, DoF diopters
DOMAIN_TOLERANCE_DB = 0.75
TRAJECTORY_STRIDE = 10  # one object-velocity sample per 10 viewpoint frames

# fixed-point steps
A_STEP = 0.25
B_STEP = 1.0 / 256.0
HI_STEP = 1.0 / 1024.0
RMSE_STEP = 0.01


class ManifestError(ValueError):
    pass


# --------------------------------------------------------------------------
# Lookup tables
# --------------------------------------------------------------------------


def representative_values(n: int = DEFAULT_REPRESENTATIVES, maxima=DEFAULT_FACTOR_MAX) -> np.ndarray:
    """(3, n) evenly spaced factor values from 0 to each maximum."""
    if n < 2:
        raise ManifestError("need at least 2 representative values per factor")
    return np.stack([np.linspace(0.0, float(m), n) for m in maxima])


def ratio_grid(model: JndModel, reps: np.ndarray) -> np.ndarray:
    """Action ratio for every (v, l, d) combination, shaped (n, n, n)."""
    v, l, d = reps
    return model.ratio(v[:, None, None], l[None, :, None], d[None, None, :])


@dataclass(frozen=True, eq=False)
class RawTable:
    """PSPNR dB shaped (K, N, Q, n, n, n) over ``reps`` (speed, luminance, DoF)."""

    values: np.ndarray
    reps: np.ndarray

    @property
    def n(self) -> int:
        return self.reps.shape[1]


def tile_cell_pmse(video: VideoDescriptor, tiling: Tiling, model: JndModel, k: int, ratios) -> np.ndarray:
    """Mean homogeneous-cell PMSE per tile, shaped (N, Q) + ratios.shape.

    ``ratios`` is a single action ratio applied to every cell of the chunk.
    """
    a = np.asarray(ratios, dtype=float)
    c = model.content_jnd(video.luminance[k], video.texture[k]).reshape(-1)
    e = video.error[k].reshape(-1, video.num_levels)
    flat = a.reshape(-1)
    cell = np.maximum(e[:, :, None] - c[:, None, None] * flat[None, None, :], 0.0) ** 2
    member = tiling.cell_map(k).reshape(-1)
    n_tiles = tiling.num_tiles
    sums = np.zeros((n_tiles,) + cell.shape[1:])
    np.add.at(sums, member, cell)
    out = sums / np.bincount(member, minlength=n_tiles)[:, None, None]
    return out.reshape((n_tiles, video.num_levels) + a.shape)


def build_raw_table(video: VideoDescriptor, tiling: Tiling, model: JndModel = JndModel(),
                    n: int = DEFAULT_REPRESENTATIVES, maxima=DEFAULT_FACTOR_MAX,
                    ceiling: float = DEFAULT_CEILING_DB) -> RawTable:
    reps = representative_values(n, maxima)
    grid = ratio_grid(model, reps)
    shape = (video.num_chunks, tiling.num_tiles, video.num_levels, n, n, n)
    values = np.empty(shape)
    for k in range(video.num_chunks):
        values[k] = pspnr_from_pmse(tile_cell_pmse(video, tiling, model, k, grid), ceiling)
    return RawTable(values, reps)


@dataclass(frozen=True, eq=False)
class CompressedTable:
    """Power-law fit per (chunk, tile, level): ``P = a * A**b`` on ``[1, hi]``."""

    a: np.ndarray
    b: np.ndarray
    hi: np.ndarray
    rmse: np.ndarray
    ceiling: float = DEFAULT_CEILING_DB

    @property
    def shape(self) -> tuple[int, ...]:
        return self.a.shape

    def __eq__(self, other):
        if not isinstance(other, CompressedTable):
            return NotImplemented
        return self.ceiling == other.ceiling and all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in ("a", "b", "hi", "rmse"))

    __hash__ = None


def _fit_prefixes(u: np.ndarray, p: np.ndarray, tol: float):
    """Fit a power law on the widest prefix of ``u`` (sorted, distinct) that
    stays within ``tol`` dB RMSE. ``p`` is (B, m). Returns (a, b, hi, rmse)."""
    bsz, m = p.shape
    if m == 1:
        return p[:, 0].copy(), np.zeros(bsz), np.full(bsz, u[0]), np.zeros(bsz)
    x = np.log(u)
    y = np.log(np.maximum(p, 1e-12))
    cnt = np.arange(1, m + 1, dtype=float)
    sx, sxx = np.cumsum(x), np.cumsum(x * x)
    sy, sxy = np.cumsum(y, axis=1), np.cumsum(x * y, axis=1)
    den = cnt * sxx - sx * sx
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(den > 0, (cnt * sxy - sx * sy) / np.where(den > 0, den, 1.0), 0.0)
    icpt = (sy - slope * sx) / cnt
    # fitted[b, j, i] uses the fit on the first j+1 points, evaluated at u_i
    fitted = np.exp(icpt[:, :, None] + slope[:, :, None] * x[None, None, :])
    mask = np.arange(m)[None, :] <= np.arange(m)[:, None]
    sq = np.where(mask[None], (fitted - p[:, None, :]) ** 2, 0.0)
    rmse = np.sqrt(sq.sum(axis=2) / cnt[None, :])
    rmse[:, 0] = 0.0
    ok = rmse <= tol
    j = m - 1 - np.argmax(ok[:, ::-1], axis=1)
    rows = np.arange(bsz)
    return np.exp(icpt[rows, j]), slope[rows, j], u[j], rmse[rows, j]


def compress_table(raw: RawTable, model: JndModel = JndModel(),
                   tol: float = DOMAIN_TOLERANCE_DB,
                   ceiling: float = DEFAULT_CEILING_DB) -> CompressedTable:
    """Collapse each n^3 table to P(A) and fit ``log P = log a + b log A``.

    Entries sharing an A value are averaged first; a table whose A values
    are all equal stores ``(mean P, 0)``.
    """
    grid = ratio_grid(model, raw.reps).reshape(-1)
    u, inv = np.unique(np.round(grid, 12), return_inverse=True)
    counts = np.bincount(inv)
    lead = raw.values.shape[:3]
    flat = raw.values.reshape(-1, grid.size)
    p = np.zeros((flat.shape[0], u.size))
    for col in range(grid.size):
        p[:, inv[col]] += flat[:, col]
    p /= counts[None, :]
    # background tiles repeat across chunks; fit each distinct curve once
    curves, back = np.unique(p, axis=0, return_inverse=True) if p.size else (p, np.zeros(0, int))
    back = back.reshape(-1)
    out = [np.empty(curves.shape[0]) for _ in range(4)]
    step = 256
    for s in range(0, curves.shape[0], step):
        for dst, res in zip(out, _fit_prefixes(u, curves[s : s + step], tol)):
            dst[s : s + step] = res
    a, b, hi, rmse = (x[back].reshape(lead) for x in out)
    return CompressedTable(a, b, hi, rmse, ceiling)


def quantize_table(tbl: CompressedTable) -> CompressedTable:
    """Snap to the fixed-point grid stored in manifests. The domain end is
    rounded down so that it never grows."""
    a = np.clip(np.round(tbl.a / A_STEP), 1, 65535) * A_STEP
    b = np.clip(np.round(tbl.b / B_STEP), -32768, 32767) * B_STEP
    hi = np.clip(np.floor(tbl.hi / HI_STEP + 1e-9), 1.0 / HI_STEP, 65535) * HI_STEP
    rmse = np.clip(np.ceil(tbl.rmse / RMSE_STEP - 1e-9), 0, 65535) * RMSE_STEP
    return CompressedTable(a, b, hi, rmse, tbl.ceiling)


def eval_compressed(tbl: CompressedTable, chunk: int, tile, q, ratio):
    """PSPNR dB from the fit; A is clamped into ``[1, hi]``. Vectorised over
    ``tile``, ``q`` and ``ratio`` by broadcasting."""
    k_total, n_tiles, n_levels = tbl.shape
    t = np.asarray(tile)
    qq = np.asarray(q)
    if not 0 <= chunk < k_total or np.any((t < 0) | (t >= n_tiles)) or np.any((qq < 0) | (qq >= n_levels)):
        raise ManifestError(f"no table entry for chunk {chunk}, tile {tile}, level {q}")
    hi = tbl.hi[chunk, t, qq]
    a_val = np.clip(np.asarray(ratio, dtype=float), 1.0, hi)
    out = np.minimum(tbl.a[chunk, t, qq] * a_val ** tbl.b[chunk, t, qq], tbl.ceiling)
    return float(out) if np.ndim(out) == 0 else out


def raw_fit_rmse(raw: RawTable, tbl: CompressedTable, model: JndModel = JndModel(),
                 in_domain: bool = True) -> float:
    """RMSE in dB between the fit and the raw table, optionally restricted to
    entries whose A lies in each fit domain."""
    grid = ratio_grid(model, raw.reps).reshape(-1)
    flat = raw.values.reshape(raw.values.shape[:3] + (-1,))
    hi = tbl.hi[..., None]
    fit = np.minimum(tbl.a[..., None] * np.clip(grid, 1.0, hi) ** tbl.b[..., None], tbl.ceiling)
    err = (fit - flat) ** 2
    mask = np.broadcast_to(grid <= hi + 1e-12, err.shape) if in_domain else np.ones(err.shape, bool)
    if not mask.any():
        return 0.0
    return float(np.sqrt(err[mask].mean()))


# --------------------------------------------------------------------------
# Manifest
# --------------------------------------------------------------------------


def _eq_arrays(x, y, names):
    return all(np.array_equal(getattr(x, n), getattr(y, n)) for n in names)


@dataclass(frozen=True, eq=False)
class Manifest:
    """Everything the client needs for one video.

    Per (chunk, tile): mean luminance and DoF, object velocity samples
    ``(K, S, N, 2)`` every ``trajectory_period_s`` and bitrates per level.
    """

    quality_levels: tuple[int, ...]
    chunk_duration_s: float
    tiling: Tiling
    luminance: np.ndarray
    dof: np.ndarray
    velocity: np.ndarray
    bitrate: np.ndarray
    table: CompressedTable
    model: JndModel = field(default_factory=JndModel)
    trajectory_period_s: float = TRAJECTORY_STRIDE * DEFAULT_SAMPLE_PERIOD
    representatives: int = DEFAULT_REPRESENTATIVES
    factor_max: tuple[float, float, float] = DEFAULT_FACTOR_MAX
    version: int = FORMAT_VERSION

    def __post_init__(self):
        object.__setattr__(self, "quality_levels", tuple(int(q) for q in self.quality_levels))
        object.__setattr__(self, "factor_max", tuple(float(x) for x in self.factor_max))
        k, n, q = self.num_chunks, self.tiling.num_tiles, len(self.quality_levels)
        if self.tiling.num_chunks != k:
            raise ManifestError("tiling and features disagree on the chunk count")
        for name, shape in (("luminance", (k, n)), ("dof", (k, n)), ("bitrate", (k, n, q))):
            if getattr(self, name).shape != shape:
                raise ManifestError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.velocity.shape[0] != k or self.velocity.shape[2:] != (n, 2):
            raise ManifestError(f"velocity has shape {self.velocity.shape}")
        if self.table.shape != (k, n, q):
            raise ManifestError(f"table has shape {self.table.shape}, expected {(k, n, q)}")

    @property
    def num_chunks(self) -> int:
        return self.luminance.shape[0]

    @property
    def num_tiles(self) -> int:
        return self.tiling.num_tiles

    @property
    def num_levels(self) -> int:
        return len(self.quality_levels)

    def pspnr(self, chunk: int, tile, q, ratio):
        return eval_compressed(self.table, chunk, tile, q, ratio)

    def __eq__(self, other):
        if not isinstance(other, Manifest):
            return NotImplemented
        scalars = ("quality_levels", "chunk_duration_s", "tiling", "table", "model",
                   "trajectory_period_s", "representatives", "factor_max", "version")
        return all(getattr(self, s) == getattr(other, s) for s in scalars) and _eq_arrays(
            self, other, ("luminance", "dof", "velocity", "bitrate"))

    __hash__ = None


def tile_features(video: VideoDescriptor, tiling: Tiling, samples_per_chunk: int):
    """Area-mean luminance, DoF and object velocity per (chunk, tile); bitrate sums."""
    k_total, n_tiles, q = video.num_chunks, tiling.num_tiles, video.num_levels
    lum = np.zeros((k_total, n_tiles))
    dof = np.zeros((k_total, n_tiles))
    vel = np.zeros((k_total, samples_per_chunk, n_tiles, 2))
    rate = np.zeros((k_total, n_tiles, q))
    for k in range(k_total):
        member = tiling.cell_map(k).reshape(-1)
        area = np.bincount(member, minlength=n_tiles).astype(float)

        def mean(x):
            return np.bincount(member, weights=x.reshape(-1), minlength=n_tiles) / area

        lum[k] = mean(video.luminance[k])
        dof[k] = mean(video.dof[k])
        v = np.stack([mean(video.velocity[k][..., 0]), mean(video.velocity[k][..., 1])], axis=1)
        vel[k] = v[None]
        for j in range(q):
            rate[k, :, j] = np.bincount(member, weights=video.bitrate[k][..., j].reshape(-1),
                                        minlength=n_tiles)
    as32 = lambda x: x.astype(np.float32).astype(float)  # noqa: E731
    return as32(lum), as32(dof), as32(vel), rate


def build_manifest(video: VideoDescriptor, tiling: Tiling, model: JndModel = JndModel(),
                   n: int = DEFAULT_REPRESENTATIVES, maxima=DEFAULT_FACTOR_MAX,
                   ceiling: float = DEFAULT_CEILING_DB,
                   frame_period_s: float = DEFAULT_SAMPLE_PERIOD) -> tuple[Manifest, RawTable]:
    raw = build_raw_table(video, tiling, model, n, maxima, ceiling)
    table = quantize_table(compress_table(raw, model, ceiling=ceiling))
    period = TRAJECTORY_STRIDE * frame_period_s
    per_chunk = max(1, int(round(video.chunk_duration_s / period)))
    lum, dof, vel, rate = tile_features(video, tiling, per_chunk)
    m = Manifest(video.quality_levels, video.chunk_duration_s, tiling, lum, dof, vel, rate,
                 table, model, period, n, tuple(maxima))
    return m, raw


# --------------------------------------------------------------------------
# Binary encoding
# --------------------------------------------------------------------------
#
# MAGIC, u16 version, then sections: 4-byte tag, u8 flags (bit 0 = zlib),
# u32 payload length, u32 decoded length, payload. All integers little-endian.

TAG_HEAD, TAG_CURVES, TAG_TILES, TAG_FEATURES, TAG_TRAJ, TAG_DICT, TAG_REFS = (
    b"HEAD", b"CURV", b"TILE", b"FEAT", b"TRAJ", b"TDIC", b"TREF")
TABLE_TAGS = (TAG_DICT, TAG_REFS)
_SECTION = struct.Struct("<4sBII")


def _section(tag: bytes, body: bytes) -> bytes:
    packed = zlib.compress(body, 9)
    return _SECTION.pack(tag, 1, len(packed), len(body)) + packed


def _model_to_dict(model: JndModel) -> dict:
    curve = lambda c: {"knots": [list(k) for k in c.knots], "cap": c.cap}  # noqa: E731
    p = model.content
    return {"speed": curve(model.speed), "luminance": curve(model.luminance), "dof": curve(model.dof),
            "content": {"t0": p.t0, "t1": p.t1, "slope": p.slope, "texture_weight": p.texture_weight}}


def _model_from_dict(d: dict) -> JndModel:
    curve = lambda c: MultiplierCurve(tuple(tuple(k) for k in c["knots"]), c["cap"])  # noqa: E731
    return JndModel(curve(d["speed"]), curve(d["luminance"]), curve(d["dof"]),
                    ContentJndParams(**d["content"]))


def _table_ints(tbl: CompressedTable) -> np.ndarray:
    """(K*N*Q, 4) integer codes (a, b, hi, rmse)."""
    cols = [np.round(tbl.a / A_STEP), np.round(tbl.b / B_STEP),
            np.round(tbl.hi / HI_STEP), np.round(tbl.rmse / RMSE_STEP)]
    return np.stack([c.reshape(-1) for c in cols], axis=1).astype(np.int64)


def _encode_table(tbl: CompressedTable) -> tuple[bytes, bytes]:
    k_total, n_tiles, q = tbl.shape
    codes = _table_ints(tbl)
    if codes.size and (np.any(codes[:, 0] > 65535) or np.any(codes[:, 2] > 65535) or np.any(codes[:, 3] > 65535)
                       or np.any(np.abs(codes[:, 1]) > 32767)):
        raise ManifestError("table value outside the fixed-point range")
    uniq, ref = np.unique(codes, axis=0, return_inverse=True) if codes.size else (np.zeros((0, 4), int), np.zeros(0, int))
    ref = ref.reshape(-1)
    # columnar dictionary, each column delta-coded for zlib
    cols = [uniq[:, 0].astype("<u2"), uniq[:, 1].astype("<i2"), uniq[:, 2].astype("<u2"), uniq[:, 3].astype("<u2")]
    dict_body = struct.pack("<I", len(uniq)) + b"".join(c.tobytes() for c in cols)
    # refs run-length coded over chunks for every (tile, level)
    ref = ref.reshape(k_total, n_tiles * q).T if k_total else ref.reshape(0, 0)
    width = "<u2" if len(uniq) <= 65535 else "<u4"
    runs_len, runs_val = [], []
    for series in ref:
        start = 0
        while start < len(series):
            end = start
            while end + 1 < len(series) and series[end + 1] == series[start]:
                end += 1
            run = end - start + 1
            runs_len.append(run)
            runs_val.append(series[start])
            start = end + 1
    lens = np.asarray(runs_len, dtype="<u4")
    vals = np.asarray(runs_val, dtype=width)
    ref_body = struct.pack("<IB", len(lens), 2 if width == "<u2" else 4) + _varints(lens) + vals.tobytes()
    return dict_body, ref_body


def _varints(values) -> bytes:
    out = bytearray()
    for v in values:
        v = int(v)
        while True:
            byte = v & 0x7F
            v >>= 7
            if v:
                out.append(byte | 0x80)
            else:
                out.append(byte)
                break
    return bytes(out)


def _read_varints(buf: bytes, count: int, pos: int):
    vals = []
    for _ in range(count):
        shift = v = 0
        while True:
            if pos >= len(buf):
                raise ManifestError("truncated run-length data")
            byte = buf[pos]
            pos += 1
            v |= (byte & 0x7F) << shift
            shift += 7
            if not byte & 0x80:
                break
        vals.append(v)
    return vals, pos


def serialize_manifest(m: Manifest) -> bytes:
    k_total, n_tiles = m.num_chunks, m.num_tiles
    samples = m.velocity.shape[1] if m.velocity.ndim == 4 else 0
    head = {
        "quality_levels": list(m.quality_levels),
        "chunk_duration_s": m.chunk_duration_s,
        "num_chunks": k_total,
        "num_tiles": n_tiles,
        "grid": list(m.tiling.grid),
        "static": m.tiling.static,
        "trajectory_period_s": m.trajectory_period_s,
        "trajectory_samples": samples,
        "representatives": m.representatives,
        "factor_max": list(m.factor_max),
        "ceiling": m.table.ceiling,
    }
    parts = [MAGIC, struct.pack("<H", m.version)]
    parts.append(_section(TAG_HEAD, json.dumps(head, sort_keys=True).encode()))
    parts.append(_section(TAG_CURVES, json.dumps(_model_to_dict(m.model), sort_keys=True).encode()))
    chunk_sets = m.tiling.chunks[:1] if m.tiling.static else m.tiling.chunks
    rects = np.array([[tuple(r) for r in rs] for rs in chunk_sets], dtype="<u1").reshape(-1, 4)
    gam = np.array(m.tiling.mean_gamma[:1] if m.tiling.static else m.tiling.mean_gamma, dtype="<f8").reshape(-1)
    parts.append(_section(TAG_TILES, rects.tobytes() + gam.tobytes()))
    feat = (m.luminance.astype("<f4").tobytes() + m.dof.astype("<f4").tobytes()
            + m.bitrate.astype("<f8").tobytes())
    parts.append(_section(TAG_FEATURES, feat))
    parts.append(_section(TAG_TRAJ, m.velocity.astype("<f4").tobytes()))
    dict_body, ref_body = _encode_table(m.table)
    parts.append(_section(TAG_DICT, dict_body))
    parts.append(_section(TAG_REFS, ref_body))
    return b"".join(parts)


def section_sizes(blob: bytes) -> dict[str, int]:
    """Encoded size of each section in bytes, headers included."""
    return {tag.decode(): size for tag, size in _split_sections(blob)[1].items()}


def table_section_size(blob: bytes) -> int:
    sizes = section_sizes(blob)
    return sum(sizes.get(t.decode(), 0) for t in TABLE_TAGS)


def _split_sections(blob: bytes):
    if len(blob) < len(MAGIC) + 2 or blob[: len(MAGIC)] != MAGIC:
        raise ManifestError("not a manifest (bad magic)")
    (version,) = struct.unpack_from("<H", blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise ManifestError(f"unsupported manifest version {version} (expected {FORMAT_VERSION})")
    pos = len(MAGIC) + 2
    bodies, sizes = {}, {}
    while pos < len(blob):
        if pos + _SECTION.size > len(blob):
            raise ManifestError("truncated section header")
        tag, flags, plen, dlen = _SECTION.unpack_from(blob, pos)
        start = pos + _SECTION.size
        if start + plen > len(blob):
            raise ManifestError(f"truncated section {tag.decode(errors='replace')}")
        payload = blob[start : start + plen]
        try:
            body = zlib.decompress(payload) if flags & 1 else payload
        except zlib.error as exc:
            raise ManifestError(f"corrupt section {tag.decode(errors='replace')}: {exc}") from None
        if len(body) != dlen:
            raise ManifestError(f"section {tag.decode(errors='replace')} has the wrong length")
        bodies[tag] = body
        sizes[tag] = _SECTION.size + plen
        pos = start + plen
    return bodies, sizes


def _take(arr_bytes: bytes, pos: int, dtype: str, count: int):
    size = np.dtype(dtype).itemsize * count
    if pos + size > len(arr_bytes):
        raise ManifestError("truncated section body")
    return np.frombuffer(arr_bytes, dtype=dtype, count=count, offset=pos), pos + size


def parse_manifest(blob: bytes) -> Manifest:
    bodies, _ = _split_sections(blob)
    for tag in (TAG_HEAD, TAG_CURVES, TAG_TILES, TAG_FEATURES, TAG_TRAJ, TAG_DICT, TAG_REFS):
        if tag not in bodies:
            raise ManifestError(f"missing section {tag.decode()}")
    try:
        head = json.loads(bodies[TAG_HEAD])
        model = _model_from_dict(json.loads(bodies[TAG_CURVES]))
    except (ValueError, KeyError, TypeError) as exc:
        raise ManifestError(f"bad header: {exc}") from None
    k_total, n_tiles = head["num_chunks"], head["num_tiles"]
    q = len(head["quality_levels"])
    grid = tuple(head["grid"])
    static = head["static"]
    sets = 1 if static else k_total
    if k_total == 0:
        sets = 0
    body = bodies[TAG_TILES]
    rects, pos = _take(body, 0, "<u1", sets * n_tiles * 4)
    gam, _ = _take(body, pos, "<f8", sets * n_tiles)
    rects = rects.reshape(sets, n_tiles, 4)
    gam = gam.reshape(sets, n_tiles)
    chunk_rects = tuple(tuple(Rect(*map(int, r)) for r in rs) for rs in rects)
    chunk_gam = tuple(tuple(float(g) for g in gs) for gs in gam)
    if static:
        chunk_rects, chunk_gam = chunk_rects * k_total, chunk_gam * k_total
    tiling = Tiling(grid, chunk_rects, chunk_gam, static)

    body = bodies[TAG_FEATURES]
    lum, pos = _take(body, 0, "<f4", k_total * n_tiles)
    dof, pos = _take(body, pos, "<f4", k_total * n_tiles)
    rate, _ = _take(body, pos, "<f8", k_total * n_tiles * q)
    s = head["trajectory_samples"]
    vel, _ = _take(bodies[TAG_TRAJ], 0, "<f4", k_total * s * n_tiles * 2)

    body = bodies[TAG_DICT]
    if len(body) < 4:
        raise ManifestError("truncated table dictionary")
    (count,) = struct.unpack_from("<I", body, 0)
    pos = 4
    cols = []
    for dt in ("<u2", "<i2", "<u2", "<u2"):
        col, pos = _take(body, pos, dt, count)
        cols.append(col.astype(np.int64))
    uniq = np.stack(cols, axis=1) if count else np.zeros((0, 4), np.int64)
    body = bodies[TAG_REFS]
    if len(body) < 5:
        raise ManifestError("truncated table references")
    n_runs, width = struct.unpack_from("<IB", body, 0)
    lens, pos = _read_varints(body, n_runs, 5)
    vals, _ = _take(body, pos, "<u2" if width == 2 else "<u4", n_runs)
    series = np.repeat(vals.astype(np.int64), lens) if n_runs else np.zeros(0, np.int64)
    if series.size != k_total * n_tiles * q:
        raise ManifestError("table references do not cover every entry")
    if series.size and series.max() >= len(uniq):
        raise ManifestError("table reference out of range")
    ref = series.reshape(n_tiles * q, k_total).T.reshape(-1)
    codes = uniq[ref] if ref.size else np.zeros((0, 4), np.int64)
    shape = (k_total, n_tiles, q)
    table = CompressedTable(
        codes[:, 0].reshape(shape) * A_STEP, codes[:, 1].reshape(shape) * B_STEP,
        codes[:, 2].reshape(shape) * HI_STEP, codes[:, 3].reshape(shape) * RMSE_STEP,
        float(head["ceiling"]))
    f64 = lambda x: x.astype(float)  # noqa: E731
    return Manifest(
        quality_levels=tuple(head["quality_levels"]),
        chunk_duration_s=float(head["chunk_duration_s"]),
        tiling=tiling,
        luminance=f64(lum).reshape(k_total, n_tiles),
        dof=f64(dof).reshape(k_total, n_tiles),
        velocity=f64(vel).reshape(k_total, s, n_tiles, 2),
        bitrate=f64(rate).reshape(k_total, n_tiles, q),
        table=table,
        model=model,
        trajectory_period_s=float(head["trajectory_period_s"]),
        representatives=int(head["representatives"]),
        factor_max=tuple(head["factor_max"]),
        version=FORMAT_VERSION,
    )


def manifest_to_json(m: Manifest) -> str:
    """Readable dump for debugging; not meant to be parsed back."""
    chunks = []
    for k in range(m.num_chunks):
        tiles = []
        for t, r in enumerate(m.tiling.rects(k)):
            tiles.append({
                "rect": list(r), "luminance": m.luminance[k, t], "dof": m.dof[k, t],
                "velocity": m.velocity[k, :, t].tolist(), "bitrate": m.bitrate[k, t].tolist(),
                "fit": [{"a": m.table.a[k, t, j], "b": m.table.b[k, t, j], "hi": m.table.hi[k, t, j],
                         "rmse": m.table.rmse[k, t, j]} for j in range(m.num_levels)],
            })
        chunks.append({"chunk": k, "tiles": tiles})
    doc = {"version": m.version, "quality_levels": list(m.quality_levels),
           "chunk_duration_s": m.chunk_duration_s, "static_tiling": m.tiling.static,
           "model": _model_to_dict(m.model), "chunks": chunks}
    return json.dumps(doc, indent=1, default=float)


def save_manifest(m: Manifest, path) -> int:
    blob = serialize_manifest(m)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def load_manifest(path) -> Manifest:
    with open(path, "rb") as fh:
        return parse_manifest(fh.read())
