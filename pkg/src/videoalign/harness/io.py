"""Readers and writers for depth (PFM), point clouds (PLY), trajectories (TUM),
JSON documents and the little-endian binary container used for pair
predictions, alignment states and parameter bundles.

Container layout (all integers little-endian)::

    magic    4 bytes   b"VAPB"
    version  u8        1
    kind     u8        1 = pair predictions, 2 = named arrays
    count    u32       number of records
    records  count x   u64 payload length, then payload

    pair payload:  i32 n, i32 m, u32 H, u32 W,
                   f64 x_n[H*W*3], f64 x_m[H*W*3], f64 c_n[H*W], f64 c_m[H*W]
                   (invalid points stored as NaN)
    array payload: u16 name length, utf-8 name, u8 ndim, u32 dims[ndim],
                   f64 data (C order)
"""

from __future__ import annotations

import json
import math
import os
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from ..alignment.types import AlignmentState, CorrespondenceSet, PairPrediction
from ..errors import FormatError
from ..evaluation import DepthSequence, Trajectory
from ..geometry import ConfidenceMap, DepthMap, Intrinsics, PointMap, Pose
from ..viewgraph import Edge

MAGIC = b"VAPB"
VERSION = 1
KIND_PAIRS = 1
KIND_ARRAYS = 2
_HEADER = struct.Struct("<4sBBI")
_LEN = struct.Struct("<Q")
_PAIR_HEAD = struct.Struct("<iiII")


# --------------------------------------------------------------------------
# PFM


def write_pfm(path, depth: DepthMap | np.ndarray) -> None:
    """Grayscale PFM, little-endian, rows stored bottom-up; invalid pixels as NaN."""
    if isinstance(depth, DepthMap):
        values = np.where(depth.valid, depth.values, np.nan)
    else:
        values = np.asarray(depth, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"PFM needs a 2D grid, got ndim={values.ndim}")
    H, W = values.shape
    data = np.ascontiguousarray(values[::-1].astype("<f4"))
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{W} {H}\n".encode())
        f.write(b"-1.0\n")
        f.write(data.tobytes())


def _pfm_token(f) -> bytes:
    line = f.readline()
    if not line:
        raise FormatError("truncated PFM header")
    return line.strip()


def read_pfm(path) -> np.ndarray:
    """Returns an (H, W) float64 array with NaN where the file stores NaN."""
    with open(path, "rb") as f:
        tag = _pfm_token(f)
        if tag != b"Pf":
            raise FormatError(f"{path}: expected grayscale PFM tag 'Pf', got {tag!r}")
        dims = _pfm_token(f).split()
        try:
            W, H = int(dims[0]), int(dims[1])
            scale = float(_pfm_token(f))
        except (ValueError, IndexError) as e:
            raise FormatError(f"{path}: malformed PFM header") from e
        if W <= 0 or H <= 0 or scale == 0:
            raise FormatError(f"{path}: invalid PFM dimensions or scale")
        dtype = "<f4" if scale < 0 else ">f4"
        raw = f.read()
    if len(raw) != 4 * W * H:
        raise FormatError(f"{path}: expected {4 * W * H} data bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=dtype).reshape(H, W)[::-1].astype(np.float64)


def read_pfm_depth(path) -> DepthMap:
    v = read_pfm(path)
    valid = np.isfinite(v) & (v > 0)
    return DepthMap(np.where(valid, v, 1.0), valid)


def write_depth_sequence(directory, seq: DepthSequence, prefix: str = "depth") -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(seq.frames):
        p = d / f"{prefix}_{i:04d}.pfm"
        write_pfm(p, frame)
        paths.append(p)
    return paths


def read_depth_sequence(directory, prefix: str = "depth") -> DepthSequence:
    d = Path(directory)
    files = sorted(d.glob(f"{prefix}_*.pfm"))
    if not files:
        raise FileNotFoundError(f"no {prefix}_*.pfm files in {d}")
    return DepthSequence(tuple(read_pfm_depth(p) for p in files))


# --------------------------------------------------------------------------
# PLY


def write_ply(path, points: np.ndarray, colors: np.ndarray | None = None) -> None:
    """ASCII PLY with float x y z and uchar red green blue."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3).astype(np.float32)
    if colors is None:
        cols = np.full((len(pts), 3), 255, dtype=np.uint8)
    else:
        cols = np.asarray(colors).reshape(-1, 3)
        if len(cols) != len(pts):
            raise ValueError(f"{len(pts)} points but {len(cols)} colors")
        cols = np.clip(cols, 0, 255).astype(np.uint8)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    # 9 significant digits round-trip any float32 exactly
    body = [f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c[0]} {c[1]} {c[2]}" for p, c in zip(pts.tolist(), cols.tolist())]
    Path(path).write_text("\n".join(lines + body) + "\n")


def read_ply(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (points float32 (n, 3), colors uint8 (n, 3))."""
    text = Path(path).read_text().splitlines()
    if not text or text[0] != "ply":
        raise FormatError(f"{path}: missing 'ply' magic")
    try:
        end = text.index("end_header")
    except ValueError as e:
        raise FormatError(f"{path}: missing end_header") from e
    header = text[1:end]
    if "format ascii 1.0" not in header:
        raise FormatError(f"{path}: only ascii 1.0 PLY is supported")
    count = None
    props = []
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
        elif parts and parts[0] == "property":
            props.append(parts[-1])
    if count is None or props != ["x", "y", "z", "red", "green", "blue"]:
        raise FormatError(f"{path}: expected vertex element with x y z red green blue")
    rows = text[end + 1 : end + 1 + count]
    if len(rows) != count:
        raise FormatError(f"{path}: expected {count} vertices, found {len(rows)}")
    try:
        table = [r.split() for r in rows]
        pts = np.array([[float(v) for v in r[:3]] for r in table], dtype=np.float32).reshape(-1, 3)
        cols = np.array([[int(v) for v in r[3:6]] for r in table], dtype=np.uint8).reshape(-1, 3)
    except (ValueError, IndexError) as e:
        raise FormatError(f"{path}: malformed vertex row") from e
    return pts, cols


# --------------------------------------------------------------------------
# TUM trajectories


def pose_to_quaternion(p: Pose) -> np.ndarray:
    """(qx, qy, qz, qw) with qw >= 0."""
    q = Rotation.from_matrix(p.rotation).as_quat()
    return -q if q[3] < 0 else q


def quaternion_to_rotation(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise FormatError("zero or non-finite quaternion")
    return Rotation.from_quat(q / n).as_matrix()


def write_tum(path, traj: Trajectory) -> None:
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for ts, p in zip(traj.timestamps, traj.poses):
        vals = [ts, *p.translation, *pose_to_quaternion(p)]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_tum(path) -> Trajectory:
    ts, poses = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise FormatError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        try:
            v = [float(x) for x in parts]
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: non-numeric field") from e
        ts.append(v[0])
        poses.append(Pose(quaternion_to_rotation(v[4:8]), np.array(v[1:4])))
    if not poses:
        raise FormatError(f"{path}: no poses")
    return Trajectory(np.array(ts), tuple(poses))


# --------------------------------------------------------------------------
# JSON


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return None
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from e


def intrinsics_to_dict(k: Intrinsics) -> dict:
    return {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height}


def intrinsics_from_dict(d: dict) -> Intrinsics:
    try:
        return Intrinsics(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]))
    except KeyError as e:
        raise FormatError(f"intrinsics missing field {e.args[0]}") from e


# --------------------------------------------------------------------------
# binary container


def _write_container(path, kind: int, payloads: Iterable[bytes]) -> None:
    payloads = list(payloads)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, kind, len(payloads)))
        for p in payloads:
            f.write(_LEN.pack(len(p)))
            f.write(p)


def _scan_container(path, kind: int) -> list[tuple[int, int]]:
    """(offset, length) of every record payload."""
    size = os.path.getsize(path)
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, k, count = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported container version {version}")
        if k != kind:
            raise FormatError(f"{path}: container holds kind {k}, expected {kind}")
        out = []
        pos = _HEADER.size
        for i in range(count):
            raw = f.read(_LEN.size)
            if len(raw) < _LEN.size:
                raise FormatError(f"{path}: truncated at record {i}")
            (n,) = _LEN.unpack(raw)
            pos += _LEN.size
            if pos + n > size:
                raise FormatError(f"{path}: record {i} overruns the file")
            out.append((pos, n))
            f.seek(n, os.SEEK_CUR)
            pos += n
        if pos != size:
            raise FormatError(f"{path}: {size - pos} trailing bytes")
    return out


def _pair_payload(p: PairPrediction) -> bytes:
    H, W = p.shape
    xn = np.where(p.x_n.valid[..., None], p.x_n.points, np.nan)
    xm = np.where(p.x_m.valid[..., None], p.x_m.points, np.nan)
    parts = [_PAIR_HEAD.pack(p.edge.n, p.edge.m, H, W)]
    for a in (xn, xm, p.c_n.weights, p.c_m.weights):
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts)


def _pair_from_payload(buf: bytes) -> PairPrediction:
    if len(buf) < _PAIR_HEAD.size:
        raise FormatError("truncated pair record")
    n, m, H, W = _PAIR_HEAD.unpack_from(buf)
    P = H * W
    expected = _PAIR_HEAD.size + 8 * (3 * P + 3 * P + P + P)
    if len(buf) != expected:
        raise FormatError(f"pair record ({n}, {m}): expected {expected} bytes, got {len(buf)}")
    a = np.frombuffer(buf, dtype="<f8", offset=_PAIR_HEAD.size)
    xn = a[: 3 * P].reshape(H, W, 3)
    xm = a[3 * P : 6 * P].reshape(H, W, 3)
    cn = a[6 * P : 7 * P].reshape(H, W)
    cm = a[7 * P :].reshape(H, W)
    return PairPrediction(Edge(n, m), PointMap(xn), PointMap(xm), ConfidenceMap(cn), ConfidenceMap(cm))


def write_pairs(path, pairs: Sequence[PairPrediction]) -> None:
    _write_container(path, KIND_PAIRS, (_pair_payload(p) for p in pairs))


class PairFile:
    """Random access to the pair records of a container.

    Only the records asked for are read, so a caller can keep a bounded
    subset of a large pair set in memory.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._index: dict[Edge, tuple[int, int]] = {}
        with open(self.path, "rb") as f:
            for off, n in _scan_container(self.path, KIND_PAIRS):
                f.seek(off)
                head = f.read(_PAIR_HEAD.size)
                if len(head) < _PAIR_HEAD.size:
                    raise FormatError(f"{path}: truncated pair record")
                e = Edge(*_PAIR_HEAD.unpack(head)[:2])
                if e in self._index:
                    raise FormatError(f"{path}: duplicate record for edge ({e.n}, {e.m})")
                self._index[e] = (off, n)

    @property
    def edges(self) -> list[Edge]:
        return list(self._index)

    def __len__(self) -> int:
        return len(self._index)

    def load(self, edges: Sequence[Edge]) -> list[PairPrediction]:
        missing = [e for e in edges if e not in self._index]
        if missing:
            e = missing[0]
            raise KeyError(f"{self.path}: no prediction for edge ({e.n}, {e.m}); {len(missing)} missing")
        out = []
        with open(self.path, "rb") as f:
            for e in edges:
                off, n = self._index[e]
                f.seek(off)
                out.append(_pair_from_payload(f.read(n)))
        return out

    def load_all(self) -> list[PairPrediction]:
        return self.load(self.edges)


def read_pairs(path) -> list[PairPrediction]:
    return PairFile(path).load_all()


def _array_payload(name: str, a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    nb = name.encode()
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def _array_from_payload(buf: bytes) -> tuple[str, np.ndarray]:
    try:
        (ln,) = struct.unpack_from("<H", buf, 0)
        name = buf[2 : 2 + ln].decode()
        (nd,) = struct.unpack_from("<B", buf, 2 + ln)
        shape = struct.unpack_from(f"<{nd}I", buf, 3 + ln)
    except (struct.error, UnicodeDecodeError) as e:
        raise FormatError("malformed array record header") from e
    off = 3 + ln + 4 * nd
    size = int(np.prod(shape, dtype=np.int64))
    if len(buf) - off != 8 * size:
        raise FormatError(f"array {name!r}: expected {8 * size} data bytes, got {len(buf) - off}")
    return name, np.frombuffer(buf, dtype="<f8", offset=off).reshape(shape).astype(np.float64)


def write_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Named float64 arrays (parameter bundles, states) in insertion order."""
    _write_container(path, KIND_ARRAYS, (_array_payload(k, np.asarray(v)) for k, v in arrays.items()))


def read_arrays(path) -> dict[str, np.ndarray]:
    out = {}
    with open(path, "rb") as f:
        for off, n in _scan_container(path, KIND_ARRAYS):
            f.seek(off)
            name, a = _array_from_payload(f.read(n))
            if name in out:
                raise FormatError(f"{path}: duplicate array {name!r}")
            out[name] = a
    return out


def state_to_arrays(state: AlignmentState) -> dict[str, np.ndarray]:
    return {
        "depth": np.stack([np.where(d.valid, d.values, np.nan) for d in state.depths]),
        "rotation": np.stack([p.rotation for p in state.poses]),
        "translation": np.stack([p.translation for p in state.poses]),
        "intrinsics": np.array([[k.fx, k.fy, k.cx, k.cy, k.width, k.height] for k in state.intrinsics], dtype=float),
        "edges": np.array([[e.n, e.m] for e in state.edges], dtype=float).reshape(-1, 2),
        "edge_scales": np.asarray(state.edge_scales, dtype=float),
    }


def state_from_arrays(a: dict[str, np.ndarray]) -> AlignmentState:
    keys = ("depth", "rotation", "translation", "intrinsics", "edges", "edge_scales")
    for k in keys:
        if k not in a:
            raise FormatError(f"state bundle missing array {k!r}")
    depths = tuple(DepthMap(np.where(np.isfinite(d), d, 1.0), np.isfinite(d) & (d > 0)) for d in a["depth"])
    poses = tuple(Pose(R, t) for R, t in zip(a["rotation"], a["translation"]))
    ks = tuple(Intrinsics(r[0], r[1], r[2], r[3], int(r[4]), int(r[5])) for r in a["intrinsics"])
    edges = tuple(Edge(int(n), int(m)) for n, m in a["edges"])
    return AlignmentState(depths, poses, ks, edges, a["edge_scales"])


def write_state(path, state: AlignmentState) -> None:
    write_arrays(path, state_to_arrays(state))


def read_state(path) -> AlignmentState:
    return state_from_arrays(read_arrays(path))



def write_correspondences(path, corr: CorrespondenceSet) -> None:
    write_arrays(
        path,
        {
            "frame_a": corr.frame_a,
            "pixel_a": corr.pixel_a,
            "frame_b": corr.frame_b,
            "pixel_b": corr.pixel_b,
            "weight": corr.weight,
        },
    )


def read_correspondences(path) -> CorrespondenceSet:
    a = read_arrays(path)
    try:
        return CorrespondenceSet(
            a["frame_a"].astype(int),
            a["pixel_a"].reshape(-1, 2).astype(int),
            a["frame_b"].astype(int),
            a["pixel_b"].reshape(-1, 2),
            a["weight"],
        )
    except KeyError as e:
        raise FormatError(f"{path}: correspondence bundle missing array {e.args[0]!r}") from e
