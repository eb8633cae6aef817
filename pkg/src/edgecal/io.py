"""File formats: point clouds (PCD / XYZ text), images, intrinsics, overlays.

PCD support follows the v0.7 header convention: ASCII and little-endian
binary payloads, scalar fields, with x/y/z required as floats and an
optional intensity field. Rows with non-finite coordinates are dropped and
counted on the returned cloud. Written PCD files store float32 (the
format's customary size); the plain XYZ text format keeps full float64
precision.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, UnidentifiedImageError

from .camera import CameraIntrinsics, project_batch, in_frame
from .errors import MissingKey, ParseError, UnsupportedFormat
from .geometry import RigidTransform, euler_zyx_to_rotation, rotation_to_euler_zyx
from .image_edge import GrayImage, to_grayscale
from .lidar_edge import PointCloud

_PCD_DTYPES = {
    ("F", 4): "<f4",
    ("F", 8): "<f8",
    ("U", 1): "<u1",
    ("U", 2): "<u2",
    ("U", 4): "<u4",
    ("I", 1): "<i1",
    ("I", 2): "<i2",
    ("I", 4): "<i4",
}


def _parse_pcd_header(raw: bytes, path: str) -> tuple[dict, int]:
    header: dict = {}
    offset = 0
    line_no = 0
    while True:
        end = raw.find(b"\n", offset)
        if end < 0:
            raise ParseError(f"{path}: header ended before DATA line")
        line = raw[offset : end + 1]
        offset = end + 1
        line_no += 1
        text = line.decode("ascii", errors="replace").strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        key = parts[0].upper()
        header[key] = parts[1:]
        if key == "DATA":
            break
        if line_no > 100:
            raise ParseError(f"{path}: no DATA line in the first 100 header lines")
    for required in ("FIELDS", "SIZE", "TYPE", "COUNT", "POINTS", "DATA"):
        if required not in header:
            raise ParseError(f"{path}: header missing {required}")
    return header, offset


def _finish_cloud(
    xyz: np.ndarray, intensity: np.ndarray | None
) -> PointCloud:
    finite = np.all(np.isfinite(xyz), axis=1)
    if intensity is not None:
        finite &= np.isfinite(intensity)
        intensity = intensity[finite]
    dropped = int(xyz.shape[0] - np.count_nonzero(finite))
    return PointCloud(
        points=xyz[finite].astype(float),
        intensity=None if intensity is None else intensity.astype(float),
        nan_dropped=dropped,
    )


def _load_pcd(path: str) -> PointCloud:
    with open(path, "rb") as fh:
        raw = fh.read()
    header, payload_offset = _parse_pcd_header(raw, path)
    fields = header["FIELDS"]
    try:
        sizes = [int(s) for s in header["SIZE"]]
        counts = [int(c) for c in header["COUNT"]]
        n_points = int(header["POINTS"][0])
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: malformed header numbers: {exc}") from exc
    types = header["TYPE"]
    if not (len(fields) == len(sizes) == len(types) == len(counts)):
        raise ParseError(f"{path}: FIELDS/SIZE/TYPE/COUNT lengths disagree")
    for name in ("x", "y", "z"):
        if name not in fields:
            raise ParseError(f"{path}: required field {name!r} absent")
        k = fields.index(name)
        if types[k] != "F" or counts[k] != 1:
            raise UnsupportedFormat(f"{path}: field {name!r} must be a scalar float")

    mode = header["DATA"][0].lower()
    if mode == "ascii":
        text_rows = raw[payload_offset:].decode("ascii", errors="replace")
        col = 0
        col_of = {}
        for name, cnt in zip(fields, counts):
            col_of[name] = col
            col += cnt
        wanted = [col_of["x"], col_of["y"], col_of["z"]]
        if "intensity" in col_of:
            wanted.append(col_of["intensity"])
        try:
            data = np.loadtxt(
                text_rows.splitlines(), dtype=float, usecols=wanted, ndmin=2
            )
        except ValueError as exc:
            raise ParseError(f"{path}: bad ASCII payload: {exc}") from exc
        if data.shape[0] != n_points:
            raise ParseError(
                f"{path}: POINTS says {n_points}, payload has {data.shape[0]} rows"
            )
        xyz = data[:, :3]
        intensity = data[:, 3] if len(wanted) == 4 else None
        return _finish_cloud(xyz, intensity)

    if mode != "binary":
        raise UnsupportedFormat(f"{path}: DATA {mode} not supported")

    entries = []
    for k, (name, size, typ, cnt) in enumerate(zip(fields, sizes, types, counts)):
        if name == "_" or (typ, size) not in _PCD_DTYPES:
            entries.append((f"_pad{k}", f"V{size * cnt}"))
        elif cnt == 1:
            entries.append((name, _PCD_DTYPES[(typ, size)]))
        else:
            entries.append((name, _PCD_DTYPES[(typ, size)], (cnt,)))
    dtype = np.dtype(entries)
    payload = raw[payload_offset : payload_offset + dtype.itemsize * n_points]
    if len(payload) < dtype.itemsize * n_points:
        raise ParseError(
            f"{path}: binary payload truncated "
            f"({len(payload)} of {dtype.itemsize * n_points} bytes)"
        )
    rows = np.frombuffer(payload, dtype=dtype, count=n_points)
    xyz = np.stack(
        [rows["x"].astype(float), rows["y"].astype(float), rows["z"].astype(float)],
        axis=1,
    )
    intensity = rows["intensity"].astype(float) if "intensity" in fields else None
    return _finish_cloud(xyz, intensity)


def _load_xyz_text(path: str) -> PointCloud:
    try:
        data = np.loadtxt(path, dtype=float, ndmin=2)
    except ValueError as exc:
        raise ParseError(f"{path}: bad XYZ text: {exc}") from exc
    if data.size == 0:
        data = data.reshape(0, 3)
    if data.shape[1] == 3:
        return _finish_cloud(data, None)
    if data.shape[1] == 4:
        return _finish_cloud(data[:, :3], data[:, 3])
    raise ParseError(f"{path}: expected 3 or 4 columns, found {data.shape[1]}")


def load_point_cloud(path: str) -> PointCloud:
    """Load a cloud by extension: .pcd, or .xyz/.txt whitespace text."""
    lower = str(path).lower()
    if lower.endswith(".pcd"):
        return _load_pcd(path)
    if lower.endswith(".xyz") or lower.endswith(".txt"):
        return _load_xyz_text(path)
    raise UnsupportedFormat(f"{path}: unrecognized point-cloud extension")


def save_point_cloud(cloud: PointCloud, path: str, binary: bool = True) -> None:
    """Write a cloud: .pcd (float32, ASCII or binary) or .xyz/.txt (float64)."""
    lower = str(path).lower()
    has_intensity = cloud.intensity is not None
    if lower.endswith(".xyz") or lower.endswith(".txt"):
        cols = (
            np.column_stack([cloud.points, cloud.intensity])
            if has_intensity
            else cloud.points
        )
        with open(path, "w") as fh:
            for row in cols:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        return
    if not lower.endswith(".pcd"):
        raise UnsupportedFormat(f"{path}: unrecognized point-cloud extension")

    n = cloud.points.shape[0]
    names = ["x", "y", "z"] + (["intensity"] if has_intensity else [])
    header = (
        "# .PCD v0.7 - Point Cloud Data file format\n"
        "VERSION 0.7\n"
        f"FIELDS {' '.join(names)}\n"
        f"SIZE {' '.join('4' for _ in names)}\n"
        f"TYPE {' '.join('F' for _ in names)}\n"
        f"COUNT {' '.join('1' for _ in names)}\n"
        f"WIDTH {n}\n"
        "HEIGHT 1\n"
        "VIEWPOINT 0 0 0 1 0 0 0\n"
        f"POINTS {n}\n"
    )
    data = cloud.points.astype("<f4")
    if has_intensity:
        data = np.column_stack([data, cloud.intensity.astype("<f4")])
    if binary:
        with open(path, "wb") as fh:
            fh.write((header + "DATA binary\n").encode("ascii"))
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
    else:
        with open(path, "w") as fh:
            fh.write(header + "DATA ascii\n")
            for row in data:
                fh.write(" ".join(f"{float(v):.9g}" for v in row) + "\n")


def load_image(path: str) -> GrayImage:
    """Load PNG/JPEG as grayscale (color converted by the BT.601 rule)."""
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode == "L":
                return GrayImage(np.asarray(img, dtype=np.uint8))
            if img.mode not in ("RGB", "RGBA", "P", "LA", "1"):
                raise UnsupportedFormat(f"{path}: unsupported image mode {img.mode}")
            rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise ParseError(f"{path}: not a recognizable image: {exc}") from exc
    except OSError as exc:
        raise ParseError(f"{path}: image read failed: {exc}") from exc
    return to_grayscale(rgb)


def save_image(pixels: np.ndarray | GrayImage, path: str) -> None:
    if isinstance(pixels, GrayImage):
        pixels = pixels.pixels
    Image.fromarray(np.asarray(pixels)).save(path, format="PNG")


def _parse_keyvalue_lines(path: str) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    with open(path) as fh:
        for line_no, raw_line in enumerate(fh, start=1):
            line = raw_line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                key, _, rest = line.partition("=")
                key = key.strip()
                values = rest.split()
            else:
                parts = line.split()
                key, values = parts[0], parts[1:]
            if not key or not values:
                raise ParseError(f"{path}:{line_no}: expected 'key value'")
            if key in out:
                raise ParseError(f"{path}:{line_no}: duplicate key {key!r}")
            out[key] = values
    return out


_INTRINSIC_REQUIRED = ("fx", "fy", "cx", "cy", "width", "height")
_INTRINSIC_OPTIONAL = ("k1", "k2", "k3", "p1", "p2")


def load_intrinsics(path: str) -> CameraIntrinsics:
    """Text key-value camera file; distortion keys default to zero."""
    entries = _parse_keyvalue_lines(path)
    for key in entries:
        if key not in _INTRINSIC_REQUIRED and key not in _INTRINSIC_OPTIONAL:
            raise ParseError(f"{path}: unknown intrinsics key {key!r}")
    missing = [k for k in _INTRINSIC_REQUIRED if k not in entries]
    if missing:
        raise MissingKey(f"{path}: missing required keys: {', '.join(missing)}")
    values = {}
    for key, toks in entries.items():
        if len(toks) != 1:
            raise ParseError(f"{path}: key {key!r} takes one value")
        try:
            values[key] = float(toks[0])
        except ValueError as exc:
            raise ParseError(f"{path}: key {key!r}: {exc}") from exc
    return CameraIntrinsics(
        fx=values["fx"],
        fy=values["fy"],
        cx=values["cx"],
        cy=values["cy"],
        width=int(round(values["width"])),
        height=int(round(values["height"])),
        k1=values.get("k1", 0.0),
        k2=values.get("k2", 0.0),
        k3=values.get("k3", 0.0),
        p1=values.get("p1", 0.0),
        p2=values.get("p2", 0.0),
    )


def save_intrinsics(intr: CameraIntrinsics, path: str) -> None:
    with open(path, "w") as fh:
        for key in _INTRINSIC_REQUIRED:
            value = getattr(intr, key)
            if key in ("width", "height"):
                fh.write(f"{key} = {int(value)}\n")
            else:
                fh.write(f"{key} = {value:.17g}\n")
        for key in _INTRINSIC_OPTIONAL:
            fh.write(f"{key} = {getattr(intr, key):.17g}\n")


def load_extrinsic_text(path: str) -> RigidTransform:
    """Extrinsic as 'euler_zyx_deg yaw pitch roll' + 'translation x y z'."""
    entries = _parse_keyvalue_lines(path)
    for key in ("euler_zyx_deg", "translation"):
        if key not in entries:
            raise MissingKey(f"{path}: missing key {key!r}")
        if len(entries[key]) != 3:
            raise ParseError(f"{path}: key {key!r} takes three values")
    try:
        yaw, pitch, roll = (np.radians(float(v)) for v in entries["euler_zyx_deg"])
        translation = np.array([float(v) for v in entries["translation"]])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return RigidTransform(euler_zyx_to_rotation(yaw, pitch, roll), translation)


def save_extrinsic_text(transform: RigidTransform, path: str) -> None:
    yaw, pitch, roll = rotation_to_euler_zyx(transform.rotation)
    with open(path, "w") as fh:
        fh.write(
            "euler_zyx_deg = "
            + " ".join(f"{np.degrees(a):.17g}" for a in (yaw, pitch, roll))
            + "\n"
        )
        fh.write(
            "translation = "
            + " ".join(f"{v:.17g}" for v in transform.translation)
            + "\n"
        )


def jet_colormap(x: np.ndarray) -> np.ndarray:
    """Jet mapping of values in [0, 1] to uint8 RGB."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    r = np.clip(1.5 - np.abs(4.0 * x - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * x - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * x - 1.0), 0.0, 1.0)
    return (np.stack([r, g, b], axis=-1) * 255.0 + 0.5).astype(np.uint8)


def render_overlay(
    image: GrayImage,
    cloud: PointCloud,
    transform: RigidTransform,
    intr: CameraIntrinsics,
) -> np.ndarray:
    """Cloud projected over the photo, Jet-colored by intensity.

    Falls back to Jet-by-depth when the cloud carries no intensity. Nearer
    points win contested pixels; ties break on point index, so the result
    is a pure function of its inputs.
    """
    base = np.stack([image.pixels] * 3, axis=-1).astype(np.uint8)
    points_cam = transform.apply(cloud.points)
    pixels, valid = project_batch(points_cam, intr)
    valid &= in_frame(pixels, intr)
    if not np.any(valid):
        return base
    idx = np.nonzero(valid)[0]
    cols = np.rint(pixels[idx, 0]).astype(int)
    rows = np.rint(pixels[idx, 1]).astype(int)
    inside = (cols >= 0) & (cols < intr.width) & (rows >= 0) & (rows < intr.height)
    idx, cols, rows = idx[inside], cols[inside], rows[inside]
    depth = points_cam[idx, 2]

    scalar = cloud.intensity[idx] if cloud.intensity is not None else depth
    lo, hi = float(np.min(scalar)), float(np.max(scalar))
    norm = (scalar - lo) / (hi - lo) if hi > lo else np.full(scalar.shape, 0.5)
    colors = jet_colormap(norm)

    order = np.lexsort((np.arange(idx.size), -depth))
    base[rows[order], cols[order]] = colors[order]
    return base
