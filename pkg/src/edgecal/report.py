"""Calibration report: trimmed residual statistics and a text serialization.

The report is plain structured text: ``[section]`` headers (optionally with
``key=value`` attributes) followed by ``key = value`` lines. All floats are
written with 17 significant digits so parse(serialize(r)) reproduces r
exactly and serialize(parse(s)) is byte-identical. Nothing time- or
host-dependent is ever written; two identical runs yield identical bytes.

Residual statistics follow the outlier convention used throughout this
package: the largest 20% of residuals by magnitude are dropped, and the
summary (min, quartiles, median, max, mean, histogram) describes the kept
signed values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParseError
from .geometry import RigidTransform

TRIM_FRACTION = 0.2
_HISTOGRAM_BINS = 21


def _fmt(value: float) -> str:
    return f"{float(value):.17g}"


def trim_residuals(residuals: np.ndarray, trim_fraction: float = TRIM_FRACTION) -> np.ndarray:
    """Signed residuals with the largest ``trim_fraction`` by |r| removed."""
    residuals = np.asarray(residuals, dtype=float)
    n_drop = int(np.floor(trim_fraction * residuals.size))
    if n_drop == 0:
        return residuals.copy()
    order = np.argsort(np.abs(residuals), kind="stable")
    return residuals[np.sort(order[: residuals.size - n_drop])]


@dataclass(frozen=True)
class ResidualStats:
    count: int
    used: int
    trim_fraction: float
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    mean: float
    median_abs: float
    rms: float
    frac_within_1px: float
    histogram_edges: tuple[float, ...]
    histogram_counts: tuple[int, ...]

    @staticmethod
    def from_residuals(
        residuals: np.ndarray, trim_fraction: float = TRIM_FRACTION
    ) -> "ResidualStats":
        residuals = np.asarray(residuals, dtype=float)
        kept = trim_residuals(residuals, trim_fraction)
        if kept.size == 0:
            zeros = dict(
                minimum=0.0, q1=0.0, median=0.0, q3=0.0, maximum=0.0, mean=0.0,
                median_abs=0.0, rms=0.0, frac_within_1px=0.0,
            )
            return ResidualStats(
                count=int(residuals.size), used=0, trim_fraction=trim_fraction,
                histogram_edges=(), histogram_counts=(), **zeros,
            )
        quartiles = np.percentile(kept, [0.0, 25.0, 50.0, 75.0, 100.0])
        counts, edges = np.histogram(kept, bins=_HISTOGRAM_BINS)
        return ResidualStats(
            count=int(residuals.size),
            used=int(kept.size),
            trim_fraction=float(trim_fraction),
            minimum=float(quartiles[0]),
            q1=float(quartiles[1]),
            median=float(quartiles[2]),
            q3=float(quartiles[3]),
            maximum=float(quartiles[4]),
            mean=float(np.mean(kept)),
            median_abs=float(np.median(np.abs(kept))),
            rms=float(np.sqrt(np.mean(kept**2))),
            frac_within_1px=float(np.mean(np.abs(kept) <= 1.0)),
            histogram_edges=tuple(float(e) for e in edges),
            histogram_counts=tuple(int(c) for c in counts),
        )


@dataclass(frozen=True)
class CalibrationReport:
    version: str
    scenes: int
    config_echo: tuple[tuple[str, str], ...]
    rotation: tuple[float, ...]
    translation: tuple[float, ...]
    euler_zyx_deg: tuple[float, ...]
    sigma: tuple[float, ...]
    covariance: tuple[float, ...]
    converged: bool
    iterations: int
    correspondences: int
    normalized_cost: float
    pc_before: float
    pc_after: float
    cost_history: tuple[float, ...]
    information: tuple[float, ...]
    eigenvalues: tuple[float, ...]
    condition_number: float
    occupancy: tuple[float, ...]
    flags: tuple[str, ...]
    residual_stats: tuple[ResidualStats, ...]

    def extrinsic(self) -> RigidTransform:
        rotation = np.array(self.rotation, dtype=float).reshape(3, 3)
        return RigidTransform(rotation, np.array(self.translation, dtype=float))


@dataclass(frozen=True)
class CrossValidationReport:
    version: str
    scenes: int
    euler_zyx_deg: tuple[tuple[float, ...], ...]
    translations: tuple[tuple[float, ...], ...]
    cells: tuple[tuple[ResidualStats, ...], ...]


_STATS_SCALARS = (
    ("count", int),
    ("used", int),
    ("trim_fraction", float),
    ("minimum", float),
    ("q1", float),
    ("median", float),
    ("q3", float),
    ("maximum", float),
    ("mean", float),
    ("median_abs", float),
    ("rms", float),
    ("frac_within_1px", float),
)


def _stats_lines(stats: ResidualStats) -> list[str]:
    lines = []
    for name, kind in _STATS_SCALARS:
        value = getattr(stats, name)
        lines.append(f"{name} = {value if kind is int else _fmt(value)}")
    lines.append("histogram_edges = " + " ".join(_fmt(v) for v in stats.histogram_edges))
    lines.append("histogram_counts = " + " ".join(str(v) for v in stats.histogram_counts))
    return lines


def _stats_from_section(body: dict[str, str], where: str) -> ResidualStats:
    values = {}
    for name, kind in _STATS_SCALARS:
        if name not in body:
            raise ParseError(f"{where}: missing {name}")
        values[name] = kind(body[name])
    edges = tuple(float(t) for t in body.get("histogram_edges", "").split())
    counts = tuple(int(t) for t in body.get("histogram_counts", "").split())
    return ResidualStats(histogram_edges=edges, histogram_counts=counts, **values)


def serialize_report(report: CalibrationReport) -> str:
    out = []
    out.append("[meta]")
    out.append("kind = calibration")
    out.append(f"version = {report.version}")
    out.append(f"scenes = {report.scenes}")
    out.append("")
    out.append("[config]")
    for key, value in report.config_echo:
        out.append(f"{key} = {value}")
    out.append("")
    out.append("[extrinsic]")
    out.append("rotation = " + " ".join(_fmt(v) for v in report.rotation))
    out.append("translation = " + " ".join(_fmt(v) for v in report.translation))
    out.append("euler_zyx_deg = " + " ".join(_fmt(v) for v in report.euler_zyx_deg))
    out.append("")
    out.append("[uncertainty]")
    out.append("sigma = " + " ".join(_fmt(v) for v in report.sigma))
    out.append("covariance = " + " ".join(_fmt(v) for v in report.covariance))
    out.append("")
    out.append("[fit]")
    out.append(f"converged = {'true' if report.converged else 'false'}")
    out.append(f"iterations = {report.iterations}")
    out.append(f"correspondences = {report.correspondences}")
    out.append(f"normalized_cost = {_fmt(report.normalized_cost)}")
    out.append(f"pc_before = {_fmt(report.pc_before)}")
    out.append(f"pc_after = {_fmt(report.pc_after)}")
    out.append("cost_history = " + " ".join(_fmt(v) for v in report.cost_history))
    out.append("")
    out.append("[quality]")
    out.append("information = " + " ".join(_fmt(v) for v in report.information))
    out.append("eigenvalues = " + " ".join(_fmt(v) for v in report.eigenvalues))
    out.append(f"condition_number = {_fmt(report.condition_number)}")
    out.append("occupancy = " + " ".join(_fmt(v) for v in report.occupancy))
    out.append("flags = " + " ".join(report.flags))
    for k, stats in enumerate(report.residual_stats):
        out.append("")
        out.append(f"[residuals scene={k}]")
        out.extend(_stats_lines(stats))
    return "\n".join(out) + "\n"


def serialize_cross_validation(report: CrossValidationReport) -> str:
    out = []
    out.append("[meta]")
    out.append("kind = cross_validation")
    out.append(f"version = {report.version}")
    out.append(f"scenes = {report.scenes}")
    for i in range(report.scenes):
        out.append("")
        out.append(f"[extrinsic scene={i}]")
        out.append(
            "euler_zyx_deg = " + " ".join(_fmt(v) for v in report.euler_zyx_deg[i])
        )
        out.append(
            "translation = " + " ".join(_fmt(v) for v in report.translations[i])
        )
    for i in range(report.scenes):
        for j in range(report.scenes):
            out.append("")
            out.append(f"[residuals row={i} col={j}]")
            out.extend(_stats_lines(report.cells[i][j]))
    return "\n".join(out) + "\n"


def _split_sections(text: str) -> list[tuple[str, dict[str, str], dict[str, str]]]:
    """Sections as (name, attributes, body) in file order."""
    sections: list[tuple[str, dict[str, str], dict[str, str]]] = []
    order: list[list[str]] = []
    current: dict[str, str] | None = None
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            parts = line[1:-1].split()
            if not parts:
                raise ParseError(f"report line {line_no}: empty section header")
            attrs = {}
            for tok in parts[1:]:
                if "=" not in tok:
                    raise ParseError(f"report line {line_no}: bad attribute {tok!r}")
                k, _, v = tok.partition("=")
                attrs[k] = v
            current = {}
            sections.append((parts[0], attrs, current))
            order.append([])
            continue
        if current is None:
            raise ParseError(f"report line {line_no}: data before first section")
        if "=" not in line:
            raise ParseError(f"report line {line_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in current:
            raise ParseError(f"report line {line_no}: duplicate key {key!r}")
        current[key] = value.strip()
        order[-1].append(key)
    return sections


def _floats(body: dict[str, str], key: str, n: int | None, where: str) -> tuple:
    if key not in body:
        raise ParseError(f"{where}: missing {key}")
    toks = body[key].split()
    if n is not None and len(toks) != n:
        raise ParseError(f"{where}: {key} expects {n} values, found {len(toks)}")
    try:
        return tuple(float(t) for t in toks)
    except ValueError as exc:
        raise ParseError(f"{where}: {key}: {exc}") from exc


def parse_report(text: str) -> CalibrationReport:
    sections = _split_sections(text)
    by_name: dict[str, dict[str, str]] = {}
    scene_stats: list[tuple[int, dict[str, str]]] = []
    config_order: list[tuple[str, str]] = []
    for name, attrs, body in sections:
        if name == "residuals":
            scene_stats.append((int(attrs.get("scene", len(scene_stats))), body))
        else:
            by_name[name] = body
            if name == "config":
                config_order = list(body.items())
    for required in ("meta", "extrinsic", "uncertainty", "fit", "quality"):
        if required not in by_name:
            raise ParseError(f"report: missing [{required}] section")
    meta = by_name["meta"]
    if meta.get("kind", "calibration") != "calibration":
        raise ParseError(f"report: kind {meta.get('kind')!r} is not a calibration report")
    fit = by_name["fit"]
    quality = by_name["quality"]
    scene_stats.sort(key=lambda kv: kv[0])
    stats = tuple(
        _stats_from_section(body, f"[residuals scene={k}]") for k, body in scene_stats
    )
    return CalibrationReport(
        version=meta.get("version", ""),
        scenes=int(meta.get("scenes", len(stats))),
        config_echo=tuple(config_order),
        rotation=_floats(by_name["extrinsic"], "rotation", 9, "[extrinsic]"),
        translation=_floats(by_name["extrinsic"], "translation", 3, "[extrinsic]"),
        euler_zyx_deg=_floats(by_name["extrinsic"], "euler_zyx_deg", 3, "[extrinsic]"),
        sigma=_floats(by_name["uncertainty"], "sigma", 6, "[uncertainty]"),
        covariance=_floats(by_name["uncertainty"], "covariance", 36, "[uncertainty]"),
        converged=fit.get("converged", "false") == "true",
        iterations=int(fit.get("iterations", "0")),
        correspondences=int(fit.get("correspondences", "0")),
        normalized_cost=float(fit.get("normalized_cost", "nan")),
        pc_before=float(fit.get("pc_before", "nan")),
        pc_after=float(fit.get("pc_after", "nan")),
        cost_history=_floats(fit, "cost_history", None, "[fit]"),
        information=_floats(quality, "information", 6, "[quality]"),
        eigenvalues=_floats(quality, "eigenvalues", 6, "[quality]"),
        condition_number=float(quality.get("condition_number", "nan")),
        occupancy=_floats(quality, "occupancy", 9, "[quality]"),
        flags=tuple(quality.get("flags", "").split()),
        residual_stats=stats,
    )


def parse_cross_validation(text: str) -> CrossValidationReport:
    sections = _split_sections(text)
    meta = None
    extrinsics: dict[int, dict[str, str]] = {}
    cells: dict[tuple[int, int], dict[str, str]] = {}
    for name, attrs, body in sections:
        if name == "meta":
            meta = body
        elif name == "extrinsic":
            extrinsics[int(attrs["scene"])] = body
        elif name == "residuals":
            cells[(int(attrs["row"]), int(attrs["col"]))] = body
    if meta is None or meta.get("kind") != "cross_validation":
        raise ParseError("report: not a cross-validation report")
    n = int(meta["scenes"])
    eulers = []
    translations = []
    for i in range(n):
        if i not in extrinsics:
            raise ParseError(f"report: missing [extrinsic scene={i}]")
        eulers.append(_floats(extrinsics[i], "euler_zyx_deg", 3, f"[extrinsic scene={i}]"))
        translations.append(_floats(extrinsics[i], "translation", 3, f"[extrinsic scene={i}]"))
    grid = []
    for i in range(n):
        row = []
        for j in range(n):
            if (i, j) not in cells:
                raise ParseError(f"report: missing [residuals row={i} col={j}]")
            row.append(_stats_from_section(cells[(i, j)], f"[residuals row={i} col={j}]"))
        grid.append(tuple(row))
    return CrossValidationReport(
        version=meta.get("version", ""),
        scenes=n,
        euler_zyx_deg=tuple(eulers),
        translations=tuple(translations),
        cells=tuple(grid),
    )
