"""Flat ``key = value`` run configuration with command-line overrides.

Every key is declared in ``KEYS`` with a parser and a default; anything else
is rejected. Values from flags replace values from the file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

from .pipeline import DetectionConfig
from .projection import CameraModel, parse_palette
from .registry.records import RegistryConfig
from .rpca import RpcaConfig
from .saliency import SaliencyConfig
from .segmentation import Thresholds, VehicleState
from .synth import RoadPatchParams, SceneRanges


class ConfigError(ValueError):
    pass


def _pos_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise ValueError("must be a positive integer")
    return v


def _nonneg_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise ValueError("must be a non-negative integer")
    return v


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _pos_float(s: str) -> float:
    v = _float(s)
    if v <= 0:
        raise ValueError("must be positive")
    return v


def _nonneg_float(s: str) -> float:
    v = _float(s)
    if v < 0:
        raise ValueError("must be non-negative")
    return v


def _opt_float(s: str) -> float | None:
    return None if s.lower() in ("", "auto", "none") else _pos_float(s)


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("must be a boolean")


def _range(s: str) -> tuple[float, float]:
    lo, sep, hi = s.partition(",")
    if not sep:
        raise ValueError("must be lo,hi")
    a, b = _float(lo), _float(hi)
    if a > b:
        raise ValueError("lo must not exceed hi")
    return a, b


def _ratio(s: str) -> float:
    v = _float(s)
    if not 0 < v <= 1:
        raise ValueError("must lie in (0, 1]")
    return v


def _rgb(s: str) -> str:
    parse_palette({"background": s})
    return s


KEYS: dict[str, tuple[Callable[[str], object], object]] = {
    "seed": (int, 0),
    # saliency
    "k": (_pos_int, 16),
    "w1": (_nonneg_float, 1.0),
    "w2": (_nonneg_float, 1.0),
    "rpca.lam": (_opt_float, None),
    "rpca.eps": (_pos_float, 0.01),
    "rpca.max_iter": (_pos_int, 100),
    "rpca.tol": (_pos_float, 1e-6),
    "rpca.polish": (_bool, False),
    # segmentation
    "t_s": (_float, 0.5),
    "h_neg": (_nonneg_float, 0.05),
    "h_pos": (_nonneg_float, 0.05),
    "h_flat": (_nonneg_float, 0.03),
    "depth_smoothing": (_nonneg_int, 0),
    "inlier_tol": (_pos_float, 0.05),
    "ransac_iterations": (_pos_int, 200),
    "cluster_radius": (_pos_float, 0.3),
    "min_points": (_pos_int, 10),
    "corridor_length": (_pos_float, 30.0),
    "corridor_width": (_pos_float, 3.5),
    "vehicle.x": (_float, 0.0),
    "vehicle.y": (_float, 0.0),
    "vehicle.z": (_float, 0.0),
    "vehicle.yaw": (_float, 0.0),
    "vehicle.steering": (_float, 0.0),
    "ratio": (_ratio, 1.0),
    # synth
    "synth.length": (_pos_float, 10.0),
    "synth.width": (_pos_float, 10.0),
    "synth.spacing": (_pos_float, 0.1),
    "synth.noise_sigma": (_nonneg_float, 0.0),
    "synth.jitter": (_nonneg_float, 0.0),
    "synth.potholes": (_nonneg_int, 1),
    "synth.depth": (_range, (0.05, 0.3)),
    "synth.semi_axis": (_range, (0.3, 1.0)),
    "synth.power": (_range, (1.5, 1.5)),
    # camera and rendering
    "camera.fx": (_pos_float, 100.0),
    "camera.fy": (_pos_float, 100.0),
    "camera.x0": (_nonneg_float, 64.0),
    "camera.y0": (_nonneg_float, 64.0),
    "camera.width": (_pos_int, 128),
    "camera.height": (_pos_int, 128),
    "camera.tx": (_float, 0.0),
    "camera.ty": (_float, 0.0),
    "camera.tz": (_float, -10.0),
    "fill_iterations": (_nonneg_int, 0),
    "connectivity": (int, 4),
    "background": (_rgb, "0,0,0"),
    # registry
    "endpoint": (str, "127.0.0.1:7878"),
    "match_radius": (_pos_float, 3.0),
    "alert_radius": (_pos_float, 150.0),
    "log_path": (str, ""),
}


def _is_palette_key(key: str) -> bool:
    return key.startswith("class.") and key[6:].isdigit()


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def read_config_file(path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config_text(text, str(p))


def parse_assignments(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"expected key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunConfig:
    values: dict[str, object]

    @classmethod
    def from_sources(cls, file_values: Mapping[str, str] | None = None,
                     flag_values: Mapping[str, str] | None = None) -> "RunConfig":
        """Validate file values, then flags; a flag always wins."""
        merged = {**(file_values or {}), **(flag_values or {})}
        values: dict[str, object] = {k: default for k, (_, default) in KEYS.items()}
        for key, raw in merged.items():
            if _is_palette_key(key):
                try:
                    values[key] = _rgb(raw)
                except ValueError as exc:
                    raise ConfigError(f"{key}: {exc}") from None
                continue
            if key not in KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            parser, _ = KEYS[key]
            try:
                values[key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        if values["connectivity"] not in (4, 8):
            raise ConfigError("connectivity: must be 4 or 8")
        return cls(values)

    def __getitem__(self, key: str):
        return self.values[key]

    def detection(self) -> DetectionConfig:
        v = self.values
        rpca = RpcaConfig(lam=v["rpca.lam"], eps=v["rpca.eps"], max_iter=v["rpca.max_iter"],
                          tol=v["rpca.tol"], polish=v["rpca.polish"])
        sal = SaliencyConfig(k=v["k"], w1=v["w1"], w2=v["w2"], rpca=rpca)
        th = Thresholds(t_s=v["t_s"], h_neg=v["h_neg"], h_pos=v["h_pos"], h_flat=v["h_flat"],
                        depth_smoothing=v["depth_smoothing"])
        try:
            sal.validate()
            rpca.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return DetectionConfig(
            saliency=sal, thresholds=th, corridor_length=v["corridor_length"],
            corridor_width=v["corridor_width"], inlier_tol=v["inlier_tol"],
            ransac_iterations=v["ransac_iterations"], cluster_radius=v["cluster_radius"],
            min_points=v["min_points"], seed=v["seed"],
        )

    def vehicle(self) -> VehicleState:
        v = self.values
        yaw = v["vehicle.yaw"]
        try:
            return VehicleState((v["vehicle.x"], v["vehicle.y"], v["vehicle.z"]),
                                (math.cos(yaw), math.sin(yaw)), v["vehicle.steering"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def camera(self) -> CameraModel:
        v = self.values
        try:
            return CameraModel(v["camera.fx"], v["camera.fy"], v["camera.x0"], v["camera.y0"],
                               v["camera.width"], v["camera.height"],
                               (v["camera.tx"], v["camera.ty"], v["camera.tz"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def palette(self):
        entries = {k: s for k, s in self.values.items() if _is_palette_key(k)}
        entries["background"] = self.values["background"]
        return parse_palette(entries)

    def patch(self) -> RoadPatchParams:
        v = self.values
        try:
            return RoadPatchParams((v["synth.length"], v["synth.width"]), v["synth.spacing"],
                                   v["synth.noise_sigma"], v["seed"], v["synth.jitter"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def scene_ranges(self) -> SceneRanges:
        v = self.values
        return SceneRanges(depth=v["synth.depth"], semi_axis=v["synth.semi_axis"], power=v["synth.power"])

    def registry(self) -> RegistryConfig:
        v = self.values
        return RegistryConfig(v["match_radius"], v["alert_radius"], v["endpoint"], v["log_path"] or None)
