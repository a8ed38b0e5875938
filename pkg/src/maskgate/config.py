"""One JSON document configures the whole pipeline; flags override keys."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigInvalidError
from .refine import RefineConfig
from .scenegen import SceneSpec
from .segment import (
    DEFAULT_BOX_DILATION,
    DEFAULT_TOLERANCE,
    MockBackend,
    RegionGrowBackend,
    RemoteBackend,
    SegmenterBackend,
)
from .toymodel import DEFAULT_KERNELS, DEFAULT_WEIGHTS, ToyScorer


@dataclass(frozen=True)
class ScorerSettings:
    kernels: tuple[str, ...] = DEFAULT_KERNELS
    weights: tuple[float, ...] = DEFAULT_WEIGHTS
    stride: int = 2

    def build(self) -> ToyScorer:
        return ToyScorer(kernels=self.kernels, mixing_weights=self.weights, stride=self.stride)


@dataclass(frozen=True)
class AttributionSettings:
    method: str = "ig"  # "ig" or "gradcam"
    n_steps: int = 30
    baseline: str = "zeros"  # "zeros" or "blur"
    top_k: int = 20
    min_separation: int = 1


@dataclass(frozen=True)
class SegmentSettings:
    backend: str = "builtin"  # "builtin", "mock", or "remote"
    endpoint: str | None = None
    tolerance: float = DEFAULT_TOLERANCE
    box_dilation: float = DEFAULT_BOX_DILATION
    retries: int = 3
    backoff: float = 0.1
    pool_size: int = 8
    mock_mask: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    scorer: ScorerSettings = field(default_factory=ScorerSettings)
    attribution: AttributionSettings = field(default_factory=AttributionSettings)
    segment: SegmentSettings = field(default_factory=SegmentSettings)
    refine: RefineConfig = field(default_factory=RefineConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)
    master_seed: int = 0
    worker_count: int = 1

    def refine_config(self) -> RefineConfig:
        return dataclasses.replace(self.refine, master_seed=self.master_seed)

    def build_backend(self) -> SegmenterBackend:
        seg = self.segment
        if seg.backend == "builtin":
            return RegionGrowBackend(tolerance=seg.tolerance, box_dilation=seg.box_dilation)
        if seg.backend == "mock":
            fixture = None
            if seg.mock_mask:
                from .fileio import load_mask

                fixture = load_mask(seg.mock_mask)
            return MockBackend(fixed_mask=fixture)
        if seg.backend == "remote":
            return RemoteBackend(
                endpoint=seg.endpoint or "",
                retries=seg.retries,
                initial_backoff=seg.backoff,
                pool_size=seg.pool_size,
            )
        raise ConfigInvalidError(f"unknown segment backend {seg.backend!r}")

    def validate(self) -> None:
        if self.segment.backend not in ("builtin", "mock", "remote"):
            raise ConfigInvalidError(
                f"segment.backend must be builtin|mock|remote, got {self.segment.backend!r}"
            )
        if self.segment.backend == "remote" and not self.segment.endpoint:
            raise ConfigInvalidError("remote backend requires segment.endpoint")
        if self.segment.mock_mask and not Path(self.segment.mock_mask).exists():
            raise ConfigInvalidError(f"segment.mock_mask {self.segment.mock_mask!r} does not exist")
        if self.attribution.method not in ("ig", "gradcam"):
            raise ConfigInvalidError(f"attribution.method must be ig|gradcam, got {self.attribution.method!r}")
        if self.attribution.n_steps < 1:
            raise ConfigInvalidError("attribution.n_steps must be >= 1")
        if self.worker_count < 1:
            raise ConfigInvalidError("worker_count must be >= 1")


_SECTIONS = {
    "scorer": ScorerSettings,
    "attribution": AttributionSettings,
    "segment": SegmentSettings,
    "refine": RefineConfig,
    "scene": SceneSpec,
}

_TUPLE_FIELDS = {"kernels", "weights", "blob_sigma_range"}


def _build_section(cls: type, doc: dict, context: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigInvalidError(f"{context}: unknown keys {sorted(unknown)}")
    kwargs = {
        key: tuple(value) if key in _TUPLE_FIELDS and isinstance(value, list) else value
        for key, value in doc.items()
    }
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalidError(f"{context}: {exc}") from exc


def config_from_dict(doc: dict) -> PipelineConfig:
    unknown = set(doc) - set(_SECTIONS) - {"master_seed", "worker_count"}
    if unknown:
        raise ConfigInvalidError(f"unknown config keys {sorted(unknown)}")
    sections = {
        name: _build_section(cls, doc.get(name, {}), name) for name, cls in _SECTIONS.items()
    }
    try:
        cfg = PipelineConfig(
            master_seed=int(doc.get("master_seed", 0)),
            worker_count=int(doc.get("worker_count", 1)),
            **sections,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigInvalidError(str(exc)) from exc
    cfg.validate()
    return cfg


def _apply_override(doc: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigInvalidError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = doc
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigInvalidError(f"--set {key}: {part} is not a section")
    node[parts[-1]] = value


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    seed: int | None = None,
    workers: int | None = None,
    backend: str | None = None,
    endpoint: str | None = None,
) -> PipelineConfig:
    """Merge config file, --set overrides, and dedicated flags, then validate."""
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalidError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigInvalidError(f"{path}: config must be a JSON object")
    else:
        doc = {}
    for assignment in overrides or []:
        _apply_override(doc, assignment)
    if seed is not None:
        doc["master_seed"] = seed
    if workers is not None:
        doc["worker_count"] = workers
    if backend is not None:
        doc.setdefault("segment", {})["backend"] = backend
    if endpoint is not None:
        doc.setdefault("segment", {})["endpoint"] = endpoint
    return config_from_dict(doc)
