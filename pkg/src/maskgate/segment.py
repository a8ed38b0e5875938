"""Point+box-promptable segmentation behind one uniform interface.

Three backends: a deterministic built-in region grower (desk-scale stand-in
for a foundation segmenter), a mock for tests, and an HTTP client speaking
the POST /v1/segment wire protocol. An empty mask is a valid result, never
an error.
"""

from __future__ import annotations

import base64
import threading
import time
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import requests

from .core import BBox, BinaryMask, GrayImage
from .errors import (
    BackendUnavailableError,
    DimensionMismatchError,
    PromptOutsideCropError,
    SeedOutsideConstraintError,
    SegmentProtocolError,
)
from .fileio import mask_from_wire, png_bytes

DEFAULT_TOLERANCE = 0.15
DEFAULT_BOX_DILATION = 1.5

_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class SegmentRequest:
    crop: GrayImage
    point: tuple[int, int]           # (x, y) in crop coordinates
    box_prior: BBox                  # in crop coordinates
    params: Mapping[str, object] = field(default_factory=dict)


class SegmenterBackend(ABC):
    """Uniform mask-from-prompt interface; implementations must be thread-safe."""

    name: str = "abstract"
    deterministic: bool = False

    @abstractmethod
    def segment(self, req: SegmentRequest) -> BinaryMask:
        ...


def segment(backend: SegmenterBackend, req: SegmentRequest) -> BinaryMask:
    """Validate the request invariants, then dispatch to the backend."""
    x, y = req.point
    crop = req.crop
    if not (0 <= x < crop.width and 0 <= y < crop.height):
        raise PromptOutsideCropError(f"point ({x}, {y}) outside {crop.width}x{crop.height} crop")
    box = req.box_prior
    if not (0 <= box.x_min and 0 <= box.y_min and box.x_max <= crop.width and box.y_max <= crop.height):
        raise PromptOutsideCropError(f"box prior {box!r} outside {crop.width}x{crop.height} crop")
    return backend.segment(req)


def region_grow(
    crop: GrayImage, seed: tuple[int, int], tolerance: float, constraint: BBox
) -> BinaryMask:
    """8-connected BFS flood fill with a running-mean admission rule.

    A pixel joins the region iff its intensity is within ``tolerance`` of
    the mean of already-admitted pixels; each pixel is examined once, in
    BFS order, so results are deterministic. Growth never leaves
    ``constraint``.
    """
    if not (0.0 <= tolerance <= 1.0):
        raise ValueError(f"tolerance {tolerance} outside [0, 1]")
    constraint = constraint.clip(crop.width, crop.height)
    sx, sy = seed
    if not constraint.contains_point(sx, sy):
        raise SeedOutsideConstraintError(f"seed {seed} outside constraint {constraint!r}")
    data = crop.data
    admitted = np.zeros((crop.height, crop.width), dtype=bool)
    seen = np.zeros_like(admitted)
    admitted[sy, sx] = True
    seen[sy, sx] = True
    mean = float(data[sy, sx])
    count = 1
    queue: deque[tuple[int, int]] = deque([(sx, sy)])
    while queue:
        px, py = queue.popleft()
        for dy, dx in _NEIGHBORS:
            qx, qy = px + dx, py + dy
            if not constraint.contains_point(qx, qy) or seen[qy, qx]:
                continue
            seen[qy, qx] = True
            value = float(data[qy, qx])
            if abs(value - mean) <= tolerance:
                admitted[qy, qx] = True
                count += 1
                mean += (value - mean) / count
                queue.append((qx, qy))
    return BinaryMask.from_array(admitted)


class RegionGrowBackend(SegmenterBackend):
    """Deterministic built-in backend: flood fill inside the dilated box prior.

    The base tolerance is adapted to each crop's robust contrast (5th-95th
    intensity percentile spread), the way a learned segmenter responds to
    its surrounding context; a request-level ``tolerance`` param bypasses
    the adaptation.
    """

    name = "builtin"
    deterministic = True

    CONTRAST_REFERENCE = 0.25  # spread at which the base tolerance applies as-is

    def __init__(self, tolerance: float = DEFAULT_TOLERANCE, box_dilation: float = DEFAULT_BOX_DILATION):
        self.tolerance = tolerance
        self.box_dilation = box_dilation

    def _context_tolerance(self, crop: GrayImage) -> float:
        lo, hi = np.percentile(crop.data, (5.0, 95.0))
        return min(1.0, self.tolerance * (hi - lo) / self.CONTRAST_REFERENCE)

    def segment(self, req: SegmentRequest) -> BinaryMask:
        if "tolerance" in req.params:
            tolerance = float(req.params["tolerance"])
        else:
            tolerance = self._context_tolerance(req.crop)
        constraint = req.box_prior.scale_about_center(self.box_dilation, bounds=req.crop.size)
        return region_grow(req.crop, req.point, tolerance, constraint)


class MockBackend(SegmenterBackend):
    """Returns a fixed mask verbatim, or an empty crop-sized mask by default."""

    name = "mock"
    deterministic = True

    def __init__(self, fixed_mask: BinaryMask | None = None):
        self.fixed_mask = fixed_mask

    def segment(self, req: SegmentRequest) -> BinaryMask:
        if self.fixed_mask is not None:
            return self.fixed_mask
        return BinaryMask(width=req.crop.width, height=req.crop.height, runs=())


def remote_segment(
    endpoint: str,
    req: SegmentRequest,
    retries: int = 3,
    initial_backoff: float = 0.1,
    timeout: float = 30.0,
    session: requests.Session | None = None,
) -> BinaryMask:
    """POST the request to a /v1/segment server and decode the RLE reply.

    503 responses and connection failures are retried with exponential
    backoff (cold-starting model servers); anything else malformed is a
    protocol error.
    """
    x, y = req.point
    body = {
        "image_png_b64": base64.b64encode(png_bytes(req.crop)).decode("ascii"),
        "point": {"x": x, "y": y, "label": 1},
        "box": req.box_prior.to_list(),
    }
    post = (session or requests).post
    attempts = 1 + max(0, retries)
    last_reason = "unknown"
    for attempt in range(attempts):
        if attempt:
            time.sleep(initial_backoff * (2 ** (attempt - 1)))
        try:
            response = post(endpoint, json=body, timeout=timeout)
        except requests.RequestException as exc:
            last_reason = str(exc)
            continue
        if response.status_code == 503:
            last_reason = "server returned 503 (backend loading or overloaded)"
            continue
        if response.status_code != 200:
            raise SegmentProtocolError(
                f"server returned HTTP {response.status_code}: {response.text[:200]}"
            )
        try:
            mask = mask_from_wire(response.json())
        except ValueError as exc:
            raise SegmentProtocolError(f"undecodable mask reply: {exc}") from exc
        if (mask.width, mask.height) != req.crop.size:
            raise DimensionMismatchError(
                f"server mask is {mask.width}x{mask.height}, crop is "
                f"{req.crop.width}x{req.crop.height}"
            )
        return mask
    raise BackendUnavailableError(f"{endpoint} unavailable after {attempts} attempts: {last_reason}")


class RemoteBackend(SegmenterBackend):
    """Wire-protocol client; caps in-flight requests with a semaphore pool."""

    name = "remote"
    deterministic = False

    def __init__(
        self,
        endpoint: str,
        retries: int = 3,
        initial_backoff: float = 0.1,
        pool_size: int = 8,
        timeout: float = 30.0,
    ):
        self.endpoint = endpoint.rstrip("/")
        if not self.endpoint.endswith("/v1/segment"):
            self.endpoint += "/v1/segment"
        self.retries = retries
        self.initial_backoff = initial_backoff
        self.timeout = timeout
        self._pool = threading.Semaphore(pool_size)
        self._session = requests.Session()

    def segment(self, req: SegmentRequest) -> BinaryMask:
        with self._pool:
            return remote_segment(
                self.endpoint,
                req,
                retries=self.retries,
                initial_backoff=self.initial_backoff,
                timeout=self.timeout,
                session=self._session,
            )
