"""Pluggable segmentation models behind one internal interface.

The CI-friendly stubs are deterministic: ``stub`` segments by intensity
affinity to the prompted point inside the box prior, ``stub-ones`` returns
a full-image mask. A real foundation model would implement the same
``predict`` contract (soft mask in [0, 1]) and register here.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np


class SegmentationModel(ABC):
    name: str = "abstract"
    threshold: float = 0.5  # default binarization threshold

    @abstractmethod
    def predict(
        self, image: np.ndarray, point: tuple[int, int], box: tuple[int, int, int, int]
    ) -> np.ndarray:
        """Soft foreground probabilities, same shape as ``image``."""

    def load(self) -> None:
        """Acquire weights/devices; called once at startup."""


class IntensityStubModel(SegmentationModel):
    """Affinity to the seed intensity, restricted to the box prior."""

    name = "stub"
    threshold = 0.8  # keeps pixels within 0.2 intensity of the seed

    def predict(self, image, point, box):
        x, y = point
        x1, y1, x2, y2 = box
        soft = np.zeros_like(image)
        region = image[y1:y2, x1:x2]
        soft[y1:y2, x1:x2] = 1.0 - np.abs(region - image[y, x])
        return soft


class OnesStubModel(SegmentationModel):
    """Everything is foreground; exercises full-image runs."""

    name = "stub-ones"

    def predict(self, image, point, box):
        return np.ones_like(image)


_REGISTRY: dict[str, type[SegmentationModel]] = {
    IntensityStubModel.name: IntensityStubModel,
    OnesStubModel.name: OnesStubModel,
}


def load_model(identifier: str) -> SegmentationModel:
    try:
        model = _REGISTRY[identifier]()
    except KeyError:
        raise ValueError(
            f"unknown model {identifier!r}; available: {sorted(_REGISTRY)}"
        ) from None
    model.load()
    return model
