"""Point-cloud frame data model and color conversion."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

# ITU-R 601 luma coefficients
_GRAY = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Point:
    """A single point: position in dataset length units, 8-bit RGB color."""

    position: tuple[float, float, float]
    color: tuple[int, int, int]

    def __post_init__(self):
        if not all(np.isfinite(self.position)):
            raise InvalidArgumentError(f"non-finite position {self.position}")
        if not all(0 <= c <= 255 for c in self.color):
            raise InvalidArgumentError(f"color {self.color} outside [0, 255]")


@dataclass
class PointCloudFrame:
    """One frame of a point-cloud video.

    ``positions`` is ``(n, 3) float64`` and ``colors`` is ``(n, 3) uint8``;
    row order is the file order and is preserved by save/load round trips.
    """

    frame_index: int
    positions: np.ndarray
    colors: np.ndarray
    grays: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.uint8)
        if self.frame_index < 0:
            raise InvalidArgumentError(f"negative frame_index {self.frame_index}")
        if self.positions.shape != (len(self.colors), 3) or self.colors.shape[1] != 3:
            raise InvalidArgumentError(
                f"positions {self.positions.shape} and colors {self.colors.shape} "
                "must both be (n, 3)"
            )
        if not np.isfinite(self.positions).all():
            raise InvalidArgumentError("non-finite position in frame")
        self.grays = self.colors.astype(np.float64) @ _GRAY

    def __len__(self) -> int:
        return self.positions.shape[0]

    def point(self, i: int) -> Point:
        return Point(tuple(self.positions[i]), tuple(int(c) for c in self.colors[i]))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PointCloudFrame)
            and self.frame_index == other.frame_index
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.colors, other.colors)
        )


def rgb_to_gray(color) -> float:
    """Luma grayscale of an RGB triple: 0.299 r + 0.587 g + 0.114 b."""
    r, g, b = float(color[0]), float(color[1]), float(color[2])
    return 0.299 * r + 0.587 * g + 0.114 * b


def grays_of(colors: np.ndarray) -> np.ndarray:
    """Vectorized :func:`rgb_to_gray` over an ``(n, 3)`` color array."""
    return np.asarray(colors, dtype=np.float64) @ _GRAY
