"""Pipeline configuration: every hyperparameter in one flat dataclass.

Configs persist as `key = value` text, one key per line, tuples written
space-separated. ``load(dump(cfg)) == cfg`` holds exactly.
"""

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InvalidArgumentError, ParseError
from .saliency import EncoderConfig
from .viewport import FovParams


@dataclass
class PipelineConfig:
    grid: tuple = (2, 3, 2)
    n_samples: int = 12288
    n_cubes: int = 512
    batch: int = 4
    k_neighbors: int = 16
    widths: tuple = (8, 32, 128, 256, 512, 1024)
    fov_h: float = 55.0
    fov_v: float = 55.0
    fov_near: float = 0.05
    tau: float = 0.1
    freq_threshold: int = 5
    seed: int = 0
    lr: float = 1e-2
    steps: int = 300
    test_frames: int = 2
    lstm_hidden: int = 64
    lstm_window: int = 16
    lstm_steps: int = 300
    lstm_lr: float = 1e-2
    user: int = 0  # whose trajectory drives the F_L branch
    threads: int = 0  # 0 = available parallelism

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        self.widths = tuple(int(w) for w in self.widths)
        self.validate()

    def validate(self) -> None:
        if self.n_samples % self.n_cubes:
            raise InvalidArgumentError(
                f"n_samples={self.n_samples} must be divisible by "
                f"n_cubes={self.n_cubes}"
            )
        if len(self.grid) != 3 or any(g < 1 for g in self.grid):
            raise InvalidArgumentError(f"grid must be 3 positive ints, got {self.grid}")
        if len(self.widths) < 2:
            raise InvalidArgumentError("widths needs an input plus >= 1 level")

    @property
    def n_tiles(self) -> int:
        return self.grid[0] * self.grid[1] * self.grid[2]

    def encoder_config(self) -> EncoderConfig:
        levels = len(self.widths) - 1
        ratios = tuple([(1, 4)] * (levels - 1) + [(1, 2)])
        return EncoderConfig(
            widths=self.widths, k=self.k_neighbors, rs_ratios=ratios
        )

    def fov_params(self) -> FovParams:
        return FovParams(self.fov_h, self.fov_v, self.fov_near)

    def dump(self, path) -> None:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                lines.append(f"{f.name} = " + " ".join(str(x) for x in v))
            elif isinstance(v, float):
                lines.append(f"{f.name} = {v!r}")
            else:
                lines.append(f"{f.name} = {v}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")

    @staticmethod
    def load(path) -> "PipelineConfig":
        path = Path(path)
        kv = {}
        for ln, raw in enumerate(path.read_text(encoding="ascii").splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{path.name}:{ln}: expected 'key = value'")
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        kwargs = {}
        by_name = {f.name: f for f in fields(PipelineConfig)}
        for key, value in kv.items():
            if key not in by_name:
                raise ParseError(f"{path.name}: unknown config key {key!r}")
            kind = by_name[key].type
            if kind in (tuple, "tuple"):
                kwargs[key] = tuple(int(v) for v in value.split())
            elif kind in (int, "int"):
                kwargs[key] = int(value)
            elif kind in (float, "float"):
                kwargs[key] = float(value)
            else:
                kwargs[key] = value
        return PipelineConfig(**kwargs)


def toy_config(seed: int = 0) -> PipelineConfig:
    """Desk-scale defaults: small widths and sample counts for CI speed."""
    return PipelineConfig(
        n_samples=1024,
        n_cubes=64,
        widths=(8, 16, 32, 64, 128, 256),
        fov_h=22.0,
        fov_v=18.0,
        tau=0.3,
        lstm_window=4,
        lstm_hidden=32,
        lstm_steps=200,
        lstm_lr=3e-2,
        user=3,
        seed=seed,
    )
