from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Literal, Optional

from .errors import ConfigError

PositionMode = Literal["with_pos", "without_pos"]
ScoreMode = Literal["glo_loc", "glo", "loc"]


@dataclass(frozen=True)
class CompressionConfig:
    """Per-head compression settings shared by every policy.

    ``n_budget`` counts stored entries per head (class centers plus the local
    window). ``gamma`` is the merge magnification factor: after first-level
    eviction ``gamma * n_budget`` logical tokens remain represented.
    ``rope_base=None`` turns rotary embedding off entirely.
    """

    n_budget: int
    l_win: int = 32
    tau: float = 0.6
    gamma: float = 4.0
    zeta: float = 0.95
    kernel_size: int = 7
    position_mode: PositionMode = "with_pos"
    score_mode: ScoreMode = "glo_loc"
    rope_base: Optional[float] = 10000.0
    n_sink: int = 4
    tile_size: int = 128
    element_bytes: int = 4

    def __post_init__(self):
        if self.l_win < 1:
            raise ConfigError(f"l_win must be >= 1, got {self.l_win}")
        if self.n_budget <= self.l_win:
            raise ConfigError(f"n_budget ({self.n_budget}) must exceed l_win ({self.l_win})")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if not (self.gamma >= 1.0 and math.isfinite(self.gamma)):
            raise ConfigError(f"gamma must be a finite real >= 1, got {self.gamma}")
        if not 0.0 < self.zeta <= 1.0:
            raise ConfigError(f"zeta must lie in (0, 1], got {self.zeta}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.position_mode not in ("with_pos", "without_pos"):
            raise ConfigError(f"unknown position_mode {self.position_mode!r}")
        if self.score_mode not in ("glo_loc", "glo", "loc"):
            raise ConfigError(f"unknown score_mode {self.score_mode!r}")
        if self.rope_base is not None and not self.rope_base > 0:
            raise ConfigError(f"rope_base must be positive or None, got {self.rope_base}")
        if not 0 <= self.n_sink < self.n_budget:
            raise ConfigError(f"n_sink must lie in [0, n_budget), got {self.n_sink}")
        if self.tile_size < 1:
            raise ConfigError("tile_size must be positive")
        if self.element_bytes < 1:
            raise ConfigError("element_bytes must be positive")

    @property
    def n_imp(self) -> int:
        """Number of class-center slots."""
        return self.n_budget - self.l_win

    @property
    def n_tbm(self) -> int:
        # round first so e.g. (1.1 - 1) * 10 does not floor to 0
        return int(math.floor(round((self.gamma - 1.0) * self.n_budget, 9)))

    @property
    def lut_capacity(self) -> int:
        """Logical tokens the look-up-table may address (locals excluded)."""
        return self.n_imp + self.n_tbm

    def to_dict(self) -> dict:
        return asdict(self)
