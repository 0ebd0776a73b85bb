"""Model for the deterministic transformations applied to biomarker values."""
from dataclasses import dataclass
from enum import Enum
from typing import Optional


class TransformationKind(str, Enum):
    IDENTITY = "identity"
    ROOT = "root"
    SQUARE = "square"
    LOG = "log"
    LAMBERT_W0 = "lambertw0"
    BOX_COX = "boxcox"


@dataclass(frozen=True)
class Transformation:
    """
    One member of the transformation family.

    Args:
        kind: Transformation kind
        param: Root order m (2..10) for ROOT, lambda for BOX_COX, unused otherwise
    """
    kind: TransformationKind
    param: Optional[float] = None

    def __post_init__(self):
        if self.kind == TransformationKind.ROOT:
            if self.param is None or int(self.param) != self.param or not 2 <= self.param <= 10:
                raise ValueError(f"root order must be an integer in 2..10, got {self.param!r}")
            object.__setattr__(self, "param", int(self.param))
        elif self.kind == TransformationKind.BOX_COX:
            if self.param is None or self.param == 0:
                raise ValueError("box-cox lambda must be non-zero (use log for the limit)")
        elif self.param is not None:
            raise ValueError(f"{self.kind.value} takes no parameter")

    @property
    def name(self) -> str:
        if self.kind == TransformationKind.ROOT:
            return f"root{self.param}"
        if self.kind == TransformationKind.BOX_COX:
            return f"boxcox({self.param:.4f})"
        return self.kind.value

    def __str__(self) -> str:
        return self.name
