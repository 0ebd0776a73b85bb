"""
Transform service module: the deterministic transformation family applied
pointwise to biomarker values and sequences.
"""
import math
import re
from typing import Iterable, List, Sequence as Seq

import numpy as np
from scipy import special

from models.cohort import Sequence
from models.transformation import Transformation, TransformationKind
from utils.errors import DomainError

BOX_COX_LAMBDAS = (-0.0606, 0.0202, -0.3030)
ROOT_ORDERS = range(2, 11)
LAMBERT_RESIDUAL_RTOL = 1e-12
BRANCH_POINT_ULPS = 4

_BOX_COX_NAME = re.compile(r"^boxcox\((-?\d+(?:\.\d+)?)\)$")
_ROOT_NAME = re.compile(r"^root(\d+)$")


def default_family() -> List[Transformation]:
    """
    The default transformation family, in selection order.

    Returns:
        identity, roots of order 2..10, square, log, Lambert W0 and the three
        Box-Cox transformations
    """
    family = [Transformation(TransformationKind.IDENTITY)]
    family += [Transformation(TransformationKind.ROOT, m) for m in ROOT_ORDERS]
    family += [
        Transformation(TransformationKind.SQUARE),
        Transformation(TransformationKind.LOG),
        Transformation(TransformationKind.LAMBERT_W0),
    ]
    family += [Transformation(TransformationKind.BOX_COX, lam) for lam in BOX_COX_LAMBDAS]
    return family


def parse_transformation(name: str) -> Transformation:
    """Parse a serialized transformation name such as 'root3' or 'boxcox(-0.0606)'."""
    text = name.strip().lower().replace(" ", "")
    for kind in (TransformationKind.IDENTITY, TransformationKind.SQUARE,
                 TransformationKind.LOG, TransformationKind.LAMBERT_W0):
        if text == kind.value:
            return Transformation(kind)
    match = _ROOT_NAME.match(text)
    if match:
        return Transformation(TransformationKind.ROOT, int(match.group(1)))
    match = _BOX_COX_NAME.match(text)
    if match:
        return Transformation(TransformationKind.BOX_COX, float(match.group(1)))
    raise ValueError(f"unknown transformation {name!r}")


def parse_family(names: Iterable[str]) -> List[Transformation]:
    return [parse_transformation(n) for n in names]


def in_domain(t: Transformation, x: float) -> bool:
    if not math.isfinite(x):
        return False
    if t.kind == TransformationKind.IDENTITY:
        return True
    if t.kind in (TransformationKind.SQUARE, TransformationKind.LAMBERT_W0):
        return x >= 0
    return x > 0


def lambert_w0(x: float) -> float:
    """
    Principal branch of the Lambert W function.

    Args:
        x: Argument, at least -1/e

    Returns:
        w such that w * exp(w) = x

    Raises:
        DomainError: x < -1/e, or the result fails the residual check
            |w * exp(w) - x| <= 1e-12 * max(1, |x|)
    """
    branch_point = -math.exp(-1.0)
    if not math.isfinite(x) or x < branch_point:
        raise DomainError(TransformationKind.LAMBERT_W0.value, x)
    if x - branch_point <= BRANCH_POINT_ULPS * np.spacing(-branch_point):
        return -1.0
    w = float(np.real(special.lambertw(x, 0)))
    if not math.isfinite(w) or abs(w * math.exp(w) - x) > LAMBERT_RESIDUAL_RTOL * max(1.0, abs(x)):
        raise DomainError(TransformationKind.LAMBERT_W0.value, x)
    return w


def apply(t: Transformation, x: float) -> float:
    """
    Apply a transformation to one value.

    Raises:
        DomainError: x is outside the domain of t
    """
    if not in_domain(t, x):
        raise DomainError(t.name, x)
    if t.kind == TransformationKind.IDENTITY:
        return float(x)
    if t.kind == TransformationKind.ROOT:
        return float(x ** (1.0 / t.param))
    if t.kind == TransformationKind.SQUARE:
        return float(x * x)
    if t.kind == TransformationKind.LOG:
        return math.log(x)
    if t.kind == TransformationKind.LAMBERT_W0:
        return lambert_w0(x)
    return float(special.boxcox(x, t.param))


def apply_values(t: Transformation, values: Seq[float]) -> List[float]:
    """Apply a transformation to a list of values; the first violation reports its 1-based index."""
    out = []
    for index, x in enumerate(values, start=1):
        if not in_domain(t, x):
            raise DomainError(t.name, x, index)
        out.append(apply(t, x))
    return out


def apply_sequence(t: Transformation, seq: Sequence) -> Sequence:
    """Transform every value of a sequence, keeping its times."""
    return seq.with_values(apply_values(t, seq.values))


def applicable(t: Transformation, sequences: Iterable[Sequence]) -> bool:
    """True when every value of every sequence lies in the domain of t."""
    return all(in_domain(t, x) for seq in sequences for x in seq.values)
