"""
oamlink - crosstalk, fidelity statistics and high-dimensional BB84 security

Copyright (c) 2019 Aiven Ltd
See LICENSE for details
"""
from dataclasses import dataclass
from enum import Enum, unique
from functools import lru_cache
from oamlink.field import ComplexField, GridSpec, overlap, power
from oamlink.modes import basis_fields, BasisKind, EncodingSpace, HybridSpace
from pathlib import Path
from scipy.optimize import bisect, curve_fit
from scipy.special import xlogy
from typing import Callable, List, Optional, Sequence, Tuple, Union

import csv
import logging
import math
import numpy as np

LOG = logging.getLogger(__name__)

Channel = Callable[[ComplexField], ComplexField]

# raw row power below this counts as nothing detected
ZERO_POWER = 1e-15


class SecurityInputError(Exception):
    """Invalid input to a security computation"""


class StrategyError(SecurityInputError):
    """Ensemble cannot be evaluated under the requested strategy"""


class ModelFitError(Exception):
    """Fidelity model fit failed"""


def _check_error_rate(d: int, e: float) -> None:
    if d < 2:
        raise SecurityInputError(f"Dimension must be at least 2, got {d}")
    if not 0 <= e <= (d - 1) / d + 1e-12:
        raise SecurityInputError(f"Error rate {e} outside [0, {(d - 1) / d}] for d={d}")


def binary_entropy_d(e: float, d: int) -> float:
    """d-ary generalization of the binary entropy, in bits; h_d(0) = 0.

    >>> binary_entropy_d(0.0, 5)
    0.0
    """
    _check_error_rate(d, e)
    nats = -xlogy(e, e / (d - 1)) - xlogy(1 - e, 1 - e)
    return max(0.0, float(nats / math.log(2)))


def key_rate(d: int, e: float) -> float:
    """Asymptotic secret bits per sifted symbol: log2(d) - 2 h_d(e).

    >>> key_rate(2, 0.0)
    1.0
    """
    return math.log2(d) - 2 * binary_entropy_d(e, d)


@lru_cache(maxsize=64)
def fidelity_threshold(d: int) -> float:
    """Fidelity below which no key can be distilled in dimension d.

    >>> round(fidelity_threshold(5), 4)
    0.7901
    """
    if d < 2:
        raise SecurityInputError(f"Dimension must be at least 2, got {d}")
    error_threshold = bisect(lambda e: key_rate(d, e), 0.0, (d - 1) / d, xtol=1e-10)
    return 1 - float(error_threshold)


def security_verdict(fidelity_value: float, d: int) -> bool:
    return fidelity_value > fidelity_threshold(d)


@dataclass(frozen=True, eq=False)
class CrosstalkMatrix:
    """Detection probabilities, rows prepared and columns detected.

    `probabilities` rows are renormalized to one (post-selected on detection);
    `raw` keeps the unnormalized overlaps and `efficiency` their row sums.
    """
    basis_kind: BasisKind
    labels: Tuple[int, ...]
    probabilities: np.ndarray
    raw: np.ndarray
    efficiency: np.ndarray
    flagged: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.labels)

    @classmethod
    def from_raw(cls, basis_kind: BasisKind, labels: Sequence[int], raw: np.ndarray) -> "CrosstalkMatrix":
        raw = np.clip(np.asarray(raw, dtype=np.float64), 0.0, None)
        if raw.shape != (len(labels), len(labels)):
            raise SecurityInputError(f"Crosstalk matrix shape {raw.shape} does not match {len(labels)} labels")
        efficiency = raw.sum(axis=1)
        flagged = efficiency < ZERO_POWER
        for label in np.asarray(labels)[flagged]:
            LOG.warning("No power detected for prepared %s state %s, row flagged", basis_kind.value, label)
        safe = np.where(flagged, 1.0, efficiency)
        probabilities = np.where(flagged[:, None], 0.0, raw / safe[:, None])
        return cls(BasisKind(basis_kind), tuple(int(label) for label in labels), probabilities, raw, efficiency, flagged)

    def submatrix(self, members: Sequence[int]) -> "CrosstalkMatrix":
        """Re-encode on a subset of the labels, renormalizing the raw overlaps."""
        try:
            index = [self.labels.index(member) for member in members]
        except ValueError as e:
            raise StrategyError(f"Members {list(members)} are not all in {self.labels}") from e
        if len(index) < 2:
            raise StrategyError("A re-encoded basis needs at least two members")
        return CrosstalkMatrix.from_raw(self.basis_kind, members, self.raw[np.ix_(index, index)])

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fp:
            writer = csv.writer(fp)
            writer.writerow(["prepared"] + [str(label) for label in self.labels] + ["efficiency"])
            for label, row, efficiency in zip(self.labels, self.probabilities, self.efficiency):
                writer.writerow([label] + [repr(float(value)) for value in row] + [repr(float(efficiency))])


def crosstalk(
    space: EncodingSpace,
    grid: GridSpec,
    channel: Channel,
    reference: Optional[Sequence[ComplexField]] = None,
) -> CrosstalkMatrix:
    """p[i][j] = |<ref_j|channel(psi_i)>|^2 with the references normalized to unit power.

    References default to the prepared states themselves. Randomness, if any,
    belongs to `channel`.
    """
    prepared = basis_fields(space, grid)
    references = list(reference) if reference is not None else prepared
    if len(references) != len(prepared):
        raise SecurityInputError(f"Expected {len(prepared)} reference fields, got {len(references)}")
    norms = []
    for field in references:
        if field.grid != grid:
            raise SecurityInputError("Reference fields must share the channel grid")
        norms.append(power(field))
    raw = np.zeros((space.dimension, space.dimension))
    for i, state in enumerate(prepared):
        received = channel(state)
        for j, ref in enumerate(references):
            amplitude = overlap(ref, received)
            raw[i, j] = (amplitude.real**2 + amplitude.imag**2) / norms[j]
    return CrosstalkMatrix.from_raw(space.basis_kind, space.labels(), raw)


def mean_matrix(ensemble: Sequence[CrosstalkMatrix]) -> CrosstalkMatrix:
    _check_ensemble(ensemble)
    raw = np.mean([m.raw for m in ensemble], axis=0)
    return CrosstalkMatrix.from_raw(ensemble[0].basis_kind, ensemble[0].labels, raw)


def fidelity(m: CrosstalkMatrix) -> float:
    """Mean of the diagonal."""
    if np.any(m.flagged):
        flagged = [label for label, bad in zip(m.labels, m.flagged) if bad]
        raise SecurityInputError(f"Rows {flagged} detected no power, fidelity is undefined")
    return float(np.mean(np.diag(m.probabilities)))


def qser(m: CrosstalkMatrix) -> float:
    return 1 - fidelity(m)


def mub_fidelity(oam: CrosstalkMatrix, ang: CrosstalkMatrix) -> float:
    """Equal-weight average over the two mutually unbiased bases."""
    if oam.dim != ang.dim:
        raise SecurityInputError(f"Basis dimensions differ: {oam.dim} and {ang.dim}")
    return (fidelity(oam) + fidelity(ang)) / 2


@dataclass(frozen=True, eq=False)
class FidelityStats:
    mean: float
    std: float
    series: np.ndarray
    threshold: float
    fraction_above_threshold: float

    @classmethod
    def from_series(cls, series: Sequence[float], threshold: float) -> "FidelityStats":
        values = np.asarray(series, dtype=np.float64)
        if values.size == 0:
            raise SecurityInputError("Fidelity series is empty")
        if np.any((values < 0) | (values > 1 + 1e-9)):
            raise SecurityInputError("Fidelities must lie in [0, 1]")
        return cls(
            mean=float(np.mean(values)),
            std=float(np.std(values)),
            series=values,
            threshold=float(threshold),
            fraction_above_threshold=float(np.mean(values > threshold)),
        )

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "threshold": self.threshold,
            "fraction_above_threshold": self.fraction_above_threshold,
            "n_realizations": int(self.series.size),
        }


def improvement_factor(before: FidelityStats, after: FidelityStats) -> float:
    """Ratio of the fractions above threshold; infinite when `before` never clears it."""
    if before.fraction_above_threshold == 0:
        return math.inf if after.fraction_above_threshold > 0 else math.nan
    return after.fraction_above_threshold / before.fraction_above_threshold


@unique
class FidelityModelVariant(str, Enum):
    # F = 1 - [1 + c x^2]^(-1/2)
    AS_PRINTED = "A"
    # F = [1 + c x^2]^(-1/2)
    COMPLEMENT = "B"


def fidelity_model(x: Union[float, np.ndarray], c: float, variant: FidelityModelVariant) -> np.ndarray:
    """
    >>> float(fidelity_model(0.0, 3.404, FidelityModelVariant.AS_PRINTED))
    0.0
    """
    decay = (1 + c * np.asarray(x, dtype=np.float64)**2)**-0.5
    if FidelityModelVariant(variant) is FidelityModelVariant.AS_PRINTED:
        return 1 - decay
    return decay


def fit_fidelity_model(points: Sequence[Tuple[float, float]], variant: FidelityModelVariant) -> float:
    """Least-squares coefficient c of the selected model variant."""
    variant = FidelityModelVariant(variant)
    if len(points) < 3:
        raise ModelFitError(f"At least 3 points are required, got {len(points)}")
    x, f = (np.asarray(column, dtype=np.float64) for column in zip(*points))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(f))):
        raise ModelFitError("Fit points must be finite")
    try:
        popt, pcov = curve_fit(
            lambda xs, c: fidelity_model(xs, c, variant),
            x,
            f,
            p0=[1.0],
            bounds=(0.0, np.inf),
        )
    except (RuntimeError, ValueError) as e:
        raise ModelFitError(f"Fit of variant {variant.value} did not converge: {e}") from e
    if not np.all(np.isfinite(pcov)):
        raise ModelFitError(f"Coefficient of variant {variant.value} is not determined by the points")
    return float(popt[0])


@dataclass(frozen=True)
class NoStrategy:
    pass


@dataclass(frozen=True)
class Spacing:
    k: int
    max_ell: Optional[int] = None


@dataclass(frozen=True)
class Hybrid:
    pol_fidelity: float


Strategy = Union[NoStrategy, Spacing, Hybrid]


@dataclass(frozen=True, eq=False)
class StrategyOutcome:
    strategy: Strategy
    stats: FidelityStats
    dimension: int
    threshold: float
    secure: bool


def _check_ensemble(ensemble: Sequence[CrosstalkMatrix]) -> None:
    if not ensemble:
        raise StrategyError("Ensemble is empty")
    first = ensemble[0]
    for m in ensemble[1:]:
        if m.labels != first.labels or m.basis_kind is not first.basis_kind:
            raise StrategyError("Ensemble members use different bases")


def _spacing_members(labels: Tuple[int, ...], strategy: Spacing) -> List[int]:
    if strategy.k < 1:
        raise StrategyError(f"Spacing must be at least 1, got {strategy.k}")
    max_ell = strategy.max_ell if strategy.max_ell is not None else max(labels)
    if max_ell % strategy.k:
        raise StrategyError(f"max_ell {max_ell} is not divisible by spacing {strategy.k}")
    members = list(range(-max_ell, max_ell + 1, strategy.k))
    missing = [ell for ell in members if ell not in labels]
    if missing:
        raise StrategyError(f"Ensemble lacks modes {missing} needed for spacing {strategy.k}")
    return members


def evaluate_strategy(ensemble: Sequence[CrosstalkMatrix], strategy: Strategy) -> StrategyOutcome:
    """Recompute per-realization fidelities under a re-encoding and judge them against its threshold."""
    _check_ensemble(ensemble)
    base = ensemble[0]
    if isinstance(strategy, NoStrategy):
        dimension = base.dim
        series = [fidelity(m) for m in ensemble]
    elif isinstance(strategy, Spacing):
        if base.basis_kind is not BasisKind.OAM:
            raise StrategyError("Mode spacing applies to OAM-basis ensembles only")
        members = _spacing_members(base.labels, strategy)
        dimension = len(members)
        series = [fidelity(m.submatrix(members)) for m in ensemble]
    elif isinstance(strategy, Hybrid):
        if not 0.5 <= strategy.pol_fidelity <= 1:
            raise StrategyError(f"Polarization fidelity must be in [0.5, 1], got {strategy.pol_fidelity}")
        dimension = base.dim * 2
        series = [fidelity(m) * strategy.pol_fidelity for m in ensemble]
    else:
        raise StrategyError(f"Unknown strategy {strategy!r}")
    threshold = fidelity_threshold(dimension)
    stats = FidelityStats.from_series(series, threshold)
    secure = stats.mean > threshold
    LOG.info(
        "Strategy %r: d=%d mean fidelity %.4f threshold %.4f secure=%s", strategy, dimension, stats.mean, threshold,
        secure
    )
    return StrategyOutcome(strategy, stats, dimension, threshold, secure)


def hybrid_outcome(space: HybridSpace, spatial_fidelity: float) -> StrategyOutcome:
    """Single-point hybrid evaluation through the product model."""
    joint = space.joint_fidelity(spatial_fidelity)
    threshold = fidelity_threshold(space.dimension)
    stats = FidelityStats.from_series([joint], threshold)
    return StrategyOutcome(Hybrid(space.pol_fidelity), stats, space.dimension, threshold, joint > threshold)
