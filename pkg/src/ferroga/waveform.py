"""Field-trajectory generation and scaling.

Seed trajectories follow A * exp(alpha * t) * sin(omega * t) + B, sampled
at 900 left-endpoint timesteps over 3 seconds, then min-max normalized to
[-1, 1]. The normalized 900-gene vector is the unit of evolution; it is
multiplied by a physical field scale and padded with a 50-step constant
equilibration tail before hitting the simulator.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

GENE_COUNT = 900
EQUILIBRATION_STEPS = 50
T_TOTAL = 3.0

A_RANGE = (0.0, 0.75)
ALPHA_RANGE = (-2.75, 2.75)
OMEGA_RANGE = (-2.75, 2.75)

_RANGE_SLACK = 1e-9  # tolerated float excursion before genes are rejected


class DegenerateCurveError(ValueError):
    """Constant curve cannot be min-max normalized; redraw the sample."""


class Lineage(Enum):
    SEED = "seed"
    CARRYOVER = "carryover"
    CROSSOVER = "crossover"
    MUTATION = "mutation"


@dataclass(frozen=True)
class WaveformParams:
    """Parameters of the damped/growing sinusoid seed family."""

    a: float
    alpha: float
    omega: float
    b: float = 0.0


@dataclass(frozen=True)
class Chromosome:
    """A normalized 900-sample trajectory with identity and lineage.

    Genes are clipped to [-1, 1] against sub-nanoscale float excursions;
    anything farther out of range is rejected.
    """

    genes: np.ndarray
    id: int = -1
    lineage: Lineage = Lineage.SEED
    parents: tuple[int, ...] = field(default=())

    def __post_init__(self):
        genes = np.asarray(self.genes, dtype=float)
        if genes.shape != (GENE_COUNT,):
            raise ValueError(f"chromosome must have {GENE_COUNT} genes, got {genes.shape}")
        if genes.min() < -1.0 - _RANGE_SLACK or genes.max() > 1.0 + _RANGE_SLACK:
            raise ValueError(
                f"genes outside [-1, 1]: min={genes.min()}, max={genes.max()}"
            )
        genes = np.clip(genes, -1.0, 1.0)
        genes.setflags(write=False)
        object.__setattr__(self, "genes", genes)


@dataclass(frozen=True)
class FieldSchedule:
    """Physical 950-sample x-field trajectory (driven part + constant tail)."""

    values: np.ndarray
    field_scale: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (GENE_COUNT + EQUILIBRATION_STEPS,):
            raise ValueError(f"schedule must have 950 samples, got {values.shape}")
        if not np.all(values[GENE_COUNT:] == values[GENE_COUNT - 1]):
            raise ValueError("equilibration tail must equal the 900th sample")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def sample_params(
    rng: np.random.Generator,
    b_range: tuple[float, float] = (0.0, 0.0),
) -> WaveformParams:
    """Draw amplitude, growth rate and frequency uniformly from their ranges.

    The offset B defaults to 0: min-max normalization makes any constant
    offset irrelevant, so it only matters for experiments that override
    ``b_range``.
    """
    a = rng.uniform(*A_RANGE)
    alpha = rng.uniform(*ALPHA_RANGE)
    omega = rng.uniform(*OMEGA_RANGE)
    b = rng.uniform(*b_range)
    return WaveformParams(a=a, alpha=alpha, omega=omega, b=b)


def render(params: WaveformParams, n: int = GENE_COUNT, t_total: float = T_TOTAL) -> np.ndarray:
    """Evaluate A exp(alpha t) sin(omega t) + B at t_k = k * (t_total / n)."""
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    if t_total <= 0:
        raise ValueError(f"t_total must be > 0, got {t_total}")
    t = np.arange(n) * (t_total / n)
    return params.a * np.exp(params.alpha * t) * np.sin(params.omega * t) + params.b


def normalize(raw: np.ndarray) -> np.ndarray:
    """Min-max map of a raw curve onto [-1, 1], preserving shape.

    The output attains -1 and +1 exactly. Raises DegenerateCurveError when
    the curve is (numerically) constant.
    """
    raw = np.asarray(raw, dtype=float)
    lo = raw.min()
    hi = raw.max()
    if hi - lo < 1e-12:
        raise DegenerateCurveError(f"curve range {hi - lo} too small to normalize")
    return ((raw - lo) / (hi - lo)) * 2.0 - 1.0


def to_physical(chromosome, field_scale: float = 1.0) -> FieldSchedule:
    """Scale genes by the physical field constant and append the constant
    50-step equilibration tail (equal to the 900th value)."""
    genes = chromosome.genes if isinstance(chromosome, Chromosome) else np.asarray(chromosome)
    driven = field_scale * genes
    tail = np.full(EQUILIBRATION_STEPS, driven[-1])
    return FieldSchedule(np.concatenate([driven, tail]), field_scale)


def seed_population(
    rng: np.random.Generator,
    size: int,
    id_start: int = 0,
    b_range: tuple[float, float] = (0.0, 0.0),
) -> list[Chromosome]:
    """Draw ``size`` seed chromosomes (sample -> render -> normalize),
    redrawing any parameter set whose curve is degenerate."""
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    population = []
    next_id = id_start
    while len(population) < size:
        params = sample_params(rng, b_range=b_range)
        try:
            genes = normalize(render(params))
        except DegenerateCurveError:
            continue
        population.append(Chromosome(genes, id=next_id, lineage=Lineage.SEED))
        next_id += 1
    return population


# --- CSV row schema (id, lineage, g0..g899) -------------------------------

def csv_header() -> list[str]:
    return ["id", "lineage"] + [f"g{k}" for k in range(GENE_COUNT)]


def format_csv_row(ch: Chromosome) -> list[str]:
    return [str(ch.id), ch.lineage.value] + [repr(float(g)) for g in ch.genes]


def parse_gene_fields(fields: list[str], row_index: int = 0) -> np.ndarray:
    """Parse 900 gene columns, reporting the offending row/column on error."""
    if len(fields) != GENE_COUNT:
        raise ValueError(
            f"row {row_index}: expected {GENE_COUNT} gene columns, got {len(fields)}"
        )
    genes = np.empty(GENE_COUNT)
    for k, text in enumerate(fields):
        try:
            genes[k] = float(text)
        except ValueError as exc:
            raise ValueError(f"row {row_index}, gene {k}: not a number: {text!r}") from exc
        if not -1.0 - _RANGE_SLACK <= genes[k] <= 1.0 + _RANGE_SLACK:
            raise ValueError(
                f"row {row_index}, gene {k}: value {genes[k]} outside [-1, 1]"
            )
    return genes
