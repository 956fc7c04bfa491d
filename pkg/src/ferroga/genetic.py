"""Genetic operators over normalized field trajectories.

Arithmetic crossover and Gaussian-bump mutation both preserve the physical
character of a trajectory (convex mixing keeps range; the bump is smooth),
so offspring remain plausible drive fields rather than noise. Selection is
fitness-proportional with elitist carryover.
"""

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.stats import norm

from .waveform import GENE_COUNT, Chromosome, Lineage, normalize


class AllZeroFitnessError(ValueError):
    """Every fitness entry is zero; caller should fall back to uniform draw."""


class Renorm(Enum):
    CLIP = "clip"
    MINMAX = "minmax"


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 1000
    carryover_fraction: float = 0.15
    crossover_prob: float = 0.5
    mu_star_range: tuple[float, float] = (100.0, 800.0)
    sigma_star_loc: float = 50.0
    sigma_star_scale: float = 150.0
    weight_range: tuple[float, float] = (50.0, 150.0)
    renorm: Renorm = Renorm.MINMAX

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError(f"population_size must be >= 1, got {self.population_size}")
        if not 0.0 < self.carryover_fraction < 1.0:
            raise ValueError(f"carryover_fraction must be in (0, 1), got {self.carryover_fraction}")
        if not 0.0 <= self.crossover_prob <= 1.0:
            raise ValueError(f"crossover_prob must be in [0, 1], got {self.crossover_prob}")


@dataclass(frozen=True)
class MutationParams:
    mu_star: float
    sigma_star: float
    weight: float
    sign: int


def crossover(
    par1: Chromosome,
    par2: Chromosome,
    lambda_star: float,
    id1: int = -1,
    id2: int = -1,
) -> tuple[Chromosome, Chromosome]:
    """Arithmetic crossover: complementary convex mixes of the parents.

    chd1 = lambda* par1 + (1 - lambda*) par2; chd2 takes the complementary
    share. chd2 is computed as (par1 + par2) - chd1 so the conservation
    identity chd2 == (par1 + par2) - chd1 holds to the last bit (the naive
    swapped-coefficient form drifts by an ulp). Children stay in [-1, 1].
    """
    if not 0.0 <= lambda_star <= 1.0:
        raise ValueError(f"lambda_star must be in [0, 1], got {lambda_star}")
    parents = (par1.id, par2.id)
    if lambda_star == 1.0 or lambda_star == 0.0:
        # endpoints reproduce the parents bit-for-bit
        a, b = (par1, par2) if lambda_star == 1.0 else (par2, par1)
        return (
            Chromosome(a.genes, id=id1, lineage=Lineage.CROSSOVER, parents=parents),
            Chromosome(b.genes, id=id2, lineage=Lineage.CROSSOVER, parents=parents),
        )
    g1 = lambda_star * par1.genes + (1.0 - lambda_star) * par2.genes
    chd1 = Chromosome(g1, id=id1, lineage=Lineage.CROSSOVER, parents=parents)
    # complement through the sum so chd1 + chd2 re-adds to par1 + par2 exactly
    g2 = (par1.genes + par2.genes) - chd1.genes
    chd2 = Chromosome(g2, id=id2, lineage=Lineage.CROSSOVER, parents=parents)
    return (chd1, chd2)


def sample_mutation_params(rng: np.random.Generator, config: GAConfig) -> MutationParams:
    """Draw bump center, width, weight and sign for one mutation event."""
    mu_star = rng.uniform(*config.mu_star_range)
    # half-normal with location 50, scale 150
    sigma_star = config.sigma_star_loc + abs(rng.normal(0.0, config.sigma_star_scale))
    weight = rng.uniform(*config.weight_range)
    sign = 1 if rng.integers(0, 2) == 1 else -1
    return MutationParams(mu_star, sigma_star, weight, sign)


def gaussian_bump(params: MutationParams, n: int = GENE_COUNT) -> np.ndarray:
    """The additive perturbation: weight times a Gaussian pdf over gene index."""
    k = np.arange(n)
    return params.weight * norm.pdf(k, loc=params.mu_star, scale=params.sigma_star)


def mutate(
    par: Chromosome,
    params: MutationParams,
    config: GAConfig,
    id: int = -1,
) -> Chromosome:
    """Add a signed Gaussian bump, then restore the [-1, 1] range.

    MinMax renorm re-normalizes the whole curve (the chromosome again attains
    both endpoints); Clip only truncates the excursion.
    """
    raw = par.genes + params.sign * gaussian_bump(params)
    if config.renorm is Renorm.MINMAX:
        genes = normalize(raw)
    else:
        genes = np.clip(raw, -1.0, 1.0)
    return Chromosome(genes, id=id, lineage=Lineage.MUTATION, parents=(par.id,))


def select_parent(fitness: np.ndarray, rng: np.random.Generator) -> int:
    """Fitness-proportional index draw: P(i) = fitness_i / sum(fitness).

    Negative entries (posterior samples can dip below zero) are clamped to 0
    before normalizing. Raises AllZeroFitnessError when nothing is positive.
    """
    fitness = np.asarray(fitness, dtype=float)
    if fitness.ndim != 1 or fitness.size == 0:
        raise ValueError(f"fitness must be a non-empty vector, got shape {fitness.shape}")
    clamped = np.clip(fitness, 0.0, None)
    total = clamped.sum()
    if total <= 0.0:
        raise AllZeroFitnessError("all fitness values are zero after clamping")
    return int(rng.choice(fitness.size, p=clamped / total))


def carryover(
    population: list[Chromosome],
    fitness: np.ndarray,
    fraction: float,
    truth_mask: np.ndarray | None = None,
) -> list[Chromosome]:
    """Copy the top round(fraction * size) chromosomes into the next
    generation unmodified (same genes, same id, Carryover lineage).

    Ties break toward truth-backed entries (when ``truth_mask`` is given)
    and then toward lower id, keeping the elite set deterministic.
    """
    fitness = np.asarray(fitness, dtype=float)
    if len(population) != fitness.size:
        raise ValueError(
            f"fitness length {fitness.size} does not match population {len(population)}"
        )
    count = round(fraction * len(population))
    if truth_mask is None:
        truth_mask = np.zeros(len(population), dtype=bool)
    order = sorted(
        range(len(population)),
        key=lambda i: (-fitness[i], not truth_mask[i], population[i].id),
    )
    return [
        replace(population[i], lineage=Lineage.CARRYOVER, parents=(population[i].id,))
        for i in order[:count]
    ]


def next_generation(
    population: list[Chromosome],
    fitness_provider,
    config: GAConfig,
    rng: np.random.Generator,
    id_start: int = 0,
    truth_mask: np.ndarray | None = None,
) -> list[Chromosome]:
    """Build one full successor generation: elites first, then offspring.

    ``fitness_provider`` is called once for elite selection and again before
    every crossover/mutation event, so estimators that resample (posterior
    draws) inject fresh values per event. Offspring ids are assigned
    sequentially from ``id_start``; exactly population_size - len(elites)
    ids are consumed.
    """
    if not population:
        raise AllZeroFitnessError("cannot evolve an empty population")
    elites = carryover(
        population, fitness_provider(), config.carryover_fraction, truth_mask=truth_mask
    )
    out = list(elites)
    next_id = id_start

    def pick(fitness):
        try:
            return select_parent(fitness, rng)
        except AllZeroFitnessError:
            return int(rng.integers(0, len(population)))

    while len(out) < config.population_size:
        fitness = np.asarray(fitness_provider(), dtype=float)
        do_crossover = rng.uniform() < config.crossover_prob and len(population) >= 2
        if do_crossover:
            lam = rng.uniform()
            i = pick(fitness)
            # a single positive entry would make proportional redraw loop forever
            if (np.clip(fitness, 0.0, None) > 0).sum() >= 2:
                j = pick(fitness)
                while j == i:
                    j = pick(fitness)
            else:
                j = i
                while j == i:
                    j = int(rng.integers(0, len(population)))
            chd1, chd2 = crossover(population[i], population[j], lam, id1=next_id, id2=next_id + 1)
            out.append(chd1)
            next_id += 1
            if len(out) < config.population_size:
                out.append(replace(chd2, id=next_id))
                next_id += 1
        else:
            i = pick(fitness)
            params = sample_mutation_params(rng, config)
            out.append(mutate(population[i], params, config, id=next_id))
            next_id += 1
    return out
