"""The surrogate-in-the-loop evolution driver.

Each generation runs an active-learning loop: train the surrogate on the
truth-evaluated members (carried-over elites, or a small random bootstrap
in generation 0), pick a batch of unqueried chromosomes by acquisition
score, evaluate them on the simulator, retrain, and repeat until the
per-generation query budget is spent. The remaining members get surrogate
estimates, and the combined fitness drives selection for the next
generation. Total simulator spend per run is therefore
(generations + 1) * query_budget + the generation-0 bootstrap.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import acquisition as acq
from . import dkl
from . import ferrosim
from . import genetic
from . import waveform
from .seeds import substream


class Estimation(Enum):
    MEAN_ONLY = "mean-only"
    UNCERTAINTY_ONLY = "uncertainty-only"
    THOMPSON = "thompson"


@dataclass(frozen=True)
class PolicyConfig:
    """How truth queries are chosen and how unqueried fitness is filled in."""

    acquisition: acq.AcquisitionSpec = acq.AcquisitionSpec()
    estimation: Estimation = Estimation.THOMPSON
    batch_size: int = 10
    query_budget: int = 100
    init_random_fraction: float = 0.01

    def __post_init__(self):
        if not 1 <= self.batch_size <= self.query_budget:
            raise ValueError(
                f"need query_budget >= batch_size >= 1, got "
                f"budget={self.query_budget}, batch={self.batch_size}"
            )
        if not 0.0 < self.init_random_fraction <= 1.0:
            raise ValueError(
                f"init_random_fraction must be in (0, 1], got {self.init_random_fraction}"
            )


@dataclass(frozen=True)
class EvalContext:
    """Everything a simulator evaluation needs besides the chromosome."""

    lattice: ferrosim.LatticeConfig
    disorder: ferrosim.DisorderField
    field_scale: float = 1.0
    worker_count: int = 1


def _evaluate_one(payload):
    genes, cid, field_scale, disorder, lattice = payload
    schedule = waveform.to_physical(genes, field_scale)
    try:
        state = ferrosim.simulate(schedule, disorder, lattice)
    except ferrosim.NonFiniteError as exc:
        raise ferrosim.NonFiniteError(
            f"chromosome {cid}: {exc}", step_index=exc.step_index
        ) from None
    return ferrosim.curl_fitness(state)


def evaluate_batch(chromosomes, ctx: EvalContext) -> np.ndarray:
    """Ground-truth fitness for a batch, assembled in input order.

    Evaluations are independent, so worker count changes wall-clock only,
    never the returned values.
    """
    payloads = [
        (c.genes, c.id, ctx.field_scale, ctx.disorder, ctx.lattice)
        for c in chromosomes
    ]
    if ctx.worker_count <= 1 or len(payloads) <= 1:
        return np.array([_evaluate_one(p) for p in payloads])
    with ProcessPoolExecutor(max_workers=ctx.worker_count) as pool:
        return np.array(list(pool.map(_evaluate_one, payloads)))


@dataclass
class GenerationLedger:
    """What one explored generation knew: who was truth-evaluated, their
    values, the nominal post-loop estimate vector, and the surrogate."""

    generation: int
    population: list[waveform.Chromosome]
    queried: dict[int, float]  # population index -> ground truth
    estimated: np.ndarray | None
    model: dkl.DKLModel
    new_queries: int
    initially_known: int
    rmse_queried: float | None


def explore_generation(
    population: list[waveform.Chromosome],
    known_truths: dict[int, float],
    policy: PolicyConfig,
    rng: np.random.Generator,
    *,
    ctx: EvalContext,
    net_config: dkl.EmbeddingNetConfig,
    dkl_rng: np.random.Generator | None = None,
    kernel: str = "rbf",
    train_iters: int = 200,
    refine_iters: int = 50,
    lr: float = 0.01,
    generation: int = 0,
) -> GenerationLedger:
    """Spend one generation's query budget under the acquisition policy.

    ``known_truths`` maps chromosome id to already-paid-for fitness (elite
    carryover); when empty, an init_random_fraction bootstrap is evaluated
    instead (those queries are extra, not charged to the budget). The
    training set must reach 2 points before the surrogate can fit, so a
    short budget-charged random top-up covers degenerate starts.
    """
    n = len(population)
    if n < 2:
        raise ValueError(f"population of {n} is too small to explore")
    genes_all = np.stack([c.genes for c in population])

    queried: dict[int, float] = {}
    new_queries = 0
    if known_truths:
        for i, c in enumerate(population):
            if c.id in known_truths:
                queried[i] = known_truths[c.id]
    elif generation == 0:
        # only generation 0 gets free bootstrap queries; later generations
        # that arrive truth-poor pay for their own top-up out of the budget
        k = min(n, max(2, round(policy.init_random_fraction * n)))
        bootstrap = sorted(int(i) for i in rng.choice(n, size=k, replace=False))
        truths = evaluate_batch([population[i] for i in bootstrap], ctx)
        for i, t in zip(bootstrap, truths):
            queried[i] = float(t)
        new_queries += k
    initially_known = len(queried)

    if policy.query_budget > n - initially_known:
        raise acq.ExhaustedPoolError(
            f"budget {policy.query_budget} exceeds the {n - initially_known} "
            f"unqueried chromosomes"
        )

    budget_left = policy.query_budget
    # the surrogate needs two points; charge any top-up to the budget
    while len(queried) < 2 and budget_left > 0:
        i = int(rng.choice([j for j in range(n) if j not in queried]))
        queried[i] = float(evaluate_batch([population[i]], ctx)[0])
        budget_left -= 1
        new_queries += 1
    if len(queried) < 2:
        raise ValueError("cannot train the surrogate on fewer than 2 truths")

    model = dkl.DKLModel(net_config, rng=dkl_rng, kernel=kernel)
    first_fit = True
    sq_err_sum = 0.0
    sq_err_count = 0

    def refit(iterations):
        idx = sorted(queried)
        dkl.set_training_data(model, genes_all[idx], [queried[i] for i in idx])
        dkl.train(model, iterations=iterations, lr=lr)

    while budget_left > 0:
        refit(train_iters if first_fit else refine_iters)
        first_fit = False
        unqueried = [i for i in range(n) if i not in queried]
        if not unqueried:
            break
        means, variances = dkl.predict(model, genes_all[unqueried])
        stds = np.sqrt(variances)
        f_star = max(queried.values())
        scores = acq.score(policy.acquisition, means, stds, best_observed=f_star)
        k = min(policy.batch_size, budget_left, len(unqueried))
        picked = acq.select_batch(scores, [], k)
        batch = [unqueried[p] for p in picked]
        truths = evaluate_batch([population[i] for i in batch], ctx)
        for p, i, t in zip(picked, batch, truths):
            queried[i] = float(t)
            sq_err_sum += (means[p] - float(t)) ** 2
            sq_err_count += 1
        budget_left -= k
        new_queries += k

    refit(refine_iters)  # estimation model sees every truth from this generation

    rmse = math.sqrt(sq_err_sum / sq_err_count) if sq_err_count else None
    ledger = GenerationLedger(
        generation=generation,
        population=population,
        queried=queried,
        estimated=None,
        model=model,
        new_queries=new_queries,
        initially_known=initially_known,
        rmse_queried=rmse,
    )
    return ledger


class FitnessEstimator:
    """Callable fitness provider over one generation.

    Queried members always return their ground truth. Unqueried members
    get the policy's estimate: posterior mean, posterior std, or a joint
    Thompson sample redrawn on every call (the covariance factor is built
    once; only the standard-normal vector is fresh). All values are
    clamped at zero so they can feed proportional selection directly.
    """

    def __init__(
        self,
        ledger: GenerationLedger,
        model: dkl.DKLModel,
        policy: PolicyConfig,
        rng: np.random.Generator,
        thompson_per_event: bool = True,
    ):
        n = len(ledger.population)
        self.policy = policy
        self.rng = rng
        self.truth = np.zeros(n)
        self.truth_mask = np.zeros(n, dtype=bool)
        for i, t in ledger.queried.items():
            self.truth[i] = t
            self.truth_mask[i] = True
        self.unqueried = np.flatnonzero(~self.truth_mask)
        self._factor = None
        self._frozen_sample = None
        if self.unqueried.size:
            genes = np.stack([ledger.population[i].genes for i in self.unqueried])
            if policy.estimation is Estimation.THOMPSON:
                means, _, cov = dkl.predict(model, genes, full_cov=True)
                self.means = means
                self._factor = dkl.posterior_covariance_factor(cov)
            else:
                means, variances = dkl.predict(model, genes)
                self.means = means
                self.stds = np.sqrt(variances)
        if not thompson_per_event and self._factor is not None:
            self._frozen_sample = self.means + self._factor @ rng.standard_normal(
                self.means.size
            )

    def __call__(self) -> np.ndarray:
        out = self.truth.copy()
        if self.unqueried.size:
            if self.policy.estimation is Estimation.MEAN_ONLY:
                est = self.means
            elif self.policy.estimation is Estimation.UNCERTAINTY_ONLY:
                est = self.stds
            elif self._frozen_sample is not None:
                est = self._frozen_sample
            else:
                est = self.means + self._factor @ self.rng.standard_normal(
                    self.means.size
                )
            out[self.unqueried] = est
        return np.clip(out, 0.0, None)

    def nominal(self) -> np.ndarray:
        """Deterministic snapshot for the ledger: the mean-based vector for
        Thompson (whose per-call draws are intentionally non-repeatable)."""
        out = self.truth.copy()
        if self.unqueried.size:
            est = (
                self.stds
                if self.policy.estimation is Estimation.UNCERTAINTY_ONLY
                else self.means
            )
            out[self.unqueried] = est
        return np.clip(out, 0.0, None)


def estimate_fitness(
    ledger: GenerationLedger,
    model: dkl.DKLModel,
    policy: PolicyConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """One fitness vector over the full generation (truth where queried)."""
    return FitnessEstimator(ledger, model, policy, rng)()


@dataclass(frozen=True)
class RunConfig:
    lattice: ferrosim.LatticeConfig = ferrosim.LatticeConfig()
    ga: genetic.GAConfig = genetic.GAConfig()
    net: dkl.EmbeddingNetConfig = dkl.EmbeddingNetConfig()
    policy: PolicyConfig = PolicyConfig()
    master_seed: int = 0
    disorder_seed: int = 0
    generations: int = 40  # GA steps; generations+1 populations are explored
    worker_count: int = 1
    field_scale: float = 1.0
    disorder_fraction: float = 0.15
    disorder_magnitude: float = 0.5
    kernel: str = "rbf"
    train_iters: int = 200
    refine_iters: int = 50
    lr: float = 0.01
    thompson_per_event: bool = True

    def __post_init__(self):
        if self.generations < 0:
            raise ValueError(f"generations must be >= 0, got {self.generations}")
        if self.worker_count < 1:
            raise ValueError(f"worker_count must be >= 1, got {self.worker_count}")


@dataclass
class GenerationMetrics:
    generation: int
    queried_count: int
    new_queries: int
    best_truth: float
    median_truth: float
    min_truth: float
    best_so_far: float
    rmse_queried: float | None
    wall_clock_s: float


@dataclass
class QueriedRecord:
    generation: int
    chromosome: waveform.Chromosome
    fitness: float


@dataclass
class EmbeddingTable:
    """Per-generation surrogate view of the whole population."""

    generation: int
    ids: np.ndarray
    points: np.ndarray  # (n, embedding_dim)
    means: np.ndarray
    variances: np.ndarray
    truths: np.ndarray  # NaN where unqueried
    estimated: np.ndarray


@dataclass
class RunResult:
    config: RunConfig
    metrics: list[GenerationMetrics]
    queried: list[QueriedRecord]
    embeddings: list[EmbeddingTable]
    best_fitness: float
    best_chromosome: waveform.Chromosome
    total_queries: int
    wall_clock_s: float


def run(config: RunConfig, progress=None) -> RunResult:
    """Full experiment: seed, then alternate explore / evolve.

    Deterministic given (master_seed, disorder_seed): every random decision
    draws from a named substream of the master seed, and disorder comes
    from its own seed so the landscape stays fixed across seed sweeps.
    """
    t_run = time.monotonic()
    disorder = ferrosim.generate_disorder(
        config.disorder_seed,
        config.lattice,
        fraction=config.disorder_fraction,
        magnitude=config.disorder_magnitude,
    )
    ctx = EvalContext(config.lattice, disorder, config.field_scale, config.worker_count)
    population = waveform.seed_population(
        substream(config.master_seed, "population"), config.ga.population_size
    )
    next_id = config.ga.population_size
    ga_rng = substream(config.master_seed, "ga")

    known_truths: dict[int, float] = {}
    best_fitness = -math.inf
    best_chromosome = None
    metrics: list[GenerationMetrics] = []
    queried_records: list[QueriedRecord] = []
    embeddings: list[EmbeddingTable] = []
    total_queries = 0

    for g in range(config.generations + 1):
        t_gen = time.monotonic()
        ledger = explore_generation(
            population,
            known_truths,
            config.policy,
            substream(config.master_seed, f"al-g{g}"),
            ctx=ctx,
            net_config=config.net,
            dkl_rng=substream(config.master_seed, f"dkl-init-g{g}"),
            kernel=config.kernel,
            train_iters=config.train_iters,
            refine_iters=config.refine_iters,
            lr=config.lr,
            generation=g,
        )
        estimator = FitnessEstimator(
            ledger,
            ledger.model,
            config.policy,
            substream(config.master_seed, f"thompson-g{g}"),
            thompson_per_event=config.thompson_per_event,
        )
        ledger.estimated = estimator.nominal()

        truths = np.array([ledger.queried[i] for i in sorted(ledger.queried)])
        total_queries += ledger.new_queries
        for i in sorted(ledger.queried):
            queried_records.append(
                QueriedRecord(g, ledger.population[i], ledger.queried[i])
            )
        gen_best_i = max(ledger.queried, key=lambda i: (ledger.queried[i], -i))
        if ledger.queried[gen_best_i] > best_fitness:
            best_fitness = ledger.queried[gen_best_i]
            best_chromosome = ledger.population[gen_best_i]

        means_all, vars_all = dkl.predict(ledger.model, np.stack([c.genes for c in population]))
        truth_col = np.full(len(population), np.nan)
        for i, t in ledger.queried.items():
            truth_col[i] = t
        embeddings.append(
            EmbeddingTable(
                generation=g,
                ids=np.array([c.id for c in population]),
                points=dkl.embed(ledger.model, [c for c in population]),
                means=means_all,
                variances=vars_all,
                truths=truth_col,
                estimated=ledger.estimated,
            )
        )
        metrics.append(
            GenerationMetrics(
                generation=g,
                queried_count=len(ledger.queried),
                new_queries=ledger.new_queries,
                best_truth=float(truths.max()),
                median_truth=float(np.median(truths)),
                min_truth=float(truths.min()),
                best_so_far=float(best_fitness),
                rmse_queried=ledger.rmse_queried,
                wall_clock_s=time.monotonic() - t_gen,
            )
        )
        if progress is not None:
            progress(metrics[-1])

        if g == config.generations:
            break
        population = genetic.next_generation(
            population,
            estimator,
            config.ga,
            ga_rng,
            id_start=next_id,
            truth_mask=estimator.truth_mask,
        )
        elite_count = round(config.ga.carryover_fraction * config.ga.population_size)
        next_id += config.ga.population_size - elite_count
        truth_by_id = {
            ledger.population[i].id: t for i, t in ledger.queried.items()
        }
        known_truths = {
            c.id: truth_by_id[c.id]
            for c in population[:elite_count]
            if c.id in truth_by_id
        }

    return RunResult(
        config=config,
        metrics=metrics,
        queried=queried_records,
        embeddings=embeddings,
        best_fitness=best_fitness,
        best_chromosome=best_chromosome,
        total_queries=total_queries,
        wall_clock_s=time.monotonic() - t_run,
    )
