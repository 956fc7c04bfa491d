"""Command-line front end: seeded experiments and plot-ready exports.

Subcommands
    run         full surrogate-accelerated evolution; writes manifest.json,
                metrics.csv, queried.csv, embeddings_g{g}.csv
    snapshot    exhaustively evaluate one population (optionally after a few
                fully-evaluated GA steps) and archive it with ground truth
    policy-acq  replay the within-generation active-learning loop on a saved
                snapshot once per acquisition function, over several seeds
    policy-est  low-capacity estimation-policy study: one run per estimation
                policy at 32 filters, batch 1, budget 10
    eval        score chromosome CSV rows directly on the simulator

Configuration is a flat JSON file plus flag overrides; unknown keys are
rejected. Every artifact records the resolved config hash and master seed.
Exit codes: 0 ok, 2 configuration/input error, 3 numerical failure.
"""

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import acquisition as acq
from . import dkl
from . import ferrosim
from . import genetic
from . import orchestrator as orc
from . import waveform
from .seeds import substream

OUTPUT_DIR_ENV = "FERROGA_OUTPUT_DIR"
CSV_VERSION = "v1"


def _default_workers() -> int:
    return min(os.cpu_count() or 1, 10)


def _defaults() -> dict:
    return {
        # lattice
        "n": 20,
        "alpha1": -1.0,
        "alpha2": 1.0,
        "alpha3": 1.0,
        "k_coupling": 0.5,
        "gamma": 1.0,
        "alpha_dep": 0.05,
        "dt": 1.0 / 300.0,
        "boundary": "open",
        # genetic
        "population_size": 1000,
        "carryover_fraction": 0.15,
        "crossover_prob": 0.5,
        "mu_star_range": [100.0, 800.0],
        "sigma_star_loc": 50.0,
        "sigma_star_scale": 150.0,
        "weight_range": [50.0, 150.0],
        "renorm": "minmax",
        # surrogate
        "conv_filters": 128,
        "kernel_width": 5,
        "pool_factor": 4,
        "dense_widths": [64],
        "embedding_dim": 2,
        "activation": "relu",
        "kernel": "rbf",
        "train_iters": 200,
        "refine_iters": 50,
        "lr": 0.01,
        # policy
        "acquisition": "ucb",
        "xi": None,
        "estimation": "thompson",
        "batch_size": 10,
        "query_budget": 100,
        "init_random_fraction": 0.01,
        "thompson_per_event": True,
        # experiment
        "master_seed": 0,
        "disorder_seed": 0,
        "generations": 40,
        "worker_count": _default_workers(),
        "field_scale": 1.0,
        "disorder_fraction": 0.15,
        "disorder_magnitude": 0.5,
        "output_dir": os.environ.get(OUTPUT_DIR_ENV, "ferroga-out"),
    }


SMALL_PROFILE = {
    "population_size": 200,
    "generations": 10,
    "query_budget": 20,
    "batch_size": 10,
    "n": 20,
    "conv_filters": 32,
    "train_iters": 120,
    "refine_iters": 30,
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, value, reference) -> object:
    """Parse a CLI string (or JSON value) into the type of the default."""
    if isinstance(value, str):
        if reference is None or isinstance(reference, (int, float, bool, list)):
            try:
                value = json.loads(value)
            except json.JSONDecodeError:
                raise ConfigError(f"cannot parse value for {key!r}: {value!r}")
    if reference is None or value is None:
        return value
    if isinstance(reference, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key!r} expects true/false, got {value!r}")
        return value
    if isinstance(reference, int) and not isinstance(reference, bool):
        if isinstance(value, bool) or (isinstance(value, float) and value != int(value)):
            raise ConfigError(f"{key!r} expects an integer, got {value!r}")
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{key!r} expects an integer, got {value!r}")
        return int(value)
    if isinstance(reference, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{key!r} expects a number, got {value!r}")
        return float(value)
    if isinstance(reference, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key!r} expects a list, got {value!r}")
        return value
    return value


def resolve_config(args) -> dict:
    """defaults <- config file <- --small <- dedicated flags <- --set."""
    cfg = _defaults()
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in loaded.items():
            if key not in cfg:
                raise ConfigError(f"unknown config key: {key!r}")
            cfg[key] = _coerce(key, value, cfg[key])
    if getattr(args, "small", False):
        cfg.update(SMALL_PROFILE)
    flag_map = {
        "master_seed": "master_seed",
        "disorder_seed": "disorder_seed",
        "generations": "generations",
        "population": "population_size",
        "budget": "query_budget",
        "batch": "batch_size",
        "acquisition": "acquisition",
        "xi": "xi",
        "estimation": "estimation",
        "filters": "conv_filters",
        "workers": "worker_count",
        "field_scale": "field_scale",
        "output": "output_dir",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg[key] = _coerce(key, value, cfg[key]) if cfg[key] is not None else value
    for assignment in getattr(args, "set", None) or []:
        if "=" not in assignment:
            raise ConfigError(f"--set expects key=value, got {assignment!r}")
        key, _, raw = assignment.partition("=")
        if key not in cfg:
            raise ConfigError(f"unknown config key: {key!r}")
        cfg[key] = _coerce(key, raw, cfg[key])
    return cfg


# keys that change where/how fast the run executes but never its results
_NON_SEMANTIC_KEYS = ("worker_count", "output_dir")


def config_hash(cfg: dict) -> str:
    hashed = {k: v for k, v in cfg.items() if k not in _NON_SEMANTIC_KEYS}
    text = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def build_run_config(cfg: dict) -> orc.RunConfig:
    try:
        lattice = ferrosim.LatticeConfig(
            n=cfg["n"],
            alpha1=cfg["alpha1"],
            alpha2=cfg["alpha2"],
            alpha3=cfg["alpha3"],
            k_coupling=cfg["k_coupling"],
            gamma=cfg["gamma"],
            alpha_dep=cfg["alpha_dep"],
            dt=cfg["dt"],
            boundary=ferrosim.Boundary(cfg["boundary"]),
        )
        ga = genetic.GAConfig(
            population_size=cfg["population_size"],
            carryover_fraction=cfg["carryover_fraction"],
            crossover_prob=cfg["crossover_prob"],
            mu_star_range=tuple(cfg["mu_star_range"]),
            sigma_star_loc=cfg["sigma_star_loc"],
            sigma_star_scale=cfg["sigma_star_scale"],
            weight_range=tuple(cfg["weight_range"]),
            renorm=genetic.Renorm(cfg["renorm"]),
        )
        net = dkl.EmbeddingNetConfig(
            conv_filters=cfg["conv_filters"],
            kernel_width=cfg["kernel_width"],
            pool_factor=cfg["pool_factor"],
            dense_widths=tuple(cfg["dense_widths"]),
            embedding_dim=cfg["embedding_dim"],
            activation=cfg["activation"],
        )
        policy = orc.PolicyConfig(
            acquisition=acq.AcquisitionSpec(
                acq.AcquisitionKind(cfg["acquisition"]), xi=cfg["xi"]
            ),
            estimation=orc.Estimation(cfg["estimation"]),
            batch_size=cfg["batch_size"],
            query_budget=cfg["query_budget"],
            init_random_fraction=cfg["init_random_fraction"],
        )
        return orc.RunConfig(
            lattice=lattice,
            ga=ga,
            net=net,
            policy=policy,
            master_seed=cfg["master_seed"],
            disorder_seed=cfg["disorder_seed"],
            generations=cfg["generations"],
            worker_count=cfg["worker_count"],
            field_scale=cfg["field_scale"],
            disorder_fraction=cfg["disorder_fraction"],
            disorder_magnitude=cfg["disorder_magnitude"],
            kernel=cfg["kernel"],
            train_iters=cfg["train_iters"],
            refine_iters=cfg["refine_iters"],
            lr=cfg["lr"],
            thompson_per_event=cfg["thompson_per_event"],
        )
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc))


# --- artifact writers ------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _stamp(cfg_hash: str, seed: int) -> list[str]:
    return [f"# ferroga-csv {CSV_VERSION} config={cfg_hash} master_seed={seed}"]


def _write_csv(path: Path, stamp: list[str], header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in stamp:
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_metrics_csv(path: Path, result: orc.RunResult, cfg_hash: str) -> None:
    rows = [
        (
            m.generation,
            m.queried_count,
            m.new_queries,
            m.best_truth,
            m.median_truth,
            m.min_truth,
            m.best_so_far,
            m.rmse_queried,
        )
        for m in result.metrics
    ]
    _write_csv(
        path,
        _stamp(cfg_hash, result.config.master_seed),
        [
            "generation",
            "queried_count",
            "new_queries",
            "best_truth",
            "median_truth",
            "min_truth",
            "best_so_far",
            "rmse_queried",
        ],
        rows,
    )


def write_queried_csv(path: Path, result: orc.RunResult, cfg_hash: str) -> None:
    header = ["generation", "id", "lineage", "fitness"] + [
        f"g{k}" for k in range(waveform.GENE_COUNT)
    ]
    rows = (
        [rec.generation, rec.chromosome.id, rec.chromosome.lineage.value, rec.fitness]
        + [float(g) for g in rec.chromosome.genes]
        for rec in result.queried
    )
    _write_csv(path, _stamp(cfg_hash, result.config.master_seed), header, rows)


def write_embeddings_csv(path: Path, table: orc.EmbeddingTable, cfg_hash: str, seed: int) -> None:
    dim = table.points.shape[1]
    header = (
        ["id"]
        + [f"dim{d + 1}" for d in range(dim)]
        + ["pred_mean", "pred_var", "truth", "estimate"]
    )
    rows = []
    for row_i in range(table.ids.size):
        truth = table.truths[row_i]
        rows.append(
            [int(table.ids[row_i])]
            + [float(table.points[row_i, d]) for d in range(dim)]
            + [
                float(table.means[row_i]),
                float(table.variances[row_i]),
                None if math.isnan(truth) else float(truth),
                float(table.estimated[row_i]),
            ]
        )
    _write_csv(path, _stamp(cfg_hash, seed), header, rows)


def write_manifest(path: Path, cfg: dict, cfg_hash: str, payload: dict) -> None:
    manifest = {
        "tool": "ferroga",
        "version": __version__,
        "config": cfg,
        "config_hash": cfg_hash,
        "master_seed": cfg["master_seed"],
    }
    manifest.update(payload)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _ensure_outdir(cfg: dict) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- subcommands -----------------------------------------------------------

def cmd_run(args) -> int:
    cfg = resolve_config(args)
    run_config = build_run_config(cfg)
    cfg_hash = config_hash(cfg)
    out = _ensure_outdir(cfg)

    def progress(m):
        print(
            f"generation {m.generation}: best {m.best_truth:.4f} "
            f"median {m.median_truth:.4f} best-so-far {m.best_so_far:.4f} "
            f"({m.new_queries} new queries)"
        )

    result = orc.run(run_config, progress=progress)
    write_metrics_csv(out / "metrics.csv", result, cfg_hash)
    write_queried_csv(out / "queried.csv", result, cfg_hash)
    for table in result.embeddings:
        write_embeddings_csv(
            out / f"embeddings_g{table.generation}.csv", table, cfg_hash, cfg["master_seed"]
        )
    write_manifest(
        out / "manifest.json",
        cfg,
        cfg_hash,
        {
            "command": "run",
            "total_queries": result.total_queries,
            "best_fitness": result.best_fitness,
            "best_chromosome_id": result.best_chromosome.id,
            "generations_explored": len(result.metrics),
            "wall_clock_s": result.wall_clock_s,
            "per_generation": [
                {
                    "generation": m.generation,
                    "queried_count": m.queried_count,
                    "new_queries": m.new_queries,
                    "best_truth": m.best_truth,
                    "median_truth": m.median_truth,
                    "best_so_far": m.best_so_far,
                    "wall_clock_s": m.wall_clock_s,
                }
                for m in result.metrics
            ],
            "artifacts": ["metrics.csv", "queried.csv"]
            + [f"embeddings_g{t.generation}.csv" for t in result.embeddings],
        },
    )
    print(f"wrote {out / 'manifest.json'}")
    return 0


def _snapshot_rows(population, truths):
    for c, t in zip(population, truths):
        yield [c.id, c.lineage.value, float(t)] + [float(g) for g in c.genes]


def cmd_snapshot(args) -> int:
    cfg = resolve_config(args)
    run_config = build_run_config(cfg)
    cfg_hash = config_hash(cfg)
    out = _ensure_outdir(cfg)
    ctx = orc.EvalContext(
        run_config.lattice,
        ferrosim.generate_disorder(
            run_config.disorder_seed,
            run_config.lattice,
            fraction=run_config.disorder_fraction,
            magnitude=run_config.disorder_magnitude,
        ),
        run_config.field_scale,
        run_config.worker_count,
    )
    population = waveform.seed_population(
        substream(run_config.master_seed, "population"), run_config.ga.population_size
    )
    next_id = run_config.ga.population_size
    ga_rng = substream(run_config.master_seed, "ga")
    evolve = args.evolve
    for step in range(evolve):
        truths = orc.evaluate_batch(population, ctx)
        population = genetic.next_generation(
            population,
            lambda: truths,
            run_config.ga,
            ga_rng,
            id_start=next_id,
            truth_mask=np.ones(len(population), dtype=bool),
        )
        elite_count = round(run_config.ga.carryover_fraction * run_config.ga.population_size)
        next_id += run_config.ga.population_size - elite_count
        print(f"evolve step {step + 1}/{evolve}: best truth {truths.max():.4f}")
    truths = orc.evaluate_batch(population, ctx)
    header = ["id", "lineage", "fitness"] + [f"g{k}" for k in range(waveform.GENE_COUNT)]
    _write_csv(
        out / "snapshot.csv",
        _stamp(cfg_hash, cfg["master_seed"]),
        header,
        _snapshot_rows(population, truths),
    )
    write_manifest(
        out / "snapshot_manifest.json",
        cfg,
        cfg_hash,
        {
            "command": "snapshot",
            "evolve_steps": evolve,
            "population_size": len(population),
            "best_fitness": float(truths.max()),
            "median_fitness": float(np.median(truths)),
            "artifacts": ["snapshot.csv"],
        },
    )
    print(
        f"snapshot of {len(population)} chromosomes written to {out / 'snapshot.csv'} "
        f"(best {truths.max():.4f}, median {np.median(truths):.4f})"
    )
    return 0


def read_snapshot(path) -> tuple[np.ndarray, np.ndarray]:
    """Load (genes matrix, truth vector) from a snapshot CSV."""
    genes_rows = []
    truths = []
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read snapshot {path}: {exc}")
    if not rows:
        raise ConfigError(f"snapshot {path} is empty")
    header, data = rows[0], rows[1:]
    try:
        fit_col = header.index("fitness")
        gene0 = header.index("g0")
    except ValueError:
        raise ConfigError(f"snapshot {path} lacks fitness/g0 columns")
    for row_i, row in enumerate(data):
        truths.append(float(row[fit_col]))
        genes_rows.append(
            waveform.parse_gene_fields(
                row[gene0 : gene0 + waveform.GENE_COUNT], row_index=row_i
            )
        )
    return np.stack(genes_rows), np.array(truths)


def _al_loop_on_table(
    genes: np.ndarray,
    truths: np.ndarray,
    init_idx: list[int],
    spec: acq.AcquisitionSpec,
    budget: int,
    batch: int,
    net_config: dkl.EmbeddingNetConfig,
    dkl_rng: np.random.Generator,
    train_iters: int,
    refine_iters: int,
    lr: float,
    kernel: str,
):
    """Within-generation active learning against a fully known truth table."""
    n = genes.shape[0]
    queried = dict((int(i), float(truths[i])) for i in init_idx)
    model = dkl.DKLModel(net_config, rng=dkl_rng, kernel=kernel)
    budget_left = budget
    first = True
    while budget_left > 0:
        idx = sorted(queried)
        dkl.set_training_data(model, genes[idx], [queried[i] for i in idx])
        dkl.train(model, iterations=(train_iters if first else refine_iters), lr=lr)
        first = False
        unqueried = [i for i in range(n) if i not in queried]
        if not unqueried:
            break
        means, variances = dkl.predict(model, genes[unqueried])
        scores = acq.score(
            spec, means, np.sqrt(variances), best_observed=max(queried.values())
        )
        k = min(batch, budget_left, len(unqueried))
        for p in acq.select_batch(scores, [], k):
            i = unqueried[p]
            queried[i] = float(truths[i])
        budget_left -= k
    idx = sorted(queried)
    dkl.set_training_data(model, genes[idx], [queried[i] for i in idx])
    dkl.train(model, iterations=refine_iters, lr=lr)
    means, variances = dkl.predict(model, genes)
    return model, queried, means, variances


def cmd_policy_acq(args) -> int:
    cfg = resolve_config(args)
    cfg_hash = config_hash(cfg)
    out = _ensure_outdir(cfg)
    genes, truths = read_snapshot(args.snapshot)
    n = genes.shape[0]
    init_count = max(2, round(args.init_fraction * n))
    init_idx = list(range(init_count))
    net_config = dkl.EmbeddingNetConfig(
        conv_filters=cfg["conv_filters"],
        kernel_width=cfg["kernel_width"],
        pool_factor=cfg["pool_factor"],
        dense_widths=tuple(cfg["dense_widths"]),
        embedding_dim=cfg["embedding_dim"],
        activation=cfg["activation"],
    )
    budget = cfg["query_budget"]
    if budget > n - init_count:
        raise acq.ExhaustedPoolError(
            f"budget {budget} exceeds the {n - init_count} unqueried snapshot rows"
        )
    kinds = [
        acq.AcquisitionKind.MEAN,
        acq.AcquisitionKind.UNCERTAINTY,
        acq.AcquisitionKind.UCB,
        acq.AcquisitionKind.EI,
        acq.AcquisitionKind.POI,
    ]
    summary_rows = []
    print(f"snapshot: {n} chromosomes, init {init_count}, budget {budget}")
    for kind in kinds:
        spec = acq.AcquisitionSpec(kind, xi=cfg["xi"] if kind.value == cfg["acquisition"] else None)
        for al_seed in range(args.seeds):
            model, queried, means, variances = _al_loop_on_table(
                genes,
                truths,
                init_idx,
                spec,
                budget,
                cfg["batch_size"],
                net_config,
                substream(cfg["master_seed"], f"acq-{kind.value}-s{al_seed}"),
                cfg["train_iters"],
                cfg["refine_iters"],
                cfg["lr"],
                cfg["kernel"],
            )
            rmse = float(np.sqrt(np.mean((means - truths) ** 2)))
            mean_std = float(np.sqrt(variances).mean())
            new_idx = [i for i in sorted(queried) if i not in init_idx]
            mean_truth_new = float(truths[new_idx].mean()) if new_idx else float("nan")
            summary_rows.append(
                (kind.value, al_seed, rmse, mean_std, mean_truth_new, float(max(queried.values())))
            )
            detail = out / f"policy_acq_{kind.value}_seed{al_seed}.csv"
            _write_csv(
                detail,
                _stamp(cfg_hash, cfg["master_seed"]),
                ["index", "truth", "pred_mean", "pred_var", "queried"],
                (
                    (i, float(truths[i]), float(means[i]), float(variances[i]), int(i in queried))
                    for i in range(n)
                ),
            )
            print(
                f"{kind.value:12s} seed {al_seed}: rmse {rmse:.4f} "
                f"mean-std {mean_std:.4f} mean-truth-of-queried {mean_truth_new:.4f}"
            )
    _write_csv(
        out / "policy_acq_summary.csv",
        _stamp(cfg_hash, cfg["master_seed"]),
        ["acquisition", "al_seed", "rmse", "mean_pred_std", "mean_truth_of_new_queries", "best_queried"],
        summary_rows,
    )
    write_manifest(
        out / "policy_acq_manifest.json",
        cfg,
        cfg_hash,
        {
            "command": "policy-acq",
            "snapshot": str(args.snapshot),
            "al_seeds": args.seeds,
            "init_count": init_count,
            "artifacts": ["policy_acq_summary.csv"],
        },
    )
    return 0


def cmd_policy_est(args) -> int:
    cfg = resolve_config(args)
    # the low-capacity study pins these unless explicitly overridden
    if args.filters is None:
        cfg["conv_filters"] = 32
    if args.batch is None:
        cfg["batch_size"] = 1
    if args.budget is None:
        cfg["query_budget"] = 10
    cfg_hash = config_hash(cfg)
    out = _ensure_outdir(cfg)
    curves = {}
    totals = {}
    for estimation in ("mean-only", "uncertainty-only", "thompson"):
        run_cfg = dict(cfg)
        run_cfg["estimation"] = estimation
        result = orc.run(build_run_config(run_cfg))
        totals[estimation] = result.total_queries
        curves[estimation] = [m.best_so_far for m in result.metrics]
        write_metrics_csv(out / f"metrics_{estimation}.csv", result, cfg_hash)
        for table in result.embeddings:
            write_embeddings_csv(
                out / f"embeddings_{estimation}_g{table.generation}.csv",
                table,
                cfg_hash,
                cfg["master_seed"],
            )
        print(
            f"{estimation:17s}: final best-so-far {curves[estimation][-1]:.4f} "
            f"({result.total_queries} queries)"
        )
    generations = len(next(iter(curves.values())))
    _write_csv(
        out / "policy_est_summary.csv",
        _stamp(cfg_hash, cfg["master_seed"]),
        ["generation", "best_mean_only", "best_uncertainty_only", "best_thompson"],
        (
            (
                g,
                curves["mean-only"][g],
                curves["uncertainty-only"][g],
                curves["thompson"][g],
            )
            for g in range(generations)
        ),
    )
    write_manifest(
        out / "policy_est_manifest.json",
        cfg,
        cfg_hash,
        {
            "command": "policy-est",
            "total_queries": totals,
            "final_best_so_far": {k: v[-1] for k, v in curves.items()},
            "artifacts": ["policy_est_summary.csv"]
            + [f"metrics_{e}.csv" for e in curves],
        },
    )
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    run_config = build_run_config(cfg)
    if args.zero_disorder:
        disorder = ferrosim.DisorderField.zeros(run_config.lattice.n)
    else:
        disorder = ferrosim.generate_disorder(
            run_config.disorder_seed,
            run_config.lattice,
            fraction=run_config.disorder_fraction,
            magnitude=run_config.disorder_magnitude,
        )
    try:
        with open(args.input, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read input {args.input}: {exc}")
    if not rows:
        raise ConfigError(f"{args.input} holds no rows")
    if rows and rows[0] and not _is_number(rows[0][-1]):
        gene0 = rows[0].index("g0") if "g0" in rows[0] else None
        if gene0 is None:
            raise ConfigError("header row present but no g0 column found")
        rows = [(row[gene0 : gene0 + waveform.GENE_COUNT]) for row in rows[1:]]
    histories = []
    for row_i, fields in enumerate(rows):
        if len(fields) > waveform.GENE_COUNT:
            fields = fields[-waveform.GENE_COUNT :]
        genes = waveform.parse_gene_fields(list(fields), row_index=row_i)
        schedule = waveform.to_physical(genes, run_config.field_scale)
        if args.history:
            state, history = ferrosim.simulate(
                schedule, disorder, run_config.lattice, record=True
            )
            histories.append(history)
        else:
            state = ferrosim.simulate(schedule, disorder, run_config.lattice)
        print(f"row {row_i}: fitness {ferrosim.curl_fitness(state)!r}")
    if args.history:
        out_path = Path(args.history)
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "timestep", "mean_px", "mean_py"])
            for row_i, history in enumerate(histories):
                for t in range(history.shape[0]):
                    writer.writerow(
                        [row_i, t, repr(float(history[t, 0])), repr(float(history[t, 1]))]
                    )
        print(f"wrote polarization history to {out_path}")
    return 0


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


# --- argument parsing ------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    parser.add_argument("--small", action="store_true",
                        help="desk-scale profile: pop 200, 10 generations, budget 20")
    parser.add_argument("--master-seed", dest="master_seed", type=int)
    parser.add_argument("--disorder-seed", dest="disorder_seed", type=int)
    parser.add_argument("--generations", type=int)
    parser.add_argument("--population", type=int)
    parser.add_argument("--budget", type=int)
    parser.add_argument("--batch", type=int)
    parser.add_argument("--acquisition",
                        choices=[k.value for k in acq.AcquisitionKind])
    parser.add_argument("--xi", type=float)
    parser.add_argument("--estimation",
                        choices=[e.value for e in orc.Estimation])
    parser.add_argument("--filters", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--field-scale", dest="field_scale", type=float)
    parser.add_argument("--output", "-o", help="output directory")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ferroga",
        description="Surrogate-accelerated genetic optimization of lattice field trajectories",
    )
    parser.add_argument("--version", action="version", version=f"ferroga {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="full evolution run")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_snap = sub.add_parser("snapshot", help="exhaustively evaluate one generation")
    _add_common(p_snap)
    p_snap.add_argument("--evolve", type=int, default=0,
                        help="fully-evaluated GA steps before the snapshot")
    p_snap.set_defaults(func=cmd_snapshot)

    p_acq = sub.add_parser("policy-acq", help="acquisition study on a snapshot")
    _add_common(p_acq)
    p_acq.add_argument("--snapshot", required=True, help="snapshot.csv to replay")
    p_acq.add_argument("--seeds", type=int, default=5, help="AL seeds per acquisition")
    p_acq.add_argument("--init-fraction", dest="init_fraction", type=float, default=0.15,
                       help="leading snapshot fraction used as the free initial truths")
    p_acq.set_defaults(func=cmd_policy_acq)

    p_est = sub.add_parser("policy-est", help="estimation-policy study (low capacity)")
    _add_common(p_est)
    p_est.set_defaults(func=cmd_policy_est)

    p_eval = sub.add_parser("eval", help="evaluate chromosome CSV rows")
    _add_common(p_eval)
    p_eval.add_argument("--input", required=True, help="CSV of 900-gene rows")
    p_eval.add_argument("--zero-disorder", action="store_true")
    p_eval.add_argument("--history", help="write per-step mean polarization CSV here")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, waveform.DegenerateCurveError, acq.ExhaustedPoolError,
            acq.MissingIncumbentError, genetic.AllZeroFitnessError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ferrosim.NonFiniteError, dkl.IllConditionedError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
