"""End-to-end acceptance gate.

Eight independent checks, one test function (and one pass/fail line under
``pytest -v``) per criterion:

1. simulator force/energy/curl oracles,
2. crossover/mutation/elitism operator algebra,
3. surrogate likelihood/posterior against dense linear-algebra oracles,
4. the small profile improves queried fitness over the run,
5. acquisition comparison on one exhaustively evaluated snapshot,
6. estimation-policy comparison at desk scale,
7. byte-identical artifacts across reruns and worker counts,
8. exact ground-truth query accounting.

Criteria 4-6 retrain surrogates inside full optimization loops and
together need several CPU-minutes. Each test prints one ``criterion N
[PASS|FAIL]`` line with the measured numbers (visible with ``-s``, or in
the captured output when a test fails). Only criterion 1 asserts on its
own runtime; the long studies print elapsed time without failing on a
slow machine.
"""

import csv
import json
import math
import time

import numpy as np
import pytest
import torch

from ferroga import acquisition as acq
from ferroga import dkl
from ferroga import expcli
from ferroga import ferrosim as fs
from ferroga import genetic as ga
from ferroga import orchestrator as orc
from ferroga import waveform as wf
from ferroga.seeds import substream


def _verdict(num: int, label: str, ok: bool, detail: str) -> None:
    print(f"criterion {num} [{'PASS' if ok else 'FAIL'}] {label}: {detail}")
    assert ok, f"criterion {num} failed ({label}): {detail}"


def read_rows(path):
    with open(path, newline="") as fh:
        return [r for r in csv.reader(fh) if r and not r[0].startswith("#")]


# --- criterion 1: simulator ---------------------------------------------------

def finite_difference_force(state, e_ext, disorder, config, eps=1e-6):
    e_dep = fs.depolarization_field(state, config)
    out = np.zeros((config.n, config.n, 2))
    for i in range(config.n):
        for j in range(config.n):
            for c in range(2):
                plus = state.copy()
                minus = state.copy()
                (plus.px if c == 0 else plus.py)[i, j] += eps
                (minus.px if c == 0 else minus.py)[i, j] -= eps
                f_plus = fs.total_free_energy(plus, e_ext, disorder, config, frozen_e_dep=e_dep)
                f_minus = fs.total_free_energy(minus, e_ext, disorder, config, frozen_e_dep=e_dep)
                out[i, j, c] = -(f_plus - f_minus) / (2 * eps)
    return out


def vortex_state(n=20):
    # px = -(j - c), py = +(i - c): discrete curl is exactly 2 everywhere
    i_idx, j_idx = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    c = (n - 1) / 2
    return fs.LatticeState(px=-(j_idx - c).astype(float), py=(i_idx - c).astype(float))


def test_criterion_1_simulator_force_energy_and_curl():
    t0 = time.perf_counter()
    rng = substream(2026, "acceptance-sim")

    # analytic force vs central finite differences of the frozen-field energy
    cfg6 = fs.LatticeConfig(n=6)
    dis6 = fs.generate_disorder(11, cfg6)
    worst_rel = 0.0
    for _ in range(100):
        state = fs.LatticeState(px=rng.uniform(-1, 1, (6, 6)), py=rng.uniform(-1, 1, (6, 6)))
        e_ext = float(rng.uniform(-1, 1))
        analytic = fs.force(state, e_ext, dis6, cfg6)
        numeric = finite_difference_force(state, e_ext, dis6, cfg6)
        rel = float(np.abs(analytic - numeric).max() / max(1.0, np.abs(analytic).max()))
        worst_rel = max(worst_rel, rel)
    force_ok = worst_rel < 1e-5

    # relaxation never raises the frozen-field energy under a constant drive
    cfg20 = fs.LatticeConfig()
    dis20 = fs.generate_disorder(0, cfg20)
    state = fs.LatticeState.zeros(20)
    worst_rise = -math.inf
    for _ in range(300):
        e_dep = fs.depolarization_field(state, cfg20)
        before = fs.total_free_energy(state, 0.7, dis20, cfg20, frozen_e_dep=e_dep)
        state = fs.step(state, 0.7, dis20, cfg20)
        after = fs.total_free_energy(state, 0.7, dis20, cfg20, frozen_e_dep=e_dep)
        worst_rise = max(worst_rise, after - before)
    descent_ok = worst_rise <= 1e-9

    # curl oracles: uniform field exactly zero, unit-curl vortex on n=20
    uniform = fs.LatticeState(px=np.full((20, 20), 0.7), py=np.full((20, 20), -0.3))
    uniform_curl = fs.curl_fitness(uniform)
    vortex_err = abs(fs.curl_fitness(vortex_state(20)) - 2 * 18**2)
    curl_ok = uniform_curl == 0.0 and vortex_err < 1e-9

    elapsed = time.perf_counter() - t0
    time_ok = elapsed < 10.0
    _verdict(
        1,
        "simulator force/energy/curl",
        force_ok and descent_ok and curl_ok and time_ok,
        f"max force rel err {worst_rel:.2e}; max energy rise {worst_rise:.2e}; "
        f"uniform curl {uniform_curl}; vortex err {vortex_err:.2e}; {elapsed:.1f}s (<10s)",
    )


# --- criterion 2: GA operator algebra ----------------------------------------

def test_criterion_2_crossover_mutation_elitism_algebra():
    rng = substream(2026, "acceptance-ga")

    # crossover: exact elementwise sum conservation and closure in [-1, 1]
    # over 1000 random pairs; conservation is checked in the rearranged
    # complement form, which is the bit-exact statement of the identity
    conserve_ok = True
    range_ok = True
    for i in range(1000):
        p1 = wf.Chromosome(wf.normalize(wf.render(wf.sample_params(rng))), id=2 * i)
        p2 = wf.Chromosome(wf.normalize(wf.render(wf.sample_params(rng))), id=2 * i + 1)
        c1, c2 = ga.crossover(p1, p2, float(rng.uniform()))
        if not np.array_equal(c2.genes, (p1.genes + p2.genes) - c1.genes):
            conserve_ok = False
        if not np.allclose(c1.genes + c2.genes, p1.genes + p2.genes, rtol=0.0, atol=1e-15):
            conserve_ok = False
        for c in (c1, c2):
            if c.genes.min() < -1.0 or c.genes.max() > 1.0:
                range_ok = False

    # mutation: before renormalization the child differs from the parent by
    # exactly the signed weighted Gaussian pdf (Clip renorm with enough
    # headroom that it never engages)
    clip_cfg = ga.GAConfig(renorm=ga.Renorm.CLIP)
    parent = wf.Chromosome(0.3 * wf.normalize(wf.render(wf.sample_params(rng))), id=0)
    k = np.arange(wf.GENE_COUNT, dtype=float)
    worst_bump = 0.0
    for mu, sig, w, sign in [(300.0, 80.0, 10.0, -1), (450.0, 150.0, 30.0, 1), (120.0, 55.0, 12.0, 1)]:
        params = ga.MutationParams(mu_star=mu, sigma_star=sig, weight=w, sign=sign)
        child = ga.mutate(parent, params, clip_cfg)
        expected = sign * w * np.exp(-((k - mu) ** 2) / (2 * sig**2)) / (sig * math.sqrt(2 * math.pi))
        worst_bump = max(worst_bump, float(np.abs((child.genes - parent.genes) - expected).max()))
    bump_ok = worst_bump < 1e-12

    # elitism: across a 5-generation run every elite appears verbatim
    evolve_rng = substream(2026, "acceptance-evolve")
    pop = [
        wf.Chromosome(wf.normalize(wf.render(wf.sample_params(evolve_rng))), id=i)
        for i in range(30)
    ]
    cfg = ga.GAConfig(population_size=30)
    next_id = 30
    elitism_ok = True
    for _ in range(5):
        fitness = evolve_rng.uniform(0.1, 5.0, 30)
        expected_elites = ga.carryover(pop, fitness, cfg.carryover_fraction)
        out = ga.next_generation(pop, lambda: fitness, cfg, evolve_rng, id_start=next_id)
        for want, got in zip(expected_elites, out[: len(expected_elites)]):
            if want.id != got.id or not np.array_equal(want.genes, got.genes):
                elitism_ok = False
        next_id += 30 - len(expected_elites)
        pop = out

    _verdict(
        2,
        "crossover/mutation/elitism algebra",
        conserve_ok and range_ok and bump_ok and elitism_ok,
        f"1000 pairs conserve exactly: {conserve_ok}; range closed: {range_ok}; "
        f"max bump deviation {worst_bump:.2e}; 5-generation elites verbatim: {elitism_ok}",
    )


# --- criterion 3: surrogate against dense oracles -----------------------------

def set_hypers(model, lengthscale, output_scale, noise, mean):
    with torch.no_grad():
        model.raw_lengthscale.fill_(math.log(lengthscale))
        model.raw_outputscale.fill_(math.log(output_scale))
        model.raw_noise.fill_(math.log(noise - dkl.NOISE_FLOOR))
        model.const_mean.fill_(mean)
    model.invalidate()


def dense_kernel(z1, z2, hp):
    d2 = ((z1[:, None, :] - z2[None, :, :]) ** 2).sum(axis=2)
    return hp.output_scale * np.exp(-0.5 * d2 / hp.lengthscale**2)


def dense_lml(model):
    hp = model.hyperparams()
    z = model.net(model.train_x).detach().numpy()
    m = z.shape[0]
    K = dense_kernel(z, z, hp) + hp.noise_variance * np.eye(m)
    resid = model.train_y.numpy() - hp.mean
    _, logdet = np.linalg.slogdet(K)
    return (
        -0.5 * resid @ np.linalg.solve(K, resid)
        - 0.5 * logdet
        - 0.5 * m * math.log(2 * math.pi)
    )


def dense_posterior(model, genes):
    hp = model.hyperparams()
    z = model.net(model.train_x).detach().numpy()
    zc = model.net(torch.from_numpy(np.asarray(genes, dtype=float))).detach().numpy()
    m = z.shape[0]
    K = dense_kernel(z, z, hp) + hp.noise_variance * np.eye(m)
    ks = dense_kernel(zc, z, hp)
    resid = model.train_y.numpy() - hp.mean
    mean_std = hp.mean + ks @ np.linalg.solve(K, resid)
    var_std = hp.output_scale - np.sum(ks * np.linalg.solve(K, ks.T).T, axis=1)
    means = model.y_mean + model.y_std * mean_std
    variances = model.y_std**2 * np.clip(var_std, 0.0, None)
    return means, variances


def test_criterion_3_surrogate_matches_dense_oracles():
    rng = substream(2026, "acceptance-dkl")

    # likelihood and posterior vs brute-force numpy on 5 random 10-point sets
    worst_lml = 0.0
    worst_post = 0.0
    for trial in range(5):
        cfg = dkl.EmbeddingNetConfig(conv_filters=4, dense_widths=(16,), init_seed=trial)
        model = dkl.DKLModel(cfg)
        genes = rng.uniform(-1.0, 1.0, (10, 900))
        targets = rng.uniform(0.0, 30.0, 10)
        dkl.set_training_data(model, genes, targets)
        set_hypers(model, lengthscale=0.5 + 0.2 * trial, output_scale=1.2,
                   noise=0.03, mean=0.1 * trial)
        got = dkl.log_marginal_likelihood(model)
        want = dense_lml(model)
        worst_lml = max(worst_lml, abs(got - want) / abs(want))
        probe = rng.uniform(-1.0, 1.0, (6, 900))
        means, variances = dkl.predict(model, probe)
        want_m, want_v = dense_posterior(model, probe)
        worst_post = max(
            worst_post,
            float(np.abs(means - want_m).max() / max(np.abs(want_m).max(), 1e-10)),
            float(np.abs(variances - want_v).max() / max(np.abs(want_v).max(), 1e-10)),
        )
    oracle_ok = worst_lml < 1e-8 and worst_post < 1e-8

    # training gradients vs central finite differences (tanh keeps the
    # objective smooth enough for second-order-accurate differences)
    cfg = dkl.EmbeddingNetConfig(conv_filters=2, dense_widths=(8,),
                                 activation="tanh", init_seed=3)
    model = dkl.DKLModel(cfg)
    genes = rng.uniform(-1.0, 1.0, (8, 900))
    dkl.set_training_data(model, genes, rng.uniform(0, 20, 8))
    params = model.parameters()
    for p in params:
        p.grad = None
    lml = dkl._lml_tensor(model)
    lml.backward()
    h = 1e-5
    checked = 0
    worst_grad = 0.0
    for p in params:
        flat = p.detach().reshape(-1)
        gflat = p.grad.reshape(-1)
        idxs = range(flat.numel()) if flat.numel() <= 4 else [
            int(i) for i in rng.choice(flat.numel(), 3, replace=False)
        ]
        for i in idxs:
            if abs(float(gflat[i])) < 1e-4:
                continue
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + h
            model.invalidate()
            up = dkl.log_marginal_likelihood(model)
            with torch.no_grad():
                flat[i] = orig - h
            model.invalidate()
            dn = dkl.log_marginal_likelihood(model)
            with torch.no_grad():
                flat[i] = orig
            model.invalidate()
            fd = (up - dn) / (2 * h)
            worst_grad = max(worst_grad, abs(fd - float(gflat[i])) / max(abs(fd), 1e-8))
            checked += 1
    grad_ok = worst_grad < 1e-3 and checked >= 10

    # conditioning on extra data never inflates predictive variance
    monotone_ok = True
    for trial in range(10):
        cfg = dkl.EmbeddingNetConfig(conv_filters=4, dense_widths=(16,), init_seed=trial)
        model = dkl.DKLModel(cfg)
        genes = rng.uniform(-1.0, 1.0, (13, 900))
        targets = rng.uniform(0, 20, 13)
        probe = rng.uniform(-1.0, 1.0, (5, 900))
        dkl.set_training_data(model, genes[:12], targets[:12], standardize=False)
        set_hypers(model, lengthscale=0.8, output_scale=1.0, noise=0.01, mean=0.0)
        _, var_small = dkl.predict(model, probe)
        dkl.set_training_data(model, genes, targets, standardize=False)
        set_hypers(model, lengthscale=0.8, output_scale=1.0, noise=0.01, mean=0.0)
        _, var_big = dkl.predict(model, probe)
        if not (var_big <= var_small + 1e-9).all():
            monotone_ok = False

    _verdict(
        3,
        "surrogate vs dense oracles",
        oracle_ok and grad_ok and monotone_ok,
        f"worst LML rel err {worst_lml:.2e}; worst posterior rel err {worst_post:.2e}; "
        f"worst gradient rel err {worst_grad:.2e} over {checked} entries; "
        f"variance monotone on 10 sets: {monotone_ok}",
    )


# --- criterion 4: the small profile improves fitness --------------------------

def test_criterion_4_small_run_improves_median_fitness(tmp_path):
    t0 = time.perf_counter()
    per_seed = []
    details = []
    for seed in (0, 1, 2):
        out = tmp_path / f"small{seed}"
        code = expcli.main([
            "run", "--small", "--master-seed", str(seed), "--workers", "1",
            "-o", str(out),
        ])
        assert code == 0
        rows = read_rows(out / "metrics.csv")
        header, data = rows[0], rows[1:]
        assert len(data) == 11  # generations 0..10
        med = header.index("median_truth")
        bsf = header.index("best_so_far")
        med0, med10 = float(data[0][med]), float(data[-1][med])
        curve = [float(r[bsf]) for r in data]
        monotone = all(b >= a for a, b in zip(curve, curve[1:]))
        per_seed.append(med10 > med0 and monotone)
        details.append(
            f"seed {seed}: median {med0:.2f}->{med10:.2f}, best-so-far "
            f"{curve[0]:.2f}->{curve[-1]:.2f} monotone={monotone}"
        )
    elapsed = time.perf_counter() - t0
    _verdict(
        4,
        "small-profile improvement (need >=2 of 3 seeds)",
        sum(per_seed) >= 2,
        "; ".join(details) + f"; {elapsed:.0f}s",
    )


# --- criterion 5: acquisition comparison on one snapshot ----------------------

def test_criterion_5_acquisition_comparison_on_snapshot():
    t0 = time.perf_counter()
    lattice = fs.LatticeConfig()
    disorder = fs.generate_disorder(0, lattice)
    ctx = orc.EvalContext(lattice, disorder)
    pop = wf.seed_population(substream(0, "population"), 200)
    genes = np.stack([c.genes for c in pop])
    truths = orc.evaluate_batch(pop, ctx)

    net = dkl.EmbeddingNetConfig(conv_filters=32)
    init_idx = list(range(30))
    mean_rmse = {}
    mean_truth_new = {}
    for kind in (acq.AcquisitionKind.UCB, acq.AcquisitionKind.MEAN,
                 acq.AcquisitionKind.UNCERTAINTY):
        spec = acq.AcquisitionSpec(kind)
        rmses, new_truths = [], []
        for s in range(5):
            _, queried, means, _ = expcli._al_loop_on_table(
                genes, truths, init_idx, spec, 30, 10, net,
                substream(0, f"acq-{kind.value}-s{s}"), 120, 30, 0.01, "rbf",
            )
            rmses.append(float(np.sqrt(np.mean((means - truths) ** 2))))
            new = [i for i in sorted(queried) if i not in init_idx]
            new_truths.append(float(truths[new].mean()))
        mean_rmse[kind.value] = float(np.mean(rmses))
        mean_truth_new[kind.value] = float(np.mean(new_truths))

    rmse_ok = mean_rmse["ucb"] < mean_rmse["mean"]
    exploit_ok = mean_truth_new["mean"] > mean_truth_new["uncertainty"]
    elapsed = time.perf_counter() - t0
    _verdict(
        5,
        "acquisition comparison (5 seeds, budget 30, batch 10)",
        rmse_ok and exploit_ok,
        f"mean RMSE ucb {mean_rmse['ucb']:.3f} < mean-only {mean_rmse['mean']:.3f}: {rmse_ok}; "
        f"new-query truth mean-only {mean_truth_new['mean']:.2f} > "
        f"uncertainty {mean_truth_new['uncertainty']:.2f}: {exploit_ok}; {elapsed:.0f}s",
    )


# --- criterion 6: estimation-policy comparison --------------------------------

def test_criterion_6_estimation_policy_comparison():
    t0 = time.perf_counter()
    finals = {}
    for est in orc.Estimation:
        finals[est.value] = []
        for seed in range(3):
            cfg = orc.RunConfig(
                ga=ga.GAConfig(population_size=100),
                net=dkl.EmbeddingNetConfig(conv_filters=32),
                policy=orc.PolicyConfig(estimation=est, batch_size=1, query_budget=10),
                master_seed=seed,
                generations=4,
                train_iters=120,
                refine_iters=30,
            )
            finals[est.value].append(orc.run(cfg).best_fitness)
    means = {k: float(np.mean(v)) for k, v in finals.items()}
    unc = means["uncertainty-only"]
    best_other = max(means["mean-only"], means["thompson"])
    elapsed = time.perf_counter() - t0
    _verdict(
        6,
        "estimation policies (3 seeds each, batch 1, budget 10, 32 filters)",
        unc <= best_other,
        f"mean final best: mean-only {means['mean-only']:.2f}, "
        f"uncertainty-only {unc:.2f}, thompson {means['thompson']:.2f}; "
        f"uncertainty <= max(others): {unc <= best_other}; {elapsed:.0f}s",
    )


# --- criterion 7: byte-identical determinism -----------------------------------

TOY = [
    "--set", "population_size=12",
    "--set", "n=8",
    "--set", "conv_filters=4",
    "--set", "dense_widths=[16]",
    "--set", "train_iters=20",
    "--set", "refine_iters=6",
    "--generations", "1",
    "--budget", "3",
    "--batch", "1",
]


def test_criterion_7_byte_identical_reruns_and_workers(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert expcli.main(["run", *TOY, "--workers", "1", "-o", str(a)]) == 0
    assert expcli.main(["run", *TOY, "--workers", "1", "-o", str(b)]) == 0
    assert expcli.main(["run", *TOY, "--workers", "8", "-o", str(c)]) == 0
    rerun_ok = (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    workers_ok = (a / "metrics.csv").read_bytes() == (c / "metrics.csv").read_bytes()
    queried_ok = (
        (a / "queried.csv").read_bytes() == (b / "queried.csv").read_bytes()
        and (a / "queried.csv").read_bytes() == (c / "queried.csv").read_bytes()
    )
    _verdict(
        7,
        "byte-identical metrics.csv",
        rerun_ok and workers_ok and queried_ok,
        f"rerun identical: {rerun_ok}; workers 1 vs 8 identical: {workers_ok}; "
        f"queried.csv identical: {queried_ok}",
    )


# --- criterion 8: exact query accounting ---------------------------------------

def test_criterion_8_exact_query_budget_accounting(tmp_path):
    out = tmp_path / "budget"
    code = expcli.main([
        "run",
        "--set", "population_size=50",
        "--set", "n=8",
        "--set", "conv_filters=4",
        "--set", "dense_widths=[16]",
        "--set", "train_iters=40",
        "--set", "refine_iters=10",
        "--generations", "4",  # 5 explored generations
        "--budget", "20",
        "--batch", "10",
        "--workers", "1",
        "-o", str(out),
    ])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    per_gen = [g["new_queries"] for g in manifest["per_generation"]]
    bootstrap = per_gen[0] - 20
    total = manifest["total_queries"]
    explored_ok = manifest["generations_explored"] == 5
    shape_ok = per_gen == [20 + bootstrap] + [20] * 4 and bootstrap == 2
    total_ok = total == 5 * 20 + bootstrap and total == sum(per_gen)
    _verdict(
        8,
        "query accounting (5 explored generations, budget 20)",
        explored_ok and shape_ok and total_ok,
        f"per-generation new queries {per_gen}; bootstrap {bootstrap}; "
        f"manifest total {total} == 5*20+{bootstrap}: {total_ok}",
    )
