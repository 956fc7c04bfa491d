"""Deep-kernel surrogate for trajectory fitness.

A small 1-D convolutional network maps a 900-gene chromosome to a
low-dimensional embedding; an exact Gaussian process with an RBF kernel
over that embedding supplies predictive means, variances, and joint
posterior samples. Network weights and GP hyperparameters are trained
jointly by gradient ascent on the exact log marginal likelihood.

Everything runs in float64: the gradient-vs-finite-difference and
dense-oracle tests that anchor this module need the headroom.
"""

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
import torch

from .waveform import GENE_COUNT, Chromosome

NOISE_FLOOR = 1e-6
JITTERS = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


class IllConditionedError(RuntimeError):
    """Kernel factorization failed even at the maximum jitter."""


@dataclass(frozen=True)
class EmbeddingNetConfig:
    """Shape of the feature extractor: conv -> pool -> dense stack."""

    conv_filters: int = 128
    kernel_width: int = 5
    pool_factor: int = 4
    dense_widths: tuple[int, ...] = (64,)
    embedding_dim: int = 2
    activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        if self.conv_filters < 1:
            raise ValueError(f"conv_filters must be >= 1, got {self.conv_filters}")
        if self.embedding_dim < 1:
            raise ValueError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unsupported activation: {self.activation}")
        object.__setattr__(self, "dense_widths", tuple(self.dense_widths))


@dataclass(frozen=True)
class GPHyperparams:
    """Snapshot of the GP hyperparameters in constrained (positive) form."""

    lengthscale: float
    output_scale: float
    noise_variance: float
    mean: float


class EmbeddingNet(torch.nn.Module):
    def __init__(self, config: EmbeddingNetConfig):
        super().__init__()
        self.config = config
        act = torch.nn.ReLU if config.activation == "relu" else torch.nn.Tanh
        conv_len = GENE_COUNT - config.kernel_width + 1  # valid convolution
        pooled_len = conv_len // config.pool_factor
        layers = [
            torch.nn.Conv1d(1, config.conv_filters, config.kernel_width),
            act(),
            torch.nn.AvgPool1d(config.pool_factor),
            torch.nn.Flatten(),
        ]
        width = config.conv_filters * pooled_len
        for dense in config.dense_widths:
            layers += [torch.nn.Linear(width, dense), act()]
            width = dense
        layers.append(torch.nn.Linear(width, config.embedding_dim))
        self.stack = torch.nn.Sequential(*layers)
        self.double()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.stack(x.unsqueeze(1))


def _init_weights(net: EmbeddingNet, rng: np.random.Generator) -> None:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init drawn from a numpy
    generator, so model construction is seeded independently of torch's
    global RNG state."""
    for module in net.stack:
        if isinstance(module, torch.nn.Conv1d):
            fan_in = module.in_channels * module.kernel_size[0]
        elif isinstance(module, torch.nn.Linear):
            fan_in = module.in_features
        else:
            continue
        bound = 1.0 / math.sqrt(fan_in)
        with torch.no_grad():
            for tensor in (module.weight, module.bias):
                tensor.copy_(
                    torch.from_numpy(rng.uniform(-bound, bound, tensor.shape))
                )


def _genes_matrix(candidates) -> np.ndarray:
    """Accept a Chromosome, a list of them, or a raw (n, 900) array."""
    if isinstance(candidates, Chromosome):
        return candidates.genes[None, :]
    if isinstance(candidates, (list, tuple)) and candidates and isinstance(candidates[0], Chromosome):
        return np.stack([c.genes for c in candidates])
    genes = np.asarray(candidates, dtype=float)
    if genes.ndim == 1:
        genes = genes[None, :]
    if genes.ndim != 2 or genes.shape[1] != GENE_COUNT:
        raise ValueError(f"candidates must be (n, {GENE_COUNT}), got {genes.shape}")
    return genes


class DKLModel:
    """Feature net + exact GP, plus training data and a cached factorization.

    The cache (train embeddings, Cholesky factor, weighted residuals) is
    dropped whenever weights, hyperparameters, or data change and rebuilt
    lazily on the next prediction.
    """

    def __init__(
        self,
        net_config: EmbeddingNetConfig = EmbeddingNetConfig(),
        rng: np.random.Generator | None = None,
        kernel: str = "rbf",
    ):
        if kernel not in ("rbf", "matern52"):
            raise ValueError(f"unsupported kernel: {kernel}")
        self.net_config = net_config
        self.kernel = kernel
        self.net = EmbeddingNet(net_config)
        if rng is None:
            rng = np.random.default_rng(net_config.init_seed)
        _init_weights(self.net, rng)
        self.raw_lengthscale = torch.tensor(0.0, dtype=torch.float64, requires_grad=True)
        self.raw_outputscale = torch.tensor(0.0, dtype=torch.float64, requires_grad=True)
        self.raw_noise = torch.tensor(
            math.log(1e-2), dtype=torch.float64, requires_grad=True
        )
        self.const_mean = torch.tensor(0.0, dtype=torch.float64, requires_grad=True)
        self.train_x: torch.Tensor | None = None
        self.train_y: torch.Tensor | None = None  # standardized
        self.y_mean = 0.0
        self.y_std = 1.0
        self._cache = None

    # constrained hyperparameter views
    def lengthscale(self) -> torch.Tensor:
        return torch.exp(self.raw_lengthscale)

    def outputscale(self) -> torch.Tensor:
        return torch.exp(self.raw_outputscale)

    def noise(self) -> torch.Tensor:
        return NOISE_FLOOR + torch.exp(self.raw_noise)

    def hyperparams(self) -> GPHyperparams:
        with torch.no_grad():
            return GPHyperparams(
                lengthscale=float(self.lengthscale()),
                output_scale=float(self.outputscale()),
                noise_variance=float(self.noise()),
                mean=float(self.const_mean),
            )

    def parameters(self) -> list[torch.Tensor]:
        return list(self.net.parameters()) + [
            self.raw_lengthscale,
            self.raw_outputscale,
            self.raw_noise,
            self.const_mean,
        ]

    def config_hash(self) -> str:
        text = json.dumps(
            {
                "net": {
                    "conv_filters": self.net_config.conv_filters,
                    "kernel_width": self.net_config.kernel_width,
                    "pool_factor": self.net_config.pool_factor,
                    "dense_widths": list(self.net_config.dense_widths),
                    "embedding_dim": self.net_config.embedding_dim,
                    "activation": self.net_config.activation,
                },
                "kernel": self.kernel,
            },
            sort_keys=True,
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def invalidate(self) -> None:
        self._cache = None


def set_training_data(model: DKLModel, candidates, targets, standardize: bool = True) -> None:
    """Install the training set, standardizing targets to zero mean / unit
    variance (a degenerate spread keeps std at 1 so targets pass through
    centered only)."""
    genes = _genes_matrix(candidates)
    targets = np.asarray(targets, dtype=float).ravel()
    if genes.shape[0] != targets.size:
        raise ValueError(f"{genes.shape[0]} inputs but {targets.size} targets")
    if standardize:
        model.y_mean = float(targets.mean())
        std = float(targets.std())
        model.y_std = std if std >= 1e-12 else 1.0
    else:
        model.y_mean = 0.0
        model.y_std = 1.0
    model.train_x = torch.from_numpy(genes.copy())
    model.train_y = torch.from_numpy((targets - model.y_mean) / model.y_std)
    model.invalidate()


def _sq_dists(z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
    # explicit expansion keeps gradients finite at zero distance (no sqrt)
    d2 = (
        (z1**2).sum(dim=1, keepdim=True)
        + (z2**2).sum(dim=1)
        - 2.0 * z1 @ z2.T
    )
    return d2.clamp_min(0.0)


def _kernel_matrix(model: DKLModel, z1: torch.Tensor, z2: torch.Tensor) -> torch.Tensor:
    d2 = _sq_dists(z1, z2)
    ls = model.lengthscale()
    if model.kernel == "rbf":
        return model.outputscale() * torch.exp(-0.5 * d2 / ls**2)
    r = torch.sqrt(d2 + 1e-30)
    s = math.sqrt(5.0) * r / ls
    return model.outputscale() * (1.0 + s + s**2 / 3.0) * torch.exp(-s)


def _cholesky_with_jitter(K: torch.Tensor) -> torch.Tensor:
    try:
        return torch.linalg.cholesky(K)
    except RuntimeError:
        pass
    eye = torch.eye(K.shape[0], dtype=K.dtype)
    for jitter in JITTERS:
        try:
            return torch.linalg.cholesky(K + jitter * eye)
        except RuntimeError:
            continue
    raise IllConditionedError(
        f"kernel matrix of size {K.shape[0]} not factorizable at jitter {JITTERS[-1]}"
    )


def _lml_tensor(model: DKLModel) -> torch.Tensor:
    if model.train_x is None or model.train_x.shape[0] < 1:
        raise ValueError("model has no training data")
    m = model.train_x.shape[0]
    z = model.net(model.train_x)
    K = _kernel_matrix(model, z, z) + model.noise() * torch.eye(m, dtype=torch.float64)
    L = _cholesky_with_jitter(K)
    resid = (model.train_y - model.const_mean).unsqueeze(-1)
    alpha = torch.cholesky_solve(resid, L)
    return (
        -0.5 * (resid * alpha).sum()
        - L.diagonal().log().sum()
        - 0.5 * m * math.log(2.0 * math.pi)
    )


def log_marginal_likelihood(model: DKLModel) -> float:
    """Exact-GP log marginal likelihood of the standardized training set."""
    with torch.no_grad():
        return float(_lml_tensor(model))


def train(model: DKLModel, iterations: int = 200, lr: float = 0.01) -> DKLModel:
    """Joint gradient ascent on the LML over net weights and hypers.

    Runs a fixed iteration count and restores the best iterate seen, so the
    returned model's LML never falls below the starting point.
    """
    if model.train_x is None or model.train_x.shape[0] < 2:
        raise ValueError("training requires at least 2 data points")
    params = model.parameters()
    opt = torch.optim.Adam(params, lr=lr)
    best_lml = -math.inf
    best_state = None
    for _ in range(iterations):
        opt.zero_grad()
        lml = _lml_tensor(model)
        lml_value = float(lml.detach())
        if lml_value > best_lml:
            best_lml = lml_value
            best_state = [p.detach().clone() for p in params]
        (-lml).backward()
        opt.step()
    final_lml = log_marginal_likelihood(model)
    if final_lml < best_lml and best_state is not None:
        with torch.no_grad():
            for p, saved in zip(params, best_state):
                p.copy_(saved)
    model.invalidate()
    return model


def embed(model: DKLModel, candidates) -> np.ndarray:
    """Deterministic forward pass to embedding space; (n, d) or (d,) for a
    single chromosome."""
    single = isinstance(candidates, Chromosome) or (
        not isinstance(candidates, (list, tuple))
        and np.asarray(candidates).ndim == 1
    )
    genes = _genes_matrix(candidates)
    with torch.no_grad():
        z = model.net(torch.from_numpy(genes)).numpy()
    return z[0] if single else z


def _factorization(model: DKLModel):
    if model._cache is None:
        if model.train_x is None:
            raise ValueError("model has no training data")
        with torch.no_grad():
            m = model.train_x.shape[0]
            z = model.net(model.train_x)
            K = _kernel_matrix(model, z, z) + model.noise() * torch.eye(
                m, dtype=torch.float64
            )
            L = _cholesky_with_jitter(K)
            resid = (model.train_y - model.const_mean).unsqueeze(-1)
            alpha = torch.cholesky_solve(resid, L)
        model._cache = (z, L, alpha)
    return model._cache


def predict(model: DKLModel, candidates, full_cov: bool = False):
    """GP posterior at candidate chromosomes, de-standardized to raw
    fitness units. Returns (means, variances) or (means, variances,
    covariance) with ``full_cov``.

    Variances are of the latent function (no observation noise) and are
    clamped at 0; a pre-clamp value below -1e-6 signals a numerically
    broken factorization and raises instead of being hidden.
    """
    genes = _genes_matrix(candidates)
    z_train, L, alpha = _factorization(model)
    with torch.no_grad():
        zc = model.net(torch.from_numpy(genes))
        k_star = _kernel_matrix(model, zc, z_train)
        mean_std = (model.const_mean + (k_star @ alpha).squeeze(-1)).numpy()
        v = torch.linalg.solve_triangular(L, k_star.T, upper=False)
        var_std = (model.outputscale() - (v**2).sum(dim=0)).numpy()
    if var_std.min() < -1e-6:
        raise IllConditionedError(
            f"posterior variance fell to {var_std.min()}; factorization is unreliable"
        )
    var_std = np.clip(var_std, 0.0, None)
    means = model.y_mean + model.y_std * mean_std
    variances = model.y_std**2 * var_std
    if not full_cov:
        return means, variances
    with torch.no_grad():
        prior = _kernel_matrix(model, zc, zc)
        cov_std = (prior - v.T @ v).numpy()
    cov = model.y_std**2 * 0.5 * (cov_std + cov_std.T)
    return means, variances, cov


def sample_posterior(model: DKLModel, candidates, rng: np.random.Generator) -> np.ndarray:
    """One joint draw from the posterior over the candidates: mean + L z.

    A factor of (covariance + jitter) is used when the exact covariance is
    singular; an exactly-zero covariance returns the mean unchanged.
    """
    means, _, cov = predict(model, candidates, full_cov=True)
    if not cov.any():
        return means.copy()
    factor = posterior_covariance_factor(cov)
    z = rng.standard_normal(means.size)
    return means + factor @ z


def posterior_covariance_factor(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular factor of a posterior covariance, escalating jitter
    until the factorization succeeds."""
    eye = np.eye(cov.shape[0])
    for jitter in (0.0,) + JITTERS:
        try:
            return np.linalg.cholesky(cov + jitter * eye)
        except np.linalg.LinAlgError:
            continue
    raise IllConditionedError(
        f"posterior covariance of size {cov.shape[0]} not factorizable"
    )


def save_checkpoint(model: DKLModel, path) -> None:
    """Serialize weights, hypers, standardization, and training set."""
    payload = {
        "net_state": model.net.state_dict(),
        "raw_lengthscale": model.raw_lengthscale.detach(),
        "raw_outputscale": model.raw_outputscale.detach(),
        "raw_noise": model.raw_noise.detach(),
        "const_mean": model.const_mean.detach(),
        "train_x": model.train_x,
        "train_y": model.train_y,
        "y_mean": model.y_mean,
        "y_std": model.y_std,
        "kernel": model.kernel,
        "net_config": {
            "conv_filters": model.net_config.conv_filters,
            "kernel_width": model.net_config.kernel_width,
            "pool_factor": model.net_config.pool_factor,
            "dense_widths": list(model.net_config.dense_widths),
            "embedding_dim": model.net_config.embedding_dim,
            "activation": model.net_config.activation,
            "init_seed": model.net_config.init_seed,
        },
        "config_hash": model.config_hash(),
    }
    torch.save(payload, path)


def load_checkpoint(path) -> DKLModel:
    payload = torch.load(path, weights_only=True)
    cfg = dict(payload["net_config"])
    cfg["dense_widths"] = tuple(cfg["dense_widths"])
    model = DKLModel(EmbeddingNetConfig(**cfg), kernel=payload["kernel"])
    model.net.load_state_dict(payload["net_state"])
    with torch.no_grad():
        model.raw_lengthscale.copy_(payload["raw_lengthscale"])
        model.raw_outputscale.copy_(payload["raw_outputscale"])
        model.raw_noise.copy_(payload["raw_noise"])
        model.const_mean.copy_(payload["const_mean"])
    model.train_x = payload["train_x"]
    model.train_y = payload["train_y"]
    model.y_mean = float(payload["y_mean"])
    model.y_std = float(payload["y_std"])
    model.invalidate()
    return model
