"""Training loop for the patch noise predictor under either objective."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .metrics import psnr
from .model import Adam, ScoreModel
from .objectives import LossRecord, ml_grad, ml_loss, noise_matching_grad, noise_matching_loss
from .sde import SdeConfig, marginal_mean
from .solvers import LearnedScore, restore, terminal_state

OBJECTIVES = ("noise_matching", "max_likelihood")
_ALIASES = {"nm": "noise_matching", "noise": "noise_matching", "ml": "max_likelihood"}


def canonical_objective(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in OBJECTIVES:
        raise ValueError(f"unknown objective {name!r}; expected one of {OBJECTIVES} (or nm/ml)")
    return name


@dataclass
class TrainConfig:
    iterations: int = 5000
    batch_size: int = 16
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    lr_halve_every: int = 0
    norm: str = "l1"
    hidden: tuple = (256, 256)
    embed_dim: int = 16
    patch: tuple = (32,)
    eval_every: int = 100
    eval_mode: str = "sde"
    eval_seed: int = 1234
    preconditioned: bool = True
    input_shift: float = 0.5
    input_scale: float = 10.0

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    model: ScoreModel
    losses: list
    evals: list  # (iteration, mean eval PSNR)


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


def _crop_batch(dataset, patch, batch, rng):
    """Random patch-sized crops; returns stacked ``(x0, mu)`` batches."""
    x0s, mus = [], []
    for _ in range(batch):
        s = dataset[int(rng.integers(len(dataset)))]
        sl = []
        for n, q in zip(s.x0.shape, patch):
            if n < q:
                raise ValueError(f"sample of shape {s.x0.shape} is smaller than patch {patch}")
            o = int(rng.integers(0, n - q + 1))
            sl.append(slice(o, o + q))
        x0s.append(s.x0[tuple(sl)])
        mus.append(s.mu[tuple(sl)])
    return np.stack(x0s), np.stack(mus)


def evaluate(model: ScoreModel, pairs, cfg: SdeConfig, mode: str = "sde", seed: int = 1234) -> float:
    """Mean PSNR of learned restoration over ``pairs`` (run as one stacked batch).

    Outputs are clipped to [0, 1] before scoring, as when written to an image.
    """
    x0 = np.stack([p.x0 for p in pairs])
    mu = np.stack([p.mu for p in pairs])
    rng = np.random.default_rng(seed)
    x_T = terminal_state(mu, cfg, rng)
    out = restore(x_T, mu, LearnedScore(model), mode, cfg, rng, bound=None).final
    out = np.clip(out, 0.0, 1.0)
    return float(np.mean([psnr(o, x) for o, x in zip(out, x0)]))


def train(dataset, objective: str, cfg: SdeConfig, hp: TrainConfig, rng: np.random.Generator,
          eval_pairs=None, model: ScoreModel | None = None, callback=None) -> TrainResult:
    """Per iteration: crop a batch, draw ``i ~ U{1..T}`` per row, sample ``x_i``,
    take one Adam step on the chosen objective."""
    if not dataset:
        raise ValueError("training needs a non-empty dataset")
    objective = canonical_objective(objective)
    if model is None:
        model = ScoreModel.for_config(cfg, preconditioned=hp.preconditioned, patch_shape=hp.patch,
                                      hidden=hp.hidden, embed_dim=hp.embed_dim, rng=rng,
                                      input_shift=hp.input_shift, input_scale=hp.input_scale)
    opt = Adam(model.n_params, lr=hp.lr, beta1=hp.beta1, beta2=hp.beta2)
    nd = len(model.patch_shape)
    losses, evals = [], []
    for it in range(1, hp.iterations + 1):
        x0, mu = _crop_batch(dataset, model.patch_shape, hp.batch_size, rng)
        i = rng.integers(1, cfg.T + 1, size=hp.batch_size)
        ib = i.reshape(-1, *([1] * nd))
        eps = rng.standard_normal(x0.shape)
        x_i = marginal_mean(x0, mu, ib, cfg) + np.sqrt(cfg.variance(ib)) * eps
        raw, cache = model.forward(model.features(x_i, mu, i))
        eps_hat = model.output_to_noise(raw.reshape(x0.shape), x_i, mu, ib)
        if objective == "noise_matching":
            loss = noise_matching_loss(eps_hat, eps, norm=hp.norm)
            g = noise_matching_grad(eps_hat, eps, norm=hp.norm)
        else:
            loss = ml_loss(x_i, ib, eps_hat, x0, mu, cfg, norm=hp.norm)
            g = ml_grad(x_i, ib, eps_hat, x0, mu, cfg, norm=hp.norm)
        if not np.isfinite(loss):
            raise TrainingDivergedError(it, "loss is not finite")
        grads = model.backward(cache, model.noise_grad_to_output(g, ib).reshape(hp.batch_size, -1))
        lr = hp.lr * 0.5 ** (it // hp.lr_halve_every) if hp.lr_halve_every else hp.lr
        try:
            model.params = opt.step(model.params, grads, lr=lr)
        except FloatingPointError as exc:
            raise TrainingDivergedError(it, str(exc)) from exc
        losses.append(LossRecord(iteration=it, i=-1, loss=loss, objective=objective))
        score = None
        if eval_pairs and hp.eval_every and it % hp.eval_every == 0:
            score = evaluate(model, eval_pairs, cfg, hp.eval_mode, hp.eval_seed)
            evals.append((it, score))
        if callback:
            callback(it, loss, score)
    return TrainResult(model=model, losses=losses, evals=evals)
