"""Adversarial objectives for residual small-object representations.

Loss values and their analytic gradients, soft/noisy discriminator labels,
and a toy trainer in which a linear residual generator and a logistic
discriminator play the minimax game on feature vectors. Expectations are
empirical means over the supplied samples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .exceptions import ProbabilityDomainError, TrainingError, ValidationError
from .rng import make_rng

logger = logging.getLogger(__name__)

EPS = 1e-7


def clamp_probability(p) -> np.ndarray:
    """Clamp to [EPS, 1 - EPS] after checking the values are probabilities at all."""
    p = np.asarray(p, dtype=float)
    if p.size == 0:
        raise ProbabilityDomainError("empty probability array")
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ProbabilityDomainError("discriminator outputs must lie in [0, 1]")
    return np.clip(p, EPS, 1 - EPS)


def minimax_value(d_real, d_fake) -> float:
    """mean(log D(real)) + mean(log(1 - D(fake)))."""
    d_real = clamp_probability(d_real)
    d_fake = clamp_probability(d_fake)
    return float(np.mean(np.log(d_real)) + np.mean(np.log1p(-d_fake)))


def minimax_value_grad(d_real, d_fake) -> tuple[np.ndarray, np.ndarray]:
    d_real = clamp_probability(d_real)
    d_fake = clamp_probability(d_fake)
    return 1.0 / (d_real.size * d_real), -1.0 / (d_fake.size * (1.0 - d_fake))


def residual_features(small, generator: Callable, conditions=None) -> np.ndarray:
    """F_s + G(F_s | f): the super-resolved representation of small objects."""
    small = np.atleast_2d(np.asarray(small, dtype=float))
    residual = np.atleast_2d(np.asarray(generator(small, conditions), dtype=float))
    if residual.shape != small.shape:
        raise ValidationError(f"generator output shape {residual.shape} does not match input {small.shape}")
    return small + residual


def residual_gan_value(d_large, d_small_plus_residual) -> float:
    """Minimax value with the fake term taken at F_s + G(F_s | f).

    The inputs are discriminator outputs on large-object features and on the
    residual-composed small-object features (see ``residual_features``).
    """
    return minimax_value(d_large, d_small_plus_residual)


def discriminator_loss(d_large, d_fake, mode: str = "bce") -> float:
    """Adversarial-branch loss averaged over the batch.

    ``mode="bce"`` is -log D(F_l) - log(1 - D(fake)). ``mode="paper"`` keeps
    the plus sign on the second term, -log D(F_l) + log(1 - D(fake)).
    """
    d_large = clamp_probability(d_large)
    d_fake = clamp_probability(d_fake)
    sign = _mode_sign(mode)
    return float(-np.mean(np.log(d_large)) + sign * np.mean(np.log1p(-d_fake)))


def discriminator_loss_grad(d_large, d_fake, mode: str = "bce") -> tuple[np.ndarray, np.ndarray]:
    d_large = clamp_probability(d_large)
    d_fake = clamp_probability(d_fake)
    sign = _mode_sign(mode)
    return -1.0 / (d_large.size * d_large), -sign / (d_fake.size * (1.0 - d_fake))


def _mode_sign(mode: str) -> float:
    if mode == "bce":
        return -1.0
    if mode == "paper":
        return 1.0
    raise ValidationError(f"unknown loss mode {mode!r}; expected 'bce' or 'paper'")


def generator_loss(d_fake) -> float:
    """Non-saturating generator loss -log D(fake), averaged over the batch."""
    d_fake = clamp_probability(d_fake)
    return float(-np.mean(np.log(d_fake)))


def generator_loss_grad(d_fake) -> np.ndarray:
    d_fake = clamp_probability(d_fake)
    return -1.0 / (d_fake.size * d_fake)


def soft_noisy_labels(kind: str, n: int, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Uniform targets in [0.8, 1.0] for real samples and [0.0, 0.2] for fake ones."""
    if n < 1:
        raise ValidationError("n must be at least 1")
    low = {"real": 0.8, "fake": 0.0}.get(kind)
    if low is None:
        raise ValidationError(f"kind must be 'real' or 'fake', got {kind!r}")
    return make_rng(rng).uniform(low, low + 0.2, size=n)


def numerical_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=float)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x)
        flat[i] = orig - h
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    """||a - n|| / max(||a||, ||n||), zero when both vanish."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


# -- toy residual GAN ------------------------------------------------------------

@dataclass
class ToyModelParams:
    """Linear residual generator and logistic discriminator.

    The generator maps ``[F_s, f]`` to a residual ``gen_weight @ [F_s, f] +
    gen_bias``; the discriminator is ``sigmoid(disc_weight @ x + disc_bias)``.
    """

    gen_weight: np.ndarray
    gen_bias: np.ndarray
    disc_weight: np.ndarray
    disc_bias: float = 0.0

    def __post_init__(self):
        self.gen_weight = np.array(self.gen_weight, dtype=float)
        self.gen_bias = np.array(self.gen_bias, dtype=float)
        self.disc_weight = np.array(self.disc_weight, dtype=float)
        self.disc_bias = float(self.disc_bias)
        d = self.gen_bias.shape[0]
        if self.gen_weight.ndim != 2 or self.gen_weight.shape[0] != d or self.gen_weight.shape[1] < d:
            raise ValidationError(f"gen_weight must be {d}x(d+k), got {self.gen_weight.shape}")
        if self.disc_weight.shape != (d,):
            raise ValidationError(f"disc_weight must have shape ({d},), got {self.disc_weight.shape}")
        if not all(np.all(np.isfinite(a)) for a in (self.gen_weight, self.gen_bias, self.disc_weight, self.disc_bias)):
            raise ValidationError("parameters must be finite")

    @classmethod
    def initialize(cls, dim: int, cond_dim: int = 0, rng=None, scale: float = 0.01) -> ToyModelParams:
        rng = make_rng(rng)
        return cls(
            gen_weight=rng.normal(0.0, scale, size=(dim, dim + cond_dim)),
            gen_bias=np.zeros(dim),
            disc_weight=rng.normal(0.0, scale, size=dim),
            disc_bias=0.0,
        )

    @property
    def dim(self) -> int:
        return self.gen_bias.shape[0]

    @property
    def cond_dim(self) -> int:
        return self.gen_weight.shape[1] - self.dim

    def copy(self) -> ToyModelParams:
        return ToyModelParams(self.gen_weight.copy(), self.gen_bias.copy(), self.disc_weight.copy(), self.disc_bias)

    def generator_input(self, small, conditions=None) -> np.ndarray:
        small = np.atleast_2d(np.asarray(small, dtype=float))
        if self.cond_dim == 0:
            if conditions is not None and np.size(conditions):
                raise ValidationError("model was built without conditions")
            return small
        if conditions is None:
            raise ValidationError(f"model expects {self.cond_dim} condition features")
        conditions = np.atleast_2d(np.asarray(conditions, dtype=float))
        if conditions.shape != (small.shape[0], self.cond_dim):
            raise ValidationError(f"conditions must have shape ({small.shape[0]}, {self.cond_dim})")
        return np.hstack([small, conditions])

    def residual(self, small, conditions=None) -> np.ndarray:
        return self.generator_input(small, conditions) @ self.gen_weight.T + self.gen_bias

    def logits(self, x) -> np.ndarray:
        return np.atleast_2d(x) @ self.disc_weight + self.disc_bias

    def discriminate(self, x) -> np.ndarray:
        return expit(self.logits(x))


def discriminator_objective(params: ToyModelParams, large, fake, l2: float = 0.0, real_targets=None, fake_targets=None):
    """Default-mode adversarial loss over batches plus ``l2/2 * |w|^2``.

    Computed from logits, so saturated outputs need no clamping and the
    gradients stay exact. Returns ``(loss, grad_weight, grad_bias)``. Targets default to hard 1/0;
    soft targets switch both terms to binary cross-entropy against them.
    """
    large = np.atleast_2d(large)
    fake = np.atleast_2d(fake)
    z_real = params.logits(large)
    z_fake = params.logits(fake)
    p_real, p_fake = expit(z_real), expit(z_fake)
    y_real = np.ones(len(large)) if real_targets is None else np.asarray(real_targets, dtype=float)
    y_fake = np.zeros(len(fake)) if fake_targets is None else np.asarray(fake_targets, dtype=float)
    # cross-entropy on logits: -y log s(z) - (1 - y) log(1 - s(z)) = softplus(z) - y z
    loss = (
        np.mean(np.logaddexp(0.0, z_real) - y_real * z_real)
        + np.mean(np.logaddexp(0.0, z_fake) - y_fake * z_fake)
        + 0.5 * l2 * float(params.disc_weight @ params.disc_weight)
    )
    g_real = (p_real - y_real) / len(large)
    g_fake = (p_fake - y_fake) / len(fake)
    grad_w = large.T @ g_real + fake.T @ g_fake + l2 * params.disc_weight
    grad_b = float(g_real.sum() + g_fake.sum())
    return float(loss), grad_w, grad_b


def generator_objective(params: ToyModelParams, small, conditions=None):
    """Non-saturating generator loss through F_s + G(F_s | f).

    Returns ``(loss, grad_weight, grad_bias)``.
    """
    inputs = params.generator_input(small, conditions)
    small = np.atleast_2d(np.asarray(small, dtype=float))
    fake = small + inputs @ params.gen_weight.T + params.gen_bias
    z = params.logits(fake)
    p = expit(z)
    loss = float(np.mean(np.logaddexp(0.0, -z)))
    g_logit = -(1.0 - p) / len(small)
    g_fake = np.outer(g_logit, params.disc_weight)
    return loss, g_fake.T @ inputs, g_fake.sum(axis=0)


def check_toy_gradients(params: ToyModelParams, large, small, conditions=None, l2: float = 0.0, h: float = 1e-5) -> float:
    """Largest relative error between analytic and central-difference gradients."""
    fake = small + params.residual(small, conditions)

    def d_loss(w=None, b=None):
        p = params.copy()
        if w is not None:
            p.disc_weight = w
        if b is not None:
            p.disc_bias = float(b[0])
        return discriminator_objective(p, large, fake, l2)[0]

    def g_loss(W=None, b=None):
        p = params.copy()
        if W is not None:
            p.gen_weight = W
        if b is not None:
            p.gen_bias = b
        return generator_objective(p, small, conditions)[0]

    _, gw, gc = discriminator_objective(params, large, fake, l2)
    _, gW, gb = generator_objective(params, small, conditions)
    errors = [
        relative_error(gw, numerical_gradient(lambda w: d_loss(w=w), params.disc_weight, h)),
        relative_error(gc, numerical_gradient(lambda b: d_loss(b=b), [params.disc_bias], h)),
        relative_error(gW, numerical_gradient(lambda W: g_loss(W=W), params.gen_weight, h)),
        relative_error(gb, numerical_gradient(lambda b: g_loss(b=b), params.gen_bias, h)),
    ]
    return max(errors)


@dataclass
class TrainResult:
    params: ToyModelParams
    initial: ToyModelParams
    trajectory: list[ToyModelParams] = field(repr=False)
    d_loss: np.ndarray = field(repr=False)
    g_loss: np.ndarray = field(repr=False)
    gradient_check_error: float = float("nan")

    def history_csv(self) -> str:
        lines = ["iteration,d_loss,g_loss"]
        lines += [f"{i},{d:.10g},{g:.10g}" for i, (d, g) in enumerate(zip(self.d_loss, self.g_loss), start=1)]
        return "\n".join(lines) + "\n"


def toy_residual_training(
    large_samples,
    small_samples,
    conditions=None,
    *,
    lr: float = 0.01,
    momentum: float = 0.9,
    iterations: int = 3000,
    disc_l2: float = 5.0,
    soft_labels: bool = False,
    seed: int | None = 0,
    init_scale: float = 0.01,
    verify_gradients: bool = True,
    gradient_tolerance: float = 1e-5,
) -> TrainResult:
    """Alternate full-batch momentum-SGD steps on the discriminator then the generator.

    The discriminator minimizes the default-mode adversarial loss with an L2
    penalty ``disc_l2`` on its weight; without it the linear game orbits the
    equilibrium instead of settling. The generator minimizes the
    non-saturating loss through F_s + G(F_s | f). Gradients are checked
    against central differences at initialization.
    """
    large = np.atleast_2d(np.asarray(large_samples, dtype=float))
    small = np.atleast_2d(np.asarray(small_samples, dtype=float))
    if large.shape[1] != small.shape[1]:
        raise ValidationError(f"feature dimensions differ: {large.shape[1]} vs {small.shape[1]}")
    if iterations < 0:
        raise ValidationError("iterations must be non-negative")
    cond_dim = 0 if conditions is None else np.atleast_2d(conditions).shape[1]
    rng = make_rng(seed)
    params = ToyModelParams.initialize(small.shape[1], cond_dim, rng, init_scale)
    initial = params.copy()

    check = float("nan")
    if verify_gradients:
        check = check_toy_gradients(params, large, small, conditions, disc_l2)
        if check > gradient_tolerance:
            raise TrainingError(f"gradient check failed: relative error {check:.3g}", 0)

    vel_w = np.zeros_like(params.disc_weight)
    vel_c = 0.0
    vel_W = np.zeros_like(params.gen_weight)
    vel_b = np.zeros_like(params.gen_bias)
    trajectory = [initial]
    d_hist = np.empty(iterations)
    g_hist = np.empty(iterations)
    for it in range(iterations):
        real_t = soft_noisy_labels("real", len(large), rng) if soft_labels else None
        fake_t = soft_noisy_labels("fake", len(small), rng) if soft_labels else None
        fake = small + params.residual(small, conditions)
        d_loss, gw, gc = discriminator_objective(params, large, fake, disc_l2, real_t, fake_t)
        vel_w = momentum * vel_w - lr * gw
        vel_c = momentum * vel_c - lr * gc
        params.disc_weight = params.disc_weight + vel_w
        params.disc_bias = params.disc_bias + vel_c

        g_loss, gW, gb = generator_objective(params, small, conditions)
        vel_W = momentum * vel_W - lr * gW
        vel_b = momentum * vel_b - lr * gb
        params.gen_weight = params.gen_weight + vel_W
        params.gen_bias = params.gen_bias + vel_b

        if not (np.isfinite(d_loss) and np.isfinite(g_loss) and np.all(np.isfinite(params.gen_weight))):
            raise TrainingError(f"training diverged at iteration {it + 1}", it + 1)
        d_hist[it] = d_loss
        g_hist[it] = g_loss
        trajectory.append(params.copy())
    return TrainResult(params, initial, trajectory, d_hist, g_hist, check)


def format_params(params: ToyModelParams) -> str:
    with np.printoptions(precision=8, suppress=False, floatmode="fixed"):
        return (
            f"dim {params.dim}\ncond_dim {params.cond_dim}\n"
            f"gen_weight\n{params.gen_weight}\ngen_bias\n{params.gen_bias}\n"
            f"disc_weight\n{params.disc_weight}\ndisc_bias\n{params.disc_bias:.8f}\n"
        )
