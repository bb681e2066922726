"""Training objectives for the conditional Wasserstein GAN.

Critic and generator here are any callables ``critic(condition, candidate)``
returning one score per sample and ``generator(hazy)`` returning an image
batch. Both objectives are returned as values to *minimize*:

    critic:    mean D(I, G(I)) - mean D(I, J) + lambda3 * GP
    generator: lambda1 * vgg + lambda2 * l1 - mean D(I, G(I))
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import torch
import torch.nn as nn

from .errors import ConfigurationError, ContractError, InvalidParameterError, NumericalError, ShapeError

log = logging.getLogger(__name__)

# VGG-19 convolutional configuration ('M' = 2x2 max-pool).
VGG19_CFG = (64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M", 512, 512, 512, 512, "M", 512, 512, 512, 512, "M")
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
DEFAULT_TAP = "relu4_3"


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0
    lambda2: float = 100.0
    lambda3: float = 10.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise InvalidParameterError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)


class CriticTerms(NamedTuple):
    objective: torch.Tensor
    gradient_penalty: torch.Tensor
    wasserstein: torch.Tensor


class GeneratorTerms(NamedTuple):
    objective: torch.Tensor
    vgg: torch.Tensor
    l1: torch.Tensor
    adversarial: torch.Tensor


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _require_finite(value, name):
    if not torch.isfinite(value).all():
        raise NumericalError(f"{name} is not finite: {value.detach().cpu().tolist()}")
    return value


# ------------------------------------------------------------ feature maps


def vgg19_layer_names():
    """Names of the layers of the VGG-19 feature stack, in order (conv1_1, relu1_1, ...)."""
    names, block, idx = [], 1, 1
    for v in VGG19_CFG:
        if v == "M":
            names.append(f"pool{block}")
            block, idx = block + 1, 1
        else:
            names += [f"conv{block}_{idx}", f"relu{block}_{idx}"]
            idx += 1
    return names


class FeatureExtractor(nn.Module):
    """Frozen VGG-19 prefix ending at ``tap`` (default: ReLU after the 11th conv).

    Layer indices match ``torchvision.models.vgg19().features`` so a
    torchvision state dict loads directly. Inputs are network tensors in
    [-1, 1]; ImageNet normalization happens inside.
    """

    def __init__(self, tap=DEFAULT_TAP):
        super().__init__()
        names = vgg19_layer_names()
        if tap not in names:
            raise ConfigurationError(f"unknown VGG-19 layer {tap!r}")
        stop = names.index(tap) + 1
        layers, cin = [], 3
        for v in VGG19_CFG:
            if v == "M":
                layers.append(nn.MaxPool2d(2, 2))
            else:
                layers += [nn.Conv2d(cin, v, 3, padding=1), nn.ReLU()]
                cin = v
        self.tap = tap
        self.features = nn.Sequential(*layers[:stop])
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        self.pretrained = False

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        return self.eval()

    def train(self, mode=True):
        # always frozen: no dropout/bn to toggle, keep eval semantics
        return super().train(False)

    def forward(self, x):
        x = ((x + 1.0) / 2.0 - self.mean) / self.std
        return self.features(x)


def build_feature_extractor(weights_path=None, tap=DEFAULT_TAP, allow_fallback=True, seed=0):
    """Load VGG-19 weights from ``weights_path`` or fall back to seeded random weights.

    The fallback keeps the same topology (He-normal init) so desk-scale runs
    work offline; it logs a warning. With ``allow_fallback=False`` a missing
    weights file is a :class:`ConfigurationError`.
    """
    phi = FeatureExtractor(tap)
    if weights_path is not None:
        path = Path(weights_path)
        if not path.is_file():
            raise ConfigurationError(f"VGG-19 weights file {path} not found")
        state = torch.load(path, map_location="cpu", weights_only=True)
        state = {k[len("features."):] if k.startswith("features.") else k: v for k, v in state.items()}
        wanted = phi.features.state_dict().keys()
        missing = [k for k in wanted if k not in state]
        if missing:
            raise ConfigurationError(f"weights file {path} lacks {missing[:4]}...")
        phi.features.load_state_dict({k: state[k] for k in wanted})
        phi.pretrained = True
    elif not allow_fallback:
        raise ConfigurationError("no VGG-19 weights configured and fallback disabled")
    else:
        log.warning("no VGG-19 weights configured; using seeded random-weight feature extractor")
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for m in phi.features:
                if isinstance(m, nn.Conv2d):
                    fan_in = m.in_channels * 9
                    m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
                    m.bias.zero_()
    return phi.freeze()


# -------------------------------------------------------------- loss terms


def l1_loss(reference, candidate):
    _same_shape(reference, candidate)
    return (reference - candidate).abs().mean()


def vgg_loss(reference, candidate, phi):
    """Mean squared difference between feature maps; the reference side carries no gradient."""
    _same_shape(reference, candidate)
    if phi is None:
        raise ConfigurationError("vgg_loss needs a feature extractor")
    with torch.no_grad():
        f_ref = phi(reference)
    return ((phi(candidate) - f_ref) ** 2).mean()


def interpolate(J, GI, alpha):
    """``alpha * J + (1 - alpha) * GI``; alpha is a scalar or one value per sample."""
    _same_shape(J, GI)
    alpha_t = torch.as_tensor(alpha, dtype=J.dtype, device=J.device)
    if ((alpha_t < 0) | (alpha_t > 1)).any() or not torch.isfinite(alpha_t).all():
        raise InvalidParameterError("alpha must lie in [0, 1]")
    if alpha_t.ndim == 1:
        alpha_t = alpha_t.view(-1, *([1] * (J.ndim - 1)))
    return alpha_t * J + (1.0 - alpha_t) * GI


def draw_alpha(batch, rng, dtype=torch.float32, device="cpu"):
    return torch.rand(batch, generator=rng, dtype=dtype).to(device)


def input_gradient(critic, I, X, create_graph=False):
    """Per-sample gradient of the critic score with respect to the candidate X."""
    X = X.detach().requires_grad_(True)
    scores = critic(I, X)
    if not scores.requires_grad:
        raise ContractError("critic output is not differentiable with respect to its inputs")
    (grad,) = torch.autograd.grad(scores.sum(), X, create_graph=create_graph, allow_unused=True)
    if grad is None:
        grad = torch.zeros_like(X)
    return grad


def gradient_penalty(critic, I, J, GI, rng=None, alpha=None):
    """Mean over the batch of ``(||grad_X D(I, X)||_2 - 1)^2`` at X = alpha J + (1-alpha) G(I).

    One alpha is drawn per sample from ``rng`` unless given explicitly. The
    condition I is not interpolated. The graph is kept so the penalty can be
    backpropagated into the critic parameters.
    """
    _same_shape(I, J)
    _same_shape(J, GI)
    if alpha is None:
        alpha = draw_alpha(J.shape[0], rng, J.dtype, J.device)
    j_hat = interpolate(J, GI.detach(), alpha)
    grad = input_gradient(critic, I, j_hat, create_graph=True)
    norms = grad.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def _check_batch(I):
    if I.ndim == 0 or I.shape[0] == 0:
        raise InvalidParameterError("empty batch")


def critic_terms(critic, generator, I, J, weights, rng=None, alpha=None):
    _check_batch(I)
    with torch.no_grad():
        GI = generator(I)
    real = critic(I, J).mean()
    fake = critic(I, GI).mean()
    gp = gradient_penalty(critic, I, J, GI, rng, alpha) if weights.lambda3 > 0 else torch.zeros((), dtype=real.dtype)
    objective = fake - real + weights.lambda3 * gp
    return CriticTerms(_require_finite(objective, "critic objective"), gp.detach(), (real - fake).detach())


def critic_objective(critic, generator, I, J, weights, rng=None, alpha=None):
    return critic_terms(critic, generator, I, J, weights, rng, alpha).objective


def generator_terms(critic, generator, I, J, phi, weights):
    _check_batch(I)
    GI = generator(I)
    zero = torch.zeros((), dtype=GI.dtype, device=GI.device)
    vgg = vgg_loss(J, GI, phi) if weights.lambda1 > 0 else zero
    l1 = l1_loss(J, GI) if weights.lambda2 > 0 else zero
    adversarial = critic(I, GI).mean()
    objective = weights.lambda1 * vgg + weights.lambda2 * l1 - adversarial
    return GeneratorTerms(_require_finite(objective, "generator objective"), vgg.detach(), l1.detach(), adversarial.detach())


def generator_objective(critic, generator, I, J, phi, weights):
    return generator_terms(critic, generator, I, J, phi, weights).objective


def wasserstein_estimate(critic, I, J, generator):
    """mean D(I, J) - mean D(I, G(I)), evaluated without gradients."""
    _check_batch(I)
    with torch.no_grad():
        GI = generator(I)
        return critic(I, J).mean() - critic(I, GI).mean()
