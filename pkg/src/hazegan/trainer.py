"""Alternating critic/generator optimization with checkpointing and transfer learning.

One *cycle* is ``n_critic`` critic updates, each on a fresh batch, followed by
a single generator update. An epoch is one pass of the generator batches over
the training set. Batch order is a pure function of ``(seed, epoch)``, the
gradient-penalty interpolation factors come from a dedicated seeded stream,
and all of it lives in the checkpoint, so an interrupted run resumes onto the
same trajectory.
"""
import contextlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .data import PairTensors
from .errors import DataError, IncompatibleCheckpointError, InvalidParameterError, NumericalError
from .losses import DEFAULT_TAP, LossWeights, build_feature_extractor, critic_terms, generator_terms
from .networks import CriticSpec, GeneratorSpec, architecture_fingerprint, build_critic, build_generator

log = logging.getLogger(__name__)

_GEN_STREAM = 1
_CRITIC_STREAM = 2


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    n_critic: int = 5
    batch_size: int = 4
    epochs: int = 1
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    image_size: int = 256
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    critic: CriticSpec = field(default_factory=CriticSpec)
    vgg_weights: str = None
    vgg_tap: str = DEFAULT_TAP
    allow_vgg_fallback: bool = True
    checkpoint_dir: str = None
    checkpoint_interval: int = 0
    max_generator_steps: int = None

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.generator, dict):
            self.generator = GeneratorSpec(**self.generator)
        if isinstance(self.critic, dict):
            self.critic = CriticSpec(**self.critic)
        if not (self.learning_rate > 0):
            raise InvalidParameterError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidParameterError("Adam betas must lie in [0, 1)")
        if self.n_critic < 1:
            raise InvalidParameterError("n_critic must be >= 1")
        if self.batch_size < 1:
            raise InvalidParameterError("batch_size must be >= 1")
        if self.epochs < 0:
            raise InvalidParameterError("epochs must be >= 0")
        if self.image_size < 2 or self.image_size & (self.image_size - 1):
            raise InvalidParameterError("image_size must be a power of two >= 2")
        if self.checkpoint_interval < 0:
            raise InvalidParameterError("checkpoint_interval must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["critic"]["widths"] = list(d["critic"]["widths"])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    @property
    def fingerprint(self):
        return architecture_fingerprint(self.generator, self.critic)


def desk_config(**overrides):
    """64 x 64 preset that trains in minutes on one CPU core."""
    base = dict(
        image_size=64,
        generator=GeneratorSpec(base_width=16, depth=6),
        critic=CriticSpec(widths=(32, 64, 128)),
        batch_size=4,
        epochs=50,
    )
    base.update(overrides)
    return TrainConfig(**base)


def full_config(**overrides):
    """256 x 256, full pix2pix widths, 1000 epochs."""
    base = dict(image_size=256, generator=GeneratorSpec(), critic=CriticSpec(), epochs=1000)
    base.update(overrides)
    return TrainConfig(**base)


def transfer_config(**overrides):
    """Full-scale transfer-learning phase: 100 further epochs."""
    return full_config(**{"epochs": 100, **overrides})


@dataclass
class TrainState:
    config: TrainConfig
    generator: torch.nn.Module
    critic: torch.nn.Module
    opt_g: torch.optim.Optimizer
    opt_c: torch.optim.Optimizer
    alpha_rng: torch.Generator
    generator_step: int = 0
    critic_step: int = 0
    epoch: int = 0
    epoch_pos: int = 0
    critic_pass: int = 0
    critic_pos: int = 0

    @property
    def fingerprint(self):
        return self.config.fingerprint

    def counters(self):
        return {
            "generator_step": self.generator_step,
            "critic_step": self.critic_step,
            "epoch": self.epoch,
            "epoch_pos": self.epoch_pos,
            "critic_pass": self.critic_pass,
            "critic_pos": self.critic_pos,
        }


def _adam(params, config):
    return torch.optim.Adam(params, lr=config.learning_rate, betas=(config.beta1, config.beta2))


def init_state(config):
    g = build_generator(config.generator, seed=config.seed)
    c = build_critic(config.critic, seed=config.seed + 1)
    rng = torch.Generator().manual_seed(config.seed + 2)
    return TrainState(config, g, c, _adam(g.parameters(), config), _adam(c.parameters(), config), rng)


# ------------------------------------------------------------- checkpoints


def _optimizer_tensors(prefix, module, opt):
    out = {}
    for name, p in module.named_parameters():
        for key, value in opt.state.get(p, {}).items():
            out[f"{prefix}/{name}/{key}"] = torch.as_tensor(value)
    return out


def _load_optimizer(prefix, module, opt, tensors):
    for name, p in module.named_parameters():
        state = {}
        for key in ("step", "exp_avg", "exp_avg_sq"):
            t = tensors.get(f"{prefix}/{name}/{key}")
            if t is not None:
                state[key] = t.clone()
        if state:
            opt.state[p] = state


def save_checkpoint(state, path):
    header = {
        "fingerprint": state.fingerprint,
        "config": state.config.to_dict(),
        "counters": state.counters(),
        "library": "hazegan",
    }
    tensors = {}
    for name, t in state.generator.state_dict().items():
        tensors[f"generator/{name}"] = t
    for name, t in state.critic.state_dict().items():
        tensors[f"critic/{name}"] = t
    tensors.update(_optimizer_tensors("opt_g", state.generator, state.opt_g))
    tensors.update(_optimizer_tensors("opt_c", state.critic, state.opt_c))
    tensors["alpha_rng"] = state.alpha_rng.get_state()
    return ckpt.write(path, header, tensors)


def read_checkpoint_header(path):
    return ckpt.read_header(path)


def load_checkpoint(path, config=None):
    """Rebuild a :class:`TrainState`. With ``config`` given, its architecture must match."""
    header, tensors = ckpt.read(path)
    saved = TrainConfig.from_dict(header["config"])
    if config is not None and config.fingerprint != header["fingerprint"]:
        raise IncompatibleCheckpointError(
            f"checkpoint {path} architecture {header['fingerprint']} does not match config {config.fingerprint}"
        )
    if saved.fingerprint != header["fingerprint"]:
        raise IncompatibleCheckpointError("checkpoint header fingerprint is inconsistent with its config")
    state = init_state(config or saved)

    def sub(prefix):
        return {k[len(prefix) + 1 :]: v for k, v in tensors.items() if k.startswith(prefix + "/")}

    state.generator.load_state_dict(sub("generator"))
    state.critic.load_state_dict(sub("critic"))
    _load_optimizer("opt_g", state.generator, state.opt_g, tensors)
    _load_optimizer("opt_c", state.critic, state.opt_c, tensors)
    state.alpha_rng.set_state(tensors["alpha_rng"])
    for key, value in header["counters"].items():
        setattr(state, key, int(value))
    return state


def load_generator(path, config=None):
    """Generator network only, in eval mode."""
    state = load_checkpoint(path, config)
    return state.generator.eval()


# ----------------------------------------------------------------- batches


def _permutation(seed, stream, index, n):
    return np.random.default_rng([seed, stream, index]).permutation(n)


def _generator_batch(state, n):
    cfg = state.config
    perm = _permutation(cfg.seed, _GEN_STREAM, state.epoch, n)
    start = state.epoch_pos * cfg.batch_size
    idx = perm[start : start + cfg.batch_size]
    state.epoch_pos += 1
    if state.epoch_pos * cfg.batch_size >= n:
        state.epoch += 1
        state.epoch_pos = 0
    return idx


def _critic_batch(state, n):
    cfg = state.config
    idx = []
    while len(idx) < cfg.batch_size:
        perm = _permutation(cfg.seed, _CRITIC_STREAM, state.critic_pass, n)
        take = perm[state.critic_pos : state.critic_pos + cfg.batch_size - len(idx)]
        idx.extend(take.tolist())
        state.critic_pos += len(take)
        if state.critic_pos >= n:
            state.critic_pass += 1
            state.critic_pos = 0
    return np.asarray(idx)


def steps_per_epoch(n, batch_size):
    return math.ceil(n / batch_size)


@contextlib.contextmanager
def _frozen(module):
    flags = [p.requires_grad for p in module.parameters()]
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, f in zip(module.parameters(), flags):
            p.requires_grad_(f)


def _finite(record):
    bad = [k for k, v in record.items() if isinstance(v, float) and not math.isfinite(v)]
    if bad:
        raise NumericalError(f"non-finite {bad} at step {record['step']}")


# ------------------------------------------------------------------ training


class LogWriter:
    """Append-only newline-delimited JSON log."""

    def __init__(self, path):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, record):
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record) + "\n")


def train(
    config,
    manifest=None,
    state=None,
    log_path=None,
    stop_after=None,
    data=None,
    phi=None,
    on_update=None,
):
    """Run (or resume) training; returns ``(state, records)``.

    ``stop_after`` halts after that many *total* generator steps, writing a
    checkpoint when ``checkpoint_dir`` is set, which emulates an interruption.
    ``on_update(phase, state)`` is called after every optimizer step.
    """
    if data is None:
        if manifest is None:
            raise DataError("train needs a manifest or preloaded data")
        if not manifest.has_references:
            raise DataError("training requires a dataset with clear references")
        data = PairTensors(manifest, config.image_size)
    n = len(data)
    if state is None:
        state = init_state(config)
    if phi is None and config.weights.lambda1 > 0:
        phi = build_feature_extractor(config.vgg_weights, config.vgg_tap, config.allow_vgg_fallback, seed=config.seed + 3)

    total = config.epochs * steps_per_epoch(n, config.batch_size)
    if config.max_generator_steps is not None:
        total = min(total, config.max_generator_steps)
    writer = LogWriter(log_path)
    records = []
    G, D = state.generator.train(), state.critic.train()
    weights = config.weights
    ckdir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    t0 = time.time()

    def emit(record):
        record["wall_time"] = round(time.time() - t0, 6)
        _finite(record)
        records.append(record)
        writer.write(record)

    while state.generator_step < total:
        if stop_after is not None and state.generator_step >= stop_after:
            break
        for _ in range(config.n_critic):
            I, J = data.batch(_critic_batch(state, n))
            with _frozen(G):
                terms = critic_terms(D, G, I, J, weights, rng=state.alpha_rng)
            state.opt_c.zero_grad(set_to_none=True)
            terms.objective.backward()
            state.opt_c.step()
            state.critic_step += 1
            emit(
                {
                    "phase": "critic",
                    "step": state.critic_step + state.generator_step,
                    "critic_step": state.critic_step,
                    "generator_step": state.generator_step,
                    "epoch": state.epoch,
                    "critic_objective": terms.objective.item(),
                    "gradient_penalty": terms.gradient_penalty.item(),
                    "wasserstein_estimate": terms.wasserstein.item(),
                }
            )
            if on_update:
                on_update("critic", state)

        I, J = data.batch(_generator_batch(state, n))
        with _frozen(D):
            gterms = generator_terms(D, G, I, J, phi, weights)
        state.opt_g.zero_grad(set_to_none=True)
        gterms.objective.backward()
        state.opt_g.step()
        state.generator_step += 1
        emit(
            {
                "phase": "generator",
                "step": state.critic_step + state.generator_step,
                "critic_step": state.critic_step,
                "generator_step": state.generator_step,
                "epoch": state.epoch,
                "generator_objective": gterms.objective.item(),
                "vgg": gterms.vgg.item(),
                "l1": gterms.l1.item(),
                "adversarial": gterms.adversarial.item(),
            }
        )
        if on_update:
            on_update("generator", state)
        if ckdir and config.checkpoint_interval and state.generator_step % config.checkpoint_interval == 0:
            save_checkpoint(state, ckdir / f"step_{state.generator_step:08d}.ckpt")
            save_checkpoint(state, ckdir / "last.ckpt")

    if ckdir:
        save_checkpoint(state, ckdir / "last.ckpt")
    G.eval()
    return state, records


def resume(path, config=None, manifest=None, **kwargs):
    state = load_checkpoint(path, config)
    return train(config or state.config, manifest, state=state, **kwargs)


def transfer_learn(checkpoint_state, config, manifest, **kwargs):
    """Continue both networks on a new dataset with fresh Adam moments and counters."""
    if isinstance(checkpoint_state, (str, Path)):
        checkpoint_state = load_checkpoint(checkpoint_state, config)
    if checkpoint_state.fingerprint != config.fingerprint:
        raise IncompatibleCheckpointError(
            f"checkpoint architecture {checkpoint_state.fingerprint} does not match config {config.fingerprint}"
        )
    state = init_state(config)
    state.generator.load_state_dict(checkpoint_state.generator.state_dict())
    state.critic.load_state_dict(checkpoint_state.critic.state_dict())
    return train(config, manifest, state=state, **kwargs)


# ----------------------------------------------------------------- inference


@torch.no_grad()
def dehaze_batch(generator, hazy):
    generator.eval()
    return generator(hazy)
