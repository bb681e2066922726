import hashlib
import json
import struct

import numpy as np
import pytest
import torch

from hazegan import checkpoint as ckpt
from hazegan import data, losses, metrics
from hazegan import trainer as tr
from hazegan.errors import (
    CheckpointIntegrityError,
    CheckpointVersionError,
    DataError,
    IncompatibleCheckpointError,
    NumericalError,
)
from hazegan.networks import CriticSpec, GeneratorSpec


def tiny(**kw):
    base = dict(
        image_size=16,
        generator=GeneratorSpec(base_width=4, depth=4),
        critic=CriticSpec(widths=(4, 8)),
        batch_size=2,
        epochs=1,
        seed=3,
    )
    base.update(kw)
    return tr.TrainConfig(**base)


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    return data.generate_synthetic_dataset(tmp_path_factory.mktemp("syn"), 10, 16, seed=1)


@pytest.fixture(scope="module")
def pairs(manifest):
    return data.PairTensors(manifest, 16)


@pytest.fixture(scope="module")
def phi():
    return losses.build_feature_extractor(seed=6)


def strip(records):
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in records]


def digest(module):
    h = hashlib.sha256()
    for t in module.state_dict().values():
        h.update(t.detach().numpy().tobytes())
    return h.hexdigest()


def test_config_validation_and_round_trip():
    cfg = tiny(weights=losses.LossWeights(1, 2, 3))
    back = tr.TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg and back.fingerprint == cfg.fingerprint
    for bad in (dict(n_critic=0), dict(image_size=24), dict(learning_rate=0), dict(beta1=1.0), dict(epochs=-1)):
        with pytest.raises(ValueError):
            tiny(**bad)


def test_presets():
    p = tr.full_config()
    assert (p.epochs, p.image_size, p.generator.depth, p.critic.widths) == (1000, 256, 8, (64, 128, 256, 512))
    assert tr.transfer_config().epochs == 100
    d = tr.desk_config()
    assert (d.image_size, d.batch_size, d.n_critic, d.learning_rate, d.beta1, d.beta2) == (64, 4, 5, 2e-4, 0.5, 0.999)
    assert d.weights == losses.LossWeights(10, 100, 10)


def test_schedule_five_to_one(pairs, phi):
    state, recs = tr.train(tiny(max_generator_steps=100, epochs=100), data=pairs, phi=phi)
    assert state.generator_step == 100 and state.critic_step == 500
    phases = [r["phase"] for r in recs]
    assert phases == (["critic"] * 5 + ["generator"]) * 100
    for r in recs:
        if r["phase"] == "generator":
            assert r["critic_step"] == 5 * r["generator_step"]
    assert [r["step"] for r in recs] == list(range(1, 601))


def test_epoch_accounting(pairs, phi):
    # 10 pairs, batch 4 -> 3 steps per epoch, last batch partial
    state, recs = tr.train(tiny(batch_size=4, epochs=2), data=pairs, phi=phi)
    assert state.generator_step == 6 and state.epoch == 2
    assert [r["epoch"] for r in recs if r["phase"] == "generator"] == [0, 0, 1, 1, 1, 2]


def test_generator_batches_cover_epoch():
    state = tr.init_state(tiny(batch_size=4))
    seen = np.concatenate([tr._generator_batch(state, 10) for _ in range(3)])
    assert sorted(seen.tolist()) == list(range(10))
    crit = np.concatenate([tr._critic_batch(state, 10) for _ in range(5)])
    assert len(crit) == 20 and sorted(crit[:10].tolist()) == list(range(10))


def test_identical_seeds_identical_logs(pairs, phi, tmp_path):
    a_state, a = tr.train(tiny(epochs=2), data=pairs, phi=phi, log_path=tmp_path / "a.jsonl")
    b_state, b = tr.train(tiny(epochs=2), data=pairs, phi=phi)
    assert strip(a) == strip(b)
    assert digest(a_state.generator) == digest(b_state.generator)
    lines = (tmp_path / "a.jsonl").read_text().splitlines()
    assert [json.loads(x) for x in lines] == a
    _, c = tr.train(tiny(epochs=2, seed=4), data=pairs, phi=phi)
    assert strip(a) != strip(c)


def test_resume_reproduces_uninterrupted_run(pairs, phi, tmp_path):
    full_state, full = tr.train(tiny(epochs=3), data=pairs, phi=phi)
    cfg = tiny(epochs=3, checkpoint_dir=str(tmp_path), checkpoint_interval=2)
    _, first = tr.train(cfg, data=pairs, phi=phi, stop_after=7)
    assert (tmp_path / "step_00000006.ckpt").is_file()
    state, second = tr.resume(tmp_path / "last.ckpt", data=pairs, phi=phi)
    assert strip(first + second) == strip(full)
    assert digest(state.generator) == digest(full_state.generator)
    assert digest(state.critic) == digest(full_state.critic)


def test_checkpoint_round_trip_is_bit_exact(pairs, phi, tmp_path):
    state, _ = tr.train(tiny(epochs=1), data=pairs, phi=phi)
    path = tr.save_checkpoint(state, tmp_path / "a.ckpt")
    back = tr.load_checkpoint(path)
    for mod in ("generator", "critic"):
        sa, sb = getattr(state, mod).state_dict(), getattr(back, mod).state_dict()
        assert all(torch.equal(sa[k], sb[k]) for k in sa)
    for opt in ("opt_g", "opt_c"):
        oa, ob = getattr(state, opt).state_dict()["state"], getattr(back, opt).state_dict()["state"]
        assert oa.keys() == ob.keys()
        for k in oa:
            for key in ("step", "exp_avg", "exp_avg_sq"):
                assert torch.equal(torch.as_tensor(oa[k][key]), torch.as_tensor(ob[k][key]))
    assert torch.equal(state.alpha_rng.get_state(), back.alpha_rng.get_state())
    assert back.counters() == state.counters()
    tr.save_checkpoint(back, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_guards(pairs, phi, tmp_path):
    state, _ = tr.train(tiny(max_generator_steps=1), data=pairs, phi=phi)
    path = tr.save_checkpoint(state, tmp_path / "x.ckpt")
    raw = path.read_bytes()

    bad = tmp_path / "magic.ckpt"
    bad.write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(CheckpointIntegrityError):
        tr.load_checkpoint(bad)
    with pytest.raises(CheckpointIntegrityError):
        tr.read_checkpoint_header(bad)

    short = tmp_path / "short.ckpt"
    short.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CheckpointIntegrityError):
        tr.load_checkpoint(short)
    # the header still reads from a file truncated inside the tensor block
    assert tr.read_checkpoint_header(short)["fingerprint"] == state.fingerprint

    flipped = bytearray(raw)
    flipped[-100] ^= 0xFF
    (tmp_path / "flip.ckpt").write_bytes(bytes(flipped))
    with pytest.raises(CheckpointIntegrityError):
        tr.load_checkpoint(tmp_path / "flip.ckpt")

    future = tmp_path / "v2.ckpt"
    future.write_bytes(raw[:8] + struct.pack("<I", 2) + raw[12:])
    with pytest.raises(CheckpointVersionError):
        tr.load_checkpoint(future)

    other = tiny(generator=GeneratorSpec(base_width=8, depth=4))
    with pytest.raises(IncompatibleCheckpointError):
        tr.load_checkpoint(path, other)


def test_header_contents(pairs, phi, tmp_path):
    state, _ = tr.train(tiny(max_generator_steps=2), data=pairs, phi=phi)
    path = tr.save_checkpoint(state, tmp_path / "h.ckpt")
    header = tr.read_checkpoint_header(path)
    assert header["fingerprint"] == tiny().fingerprint
    assert header["counters"]["generator_step"] == 2 and header["counters"]["critic_step"] == 10
    assert tr.TrainConfig.from_dict(header["config"]) == state.config
    assert path.read_bytes()[:8] == ckpt.MAGIC


def test_checkpoint_rejects_unknown_dtype(tmp_path):
    with pytest.raises(TypeError):
        ckpt.write(tmp_path / "c.ckpt", {}, {"x": torch.zeros(2, dtype=torch.complex64)})
    assert not (tmp_path / "c.ckpt").exists()


def test_transfer_zero_epochs_is_identity(pairs, phi, manifest, tmp_path):
    state, _ = tr.train(tiny(max_generator_steps=2), data=pairs, phi=phi)
    path = tr.save_checkpoint(state, tmp_path / "t.ckpt")
    moved, recs = tr.transfer_learn(path, tiny(epochs=0), manifest, phi=phi)
    assert recs == []
    assert digest(moved.generator) == digest(state.generator)
    assert digest(moved.critic) == digest(state.critic)
    assert moved.generator_step == 0 and not moved.opt_g.state
    with pytest.raises(IncompatibleCheckpointError):
        tr.transfer_learn(path, tiny(generator=GeneratorSpec(base_width=8, depth=4)), manifest, phi=phi)


def test_phases_do_not_touch_other_network(pairs, phi):
    snap = {}
    changed = {"critic": 0, "generator": 0}

    def check(phase, state):
        g, c = digest(state.generator), digest(state.critic)
        if snap:
            if phase == "critic":
                assert g == snap["g"]
                changed["critic"] += c != snap["c"]
            else:
                assert c == snap["c"]
                changed["generator"] += g != snap["g"]
        snap.update(g=g, c=c)

    tr.train(tiny(max_generator_steps=4, epochs=4), data=pairs, phi=phi, on_update=check)
    assert changed["critic"] == 19 and changed["generator"] == 4


def test_nan_aborts_loudly(pairs, phi):
    def poison(phase, state):
        if state.generator_step == 2:
            with torch.no_grad():
                next(state.generator.parameters()).fill_(float("nan"))

    with pytest.raises(NumericalError):
        tr.train(tiny(epochs=5), data=pairs, phi=phi, on_update=poison)


def test_training_needs_references(tmp_path):
    data.write_image(tmp_path / "hazy" / "a.png", np.full((16, 16, 3), 0.5))
    m = data.load_manifest(tmp_path)
    with pytest.raises(DataError):
        tr.train(tiny(), m)


def test_checkpoint_interval_files(pairs, phi, tmp_path):
    tr.train(tiny(epochs=2, checkpoint_dir=str(tmp_path), checkpoint_interval=3), data=pairs, phi=phi)
    names = sorted(p.name for p in tmp_path.iterdir())
    # 10 pairs at batch 2 -> 10 generator steps
    assert names == ["last.ckpt", "step_00000003.ckpt", "step_00000006.ckpt", "step_00000009.ckpt"]
    assert tr.read_checkpoint_header(tmp_path / "last.ckpt")["counters"]["generator_step"] == 10


def test_dehaze_batch_shape(pairs, phi):
    state, _ = tr.train(tiny(max_generator_steps=1), data=pairs, phi=phi)
    I, _ = pairs.batch([0, 1])
    out = tr.dehaze_batch(state.generator, I)
    assert out.shape == I.shape and not out.requires_grad


@pytest.fixture(scope="module")
def two_domains(tmp_path_factory):
    root = tmp_path_factory.mktemp("domains")
    a = data.generate_synthetic_dataset(root / "a", 60, 32, seed=11, k_range=(0.1, 0.4), airlight_range=(0.9, 1.0))
    b = data.generate_synthetic_dataset(root / "b", 60, 32, seed=12, k_range=(0.9, 1.4), airlight_range=(0.6, 0.75))
    return a, data.split(b, 0.2, seed=0)


def test_transfer_improves_new_domain(two_domains, phi):
    src, b = two_domains
    cfg = tr.TrainConfig(
        image_size=32,
        generator=GeneratorSpec(base_width=8, depth=5),
        critic=CriticSpec(widths=(8, 16)),
        batch_size=4,
        epochs=10,
        max_generator_steps=120,
        seed=0,
    )
    base, _ = tr.train(cfg, src, phi=phi)
    moved, _ = tr.transfer_learn(base, cfg, b.train, phi=phi)
    test = data.PairTensors(b.test, 32)
    I, J = test.batch(range(len(test)))

    def mean_psnr(g):
        out = tr.dehaze_batch(g, I)
        return np.mean([metrics.psnr(data.from_net_tensor(J[k]), data.from_net_tensor(out[k])) for k in range(len(test))])

    assert mean_psnr(moved.generator) > mean_psnr(base.generator)
