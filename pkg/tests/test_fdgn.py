import numpy as np
import pytest

from choreoforge import diffusion, fdgn, motion as mo
from choreoforge import tensor as T
from choreoforge.errors import CheckpointError, ContractError

SMALL = fdgn.FDGNConfig(hidden=16, music_hidden=16, step_dim=8, diffusion_steps=5)


def test_gate_closed_is_identity(rng):
    refine = fdgn.RefineNet(rng)
    refine.conv.weight.data = rng.normal(size=refine.conv.weight.shape).astype(np.float32)
    refine.gate.data[:] = -1e4
    body, hand = rng.normal(size=(120, 69)), rng.normal(size=(120, 90))
    out = fdgn.assemble(body, hand, refine)
    np.testing.assert_array_equal(out.frames, np.concatenate([body, hand], 1).astype(np.float32))


def test_zero_conv_is_identity_for_any_gate(rng):
    refine = fdgn.RefineNet(rng)
    refine.gate.data = rng.normal(size=159).astype(np.float32) * 5
    body, hand = rng.normal(size=(120, 69)), rng.normal(size=(120, 90))
    out = fdgn.assemble(body, hand, refine)
    np.testing.assert_array_equal(out.frames, np.concatenate([body, hand], 1).astype(np.float32))


def test_identity_kernel_half_gate_gives_one_and_a_half(rng):
    refine = fdgn.RefineNet(rng)
    w = np.zeros(refine.conv.weight.shape, np.float32)
    w[1] = np.eye(159)
    refine.conv.weight.data = w
    body, hand = rng.normal(size=(120, 69)), rng.normal(size=(120, 90))
    raw = np.concatenate([body, hand], 1).astype(np.float32)
    np.testing.assert_allclose(fdgn.assemble(body, hand, refine).frames, 1.5 * raw, rtol=1e-6, atol=1e-6)


def test_assemble_shape_errors(rng):
    refine = fdgn.RefineNet(rng)
    with pytest.raises(ContractError):
        fdgn.assemble(np.zeros((120, 68)), np.zeros((120, 90)), refine)
    with pytest.raises(ContractError):
        fdgn.assemble(np.zeros((120, 69)), np.zeros((119, 90)), refine)


@pytest.mark.parametrize("trunk", ["mlp", "attention"])
def test_expert_output_shapes(trunk, rng):
    cfg = fdgn.FDGNConfig(hidden=16, music_hidden=16, step_dim=8, trunk=trunk)
    body = fdgn.ExpertDenoiser(69, 35, cfg, rng)
    hand = fdgn.ExpertDenoiser(90, 69 + 35, cfg, rng)
    steps = np.array([1, 7])
    yb = body(T.Tensor(rng.normal(size=(2, 120, 69))), steps, rng.normal(size=(2, 120, 35)))
    yh = hand(T.Tensor(rng.normal(size=(2, 120, 90))), steps, rng.normal(size=(2, 120, 104)))
    assert yb.shape == (2, 120, 69) and yh.shape == (2, 120, 90)
    with pytest.raises(ContractError):
        body(T.Tensor(np.zeros((2, 120, 70))), steps, np.zeros((2, 120, 35)))
    with pytest.raises(ContractError):
        body(T.Tensor(np.zeros((2, 120, 69))), steps, np.zeros((2, 110, 35)))


def test_zero_output_layer_loss_is_mean_square(rng):
    expert = fdgn.ExpertDenoiser(69, 35, SMALL, rng)
    x0 = rng.normal(size=(3, 120, 69)).astype(np.float32)
    loss = diffusion.training_loss(expert, x0, rng.normal(size=(3, 120, 35)), diffusion.default_schedule(5), rng)
    assert loss.item() == pytest.approx(float(np.mean(x0.astype(np.float64) ** 2)), rel=1e-6)


def test_hand_output_depends_on_body_condition(rng):
    hand = fdgn.ExpertDenoiser(90, 69 + 35, SMALL, rng)
    hand.out.weight.data = rng.normal(size=hand.out.weight.shape).astype(np.float32)
    x = T.Tensor(rng.normal(size=(1, 120, 90)))
    cond = rng.normal(size=(1, 120, 104)).astype(np.float32)
    with T.no_grad():
        base = hand(x, np.array([3]), cond).data
        bumped = cond.copy()
        bumped[0, :, 10] += 1e-2
        moved = hand(x, np.array([3]), bumped).data
    assert np.abs(moved - base).max() > 0


def test_step_embedding_shape_and_range():
    e = fdgn.step_embedding(np.array([1, 25, 50]), 16)
    assert e.shape == (3, 16) and np.all(np.abs(e) <= 1)
    assert not np.allclose(e[0], e[1])


def test_training_contract_errors():
    with pytest.raises(ContractError):
        fdgn.train_fdgn([], [])
    with pytest.raises(ContractError):
        fdgn.train_fdgn([np.zeros((120, 35))], [])
    with pytest.raises(ContractError):
        fdgn.FDGN(fdgn.FDGNConfig(trunk="lstm"))
    with pytest.raises(ContractError):
        fdgn.make_optimizer({}, fdgn.TrainConfig(optimizer="rmsprop"))


def test_constant_dataset_samples_the_constant(rng):
    music = [rng.normal(size=(120, 35)) for _ in range(4)]
    frames = [mo.MotionFragment(np.full((120, 159), 0.3)) for _ in range(4)]
    result = fdgn.train_fdgn(music, frames, fdgn.TrainConfig(steps=10, batch=4), SMALL)
    out = fdgn.generate_candidates(result.model, music[0], 3, seed=9)
    for f in out:
        assert np.sqrt(np.mean((f.frames.astype(np.float64) - 0.3) ** 2)) < 0.1


def test_tiny_training_reduces_probe_loss(tiny_fdgn):
    assert tiny_fdgn.probe_final["total"] < tiny_fdgn.probe_initial["total"]
    assert len(tiny_fdgn.history) == 30
    assert set(tiny_fdgn.history[0]) == {"total", "body", "hand", "refine"}


def test_candidates_deterministic_and_distinct(tiny_fdgn, tiny_train):
    model, music = tiny_fdgn.model, tiny_train[0].features
    a = fdgn.generate_candidates(model, music, 1, seed=4)
    b = fdgn.generate_candidates(model, music, 1, seed=4)
    assert a[0] == b[0]
    same_seed_gap = np.linalg.norm(a[0].frames - b[0].frames)
    many = fdgn.generate_candidates(model, music, 8, seed=4)
    gaps = [np.linalg.norm(many[i].frames - many[j].frames) for i in range(8) for j in range(i + 1, 8)]
    assert min(gaps) > 0
    assert np.mean(gaps) > 10 * same_seed_gap
    assert all(len(f) == 120 and f.frames.shape[1] == 159 for f in many)
    # candidate i only draws from its own stream
    assert many[0] == a[0]
    with pytest.raises(ContractError):
        fdgn.generate_candidates(model, music, 0, seed=4)


def test_checkpoint_roundtrip(tmp_path, tiny_fdgn, tiny_train):
    path = tmp_path / "f.cftn"
    tiny_fdgn.model.save(path)
    back = fdgn.FDGN.load(path)
    music = tiny_train[1].features
    assert fdgn.generate_candidates(back, music, 2, 1) == fdgn.generate_candidates(tiny_fdgn.model, music, 2, 1)
    with pytest.raises(CheckpointError):
        fdgn.FDGN.load(tmp_path / "missing.cftn")
    (tmp_path / "f.cftn.json").write_text('{"kind": "retrieval", "config": {}}')
    with pytest.raises(CheckpointError):
        fdgn.FDGN.load(path)


def test_sample_rejects_bad_music(tiny_fdgn):
    with pytest.raises(ContractError):
        tiny_fdgn.model.sample(np.zeros((120, 34)), [np.random.default_rng(0)])
