import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hoigraph.cli import micro_gradcheck
from hoigraph.data import SegmentSample, VideoSequence
from hoigraph.model import HOIModel, ModelConfig
from hoigraph.synth import SynthSpec, generate_videos
from hoigraph.tensor import ContractError, Tensor, backward, softmax
from hoigraph.training import (
    Checkpoint,
    CheckpointError,
    TrainConfig,
    anticipation_shift,
    build_examples,
    loss_from_scores,
    lr_schedule,
    total_loss,
    train_stage1,
    train_stage2,
    video_loss,
)

UNIFORM_LOSS = math.log(10) + 2 * math.log(12)


def test_uniform_loss_value():
    h = np.full(10, 0.1)
    o = np.full((1, 12), 1 / 12)
    assert total_loss(h, o, 3, [7], 2.0).item() == pytest.approx(UNIFORM_LOSS, abs=1e-9)
    assert UNIFORM_LOSS == pytest.approx(7.272399, abs=1e-6)
    two = total_loss(h, np.full((2, 12), 1 / 12), 3, [7, 1], 2.0).item()
    assert two == pytest.approx(UNIFORM_LOSS, abs=1e-9)


def test_perfect_prediction_zero_loss():
    h = np.eye(10)[4]
    o = np.eye(12)[[2, 9]]
    assert total_loss(h, o, 4, [2, 9]).item() == 0.0


def test_no_objects_is_human_loss_only():
    h = np.full(10, 0.1)
    assert total_loss(h, None, 0, []).item() == pytest.approx(math.log(10), abs=1e-12)


def test_out_of_range_targets():
    with pytest.raises(ContractError):
        total_loss(np.full(10, 0.1), None, 10, [])
    with pytest.raises(ContractError):
        total_loss(np.full(10, 0.1), np.full((1, 12), 1 / 12), 0, [12])


@given(st.integers(0, 2**31), st.integers(0, 3), st.floats(0.1, 5))
@settings(max_examples=40, deadline=None)
def test_scores_loss_matches_distribution_loss(seed, n, lam):
    rng = np.random.default_rng(seed)
    h, o = rng.standard_normal(10) * 3, rng.standard_normal((n, 12)) * 3
    y_h, y_o = int(rng.integers(10)), [int(v) for v in rng.integers(12, size=n)]
    a = loss_from_scores(Tensor(h), Tensor(o) if n else None, y_h, list(enumerate(y_o)), lam)
    b = total_loss(softmax(Tensor(h)), softmax(Tensor(o)) if n else None, y_h, y_o, lam)
    assert a.item() >= 0
    assert a.item() == pytest.approx(b.item(), rel=1e-10, abs=1e-12)


def test_lr_schedule_values():
    assert lr_schedule(0) == 2e-5
    assert lr_schedule(9) == 2e-5
    assert lr_schedule(10) == 2e-5 * 0.8
    assert lr_schedule(10) == pytest.approx(1.6e-5, rel=1e-15)
    assert lr_schedule(35) == pytest.approx(1.024e-5, rel=1e-15)
    assert TrainConfig().epochs == 300


def test_lr_for_stage2_override():
    cfg = TrainConfig(lr=1e-3, stage2_lr=1e-4)
    assert cfg.lr_for(1, 0) == 1e-3
    assert cfg.lr_for(2, 10) == pytest.approx(0.8e-4)


def test_train_config_validation():
    for kw in (dict(lam=0), dict(task="other"), dict(lr=0), dict(grad_accum=0)):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


# anticipation ---------------------------------------------------------------------------

def seg(m, labels, ids, affs):
    n = len(ids)
    return SegmentSample("v", m, np.zeros((2, n + 1, 8), np.float32),
                         np.zeros((2, n + 1, 4), np.float32), labels, affs, ids)


def test_anticipation_pairs():
    v = VideoSequence("v", [seg(0, 1, [1, 2], [0, 1]), seg(1, 2, [2, 3], [5, 6]),
                            seg(2, 3, [1], [7])])
    pairs = anticipation_shift(v)
    assert len(pairs) == 2
    assert (pairs[0].subactivity, pairs[0].targets) == (2, [(1, 5)])
    assert (pairs[1].subactivity, pairs[1].targets) == (3, [])
    assert anticipation_shift(VideoSequence("v", [seg(0, 1, [1], [0])])) == []


@given(st.integers(1, 6))
def test_anticipation_pair_count(m):
    v = VideoSequence("v", [seg(i, i, [1], [i]) for i in range(m)])
    assert len(anticipation_shift(v)) == m - 1


# training ---------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny():
    videos, _ = generate_videos(SynthSpec(seed=1, n_videos=3, segments_per_video=3,
                                          objects_range=(1, 2), d_in=8, frames_range=(3, 6),
                                          n_test_videos=0))
    return videos


def micro_config(**kw):
    return ModelConfig.micro(**kw)


def test_stage1_loss_decreases_over_first_steps(tiny):
    model = HOIModel(micro_config(), 0)
    ex = build_examples(model, tiny[:1], "detect")[0]
    x, (y_h, tg) = ex.inputs[0], ex.targets[0]
    from hoigraph.optim import Adam
    params = model.stage_parameters(1)
    opt = Adam(params)
    losses = []
    for _ in range(10):
        fo = model.frame_forward(x)
        loss = loss_from_scores(fo.human_scores(), fo.object_scores(), y_h, tg, 2.0)
        params.zero_grad()
        backward(loss)
        opt.step(lr_schedule(0))
        losses.append(loss.item())
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_every_parameter_gets_gradient(tiny):
    model = HOIModel(micro_config(), 0)
    rng = np.random.default_rng(0)
    for block in model.spatial.blocks:
        block.adj_learned.data[...] = 0.1 * rng.standard_normal(block.adj_learned.shape)
    ex = build_examples(model, tiny[:1], "detect")[0]
    backward(video_loss(model, ex, TrainConfig()))
    for name, p in model.parameters().items():
        g = p.grad if "adj_learned" not in name else p.grad[:3, :3]
        assert np.abs(g).max() > 0, name


def test_stage2_starts_from_stage1(tiny):
    cfg = TrainConfig(epochs=1, stage2_epochs=0, lr=1e-3)
    r1 = train_stage1(tiny, micro_config(), cfg)
    ck = r1.checkpoint()
    assert set(ck.params) == set(r1.model.stage_parameters(1))
    r2 = train_stage2(tiny, ck, cfg)
    for name, value in ck.params.items():
        np.testing.assert_array_equal(r2.model.parameters()[name].data, value.astype(np.float64))


def test_stage2_rejects_no_seg_rnn(tiny):
    cfg = TrainConfig(epochs=1)
    r1 = train_stage1(tiny, micro_config(ablations=("no-seg-rnn",)), cfg)
    with pytest.raises(CheckpointError):
        train_stage2(tiny, r1.checkpoint(), cfg)


def test_empty_training_set():
    with pytest.raises(ValueError):
        train_stage1([], micro_config(), TrainConfig(epochs=1))


def test_training_is_deterministic(tiny):
    def run():
        cfg = TrainConfig(epochs=2, stage2_epochs=1, lr=1e-3, seed=4)
        r1 = train_stage1(tiny, micro_config(), cfg)
        r2 = train_stage2(tiny, r1.checkpoint(), cfg)
        return r1.checkpoint().to_bytes() + r2.checkpoint().to_bytes(), r1.log + r2.log

    (a, la), (b, lb) = run(), run()
    assert a == b
    assert la == lb


def test_anticipation_training_runs(tiny):
    cfg = TrainConfig(epochs=1, stage2_epochs=1, task="anticipate", lr=1e-3)
    r1 = train_stage1(tiny, micro_config(), cfg)
    r2 = train_stage2(tiny, r1.checkpoint(), cfg)
    assert r2.log[-1]["stage"] == 2


# checkpoints ---------------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, tiny):
    cfg = TrainConfig(epochs=1, stage2_epochs=1, lr=1e-3)
    r1 = train_stage1(tiny, micro_config(), cfg)
    r2 = train_stage2(tiny, r1.checkpoint(), cfg)
    ck = r2.checkpoint()
    ck.save(tmp_path / "a.ckpt")
    loaded = Checkpoint.load(tmp_path / "a.ckpt")
    loaded.save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert loaded.adam_step == ck.adam_step == 3
    assert loaded.model_config == ck.model_config
    model = loaded.build_model()
    for name, p in model.parameters().items():
        np.testing.assert_array_equal(p.data, ck.params[name].astype(np.float64))


def test_checkpoint_header_is_text(tmp_path, tiny):
    r1 = train_stage1(tiny, micro_config(), TrainConfig(epochs=1))
    raw = r1.checkpoint().to_bytes()
    assert raw.startswith(b"LGTNCKPT\n")
    n = int.from_bytes(raw[9:17], "little")
    header = raw[17:17 + n].decode("utf-8")
    assert '"tensors"' in header and '"model_config"' in header


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(b"garbage")
    with pytest.raises(CheckpointError):
        Checkpoint.load(tmp_path / "missing.ckpt")


def test_checkpoint_shape_mismatch(tiny):
    r1 = train_stage1(tiny, micro_config(), TrainConfig(epochs=1))
    other = HOIModel(micro_config(hidden=8), 0)
    with pytest.raises(CheckpointError):
        r1.checkpoint().restore_into(other, strict=False)


# gradient check -------------------------------------------------------------------------------

def test_micro_gradcheck_passes():
    report = micro_gradcheck(max_elements=6)
    assert report.passed, "\n".join(report.lines())
    names = {c.name for c in report.results}
    assert any("w_c1" in n for n in names) and any("score_hidden" in n for n in names)


def test_micro_gradcheck_detects_injected_bug():
    assert not micro_gradcheck(max_elements=6, inject_bug=True).passed
