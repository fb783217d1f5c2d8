import numpy as np
import pytest
from numpy.testing import assert_array_equal

from diffgan_tts.diffusion import make_variance_schedule
from diffgan_tts.errors import CheckpointError, ScheduleError
from diffgan_tts.inference import (
    InferenceRequest,
    denoise_chain,
    resolve_schedule,
    save_mel,
    shallow_one_step,
    spectral_centroid,
    variation_analysis,
    write_pgm,
)
from diffgan_tts.store import ParameterStore
from diffgan_tts.tensor import no_grad
from diffgan_tts.tensorio import read_tensors


@pytest.fixture
def diffgan_store(tiny_cfg):
    return ParameterStore.create(tiny_cfg, seed=21)


@pytest.fixture
def two_stage_store(tiny_cfg):
    return ParameterStore.create(tiny_cfg, seed=21, kind="two-stage")


def test_single_step_chain_returns_decoder_prediction(diffgan_store):
    req = InferenceRequest([1, 5, 9], speaker=1, T_override=1, seed=4)
    result = denoise_chain(req, diffgan_store)
    assert result.decoder_passes == 1
    gen = diffgan_store.generator
    with no_grad():
        cond = gen.condition(req.tokens, req.speaker)
        x_T = np.random.default_rng(4).standard_normal((cond.frames, gen.cfg.mel_bins))
        expected = gen.denoise(x_T, cond, 1, req.speaker).data
    assert_array_equal(result.mel, expected)


def test_chain_is_seed_deterministic(diffgan_store):
    req = InferenceRequest([2, 3, 4, 5], speaker=0, seed=7)
    a, b = denoise_chain(req, diffgan_store), denoise_chain(req, diffgan_store)
    assert_array_equal(a.mel, b.mel)
    c = denoise_chain(InferenceRequest([2, 3, 4, 5], speaker=0, seed=8), diffgan_store)
    assert not np.array_equal(a.mel, c.mel)


def test_chain_trace_runs_from_T_down(diffgan_store):
    result = denoise_chain(InferenceRequest([1, 2], speaker=0, seed=1), diffgan_store, keep_trace=True)
    assert [t for t, _ in result.trace] == [4, 3, 2, 1]
    assert result.decoder_passes == 4
    assert all(x.shape == result.mel.shape for _, x in result.trace)
    assert result.mel.shape[0] == int(result.durations.sum())


def test_resolve_schedule_override(diffgan_store):
    gen = diffgan_store.generator
    assert resolve_schedule(gen, InferenceRequest([1], 0), None).T == 4
    assert resolve_schedule(gen, InferenceRequest([1], 0, T_override=2), None).T == 2
    custom = make_variance_schedule(4, 0.0, 0.0)
    assert resolve_schedule(gen, InferenceRequest([1], 0), custom) is custom
    assert resolve_schedule(gen, InferenceRequest([1], 0, T_override=2), custom).beta_max == 0.0


@pytest.mark.parametrize("T_override", [0, -3, 2.5])
def test_invalid_T_override_is_rejected(T_override):
    with pytest.raises(ScheduleError, match="T override"):
        InferenceRequest([1], 0, T_override=T_override)


def test_shallow_one_step_ignores_T_override(two_stage_store, caplog):
    plain = shallow_one_step(InferenceRequest([3, 4], speaker=1, seed=2), two_stage_store)
    with caplog.at_level("WARNING", logger="diffgan_tts.inference"):
        result = shallow_one_step(InferenceRequest([3, 4], speaker=1, T_override=2, seed=2), two_stage_store)
    assert "ignored" in caplog.text
    assert result.decoder_passes == 1
    assert_array_equal(result.mel, plain.mel)


def test_shallow_one_step_pass_counts(two_stage_store):
    result = shallow_one_step(InferenceRequest([3, 4, 5], speaker=2, seed=0), two_stage_store)
    assert (result.decoder_passes, result.basic_passes) == (1, 1)
    assert result.mel.shape == (int(result.durations.sum()), two_stage_store.cfg.mel_bins)


def test_chain_pass_counts_are_per_call(diffgan_store):
    counts = [denoise_chain(InferenceRequest([2, 3], 0, T_override=T), diffgan_store).decoder_passes for T in (4, 2, 1, 4)]
    assert counts == [4, 2, 1, 4]
    assert not hasattr(diffgan_store.generator.decoder, "passes")


def test_shallow_one_step_zero_head_gives_zero_mel(two_stage_store):
    head = two_stage_store.generator.decoder.output_proj
    head.weight.data[:] = 0.0
    head.bias.data[:] = 0.0
    result = shallow_one_step(InferenceRequest([3, 4], speaker=0, seed=0), two_stage_store)
    assert_array_equal(result.mel, np.zeros_like(result.mel))


def test_shallow_one_step_needs_two_stage(diffgan_store, tiny_cfg):
    with pytest.raises(CheckpointError, match="two-stage"):
        shallow_one_step(InferenceRequest([1], 0), diffgan_store)
    with pytest.raises(CheckpointError):
        denoise_chain(InferenceRequest([1], 0), ParameterStore.create(tiny_cfg, kind="basic"))


def test_variation_same_seed_has_no_spread(diffgan_store):
    req = InferenceRequest([1, 2, 3], speaker=0)
    same = variation_analysis(req, diffgan_store, seeds=[5, 5, 5])
    assert same.contour_variance() == 0.0
    spread = variation_analysis(InferenceRequest([1, 2, 3], speaker=0, seed=5, n_samples=3), diffgan_store)
    assert spread.seeds == [5, 6, 7]
    assert spread.contour_variance() > 0.0
    with pytest.raises(ValueError, match="at least 2"):
        variation_analysis(req, diffgan_store, seeds=[1])


def test_variation_csv(diffgan_store, tmp_path):
    result = variation_analysis(InferenceRequest([1, 2], speaker=0, n_samples=2), diffgan_store)
    lines = result.write_csv(tmp_path / "var.csv").read_text().splitlines()
    assert lines[0] == "sample,seed,frame,energy,centroid"
    assert len(lines) == 1 + sum(m.shape[0] for m in result.mels)


def test_spectral_centroid_of_flat_frame():
    assert_array_equal(spectral_centroid(np.zeros((2, 5))), [2.0, 2.0])


def test_write_pgm_header_and_scaling(tmp_path):
    mel = np.array([[0.0, 1.0, 2.0], [4.0, 3.0, 2.0]])
    data = write_pgm(tmp_path / "m.pgm", mel).read_bytes()
    header = b"P5\n2 3\n255\n"
    assert data.startswith(header)
    pixels = np.frombuffer(data[len(header):], dtype=np.uint8).reshape(3, 2)
    assert_array_equal(pixels, [[0, 255], [64, 191], [128, 128]])
    flat = write_pgm(tmp_path / "flat.pgm", np.ones((2, 2))).read_bytes()
    assert flat.endswith(bytes(4))


def test_save_mel_meta(diffgan_store, tmp_path):
    req = InferenceRequest([1, 2], speaker=1, seed=3)
    result = denoise_chain(req, diffgan_store)
    tf = read_tensors(save_mel(tmp_path / "out.dgtt", result, req, "chain"))
    assert tf.meta["mode"] == "chain" and tf.meta["decoder_passes"] == "4"
    assert tf.tensors["mel"].shape == result.mel.shape
