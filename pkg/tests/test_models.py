"""Network builder tests: closed-form shape schedules, phase shuffle
semantics, skip wiring, forward determinism, progressive chaining."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prowave import autodiff as ad
from prowave.autodiff import ParameterError, ShapeError, Tape, Tensor
from prowave.models import (
    Pipeline,
    build_autoencoder,
    build_discriminator,
    build_generator,
    chain,
    critic_scores,
    forward,
    init_params,
    phase_shuffle,
    shape_trace,
)


def conv_lengths(trace):
    return [s[0] for s in trace if len(s) == 2]


# ---------------------------------------------------------------------------
# shape schedules


@pytest.mark.parametrize("d", [1, 2, 4, 64])
def test_generator_length_schedule(d):
    spec = build_generator(d)
    lengths = []
    for shape in shape_trace(spec):
        if len(shape) == 2 and (not lengths or shape[0] != lengths[-1]):
            lengths.append(shape[0])
    assert lengths == [16, 64, 256, 1024, 4096, 16384]
    assert shape_trace(spec)[-1] == (16384, 1)


@pytest.mark.parametrize("d", [1, 2, 4, 64])
def test_generator_channel_schedule(d):
    spec = build_generator(d)
    tconvs = [l for l in spec.layers if l.kind == "tconv"]
    assert [l.in_channels for l in tconvs] == [16 * d, 8 * d, 4 * d, 2 * d, d]
    assert [l.out_channels for l in tconvs] == [8 * d, 4 * d, 2 * d, d, 1]
    assert all(l.kernel == 25 and l.stride == 4 for l in tconvs)


@pytest.mark.parametrize("d", [1, 2, 4, 64])
def test_discriminator_length_schedule(d):
    spec = build_discriminator(d)
    lengths = []
    for shape in shape_trace(spec):
        if len(shape) == 2 and (not lengths or shape[0] != lengths[-1]):
            lengths.append(shape[0])
    assert lengths == [16384, 4096, 1024, 256, 64, 16]
    assert shape_trace(spec)[-1] == (1,)


@pytest.mark.parametrize("d", [1, 2, 4, 64])
def test_autoencoder_bottleneck_and_lengths(d):
    spec = build_autoencoder(d)
    trace = shape_trace(spec)
    assert trace[8] == (64, 8 * d)  # after four conv+relu pairs
    assert trace[0] == (16384, 1)
    assert trace[-1] == (16384, 1)


def test_autoencoder_canonical_bottleneck_is_64x512():
    assert shape_trace(build_autoencoder(64))[8] == (64, 512)


def test_builders_reject_zero_dim():
    with pytest.raises(ParameterError):
        build_generator(0)
    with pytest.raises(ParameterError):
        build_discriminator(0)
    with pytest.raises(ParameterError):
        build_autoencoder(0)


# ---------------------------------------------------------------------------
# phase shuffle


def test_phase_shuffle_zero_is_identity():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 8, 3)).astype(np.float32))
    out = phase_shuffle(x, 0, np.random.default_rng(1))
    assert out is x


def test_phase_shuffle_known_shifts():
    x = np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32).reshape(1, 4, 1)

    class FixedRng:
        def __init__(self, k):
            self.k = k

        def integers(self, lo, hi, size):
            return np.full(size, self.k, dtype=np.int64)

    plus = phase_shuffle(Tensor(x), 1, FixedRng(1))
    assert np.array_equal(plus.data[0, :, 0], [2.0, 3.0, 4.0, 3.0])
    minus = phase_shuffle(Tensor(x), 1, FixedRng(-1))
    assert np.array_equal(minus.data[0, :, 0], [2.0, 1.0, 2.0, 3.0])


@given(
    batch=st.integers(1, 3),
    length=st.integers(8, 64),
    channels=st.integers(1, 4),
    n=st.integers(0, 4),
    seed=st.integers(0, 10_000),
)
@settings(max_examples=60, deadline=None)
def test_phase_shuffle_properties(batch, length, channels, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, length, channels)).astype(np.float32)
    out = phase_shuffle(Tensor(x), n, rng).data
    assert out.shape == x.shape
    for b in range(batch):
        for c in range(channels):
            series = x[b, :, c]
            shifted = out[b, :, c]
            # some shift k in {-n..n} matches everywhere it is defined,
            # leaving at most |k| <= n boundary samples replaced
            ok = False
            for k in range(-n, n + 1):
                idx = np.arange(length) + k
                valid = (idx >= 0) & (idx < length)
                if (np.array_equal(shifted[valid], series[idx[valid]])
                        and np.count_nonzero(~valid) <= n):
                    ok = True
                    break
            assert ok


def test_phase_shuffle_rejects_short_series():
    x = Tensor(np.zeros((1, 2, 1), dtype=np.float32))
    with pytest.raises(ParameterError):
        phase_shuffle(x, 2, np.random.default_rng(0))


def test_phase_shuffle_gradient_flows():
    x = Tensor(np.random.default_rng(0).normal(size=(1, 8, 1)).astype(np.float32),
               tracked=True)
    with Tape() as tape:
        out = phase_shuffle(x, 2, np.random.default_rng(3))
        loss = ad.reduce_mean(ad.mul(out, out))
    g = tape.gradients(loss)[x]
    assert g.shape == x.shape
    assert np.all(np.isfinite(g.data))


# ---------------------------------------------------------------------------
# forward evaluation


def test_generator_forward_deterministic_and_bounded():
    spec = build_generator(1)
    rng = np.random.default_rng(5)
    params = init_params(spec, rng)
    z = np.random.default_rng(7).uniform(-1, 1, (2, 100)).astype(np.float32)
    a = forward(spec, params, z).data
    b = forward(spec, params, z).data
    assert np.array_equal(a, b)
    assert a.shape == (2, 16384, 1)
    assert np.all(a >= -1.0) and np.all(a <= 1.0)
    assert np.all(np.isfinite(a))


def test_generator_zero_noise_in_range():
    spec = build_generator(1)
    params = init_params(spec, np.random.default_rng(0))
    out = forward(spec, params, np.zeros((1, 100), dtype=np.float32)).data
    assert np.all(np.isfinite(out))
    assert np.all(np.abs(out) <= 1.0)


def test_generator_output_bounded_for_extreme_params():
    spec = build_generator(1)
    params = init_params(spec, np.random.default_rng(0))
    blown = {k: Tensor(p.data * 1e4, tracked=True) for k, p in params.items()}
    out = forward(spec, blown, np.ones((1, 100), dtype=np.float32)).data
    assert np.all(out >= -1.0) and np.all(out <= 1.0)


def test_discriminator_scores_clip():
    gen = build_generator(1)
    disc = build_discriminator(1, shuffle_n=2)
    rng = np.random.default_rng(1)
    gp = init_params(gen, rng)
    dp = init_params(disc, rng)
    clip = forward(gen, gp, np.zeros((3, 100), dtype=np.float32))
    score = critic_scores(disc, dp, clip, rng)
    assert score.shape == (3,)
    assert np.all(np.isfinite(score.data))


def test_discriminator_shuffle_zero_deterministic():
    disc = build_discriminator(1, shuffle_n=0)
    dp = init_params(disc, np.random.default_rng(2))
    x = np.random.default_rng(3).uniform(-1, 1, (2, 16384, 1)).astype(np.float32)
    a = critic_scores(disc, dp, x).data
    b = critic_scores(disc, dp, x).data
    assert np.array_equal(a, b)


def test_forward_shape_error_names_layer():
    spec = build_generator(1)
    params = init_params(spec, np.random.default_rng(0))
    with pytest.raises(ShapeError) as ei:
        forward(spec, params, np.zeros((1, 64), dtype=np.float32))
    assert "layer 0" in str(ei.value)


def test_autoencoder_zero_decoder_passes_input_through_tanh():
    spec = build_autoencoder(1)
    params = init_params(spec, np.random.default_rng(4))
    for i, layer in enumerate(spec.layers):
        if layer.kind == "tconv":  # zero every decoder parameter
            for suffix in ("weight", "bias"):
                name = f"layer{i:02d}.{suffix}"
                params[name] = Tensor(np.zeros_like(params[name].data), tracked=True)
    x = np.random.default_rng(5).uniform(-0.5, 0.5, (1, 16384, 1)).astype(np.float32)
    out = forward(spec, params, x).data
    assert np.allclose(out, np.tanh(x), atol=1e-6)


def test_autoencoder_preserves_length():
    spec = build_autoencoder(1)
    params = init_params(spec, np.random.default_rng(6))
    x = np.random.default_rng(7).uniform(-1, 1, (1, 16384, 1)).astype(np.float32)
    assert forward(spec, params, x).shape == (1, 16384, 1)


def test_autoencoder_overfits_one_fixture():
    # adversarial machinery aside, the refiner must be able to learn identity
    from prowave.audio import fit_length, synth_fixture
    from prowave.training import AdamState, adam_step

    spec = build_autoencoder(1)
    rng = np.random.default_rng(8)
    params = init_params(spec, rng)
    state = AdamState.zeros(params)
    x = fit_length(synth_fixture("tone", seed=1)).samples.reshape(1, 16384, 1) * 0.5
    target = Tensor(x)
    for _ in range(200):
        with Tape() as tape:
            out = forward(spec, params, Tensor(x))
            loss = ad.reduce_mean(ad.square(ad.sub(out, target)))
        gmap = tape.gradients(loss, wrt=list(params.values()))
        grads = {k: gmap[p].data for k, p in params.items()}
        params, state = adam_step(params, grads, state, 1e-3, 0.9, 0.999)
    out = forward(spec, params, Tensor(x)).data.ravel()
    corr = np.corrcoef(out, x.ravel())[0, 1]
    assert corr > 0.9


# ---------------------------------------------------------------------------
# chaining


def make_stage(builder, d, seed):
    spec = builder(d)
    return spec, init_params(spec, np.random.default_rng(seed))


def test_chain_single_stage_is_plain_generator():
    spec, params = make_stage(build_generator, 1, 0)
    pipe = chain([(spec, params)])
    z = np.random.default_rng(1).uniform(-1, 1, (2, 100)).astype(np.float32)
    assert np.array_equal(pipe.run(z).data, forward(spec, params, z).data)


def test_chain_generator_then_autoencoder():
    g = make_stage(build_generator, 1, 0)
    a = make_stage(build_autoencoder, 1, 1)
    pipe = chain([g, a])
    z = np.random.default_rng(2).uniform(-1, 1, (1, 100)).astype(np.float32)
    out, intermediates = pipe.run(z, keep_intermediate=True)
    assert out.shape == (1, 16384, 1)
    assert len(intermediates) == 2
    assert intermediates[0].shape == (1, 16384, 1)


def test_chain_empty_raises():
    with pytest.raises(ParameterError):
        chain([])


def test_chain_incompatible_stages_raises():
    g = make_stage(build_generator, 1, 0)
    with pytest.raises(ShapeError):
        chain([g, g])  # second generator expects a noise vector, gets audio
