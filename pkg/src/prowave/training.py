"""Adversarial training: regularised Wasserstein losses, Adam, the per-stage
critic/generator loop, the two-stage progressive schedule, checkpointing and
clip generation.

Training the refinement stage conditions its generator on frozen first-stage
outputs while the critic compares against real clips; the first stage's
parameters are never updated again.
"""
from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterError, ShapeError, Tape, Tensor
from .audio import AudioClip, SAMPLE_RATE
from .models import (
    ModelParams,
    NetworkSpec,
    Pipeline,
    build_autoencoder,
    build_discriminator,
    build_generator,
    critic_scores,
    forward,
    init_params,
)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PWAVCKPT"
CHECKPOINT_VERSION = 1


class DomainError(ValueError):
    """Input lies outside the mathematical domain of the loss."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the diagnostic checkpoint if written."""

    def __init__(self, message: str, checkpoint_path: Path | None = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class CheckpointFormatError(ValueError):
    pass


@dataclass
class TrainConfig:
    lambda_gp: float = 10.0
    n_critic: int = 5
    adam_alpha: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    batch_size: int = 8
    stage1_iters: int = 2000
    stage2_iters: int = 500
    model_dim: int = 1
    shuffle_n: int = 2
    noise_range: str = "unit_signed"  # or unit_positive
    seed: int = 0
    identity_weight: float = 0.0  # optional stage-2 reconstruction regulariser
    metrics_every: int = 1
    checkpoint_every: int = 0  # 0: only the final checkpoint is written

    def validate(self) -> None:
        if self.lambda_gp < 0:
            raise ParameterError(f"lambda_gp must be >= 0, got {self.lambda_gp}")
        if self.n_critic < 1:
            raise ParameterError(f"n_critic must be >= 1, got {self.n_critic}")
        if self.batch_size < 2:
            raise ParameterError(f"batch_size must be >= 2 (interpolation needs "
                                 f"pairs), got {self.batch_size}")
        if self.noise_range not in ("unit_signed", "unit_positive"):
            raise ParameterError(f"unknown noise_range {self.noise_range!r}")
        if self.model_dim < 1:
            raise ParameterError(f"model_dim must be >= 1, got {self.model_dim}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        return cls(m={k: np.zeros_like(p.data) for k, p in params.items()},
                   v={k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState,
              alpha: float, beta1: float, beta2: float,
              eps: float = 1e-8) -> tuple[ModelParams, AdamState]:
    """Bias-corrected adaptive-moment descent step; returns fresh parameter
    tensors and the advanced state."""
    state.step += 1
    t = state.step
    out: ModelParams = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter "
                             f"{name} shape {p.data.shape}")
        m = state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1 - beta2) * (g * g)
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        out[name] = Tensor(p.data - alpha * m_hat / (np.sqrt(v_hat) + eps), tracked=True)
    return out, state


# ---------------------------------------------------------------------------
# losses


def interpolate(x, y, t) -> Tensor:
    """Elementwise t*x + (1-t)*y; t may be a scalar or a per-row array."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    y = y if isinstance(y, Tensor) else Tensor(y)
    if x.shape != y.shape:
        raise ShapeError(f"interpolation endpoints differ: {x.shape} vs {y.shape}")
    tt = t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=np.float32))
    one_minus = ad.sadd(ad.neg(tt), 1.0)
    return ad.add(ad.mul(x, tt), ad.mul(y, one_minus))


@dataclass
class CriticLossTerms:
    total: Tensor
    wasserstein: float
    penalty: float


def critic_loss_wgan_gp(critic: NetworkSpec, params: ModelParams, x_fake, x_real,
                        lambda_gp: float, rng: np.random.Generator) -> CriticLossTerms:
    """mean D(fake) - mean D(real) + lambda * mean((||grad_m D(m)|| - 1)^2)
    with m interpolated per pair.  With lambda 0 the penalty is skipped and
    the total is exactly the unregularised Wasserstein term."""
    if lambda_gp < 0:
        raise ParameterError(f"lambda_gp must be >= 0, got {lambda_gp}")
    xf = x_fake if isinstance(x_fake, Tensor) else Tensor(x_fake)
    xr = x_real if isinstance(x_real, Tensor) else Tensor(x_real)
    if xf.shape != xr.shape:
        raise ShapeError(f"fake batch {xf.shape} vs real batch {xr.shape}")
    # one fused forward over [fake; real]; halves are averaged separately
    n = xf.shape[0]
    both = np.concatenate([xf.data, xr.data], axis=0)
    scores = critic_scores(critic, params, Tensor(both), rng)
    halves = ad.reduce_mean(ad.reshape(scores, (2, n)), axis=1)
    w_term = ad.reduce_sum(ad.mul(halves, Tensor(np.array([1.0, -1.0], dtype=np.float32))))
    if lambda_gp == 0:
        return CriticLossTerms(w_term, w_term.item(), 0.0)
    t = rng.random(size=(xf.shape[0],) + (1,) * (xf.ndim - 1)).astype(np.float32)
    m = interpolate(xf, xr, t)
    grad = ad.input_gradient(lambda mm: critic_scores(critic, params, mm, rng), m)
    norms = ad.l2_norm(grad, axes=tuple(range(1, grad.ndim)))
    penalty = ad.reduce_mean(ad.square(ad.sadd(norms, -1.0)))
    total = ad.add(w_term, ad.smul(penalty, lambda_gp))
    return CriticLossTerms(total, w_term.item(), penalty.item())


def generator_loss_wgan(critic: NetworkSpec, params: ModelParams, x_fake: Tensor,
                        rng: np.random.Generator) -> Tensor:
    """-mean D(fake); gradients flow into whatever produced x_fake."""
    return ad.neg(ad.reduce_mean(critic_scores(critic, params, x_fake, rng)))


def vanilla_gan_value(d_real, d_fake) -> Tensor:
    """mean log D(real) + mean log(1 - D(fake)).  Reference minimax value for
    diagnostics only; training always uses the Wasserstein losses."""
    dr = d_real if isinstance(d_real, Tensor) else Tensor(d_real)
    df = d_fake if isinstance(d_fake, Tensor) else Tensor(d_fake)
    for t in (dr, df):
        if np.any(t.data <= 0) or np.any(t.data >= 1):
            raise DomainError("discriminator probabilities must lie in (0, 1)")
    return ad.add(ad.reduce_mean(ad.log(dr)),
                  ad.reduce_mean(ad.log(ad.sadd(ad.neg(df), 1.0))))


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    stage: str  # wavegan | audio2audio
    iteration: int
    config: TrainConfig
    gen_spec: NetworkSpec
    gen_params: ModelParams
    critic_spec: NetworkSpec
    critic_params: ModelParams
    gen_adam: AdamState
    critic_adam: AdamState
    rng_state: dict


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Versioned binary container: magic, version, JSON header, then a sorted
    table of (name, shape, little-endian float32 data) entries."""
    header = {
        "stage": ckpt.stage,
        "iteration": ckpt.iteration,
        "config": asdict(ckpt.config),
        "gen_spec": ckpt.gen_spec.to_dict(),
        "critic_spec": ckpt.critic_spec.to_dict(),
        "adam_steps": {"gen": ckpt.gen_adam.step, "critic": ckpt.critic_adam.step},
        "rng_state": ckpt.rng_state,
    }
    entries: dict[str, np.ndarray] = {}
    for prefix, params in (("gen", ckpt.gen_params), ("critic", ckpt.critic_params)):
        for name, p in params.items():
            entries[f"{prefix}.{name}"] = p.data
    for prefix, adam in (("gen", ckpt.gen_adam), ("critic", ckpt.critic_adam)):
        for name, arr in adam.m.items():
            entries[f"adam.{prefix}.{name}.m"] = arr
        for name, arr in adam.v.items():
            entries[f"adam.{prefix}.{name}.v"] = arr

    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    hj = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf.write(struct.pack("<Q", len(hj)))
    buf.write(hj)
    buf.write(struct.pack("<I", len(entries)))
    for name in sorted(entries):
        arr = np.ascontiguousarray(entries[name], dtype="<f4")
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(arr.tobytes())
    data = buf.getvalue()
    tmp = Path(path).with_suffix(".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {data[:8]!r}")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack_from("<Q", data, 12)
    try:
        header = json.loads(data[20:20 + hlen])
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"{path}: corrupt header: {exc}") from None
    pos = 20 + hlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    entries: dict[str, np.ndarray] = {}
    name = "<header>"
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            nbytes = int(np.prod(shape)) * 4 if ndim else 4
            raw = data[pos:pos + nbytes]
            if len(raw) < nbytes:
                raise CheckpointFormatError(
                    f"{path}: entry {name!r} truncated ({len(raw)}/{nbytes} bytes)")
            entries[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
            pos += nbytes
    except struct.error as exc:
        raise CheckpointFormatError(f"{path}: entry {name!r}: {exc}") from None

    cfg = TrainConfig(**header["config"])
    gen_spec = NetworkSpec.from_dict(header["gen_spec"])
    critic_spec = NetworkSpec.from_dict(header["critic_spec"])

    def unpack(prefix: str) -> ModelParams:
        out: ModelParams = {}
        for name, arr in entries.items():
            if name.startswith(prefix + ".") and not name.startswith("adam."):
                out[name[len(prefix) + 1:]] = Tensor(arr, tracked=True)
        if not out:
            raise CheckpointFormatError(f"{path}: no parameters for {prefix!r}")
        return out

    def unpack_adam(prefix: str, step: int) -> AdamState:
        m, v = {}, {}
        for name, arr in entries.items():
            if name.startswith(f"adam.{prefix}.") and name.endswith(".m"):
                m[name[len(f"adam.{prefix}."):-2]] = arr
            elif name.startswith(f"adam.{prefix}.") and name.endswith(".v"):
                v[name[len(f"adam.{prefix}."):-2]] = arr
        return AdamState(m=m, v=v, step=step)

    return Checkpoint(
        stage=header["stage"],
        iteration=header["iteration"],
        config=cfg,
        gen_spec=gen_spec,
        gen_params=unpack("gen"),
        critic_spec=critic_spec,
        critic_params=unpack("critic"),
        gen_adam=unpack_adam("gen", header["adam_steps"]["gen"]),
        critic_adam=unpack_adam("critic", header["adam_steps"]["critic"]),
        rng_state=header["rng_state"],
    )


# ---------------------------------------------------------------------------
# metrics


class MetricsWriter:
    """Append-only comma-separated metric rows."""

    HEADER = "iteration,critic_loss,wasserstein_term,penalty_term,generator_loss"

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        if self.path and not self.path.exists():
            self.path.write_text(self.HEADER + "\n")

    def emit(self, iteration: int, critic_loss: float, wasserstein: float,
             penalty: float, generator_loss: float) -> None:
        if not self.path:
            return
        row = (f"{iteration},{critic_loss:.6g},{wasserstein:.6g},"
               f"{penalty:.6g},{generator_loss:.6g}\n")
        with self.path.open("a") as f:
            f.write(row)


# ---------------------------------------------------------------------------
# training loops


def _noise(n: int, z_dim: int, noise_range: str, rng: np.random.Generator) -> np.ndarray:
    lo = -1.0 if noise_range == "unit_signed" else 0.0
    return rng.uniform(lo, 1.0, size=(n, z_dim)).astype(np.float32)


def _as_batch_array(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        arr = data.astype(np.float32, copy=False)
    else:
        if len(data) == 0:
            raise ParameterError("empty dataset")
        arr = np.stack([np.asarray(c.samples if isinstance(c, AudioClip) else c,
                                   dtype=np.float32) for c in data])
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] != 1:
        raise ShapeError(f"training data must be [N, L] or [N, L, 1], got {arr.shape}")
    return arr


def train_stage(stage: str, data, cfg: TrainConfig, init: Checkpoint | None = None,
                input_source=None, metrics: MetricsWriter | None = None,
                checkpoint_dir: str | Path | None = None,
                seed_offset: int = 0) -> Checkpoint:
    """Run one adversarial stage: n_critic critic updates per generator update.

    ``stage`` is "wavegan" (noise input) or "audio2audio" (conditioning clips
    drawn from ``input_source(n, rng)``).  Deterministic for a fixed config:
    resuming from a checkpoint reproduces the uninterrupted trajectory.
    """
    cfg.validate()
    if stage not in ("wavegan", "audio2audio"):
        raise ParameterError(f"unknown stage {stage!r}")
    if stage == "audio2audio" and input_source is None:
        raise ParameterError("audio2audio stage needs an input_source")
    arr = _as_batch_array(data)
    n_data = arr.shape[0]
    if n_data == 0:
        raise ParameterError("empty dataset")
    metrics = metrics or MetricsWriter(None)

    if init is None:
        rng = np.random.default_rng(cfg.seed + seed_offset)
        if stage == "wavegan":
            gen_spec = build_generator(cfg.model_dim)
        else:
            gen_spec = build_autoencoder(cfg.model_dim)
        critic_spec = build_discriminator(cfg.model_dim, cfg.shuffle_n)
        gen_params = init_params(gen_spec, rng)
        critic_params = init_params(critic_spec, rng)
        gen_adam = AdamState.zeros(gen_params)
        critic_adam = AdamState.zeros(critic_params)
        start = 0
    else:
        if init.stage != stage:
            raise ParameterError(f"checkpoint is for stage {init.stage!r}, "
                                 f"wanted {stage!r}")
        rng = np.random.default_rng()
        rng.bit_generator.state = init.rng_state
        gen_spec, critic_spec = init.gen_spec, init.critic_spec
        gen_params, critic_params = dict(init.gen_params), dict(init.critic_params)
        gen_adam, critic_adam = init.gen_adam, init.critic_adam
        start = init.iteration

    iters = cfg.stage1_iters if stage == "wavegan" else cfg.stage2_iters
    z_dim = gen_spec.layers[0].in_channels if stage == "wavegan" else None

    def gen_input(n: int) -> np.ndarray:
        if stage == "wavegan":
            return _noise(n, z_dim, cfg.noise_range, rng)
        return np.asarray(input_source(n, rng), dtype=np.float32)

    def snapshot(iteration: int) -> Checkpoint:
        return Checkpoint(stage=stage, iteration=iteration, config=cfg,
                          gen_spec=gen_spec, gen_params=gen_params,
                          critic_spec=critic_spec, critic_params=critic_params,
                          gen_adam=gen_adam, critic_adam=critic_adam,
                          rng_state=rng.bit_generator.state)

    for it in range(start, iters):
        terms = None
        # fresh fakes for all critic updates of this iteration, in one forward
        all_fake = forward(gen_spec, gen_params,
                           Tensor(gen_input(cfg.n_critic * cfg.batch_size)), rng).data
        for step in range(cfg.n_critic):
            real = arr[rng.integers(0, n_data, size=cfg.batch_size)]
            fake = all_fake[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            with Tape() as tape:
                terms = critic_loss_wgan_gp(critic_spec, critic_params,
                                            fake, real, cfg.lambda_gp, rng)
            gmap = tape.gradients(terms.total, wrt=list(critic_params.values()))
            grads = {name: gmap[p].data for name, p in critic_params.items()}
            critic_params, critic_adam = adam_step(
                critic_params, grads, critic_adam,
                cfg.adam_alpha, cfg.adam_beta1, cfg.adam_beta2)

        gin = gen_input(cfg.batch_size)
        with Tape() as tape:
            x_fake = forward(gen_spec, gen_params, Tensor(gin), rng)
            g_loss = generator_loss_wgan(critic_spec, critic_params, x_fake, rng)
            if stage == "audio2audio" and cfg.identity_weight > 0:
                recon = ad.reduce_mean(ad.square(ad.sub(x_fake, Tensor(gin))))
                g_loss = ad.add(g_loss, ad.smul(recon, cfg.identity_weight))
        gmap = tape.gradients(g_loss, wrt=list(gen_params.values()))
        grads = {name: gmap[p].data for name, p in gen_params.items()}
        gen_params, gen_adam = adam_step(gen_params, grads, gen_adam,
                                         cfg.adam_alpha, cfg.adam_beta1, cfg.adam_beta2)

        c_total = terms.total.item()
        g_total = g_loss.item()
        if not (np.isfinite(c_total) and np.isfinite(g_total)):
            ck = snapshot(it)
            path = None
            if checkpoint_dir is not None:
                path = Path(checkpoint_dir) / f"diagnostic_{stage}_{it:06d}.ckpt"
                save_checkpoint(ck, path)
            raise TrainingDiverged(
                f"non-finite loss at iteration {it} (critic={c_total}, "
                f"generator={g_total})", checkpoint_path=path)
        if cfg.metrics_every and (it + 1) % cfg.metrics_every == 0:
            metrics.emit(it + 1, c_total, terms.wasserstein, terms.penalty, g_total)
        if (cfg.checkpoint_every and checkpoint_dir is not None
                and (it + 1) % cfg.checkpoint_every == 0 and (it + 1) < iters):
            save_checkpoint(snapshot(it + 1),
                            Path(checkpoint_dir) / f"partial_{stage}.ckpt")

    return snapshot(iters)


def stage1_sampler(ckpt: Checkpoint):
    """Conditioning source for the refinement stage: frozen first-stage
    generator outputs for fresh noise draws."""
    z_dim = ckpt.gen_spec.layers[0].in_channels
    noise_range = ckpt.config.noise_range

    def sample(n: int, rng: np.random.Generator) -> np.ndarray:
        z = _noise(n, z_dim, noise_range, rng)
        return forward(ckpt.gen_spec, ckpt.gen_params, Tensor(z)).data

    return sample


def train_progressive(cfg: TrainConfig, data, run_dir: str | Path | None = None,
                      stage1_init: Checkpoint | None = None,
                      stage2_init: Checkpoint | None = None,
                      stage1_done: Checkpoint | None = None,
                      ) -> tuple[Checkpoint, Checkpoint | None]:
    """Train the noise-to-waveform stage fully, freeze it, then train the
    refinement stage conditioned on its outputs.  A zero-iteration second
    stage degenerates to the plain single-stage model (returned as None)."""
    run_dir = Path(run_dir) if run_dir else None
    if run_dir:
        run_dir.mkdir(parents=True, exist_ok=True)

    if stage1_done is not None:
        ck1 = stage1_done
    else:
        m1 = MetricsWriter(run_dir / "metrics_stage1.csv" if run_dir else None)
        ck1 = train_stage("wavegan", data, cfg, init=stage1_init, metrics=m1,
                          checkpoint_dir=run_dir)
        if run_dir:
            save_checkpoint(ck1, run_dir / "stage1.ckpt")

    if cfg.stage2_iters == 0:
        return ck1, None

    m2 = MetricsWriter(run_dir / "metrics_stage2.csv" if run_dir else None)
    ck2 = train_stage("audio2audio", data, cfg, init=stage2_init,
                      input_source=stage1_sampler(ck1), metrics=m2,
                      checkpoint_dir=run_dir, seed_offset=1)
    if run_dir:
        save_checkpoint(ck2, run_dir / "stage2.ckpt")
    return ck1, ck2


def pipeline_from_checkpoints(*ckpts: Checkpoint) -> Pipeline:
    return Pipeline([(c.gen_spec, c.gen_params) for c in ckpts if c is not None])


def generate(pipeline: Pipeline, n_clips: int, seed: int,
             noise_range: str = "unit_signed") -> list[AudioClip]:
    """Draw n clips from the chained generators; deterministic per seed."""
    rng = np.random.default_rng(seed)
    clips: list[AudioClip] = []
    if n_clips == 0:
        return clips
    z = _noise(n_clips, pipeline.z_dim, noise_range, rng)
    out = pipeline.run(Tensor(z)).data
    for i in range(n_clips):
        clips.append(AudioClip(np.clip(out[i, :, 0], -1.0, 1.0), SAMPLE_RATE))
    return clips


def params_digest(params: ModelParams) -> str:
    """Stable hash of a parameter set, for frozen-stage assertions."""
    import hashlib
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data, dtype="<f4").tobytes())
    return h.hexdigest()
