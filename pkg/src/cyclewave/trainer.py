"""Training loop: masked cycles, four-discriminator updates, checkpoints.

Each iteration runs one discriminator update (on detached generator output)
followed by one generator update, both with Adam under a shared exponential
learning-rate schedule. An epoch is one pass over the pool's segment count
(pool size / batch size iterations); the rate decays once per epoch.

The loop is single-context; batch assembly is a pure function of the state
rng and could be produced ahead through a bounded queue without changing
results.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import audio, data, losses
from . import tensor as tc
from .config import RunConfig, config_hash, format_config, parse_config
from .discriminator import Discriminator
from .errors import CheckpointError, ContractError, DivergenceError
from .generator import Generator
from .losses import GeneratorLossTerms, LossReport

log = logging.getLogger(__name__)

LOSS_CEILING = 1e4
CHECKPOINT_MAGIC = b"CWAVECKPT\x01"


def lr_schedule(initial: float, decay: float, epoch: int) -> float:
    if epoch < 0:
        raise ContractError("epoch must be non-negative")
    return initial * decay ** epoch


@dataclass
class TrainState:
    config: RunConfig
    g_xy: Generator
    g_yx: Generator
    d_x: Discriminator
    d_y: Discriminator
    dp_x: Discriminator | None
    dp_y: Discriminator | None
    opt: dict[str, tc.AdamState]
    rng: np.random.Generator
    iteration: int = 0
    epoch_iters: int = 1

    def param_groups(self) -> dict[str, dict[str, tc.Tensor]]:
        groups = {"g_xy": self.g_xy.params, "g_yx": self.g_yx.params,
                  "d_x": self.d_x.params, "d_y": self.d_y.params}
        if self.dp_x is not None:
            groups["dp_x"] = self.dp_x.params
            groups["dp_y"] = self.dp_y.params
        return groups

    def total_params(self) -> dict[str, int]:
        return {name: sum(p.size for p in params.values())
                for name, params in self.param_groups().items()}


def init_state(config: RunConfig) -> TrainState:
    config.validate()
    seq = np.random.SeedSequence(config.train.seed)
    param_seed, data_seed = seq.spawn(2)
    param_rng = np.random.default_rng(param_seed)
    g_xy = Generator.create(config.generator, param_rng)
    g_yx = Generator.create(config.generator, param_rng)
    d_x = Discriminator.create(config.discriminator, param_rng)
    d_y = Discriminator.create(config.discriminator, param_rng)
    dp_x = dp_y = None
    if config.train.enable_adv2:
        dp_x = Discriminator.create(config.discriminator, param_rng)
        dp_y = Discriminator.create(config.discriminator, param_rng)
    state = TrainState(config, g_xy, g_yx, d_x, d_y, dp_x, dp_y, {},
                       np.random.default_rng(data_seed))
    state.opt = {name: tc.AdamState(params) for name, params in state.param_groups().items()}
    return state


def _stack_batch(batch: list[data.TrainSegment]):
    mel = tc.Tensor(np.stack([seg.mel for seg in batch]))
    mask = tc.Tensor(np.stack([seg.mask.values for seg in batch]))
    wav = tc.Tensor(np.stack([seg.wav[None, :] for seg in batch]))
    return mel, mask, wav


def _mel_of(wav: tc.Tensor, frames: int) -> tc.Tensor:
    return audio.mel_forward(wav, num_frames=frames)


def _gen_fn(gen: Generator):
    if gen.cfg.use_mask_input:
        return lambda mel, mask: gen.forward(mel, mask)
    return lambda mel, mask: gen.forward(mel)


def _check_finite(value: float, label: str, iteration: int, detail: dict):
    if not math.isfinite(value) or abs(value) > LOSS_CEILING:
        raise DivergenceError(
            f"{label} diverged at iteration {iteration}: {value!r}; components: {detail}")


def train_step(state: TrainState, batch_x: list[data.TrainSegment],
               batch_y: list[data.TrainSegment]) -> LossReport:
    """One discriminator update followed by one generator update."""
    cfg = state.config.train
    weights = state.config.weights
    lr = lr_schedule(cfg.lr_initial, cfg.lr_decay, state.iteration // state.epoch_iters)
    adv2_on = cfg.enable_adv2
    identity_on = state.iteration < weights.identity_active_iterations and weights.lambda_id > 0

    mel_x, mask_x, wav_x = _stack_batch(batch_x)
    mel_y, mask_y, wav_y = _stack_batch(batch_y)
    n = mel_x.shape[0]
    frames = mel_x.shape[-1]
    ones_n = tc.Tensor(np.ones((n, mel_x.shape[1], frames)))
    fwd_xy, fwd_yx = _gen_fn(state.g_xy), _gen_fn(state.g_yx)

    def half_cycle(mel_src, mask_src, gen_fwd, gen_bwd, need_rec):
        """Forward conversion and, when needed, the backward reconstruction."""
        fake = gen_fwd(tc.mul(mel_src, mask_src), mask_src)
        if not need_rec:
            return fake, None, None
        rec = gen_bwd(_mel_of(fake, frames), ones_n)
        return fake, rec, _mel_of(rec, frames)

    def joint_blocks(disc, real, fake):
        out = disc.forward(tc.concat_channels([real, fake], axis=0))
        return [losses.adv_loss_d_joint(s, n) for s in out.scores]

    groups = state.param_groups()

    # -- discriminator phase: generator outputs detached via no_grad
    with tc.no_grad():
        fake_y, rec_x, _ = half_cycle(mel_x, mask_x, fwd_xy, fwd_yx, adv2_on)
        fake_x, rec_y, _ = half_cycle(mel_y, mask_y, fwd_yx, fwd_xy, adv2_on)
    for params in groups.values():
        tc.zero_grads(params)
    tc.reset_tape()

    adv_d_xy = joint_blocks(state.d_y, wav_y, fake_y)
    adv_d_yx = joint_blocks(state.d_x, wav_x, fake_x)
    adv2_d_x = adv2_d_y = None
    if adv2_on:
        adv2_d_x = joint_blocks(state.dp_x, wav_x, rec_x)
        adv2_d_y = joint_blocks(state.dp_y, wav_y, rec_y)
    l_d = losses.total_discriminator_loss(adv_d_xy, adv_d_yx, adv2_d_x, adv2_d_y)
    l_d_value = l_d.item()
    _check_finite(l_d_value, "discriminator loss", state.iteration,
                  {"adv_xy": sum(t.item() for t in adv_d_xy), "adv_yx": sum(t.item() for t in adv_d_yx)})
    tc.backward(l_d)
    for name in groups:
        if name.startswith(("d_", "dp_")):
            params = groups[name]
            tc.adam_step(params, {k: p.grad for k, p in params.items()}, state.opt[name],
                         lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    # -- generator phase: fresh graph, updated discriminators; discriminator
    # weights are frozen so backward skips their weight gradients while the
    # adversarial signal still flows through to the generators
    for params in groups.values():
        tc.zero_grads(params)
    tc.reset_tape()
    disc_groups = [g for name, g in groups.items() if name.startswith(("d_", "dp_"))]
    for params in disc_groups:
        tc.set_requires_grad(params, False)

    id_xy = id_yx = None
    if identity_on:
        # batch each generator's identity input with its conversion input
        out_xy = fwd_xy(tc.concat_channels([tc.mul(mel_x, mask_x), mel_y], axis=0),
                        tc.concat_channels([mask_x, ones_n], axis=0))
        out_yx = fwd_yx(tc.concat_channels([tc.mul(mel_y, mask_y), mel_x], axis=0),
                        tc.concat_channels([mask_y, ones_n], axis=0))
        mel_out_xy = _mel_of(out_xy, frames)
        mel_out_yx = _mel_of(out_yx, frames)
        fake_y = tc.narrow(out_xy, 0, 0, n)
        fake_x = tc.narrow(out_yx, 0, 0, n)
        id_xy = losses.identity_loss(mel_y, tc.narrow(mel_out_xy, 0, n, n))
        id_yx = losses.identity_loss(mel_x, tc.narrow(mel_out_yx, 0, n, n))
        rec_x = fwd_yx(tc.narrow(mel_out_xy, 0, 0, n), ones_n)
        rec_y = fwd_xy(tc.narrow(mel_out_yx, 0, 0, n), ones_n)
        mel_rec_x = _mel_of(rec_x, frames)
        mel_rec_y = _mel_of(rec_y, frames)
    else:
        fake_y, rec_x, mel_rec_x = half_cycle(mel_x, mask_x, fwd_xy, fwd_yx, True)
        fake_x, rec_y, mel_rec_y = half_cycle(mel_y, mask_y, fwd_yx, fwd_xy, True)

    adv_g_xy = [losses.adv_loss_g(s) for s in state.d_y.forward(fake_y).scores]
    adv_g_yx = [losses.adv_loss_g(s) for s in state.d_x.forward(fake_x).scores]
    cyc_xyx = losses.cycle_loss(mel_x, mel_rec_x)
    cyc_yxy = losses.cycle_loss(mel_y, mel_rec_y)
    adv2_g_x = adv2_g_y = None
    if adv2_on:
        adv2_g_x = [losses.adv_loss_g(s) for s in state.dp_x.forward(rec_x).scores]
        adv2_g_y = [losses.adv_loss_g(s) for s in state.dp_y.forward(rec_y).scores]

    terms = GeneratorLossTerms(adv_g_xy, adv_g_yx, cyc_xyx, cyc_yxy,
                               id_xy, id_yx, adv2_g_x, adv2_g_y)
    l_g, comps = losses.total_generator_loss(terms, weights, adv2_enabled=adv2_on)
    l_g_value = l_g.item()
    _check_finite(l_g_value, "generator loss", state.iteration, comps)
    tc.backward(l_g)
    for params in disc_groups:
        tc.set_requires_grad(params, True)
    for name in ("g_xy", "g_yx"):
        params = groups[name]
        tc.adam_step(params, {k: p.grad for k, p in params.items()}, state.opt[name],
                     lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    report = LossReport(state.iteration, l_d_value, l_g_value,
                        comps["adv"], comps["adv2"], comps["cyc"], comps["id"])
    state.iteration += 1
    return report


def train(config: RunConfig, pool_x: data.UtterancePool, pool_y: data.UtterancePool,
          out_dir, state: TrainState | None = None, on_report=None) -> TrainState:
    """Run (or resume) training, writing the loss log and checkpoints."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if state is None:
        state = init_state(config)
    cfg = config.train
    state.epoch_iters = max(1, math.ceil(max(len(pool_x), len(pool_y)) / cfg.batch_size))
    max_mask = cfg.max_mask_frames if cfg.enable_masking else 0

    log_path = out_dir / "train_log.csv"
    mode = "a" if state.iteration and log_path.exists() else "w"
    with log_path.open(mode) as logf:
        if mode == "w":
            logf.write(LossReport.CSV_HEADER + "\n")
        while state.iteration < cfg.iterations:
            batch_x = [pool_x.draw_segment(state.rng, max_mask) for _ in range(cfg.batch_size)]
            batch_y = [pool_y.draw_segment(state.rng, max_mask) for _ in range(cfg.batch_size)]
            report = train_step(state, batch_x, batch_y)
            logf.write(report.csv_line() + "\n")
            if on_report is not None:
                on_report(report)
            if cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0:
                save_checkpoint(state, out_dir / f"checkpoint_{state.iteration:07d}.ckpt")
    save_checkpoint(state, out_dir / "checkpoint_final.ckpt")
    return state


# ---------------------------------------------------------------------------
# checkpoints


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _rng_from_json(state_dict: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state_dict
    return np.random.Generator(bg)


def save_checkpoint(state: TrainState, path) -> None:
    """Little-endian binary container; byte-identical given identical state."""
    groups = state.param_groups()
    records = []
    for gname in sorted(groups):
        for pname in groups[gname]:
            records.append([gname, pname, list(groups[gname][pname].shape)])
    header = {
        "config": format_config(state.config),
        "config_hash": config_hash(state.config),
        "iteration": state.iteration,
        "epoch_iters": state.epoch_iters,
        "rng": _rng_state_to_json(state.rng),
        "adam_t": {g: state.opt[g].t for g in sorted(groups)},
        "records": records,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for gname, pname, _ in records:
            param = groups[gname][pname]
            fh.write(param.data.astype("<f8").tobytes())
            fh.write(state.opt[gname].m[pname].astype("<f8").tobytes())
            fh.write(state.opt[gname].v[pname].astype("<f8").tobytes())


def load_checkpoint(path, expected_config: RunConfig | None = None) -> TrainState:
    """Rebuild a TrainState; raises CheckpointError on malformed files."""
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    offset = len(CHECKPOINT_MAGIC)
    if len(raw) < offset + 4:
        raise CheckpointError(f"{path}: truncated header")
    (header_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    try:
        header = json.loads(raw[offset:offset + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    offset += header_len

    config = parse_config(header["config"])
    config.validate()
    if config_hash(config) != header["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch")
    if expected_config is not None and config_hash(expected_config) != header["config_hash"]:
        raise CheckpointError(f"{path}: checkpoint was trained with a different configuration")

    state = init_state(config)
    state.iteration = int(header["iteration"])
    state.epoch_iters = int(header["epoch_iters"])
    state.rng = _rng_from_json(header["rng"])
    groups = state.param_groups()
    for gname, t in header["adam_t"].items():
        state.opt[gname].t = int(t)
    for gname, pname, shape in header["records"]:
        if gname not in groups or pname not in groups[gname]:
            raise CheckpointError(f"{path}: unknown parameter {gname}.{pname}")
        param = groups[gname][pname]
        if list(param.shape) != list(shape):
            raise CheckpointError(f"{path}: shape mismatch for {gname}.{pname}")
        count = param.size
        for target in (param.data, state.opt[gname].m[pname], state.opt[gname].v[pname]):
            end = offset + 8 * count
            if end > len(raw):
                raise CheckpointError(f"{path}: truncated tensor data")
            target[...] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(param.shape)
            offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes")
    return state


def convert(state: TrainState, buf: audio.AudioBuffer, direction: str) -> audio.AudioBuffer:
    """Run one generator on unmasked features; output spans 256*T samples."""
    if direction not in ("x2y", "y2x"):
        raise ContractError(f"direction must be 'x2y' or 'y2x', got {direction!r}")
    mel = audio.mel_spectrogram(buf)
    gen = state.g_xy if direction == "x2y" else state.g_yx
    with tc.no_grad():
        mel_t = tc.Tensor(mel.values)
        if gen.cfg.use_mask_input:
            out = gen.forward(mel_t, tc.Tensor(np.ones(mel.values.shape)))
        else:
            out = gen.forward(mel_t)
    samples = np.clip(out.data.reshape(-1), -1.0, 1.0)
    return audio.AudioBuffer(samples, audio.SAMPLE_RATE)
