"""Two-stage training and the inference chain.

Stage 1 pretrains the magnitude CycleGAN alone.  Stage 2 loads that
checkpoint and jointly fine-tunes it with the complex-spectrum CycleGAN;
which cycle-consistency paths are active is controlled by a wiring config
(variants I-IV).  Inference runs compress -> magnitude generator -> couple
with the noisy phase -> complex generator -> decompress -> inverse STFT.
"""

import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch

from . import dsp
from .data import BatchSampler
from .discriminators import complex_discriminator, magnitude_discriminator
from .generators import (COMPLEX_ENCODER_CHANNELS, MAG_ENCODER_CHANNELS,
                         ComplexGenerator, MagnitudeGenerator)
from .losses import (LossWeights, cascade_total, cycle_loss, cyclegan_total,
                     identity_loss, rals_d_loss, rals_g_loss)

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    mag_channels: tuple = MAG_ENCODER_CHANNELS
    complex_channels: tuple = COMPLEX_ENCODER_CHANNELS
    n_attention_blocks: int = 6
    n_scales: int = 2
    disc_channels: tuple = (32, 32, 64, 64, 128, 1)
    compression: float = 0.5

    def digest(self):
        doc = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()


TOY_ARCH = ArchConfig(mag_channels=(4, 8, 16),
                      complex_channels=(8, 8, 16, 16, 32, 32, 64, 64),
                      n_attention_blocks=2,
                      disc_channels=(8, 8, 16, 16, 32, 1))

# desk-scale preset: the full-run learning rates are far too slow to show
# progress within a few hundred CPU steps, so the toy preset trains hotter
TOY_LR_G = 5e-3
TOY_LR_D = 1e-3
TOY_CROP_FRAMES = 48


def toy_train_config(stage="pretrain", **kw):
    kw.setdefault("lr_g", TOY_LR_G if stage == "pretrain" else TOY_LR_D)
    kw.setdefault("lr_d", TOY_LR_D)
    kw.setdefault("batch_size", 2)
    kw.setdefault("total_epochs", 5)
    kw.setdefault("steps_per_epoch", 100)
    kw.setdefault("decay_start_epoch", 5)
    if stage == "finetune":
        return TrainConfig.finetune_defaults(**kw)
    return TrainConfig(stage=stage, **kw)


@dataclass(frozen=True)
class CycleWiring:
    mag_fc: bool = True
    mag_bc: bool = True
    cc_fc: bool = True
    cc_bc: bool = True

    @classmethod
    def variant(cls, name):
        table = {
            "I": cls(True, False, True, False),
            "II": cls(True, True, True, False),
            "III": cls(True, False, True, True),
            "IV": cls(True, True, True, True),
        }
        if name not in table:
            raise ValueError(f"unknown cycle variant {name!r}; expected I-IV")
        return table[name]


@dataclass
class TrainConfig:
    stage: str = "pretrain"                  # pretrain | finetune
    cycle_variant: str = "IV"
    lr_g: float = 5e-4
    lr_d: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    decay_start_epoch: int = 40
    id_epochs: int = 20
    batch_size: int = 4
    total_epochs: int = 100
    steps_per_epoch: int = 100
    seed: int = 0
    lambda_cycle: float = 5.0
    lambda_id: float = 10.0
    gamma: float = 0.1

    def __post_init__(self):
        if self.stage not in ("pretrain", "finetune"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if self.decay_start_epoch > self.total_epochs:
            raise ValueError("decay_start_epoch must not exceed total_epochs")

    @classmethod
    def finetune_defaults(cls, **kw):
        kw.setdefault("stage", "finetune")
        kw.setdefault("lr_g", 2e-4)   # fine-tuning uses 2e-4 for every net
        kw.setdefault("lr_d", 2e-4)
        return cls(**kw)

    def lr_factor(self, epoch):
        """Constant through decay_start_epoch, then linear to 0 at total_epochs."""
        span = self.total_epochs - self.decay_start_epoch
        if span == 0:
            return 1.0 if epoch < self.total_epochs else 0.0
        return 1.0 - max(0, epoch - self.decay_start_epoch) / span

    def loss_weights(self):
        return LossWeights(self.lambda_cycle, self.lambda_id, self.gamma,
                           self.id_epochs)


def build_models(arch: ArchConfig, include_complex):
    models = {
        "g_mag": MagnitudeGenerator(arch.mag_channels, arch.n_attention_blocks),
        "f_mag": MagnitudeGenerator(arch.mag_channels, arch.n_attention_blocks),
        "d_mag_clean": magnitude_discriminator(arch.n_scales, arch.disc_channels),
        "d_mag_noisy": magnitude_discriminator(arch.n_scales, arch.disc_channels),
    }
    if include_complex:
        models.update({
            "g_cc": ComplexGenerator(arch.complex_channels, arch.n_attention_blocks),
            "f_cc": ComplexGenerator(arch.complex_channels, arch.n_attention_blocks),
            "d_cc_clean": complex_discriminator(arch.n_scales, arch.disc_channels),
            "d_cc_noisy": complex_discriminator(arch.n_scales, arch.disc_channels),
        })
    return models


def save_checkpoint(path, models, arch: ArchConfig, stage, epoch=0,
                    optimizers=None, extra=None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "arch": asdict(arch),
        "config_digest": arch.digest(),
        "stage": stage,
        "epoch": epoch,
        "models": {name: m.state_dict() for name, m in models.items()},
        "optimizers": {name: o.state_dict() for name, o in (optimizers or {}).items()},
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path, expected_arch: ArchConfig | None = None):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise TrainingError(f"unsupported checkpoint version {payload.get('version')}")
    arch = ArchConfig(**{k: tuple(v) if isinstance(v, list) else v
                         for k, v in payload["arch"].items()})
    if payload["config_digest"] != arch.digest():
        raise TrainingError("checkpoint digest does not match its stored config")
    if expected_arch is not None and arch.digest() != expected_arch.digest():
        raise TrainingError("checkpoint config digest mismatch: refusing to load")
    return payload, arch


def restore_models(payload, arch=None):
    arch = arch or ArchConfig(**{k: tuple(v) if isinstance(v, list) else v
                                 for k, v in payload["arch"].items()})
    models = build_models(arch, include_complex="g_cc" in payload["models"])
    for name, m in models.items():
        m.load_state_dict(payload["models"][name])
        m.eval()
    return models, arch


def _f(t):
    return float(t.detach()) if torch.is_tensor(t) else float(t)


def _couple_torch(mag, phase):
    # (B, 1, T, F) magnitude + (B, T, F) phase -> (B, 2, T, F) RI
    ph = phase.unsqueeze(1)
    return torch.cat([mag * torch.cos(ph), mag * torch.sin(ph)], dim=1)


class Trainer:
    """Owns the models, optimizers, schedule and JSONL loss log."""

    def __init__(self, config: TrainConfig, arch: ArchConfig,
                 sampler: BatchSampler, log_path=None,
                 stage1_checkpoint=None):
        torch.manual_seed(config.seed)
        self.config = config
        self.arch = arch
        self.sampler = sampler
        self.weights = config.loss_weights()
        self.wiring = (CycleWiring.variant(config.cycle_variant)
                       if config.stage == "finetune" else CycleWiring())
        self.models = build_models(arch, include_complex=config.stage == "finetune")
        if config.stage == "finetune":
            if stage1_checkpoint is None:
                raise TrainingError("fine-tuning needs a pretrained checkpoint")
            payload, _ = load_checkpoint(stage1_checkpoint, expected_arch=arch)
            for name in ("g_mag", "f_mag", "d_mag_clean", "d_mag_noisy"):
                self.models[name].load_state_dict(payload["models"][name])
        gen_params, disc_params = [], []
        for name, m in self.models.items():
            (disc_params if name.startswith("d_") else gen_params).extend(m.parameters())
        betas = (config.adam_beta1, config.adam_beta2)
        self.opt_g = torch.optim.Adam(gen_params, lr=config.lr_g, betas=betas)
        self.opt_d = torch.optim.Adam(disc_params, lr=config.lr_d, betas=betas)
        self.log_path = Path(log_path) if log_path else None
        if self.log_path:
            self.log_path.write_text("")
        self.step = 0
        self.epoch = 0

    def _apply_lr(self):
        factor = self.config.lr_factor(self.epoch)
        for group in self.opt_g.param_groups:
            group["lr"] = self.config.lr_g * factor
        for group in self.opt_d.param_groups:
            group["lr"] = self.config.lr_d * factor

    def _log(self, record):
        if self.log_path:
            with self.log_path.open("a") as f:
                f.write(json.dumps(record) + "\n")

    def _check_finite(self, record):
        bad = [k for k, v in record.items()
               if isinstance(v, float) and not np.isfinite(v)]
        if bad:
            snap = (self.log_path.with_suffix(".nan-snapshot.pt")
                    if self.log_path else Path("nan-snapshot.pt"))
            save_checkpoint(snap, self.models, self.arch, self.config.stage,
                            epoch=self.epoch, extra={"record": record})
            raise TrainingError(f"non-finite loss in {bad} at step {self.step}; "
                                f"snapshot written to {snap}")

    def _tensors(self, batch):
        t = lambda a: torch.as_tensor(a, dtype=torch.float32)
        return {
            "x_mag": t(batch.noisy_mag).unsqueeze(1),
            "y_mag": t(batch.clean_mag).unsqueeze(1),
            "x_phase": t(batch.noisy_phase),
            "y_phase": t(batch.clean_phase),
            "x_ri": t(batch.noisy_ri),
            "y_ri": t(batch.clean_ri),
        }

    # ---------------- stage 1: magnitude cycle ----------------

    def pretrain_step(self, batch):
        m = self.models
        b = self._tensors(batch)
        x, y = b["x_mag"], b["y_mag"]

        fake_y = m["g_mag"](x)
        fake_x = m["f_mag"](y)

        self.opt_d.zero_grad()
        d_loss = rals_d_loss(m["d_mag_clean"](y), m["d_mag_clean"](fake_y.detach())) \
               + rals_d_loss(m["d_mag_noisy"](x), m["d_mag_noisy"](fake_x.detach()))
        d_loss.backward()
        self.opt_d.step()

        self.opt_g.zero_grad()
        adv_g = rals_g_loss(m["d_mag_clean"](y), m["d_mag_clean"](fake_y))
        adv_f = rals_g_loss(m["d_mag_noisy"](x), m["d_mag_noisy"](fake_x))
        cyc = cycle_loss(x, m["f_mag"](fake_y), y, m["g_mag"](fake_x))
        if self.weights.identity_weight(self.epoch) > 0:
            ident = identity_loss(x, m["f_mag"](x), y, m["g_mag"](y))
        else:
            ident = torch.zeros(())
        g_loss = cyclegan_total(adv_g, adv_f, cyc, ident, self.weights, self.epoch)
        g_loss.backward()
        self.opt_g.step()

        record = {
            "step": self.step, "epoch": self.epoch, "stage": "pretrain",
            "d_loss": _f(d_loss), "g_loss": _f(g_loss),
            "adv_g": _f(adv_g), "adv_f": _f(adv_f),
            "cycle": _f(cyc), "identity": _f(ident),
            "identity_weight": self.weights.identity_weight(self.epoch),
            "lr_g": self.opt_g.param_groups[0]["lr"],
            "lr_d": self.opt_d.param_groups[0]["lr"],
        }
        self._check_finite(record)
        self._log(record)
        self.step += 1
        return record

    # ---------------- stage 2: cascaded cycles ----------------

    def finetune_step(self, batch):
        m = self.models
        w = self.wiring
        b = self._tensors(batch)
        x_m, y_m = b["x_mag"], b["y_mag"]
        x_ri, y_ri = b["x_ri"], b["y_ri"]
        zero = torch.zeros(())

        # forward cycle: noisy -> clean -> noisy
        fake_y_m = m["g_mag"](x_m)
        fake_y_cc = m["g_cc"](_couple_torch(fake_y_m, b["x_phase"]))
        # backward cycle: clean -> noisy -> clean
        fake_x_m = m["f_mag"](y_m) if (w.mag_bc or w.cc_bc) else None
        fake_x_cc = (m["f_cc"](_couple_torch(fake_x_m, b["y_phase"]))
                     if w.cc_bc else None)

        self.opt_d.zero_grad()
        d_mag = rals_d_loss(m["d_mag_clean"](y_m), m["d_mag_clean"](fake_y_m.detach())) \
            if w.mag_fc else zero
        if w.mag_bc:
            d_mag = d_mag + rals_d_loss(m["d_mag_noisy"](x_m),
                                        m["d_mag_noisy"](fake_x_m.detach()))
        d_cc = rals_d_loss(m["d_cc_clean"](y_ri), m["d_cc_clean"](fake_y_cc.detach())) \
            if w.cc_fc else zero
        if w.cc_bc:
            d_cc = d_cc + rals_d_loss(m["d_cc_noisy"](x_ri),
                                      m["d_cc_noisy"](fake_x_cc.detach()))
        d_loss = cascade_total(d_mag, d_cc, self.weights)
        if d_loss.requires_grad:
            d_loss.backward()
            self.opt_d.step()

        self.opt_g.zero_grad()
        id_w = self.weights.identity_weight(self.epoch)

        mag_adv_g = rals_g_loss(m["d_mag_clean"](y_m), m["d_mag_clean"](fake_y_m)) \
            if w.mag_fc else zero
        mag_adv_f = rals_g_loss(m["d_mag_noisy"](x_m), m["d_mag_noisy"](fake_x_m)) \
            if w.mag_bc else zero
        mag_cycle = zero
        if w.mag_fc:
            mag_cycle = mag_cycle + (m["f_mag"](fake_y_m) - x_m).abs().mean()
        if w.mag_bc:
            mag_cycle = mag_cycle + (m["g_mag"](fake_x_m) - y_m).abs().mean()
        mag_ident = (identity_loss(x_m, m["f_mag"](x_m), y_m, m["g_mag"](y_m))
                     if id_w > 0 and (w.mag_fc or w.mag_bc) else zero)
        mag_loss = mag_adv_g + mag_adv_f \
            + self.weights.lambda_cycle * mag_cycle + id_w * mag_ident

        cc_adv_g = rals_g_loss(m["d_cc_clean"](y_ri), m["d_cc_clean"](fake_y_cc)) \
            if w.cc_fc else zero
        cc_adv_f = rals_g_loss(m["d_cc_noisy"](x_ri), m["d_cc_noisy"](fake_x_cc)) \
            if w.cc_bc else zero
        cc_cycle = zero
        if w.cc_fc:
            cc_cycle = cc_cycle + (m["f_cc"](fake_y_cc) - x_ri).abs().mean()
        if w.cc_bc:
            cc_cycle = cc_cycle + (m["g_cc"](fake_x_cc) - y_ri).abs().mean()
        cc_ident = (identity_loss(x_ri, m["f_cc"](x_ri), y_ri, m["g_cc"](y_ri))
                    if id_w > 0 and (w.cc_fc or w.cc_bc) else zero)
        cc_loss = cc_adv_g + cc_adv_f \
            + self.weights.lambda_cycle * cc_cycle + id_w * cc_ident

        g_loss = cascade_total(mag_loss, cc_loss, self.weights)
        if g_loss.requires_grad:
            g_loss.backward()
            self.opt_g.step()

        record = {
            "step": self.step, "epoch": self.epoch, "stage": "finetune",
            "d_loss": _f(d_loss), "g_loss": _f(g_loss),
            "mag_adv_g": _f(mag_adv_g), "mag_adv_f": _f(mag_adv_f),
            "mag_cycle": _f(mag_cycle), "mag_identity": _f(mag_ident),
            "cc_adv_g": _f(cc_adv_g), "cc_adv_f": _f(cc_adv_f),
            "cc_cycle": _f(cc_cycle), "cc_identity": _f(cc_ident),
            "identity_weight": id_w,
            "lr_g": self.opt_g.param_groups[0]["lr"],
            "lr_d": self.opt_d.param_groups[0]["lr"],
        }
        self._check_finite(record)
        self._log(record)
        self.step += 1
        return record

    def run(self, checkpoint_path=None, max_steps=None):
        step_fn = (self.pretrain_step if self.config.stage == "pretrain"
                   else self.finetune_step)
        last = None
        for epoch in range(self.config.total_epochs):
            self.epoch = epoch
            self._apply_lr()
            for _ in range(self.config.steps_per_epoch):
                last = step_fn(self.sampler.next_batch())
                if max_steps is not None and self.step >= max_steps:
                    break
            if checkpoint_path:
                save_checkpoint(checkpoint_path, self.models, self.arch,
                                self.config.stage, epoch=epoch,
                                optimizers={"g": self.opt_g, "d": self.opt_d})
            if max_steps is not None and self.step >= max_steps:
                break
        if checkpoint_path:
            save_checkpoint(checkpoint_path, self.models, self.arch,
                            self.config.stage, epoch=self.epoch,
                            optimizers={"g": self.opt_g, "d": self.opt_d})
        return last


def pretrain_magnitude_cycle(config, sampler, checkpoint_path, arch=None, log_path=None,
                   max_steps=None):
    arch = arch or ArchConfig()
    trainer = Trainer(config, arch, sampler, log_path=log_path)
    trainer.run(checkpoint_path, max_steps=max_steps)
    return checkpoint_path


def finetune_cascade(config, sampler, stage1_checkpoint, checkpoint_path,
                     arch=None, log_path=None, max_steps=None):
    arch = arch or ArchConfig()
    trainer = Trainer(config, arch, sampler, log_path=log_path,
                      stage1_checkpoint=stage1_checkpoint)
    trainer.run(checkpoint_path, max_steps=max_steps)
    return checkpoint_path


def enhance_spectrogram(spec: dsp.ComplexSpectrogram, models, compression=0.5):
    pair = dsp.compress(spec, compression)
    mag = torch.as_tensor(pair.mag, dtype=torch.float32)[None, None]
    phase = torch.as_tensor(pair.phase, dtype=torch.float32)[None]
    with torch.no_grad():
        est_mag = models["g_mag"](mag)
        coarse = _couple_torch(est_mag, phase)
        out = models["g_cc"](coarse) if "g_cc" in models else coarse
    ri = out[0].numpy().astype(np.float64)
    est_mag_np = np.hypot(ri[0], ri[1])
    est_phase = np.arctan2(ri[1], ri[0])
    return dsp.decompress(dsp.MagPhasePair(
        est_mag_np, est_phase, compression_exp=compression,
        frame_hop=spec.frame_hop, window_len=spec.window_len,
        num_samples=spec.num_samples))


def enhance(wave: dsp.Waveform, models, compression=0.5) -> dsp.Waveform:
    """Full inference chain; output length equals input length."""
    if wave.sample_rate != dsp.SAMPLE_RATE:
        raise TrainingError(
            f"expected {dsp.SAMPLE_RATE} Hz input, got {wave.sample_rate} "
            "(no silent resampling)")
    spec = dsp.stft(wave)
    return dsp.istft(enhance_spectrogram(spec, models, compression))


def enhance_file(in_path, out_path, checkpoint_path, compression=None):
    payload, arch = load_checkpoint(checkpoint_path)
    models, _ = restore_models(payload, arch)
    wave = dsp.read_wav(in_path)
    out = enhance(wave, models, compression or arch.compression)
    dsp.write_wav(out_path, out)
    return out
