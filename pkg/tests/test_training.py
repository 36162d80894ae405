import json

import numpy as np
import pytest
import torch

from cycleclean import dsp
from cycleclean.data import BatchSampler, CorpusManifest
from cycleclean.toy import make_toy_corpus
from cycleclean.training import (ArchConfig, CycleWiring, TOY_ARCH,
                                 TrainConfig, Trainer, TrainingError,
                                 build_models, enhance, load_checkpoint,
                                 restore_models, save_checkpoint)

# deliberately small so trainer steps run in well under a second
TINY_ARCH = ArchConfig(mag_channels=(2, 4),
                       complex_channels=(2, 2, 4, 4),
                       n_attention_blocks=1,
                       disc_channels=(4, 4, 8, 1))


@pytest.fixture(scope="module")
def toy_sampler_factory(tmp_path_factory):
    root = tmp_path_factory.mktemp("traincorp")
    manifest_path, test_pairs = make_toy_corpus(root, n_train=4, n_test=1, seed=3)
    manifest = CorpusManifest.from_file(manifest_path)

    def factory(seed=0, batch_size=1):
        return BatchSampler(manifest, batch_size=batch_size, crop_frames=32,
                            seed=seed)
    return factory, test_pairs


class TestSchedule:
    def test_lr_factor_values(self):
        cfg = TrainConfig(total_epochs=100, decay_start_epoch=40)
        assert cfg.lr_factor(0) == 1.0
        assert cfg.lr_factor(40) == 1.0
        assert cfg.lr_factor(41) == pytest.approx(1.0 - 1.0 / 60.0)
        assert cfg.lr_factor(70) == pytest.approx(0.5)
        assert cfg.lr_factor(100) == 0.0

    def test_identity_weight_cutoff(self):
        w = TrainConfig().loss_weights()
        assert w.identity_weight(19) == 10.0
        assert w.identity_weight(20) == 0.0

    def test_pretrain_defaults(self):
        cfg = TrainConfig()
        assert cfg.lr_g == 5e-4 and cfg.lr_d == 2e-4
        assert (cfg.adam_beta1, cfg.adam_beta2) == (0.9, 0.999)

    def test_finetune_defaults(self):
        cfg = TrainConfig.finetune_defaults()
        assert cfg.stage == "finetune"
        assert cfg.lr_g == 2e-4 and cfg.lr_d == 2e-4

    def test_invalid_configs_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(stage="warmup")
        with pytest.raises(ValueError):
            TrainConfig(lr_g=0.0)
        with pytest.raises(ValueError):
            TrainConfig(decay_start_epoch=200, total_epochs=100)


class TestCycleWiring:
    def test_variants(self):
        assert CycleWiring.variant("I") == CycleWiring(True, False, True, False)
        assert CycleWiring.variant("II") == CycleWiring(True, True, True, False)
        assert CycleWiring.variant("III") == CycleWiring(True, False, True, True)
        assert CycleWiring.variant("IV") == CycleWiring(True, True, True, True)

    def test_unknown_rejected(self):
        with pytest.raises(ValueError):
            CycleWiring.variant("V")


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        models = build_models(TINY_ARCH, include_complex=False)
        p = tmp_path / "c.ckpt"
        save_checkpoint(p, models, TINY_ARCH, "pretrain", epoch=3)
        payload, arch = load_checkpoint(p, expected_arch=TINY_ARCH)
        assert payload["epoch"] == 3 and payload["stage"] == "pretrain"
        restored, _ = restore_models(payload, arch)
        for name in models:
            for k, v in models[name].state_dict().items():
                assert torch.equal(v, restored[name].state_dict()[k])

    def test_digest_mismatch_refused(self, tmp_path):
        models = build_models(TINY_ARCH, include_complex=False)
        p = tmp_path / "c.ckpt"
        save_checkpoint(p, models, TINY_ARCH, "pretrain")
        with pytest.raises(TrainingError):
            load_checkpoint(p, expected_arch=TOY_ARCH)

    def test_tampered_arch_refused(self, tmp_path):
        models = build_models(TINY_ARCH, include_complex=False)
        p = tmp_path / "c.ckpt"
        save_checkpoint(p, models, TINY_ARCH, "pretrain")
        payload = torch.load(p, weights_only=False)
        payload["arch"]["n_attention_blocks"] = 5
        torch.save(payload, p)
        with pytest.raises(TrainingError):
            load_checkpoint(p)


class TestPretrain:
    def _trainer(self, factory, seed=0, log_path=None, **cfg_kw):
        cfg_kw.setdefault("total_epochs", 1)
        cfg_kw.setdefault("decay_start_epoch", 1)
        cfg_kw.setdefault("steps_per_epoch", 2)
        cfg = TrainConfig(stage="pretrain", batch_size=1, seed=seed, **cfg_kw)
        return Trainer(cfg, TINY_ARCH, factory(seed=seed), log_path=log_path)

    def test_step_record_fields(self, toy_sampler_factory):
        factory, _ = toy_sampler_factory
        t = self._trainer(factory)
        rec = t.pretrain_step(t.sampler.next_batch())
        for key in ("step", "epoch", "d_loss", "g_loss", "adv_g", "adv_f",
                    "cycle", "identity", "identity_weight", "lr_g", "lr_d"):
            assert key in rec
        assert np.isfinite(rec["g_loss"])
        assert rec["identity_weight"] == 10.0

    def test_identity_off_after_cutoff(self, toy_sampler_factory):
        factory, _ = toy_sampler_factory
        t = self._trainer(factory)
        t.epoch = 20
        rec = t.pretrain_step(t.sampler.next_batch())
        assert rec["identity"] == 0.0 and rec["identity_weight"] == 0.0

    def test_deterministic_loss_trace(self, toy_sampler_factory):
        factory, _ = toy_sampler_factory
        traces = []
        for _ in range(2):
            t = self._trainer(factory, seed=11)
            traces.append([t.pretrain_step(t.sampler.next_batch())["g_loss"]
                           for _ in range(2)])
        assert traces[0] == traces[1]

    def test_run_logs_lr_schedule(self, toy_sampler_factory, tmp_path):
        factory, _ = toy_sampler_factory
        log = tmp_path / "log.jsonl"
        t = self._trainer(factory, log_path=log, total_epochs=4,
                          decay_start_epoch=2, steps_per_epoch=1)
        t.run()
        records = [json.loads(line) for line in log.read_text().splitlines()]
        lr_by_epoch = {r["epoch"]: r["lr_g"] for r in records}
        cfg = t.config
        for epoch, lr in lr_by_epoch.items():
            assert lr == pytest.approx(cfg.lr_g * cfg.lr_factor(epoch))
        # constant through the decay start, then strictly decreasing
        assert lr_by_epoch[0] == lr_by_epoch[1] == lr_by_epoch[2] == cfg.lr_g
        assert lr_by_epoch[3] < lr_by_epoch[2]

    def test_checkpoint_written(self, toy_sampler_factory, tmp_path):
        factory, _ = toy_sampler_factory
        t = self._trainer(factory)
        p = tmp_path / "out.ckpt"
        t.run(checkpoint_path=p)
        payload, arch = load_checkpoint(p, expected_arch=TINY_ARCH)
        assert "g_mag" in payload["models"] and "g_cc" not in payload["models"]


class TestFinetune:
    def _stage1(self, factory, tmp_path):
        cfg = TrainConfig(stage="pretrain", batch_size=1, total_epochs=1,
                          decay_start_epoch=1, steps_per_epoch=1, seed=0)
        t = Trainer(cfg, TINY_ARCH, factory(seed=0))
        t.run(checkpoint_path=tmp_path / "stage1.ckpt")
        return tmp_path / "stage1.ckpt"

    def _stage2(self, factory, ckpt, variant="IV"):
        cfg = TrainConfig.finetune_defaults(
            batch_size=1, total_epochs=1, decay_start_epoch=1,
            steps_per_epoch=1, seed=0, cycle_variant=variant)
        return Trainer(cfg, TINY_ARCH, factory(seed=0), stage1_checkpoint=ckpt)

    def test_initialized_from_stage1(self, toy_sampler_factory, tmp_path):
        factory, _ = toy_sampler_factory
        ckpt = self._stage1(factory, tmp_path)
        t2 = self._stage2(factory, ckpt)
        payload, _ = load_checkpoint(ckpt)
        for k, v in payload["models"]["g_mag"].items():
            assert torch.equal(v, t2.models["g_mag"].state_dict()[k])
        assert "g_cc" in t2.models

    def test_missing_checkpoint_rejected(self, toy_sampler_factory):
        factory, _ = toy_sampler_factory
        cfg = TrainConfig.finetune_defaults(batch_size=1, total_epochs=1,
                                            decay_start_epoch=1, seed=0)
        with pytest.raises(TrainingError):
            Trainer(cfg, TINY_ARCH, factory(seed=0))

    def test_step_finite_variant_iv(self, toy_sampler_factory, tmp_path):
        factory, _ = toy_sampler_factory
        t2 = self._stage2(factory, self._stage1(factory, tmp_path), "IV")
        rec = t2.finetune_step(t2.sampler.next_batch())
        for key in ("d_loss", "g_loss", "mag_cycle", "cc_cycle"):
            assert np.isfinite(rec[key])
        assert rec["mag_adv_f"] != 0.0 and rec["cc_adv_f"] != 0.0

    def test_variant_i_disables_backward_terms(self, toy_sampler_factory, tmp_path):
        factory, _ = toy_sampler_factory
        t2 = self._stage2(factory, self._stage1(factory, tmp_path), "I")
        rec = t2.finetune_step(t2.sampler.next_batch())
        assert rec["mag_adv_f"] == 0.0
        assert rec["cc_adv_f"] == 0.0
        assert np.isfinite(rec["g_loss"])


class TestEnhance:
    def test_length_preserved_and_finite(self, rng):
        models = build_models(TINY_ARCH, include_complex=True)
        for m in models.values():
            m.eval()
        wave = dsp.Waveform(0.1 * rng.standard_normal(20000), 16000)
        out = enhance(wave, models)
        assert len(out) == 20000
        assert np.all(np.isfinite(out.samples))

    def test_deterministic(self, rng):
        models = build_models(TINY_ARCH, include_complex=True)
        for m in models.values():
            m.eval()
        wave = dsp.Waveform(0.1 * rng.standard_normal(16000), 16000)
        a = enhance(wave, models)
        b = enhance(wave, models)
        assert np.array_equal(a.samples, b.samples)

    def test_wrong_rate_rejected(self, rng):
        models = build_models(TINY_ARCH, include_complex=False)
        with pytest.raises(TrainingError):
            enhance(dsp.Waveform(rng.standard_normal(8000), 8000), models)

    def test_stage1_checkpoint_magnitude_only(self, rng, tmp_path):
        # without a complex stage the coupled coarse spectrum is used directly
        models = build_models(TINY_ARCH, include_complex=False)
        for m in models.values():
            m.eval()
        wave = dsp.Waveform(0.1 * rng.standard_normal(16000), 16000)
        out = enhance(wave, models)
        assert len(out) == 16000 and np.all(np.isfinite(out.samples))
