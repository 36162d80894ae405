"""Adversarial, cycle-consistency and identity losses.

Adversarial terms use the relativistic average least-squares form: each score
is judged against the batch-mean score of the opposite class, with a target
margin of 1.  L1 terms reduce by elementwise mean so the loss weights are
shape-independent.
"""

from dataclasses import dataclass

@dataclass(frozen=True)
class LossWeights:
    lambda_cycle: float = 5.0
    lambda_id: float = 10.0
    gamma: float = 0.1
    id_epochs: int = 20

    def __post_init__(self):
        if min(self.lambda_cycle, self.lambda_id, self.gamma) < 0 or self.id_epochs < 0:
            raise ValueError("loss weights must be non-negative")

    def identity_weight(self, epoch):
        return self.lambda_id if epoch < self.id_epochs else 0.0


def _check_scales(scores_real, scores_fake):
    if len(scores_real) == 0 or len(scores_fake) == 0:
        raise ValueError("need at least one scale of scores")
    if len(scores_real) != len(scores_fake):
        raise ValueError(
            f"scale count mismatch: {len(scores_real)} vs {len(scores_fake)}")
    for r, f in zip(scores_real, scores_fake):
        if r.numel() == 0 or f.numel() == 0:
            raise ValueError("empty score map")


def rals_d_loss(scores_real, scores_fake):
    """Discriminator branch: real above the fake mean, fake below the real mean."""
    _check_scales(scores_real, scores_fake)
    total = 0.0
    for real, fake in zip(scores_real, scores_fake):
        real_mean = real.mean()
        fake_mean = fake.mean()
        total = total + ((real - fake_mean - 1) ** 2).mean() \
                      + ((fake - real_mean + 1) ** 2).mean()
    return total / len(scores_real)


def rals_g_loss(scores_real, scores_fake):
    """Generator branch: the role-swapped mirror of the discriminator loss."""
    return rals_d_loss(scores_fake, scores_real)


def _mean_l1(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def cycle_loss(x, x_reconstructed, y, y_reconstructed):
    return _mean_l1(x_reconstructed, x) + _mean_l1(y_reconstructed, y)


def identity_loss(x, f_of_x, y, g_of_y):
    return _mean_l1(f_of_x, x) + _mean_l1(g_of_y, y)


def cyclegan_total(adv_g, adv_f, cycle, identity, weights: LossWeights, epoch):
    """Full objective for one cycle pair; identity active only early on."""
    return (adv_g + adv_f
            + weights.lambda_cycle * cycle
            + weights.identity_weight(epoch) * identity)


def cascade_total(mag_loss, complex_loss, weights: LossWeights):
    """Joint fine-tuning objective: gamma-weighted magnitude cycle + complex cycle."""
    return weights.gamma * mag_loss + complex_loss
