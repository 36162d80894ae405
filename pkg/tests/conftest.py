import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _seed():
    np.random.seed(0)
    torch.manual_seed(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def fd_gradcheck(loss_fn, params, eps=1e-4, rtol=1e-3, n_probes=3, rng=None):
    """Central-difference check of autograd gradients on random entries.

    loss_fn: () -> scalar tensor built from `params` (double precision).
    """
    rng = rng or np.random.default_rng(0)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=False)
    for p, g in zip(params, grads):
        flat = p.detach().view(-1)
        gflat = g.detach().view(-1)
        idx = rng.choice(flat.numel(), size=min(n_probes, flat.numel()),
                         replace=False)
        for i in idx:
            orig = flat[i].item()
            flat[i] = orig + eps
            hi = loss_fn().item()
            flat[i] = orig - eps
            lo = loss_fn().item()
            flat[i] = orig
            fd = (hi - lo) / (2 * eps)
            ref = gflat[i].item()
            denom = max(abs(fd), abs(ref), 1e-4)
            assert abs(fd - ref) / denom < rtol, \
                f"grad mismatch: autograd {ref} vs fd {fd}"
