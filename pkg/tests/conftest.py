import numpy as np
import pytest

from cann.dataio import OutfitItem, OutfitRecord, add_stub_region_features, stub_features
from cann.model import CannModel, ModelConfig


def fd_gradient_check(loss_fn, named_tensors, rng, n_coords=4, step=1e-5, tol=1e-4):
    """Compare analytic gradients against central finite differences.

    `loss_fn` rebuilds the graph on every call; a random sample of
    coordinates per tensor is checked. The error measure is
    |fd - g| / max(1, |fd|, |g|), which reduces to relative error for
    gradients of magnitude >= 1 and to an absolute tolerance near zero
    (where finite-difference noise dominates any relative measure).
    """
    for t in named_tensors.values():
        t.zero_grad()
    loss = loss_fn()
    loss.backward()
    grads = {name: np.array(t.grad) for name, t in named_tensors.items()}
    worst = 0.0
    for name, t in named_tensors.items():
        count = min(n_coords, t.data.size)
        for flat in rng.choice(t.data.size, size=count, replace=False):
            idx = np.unravel_index(int(flat), t.data.shape)
            orig = t.data[idx]
            t.data[idx] = orig + step
            up = loss_fn().item()
            t.data[idx] = orig - step
            down = loss_fn().item()
            t.data[idx] = orig
            fd = (up - down) / (2 * step)
            err = abs(fd - grads[name][idx]) / max(1.0, abs(fd), abs(grads[name][idx]))
            assert err <= tol, f"{name}{idx}: analytic {grads[name][idx]} vs fd {fd} (err {err:.2e})"
            worst = max(worst, err)
    return worst


def make_outfits(n_outfits=6, items_per_outfit=3, pool_size=12, seed=42, categories=4):
    rng = np.random.default_rng(seed)
    pool = [f"it{n:02d}" for n in range(pool_size)]
    outfits = []
    for j in range(n_outfits):
        picks = rng.choice(pool_size, size=items_per_outfit, replace=False)
        outfits.append(
            OutfitRecord(
                f"o{j}",
                [OutfitItem(pool[int(i)], f"cat{int(i) % categories}") for i in picks],
            )
        )
    return outfits


def make_features(outfits, d_c, seed=7, regions=True):
    items = sorted({i for o in outfits for i in o.item_ids()})
    store = stub_features(items, d_c, seed)
    if regions:
        add_stub_region_features(store, items, seed)
    return store


@pytest.fixture
def tiny_config():
    return ModelConfig(d_c=12, d_f=16, S=2, b_star=2, k=4, d_y=8, S_f=2)


@pytest.fixture
def tiny_model(tiny_config):
    return CannModel(tiny_config, seed=1)
