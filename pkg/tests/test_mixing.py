import numpy as np
import pytest
import torch
from scipy import stats

from glmc.mixing import (MixingConfig, box_mask, cutmix, make_mixed_batch, mixup, sample_cutbox,
                         sample_lambda)


def pair(n=4, c=3, size=8, classes=5, seed=0):
    g = torch.Generator().manual_seed(seed)
    x_i = torch.randn(n, c, size, size, generator=g)
    x_j = torch.randn(n, c, size, size, generator=g)
    p_i = torch.nn.functional.one_hot(torch.arange(n) % classes, classes).float()
    p_j = torch.nn.functional.one_hot((torch.arange(n) + 1) % classes, classes).float()
    w_i = torch.full((n,), 0.5)
    w_j = torch.full((n,), 2.0)
    return x_i, x_j, p_i, p_j, w_i, w_j


def test_lambda_beta1_is_uniform():
    rng = np.random.default_rng(0)
    lams = [sample_lambda(MixingConfig(beta=1.0), rng) for _ in range(4000)]
    assert stats.kstest(lams, "uniform").pvalue > 0.01


def test_lambda_large_beta_concentrates():
    rng = np.random.default_rng(0)
    lams = np.array([sample_lambda(MixingConfig(beta=1000.0), rng) for _ in range(2000)])
    assert abs(lams.mean() - 0.5) < 0.005 and lams.std() < 0.02


def test_invalid_beta():
    with pytest.raises(ValueError):
        MixingConfig(beta=0.0)


@pytest.mark.parametrize("fn", [mixup, cutmix])
def test_lambda_one_returns_first(fn):
    x_i, x_j, p_i, p_j, w_i, w_j = pair()
    x, p, w = fn(x_i, x_j, p_i, p_j, w_i, w_j, 1.0)
    assert torch.equal(x, x_i) and torch.equal(p, p_i) and torch.equal(w, w_i)


class _Origin:
    def integers(self, lo, hi):
        return 0


def test_lambda_zero_returns_second():
    x_i, x_j, p_i, p_j, w_i, w_j = pair()
    x, p, w = mixup(x_i, x_j, p_i, p_j, w_i, w_j, 0.0)
    assert torch.equal(x, x_j) and torch.equal(p, p_j) and torch.equal(w, w_j)
    # lam=0 gives a full-image box once anchored at the origin
    box = sample_cutbox(8, 8, 0.0, _Origin())
    x, p, w = cutmix(x_i, x_j, p_i, p_j, w_i, w_j, 0.0, box=box)
    assert torch.equal(x, x_j) and torch.equal(p, p_j) and torch.equal(w, w_j)


def test_mixup_weight_example():
    x_i, x_j, p_i, p_j, _, _ = pair(n=1)
    _, p, w = mixup(x_i, x_j, p_i, p_j, torch.tensor([1.0]), torch.tensor([0.0]), 0.3)
    assert w.item() == pytest.approx(0.3)
    assert p.sum().item() == pytest.approx(1.0)


def test_cutbox_extent_at_three_quarters():
    box = sample_cutbox(32, 32, 0.75, _Origin())
    assert (box.w, box.h) == (16, 16) and box.area == 256
    x_i = torch.zeros(1, 3, 32, 32)
    x_j = torch.ones(1, 3, 32, 32)
    lab = torch.ones(1, 2) / 2
    w = torch.ones(1)
    x, _, _ = cutmix(x_i, x_j, lab, lab, w, w, 0.75, box=box)
    assert int((x[0, 0] != x_i[0, 0]).sum()) == 256
    assert float(box_mask(box, 32, 32).mean()) == 0.75


def test_cutbox_is_clipped_at_border():
    class Corner:
        def integers(self, lo, hi):
            return hi - 1
    box = sample_cutbox(32, 32, 0.75, Corner())
    assert (box.x, box.y, box.w, box.h) == (31, 31, 1, 1)


def test_pairing_follows_row_order():
    n, classes = 5, 5
    xi = torch.arange(n, dtype=torch.float32).view(n, 1, 1, 1).expand(n, 1, 4, 4).clone()
    xj = (100 + torch.arange(n, dtype=torch.float32)).view(n, 1, 1, 1).expand(n, 1, 4, 4).clone()
    yi, yj = torch.arange(n), (torch.arange(n) + 1) % n
    w = torch.ones(n)
    mb = make_mixed_batch((xi, yi, w), (xj, yj, w), MixingConfig(seed=4), classes)
    lam = mb.lam
    expected = lam * torch.arange(n) + (1 - lam) * (100 + torch.arange(n))
    torch.testing.assert_close(mb.x_global[:, 0, 0, 0], expected.float())
    # local view pixels come only from the same row of either batch
    for k in range(n):
        assert set(mb.x_local[k].unique().tolist()) <= {float(k), float(100 + k)}
    rows = torch.arange(n)
    torch.testing.assert_close(mb.p_mixed[rows, yi], torch.full((n,), lam))
    torch.testing.assert_close(mb.p_mixed[rows, yj], torch.full((n,), 1 - lam))


def test_mixed_labels_sum_to_one_and_views_share_lambda():
    rng = np.random.default_rng(0)
    for seed in range(20):
        x_i, x_j, p_i, p_j, w_i, w_j = pair(seed=seed)
        mb = make_mixed_batch((x_i, p_i.argmax(1), w_i), (x_j, p_j.argmax(1), w_j),
                              MixingConfig(), 5, rng)
        torch.testing.assert_close(mb.p_mixed.sum(1), torch.ones(4))
        assert mb.p_local is None
        torch.testing.assert_close(mb.w_mixed, mb.lam * w_i + (1 - mb.lam) * w_j)


def test_separate_lambdas_option():
    x_i, x_j, p_i, p_j, w_i, w_j = pair()
    mb = make_mixed_batch((x_i, p_i.argmax(1), w_i), (x_j, p_j.argmax(1), w_j),
                          MixingConfig(share_lambda_across_views=False, seed=1), 5)
    assert mb.lam_local is not None and mb.lam_local != mb.lam
    p_l, w_l = mb.local_targets
    torch.testing.assert_close(w_l, mb.lam_local * w_i + (1 - mb.lam_local) * w_j)


def test_area_corrected_lambda_matches_pixels():
    x_i, x_j, p_i, p_j, w_i, w_j = pair()
    for seed in range(10):
        mb = make_mixed_batch((x_i, p_i.argmax(1), w_i), (x_j, p_j.argmax(1), w_j),
                              MixingConfig(area_correct_lambda=True, seed=seed), 5)
        kept = float(box_mask(mb.box, 8, 8).mean())
        assert mb.lam == pytest.approx(kept)


def test_shape_mismatch_rejected():
    x_i, x_j, p_i, p_j, w_i, w_j = pair()
    with pytest.raises(ValueError):
        mixup(x_i, x_j[:2], p_i, p_j, w_i, w_j, 0.5)
