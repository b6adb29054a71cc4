import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_assignment, numeric_grad
from stdvos.losses import (CapacityError, FrameTargets, LossConfig, MatchResult, NumericError,
                           box_regression_loss, clip_pair_loss, focal_loss, hungarian_match,
                           identity_infonce, infonce, match_from_cost, total_loss)

# four slots written out by hand with math.log / math.exp, alpha 0.25, gamma 2
FOCAL_FIXTURE = 0.09274601713598139


def test_focal_loss_fixture():
    logits = torch.tensor([2.0, -1.0, 0.5, -0.3], dtype=torch.float64)
    targets = torch.tensor([1.0, 0.0, 0.0, 1.0], dtype=torch.float64)
    assert float(focal_loss(logits, targets)) == pytest.approx(FOCAL_FIXTURE, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-8, 8), min_size=1, max_size=12), st.integers(0, 2**16))
def test_focal_without_focusing_is_cross_entropy(logits, seed):
    z = torch.tensor(logits, dtype=torch.float64)
    y = torch.from_numpy(np.random.default_rng(seed).integers(0, 2, len(logits)).astype(float))
    ce = F.binary_cross_entropy_with_logits(z, y)
    assert abs(float(focal_loss(z, y, alpha=None, gamma=0.0)) - float(ce)) < 1e-10


def test_focal_gradient_matches_central_differences():
    z = np.array([1.3, -0.7, 0.2, -2.1, 0.05])
    y = torch.tensor([1.0, 0.0, 1.0, 0.0, 0.0], dtype=torch.float64)
    zt = torch.tensor(z, requires_grad=True)
    focal_loss(zt, y).backward()
    num = numeric_grad(lambda: float(focal_loss(torch.from_numpy(z), y)), z)
    assert np.allclose(zt.grad.numpy(), num, atol=1e-9)


def test_infonce_single_pair_is_zero():
    a = torch.randn(1, 6, dtype=torch.float64)
    assert float(infonce(a, torch.randn(1, 6, dtype=torch.float64))) == 0.0


def test_infonce_closed_form_three_orthonormal():
    e = torch.eye(3, dtype=torch.float64)
    # cos = 1 with the positive, 0 with the two negatives, tau = 1
    assert float(infonce(e, e, tau=1.0)) == pytest.approx(math.log((math.e + 2) / math.e), abs=1e-12)


def test_infonce_masked_candidates_drop_out():
    e = torch.eye(4, dtype=torch.float64)
    full = infonce(e[:1], e, [0], tau=1.0)
    masked = infonce(e[:1], e, [0], tau=1.0, candidate_mask=torch.tensor([True, True, False, False]))
    assert float(full) == pytest.approx(math.log(math.e + 3) - 1)
    assert float(masked) == pytest.approx(math.log(math.e + 1) - 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(2, 8), st.floats(0.05, 2.0), st.integers(0, 2**16))
def test_infonce_is_scale_invariant_and_nonnegative(n, dim, tau, seed):
    g = torch.Generator().manual_seed(seed)
    a = torch.randn(n, dim, generator=g, dtype=torch.float64)
    c = torch.randn(n, dim, generator=g, dtype=torch.float64)
    base = infonce(a, c, tau=tau)
    assert float(base) >= -1e-12
    assert torch.allclose(base, infonce(a * 3.0, c * 0.5, tau=tau))


def test_infonce_rejects_bad_temperature():
    with pytest.raises(Exception):
        infonce(torch.eye(2), torch.eye(2), tau=0.0)


def test_box_loss_zero_at_ground_truth():
    b = torch.tensor([[0.5, 0.5, 0.2, 0.3], [0.3, 0.6, 0.1, 0.1]], dtype=torch.float64)
    assert float(box_regression_loss(b, b.clone(), LossConfig())) == 0.0


def test_box_loss_weights():
    pred = torch.tensor([[0.5, 0.5, 0.2, 0.2]], dtype=torch.float64)
    gt = torch.tensor([[0.6, 0.5, 0.2, 0.2]], dtype=torch.float64)
    # corners: [0.4,0.4,0.6,0.6] vs [0.5,0.4,0.7,0.6]; IoU = 0.02 / 0.06, hull equals union
    want = 5.0 * 0.1 / 4 + 2.0 * (1 - 1 / 3)
    assert float(box_regression_loss(pred, gt, LossConfig())) == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("seed", range(220))
def test_hungarian_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, 7)), int(rng.integers(1, 7))
    n = min(n, m)
    cost = rng.uniform(0, 1, (n, m))
    if seed % 3 == 0:
        cost = np.round(cost * 3) / 3  # many ties
    res = match_from_cost(cost)
    assert len(res.gt_to_query) == n
    assert len(res.matched_queries) == n
    assert res.cost == pytest.approx(brute_force_assignment(cost), abs=1e-12)


def test_matching_capacity():
    with pytest.raises(CapacityError):
        hungarian_match(torch.zeros(2), torch.full((2, 4), 0.5), torch.full((3, 4), 0.5))
    assert hungarian_match(torch.zeros(2), torch.full((2, 4), 0.5), torch.zeros(0, 4)).gt_to_query == {}


def test_matching_picks_the_obvious_query():
    boxes = torch.tensor([[0.2, 0.2, 0.1, 0.1], [0.7, 0.7, 0.2, 0.2], [0.5, 0.5, 0.3, 0.3]])
    gt = torch.tensor([[0.7, 0.7, 0.2, 0.2], [0.2, 0.2, 0.1, 0.1]])
    res = hungarian_match(torch.zeros(3), boxes, gt)
    assert res.gt_to_query == {0: 1, 1: 0}
    assert list(res.labels()) == [1.0, 1.0, 0.0]


def test_total_loss_weights_and_numeric_guard():
    cfg = LossConfig(cls_weight=2.0)
    assert float(total_loss(torch.tensor(1.0), torch.tensor(0.5), torch.tensor(0.25), cfg)) == 2.75
    with pytest.raises(NumericError):
        total_loss(torch.tensor(float("nan")), torch.tensor(0.0), torch.tensor(0.0), cfg)


def test_identity_infonce_pairs_by_object_id():
    # object 7 sits on query 0 at t and query 2 at t'; object 9 on queries 1 and 0
    e = torch.eye(4, dtype=torch.float64)
    reid_t = e[[0, 1, 3, 3]]
    reid_u = e[[1, 3, 0, 2]]
    mt, mu = MatchResult({0: 0, 1: 1}, 4), MatchResult({0: 0, 1: 2}, 4)
    loss = identity_infonce(reid_t, reid_u, mt, mu, [7, 9], [9, 7], tau=1.0)
    # every anchor sees cos 1 with its positive; query 3 at t' is unmatched, query 1 at t'
    # is kept because query 1 matched at t
    assert float(loss) == pytest.approx(math.log(math.e + 2) - 1, abs=1e-12)


def test_clip_pair_loss_parts():
    torch.manual_seed(0)
    Q = 5
    out = lambda: {"logits": torch.randn(Q, dtype=torch.float64),  # noqa: E731
                   "boxes": torch.rand(Q, 4, dtype=torch.float64) * 0.3 + 0.2,
                   "reid": F.normalize(torch.randn(Q, 8, dtype=torch.float64), dim=-1)}
    tgt = FrameTargets(torch.tensor([[0.3, 0.3, 0.2, 0.2], [0.7, 0.6, 0.2, 0.3]], dtype=torch.float64), [1, 2])
    parts = clip_pair_loss(out(), out(), tgt, tgt, LossConfig())
    assert set(parts) == {"cls", "box", "cl", "total"}
    assert float(parts["total"]) == pytest.approx(2 * float(parts["cls"]) + float(parts["box"]) + float(parts["cl"]))
    off = clip_pair_loss(out(), out(), tgt, tgt, LossConfig(use_contrastive=False))
    assert float(off["cl"]) == 0.0
