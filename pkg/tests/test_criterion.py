import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qrvos import criterion as L
from qrvos.tensor import Tensor

W = L.LossWeights()


def t64(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


# ------------------------------------------------------------- scalar oracles
def focal_scalar(x, y, alpha=0.25, gamma=2.0):
    p, q = 1 / (1 + math.exp(-x)), 1 / (1 + math.exp(x))
    # log p = -log(1 + e^-x) and log(1 - p) = -log(1 + e^x), without cancellation
    if y:
        return alpha * q**gamma * math.log1p(math.exp(-x))
    return (1 - alpha) * p**gamma * math.log1p(math.exp(x))


def giou_scalar(a, b):
    ax0, ay0, ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0, bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    inter = max(0.0, min(ax1, bx1) - max(ax0, bx0)) * max(0.0, min(ay1, by1) - max(ay0, by0))
    union = a[2] * a[3] + b[2] * b[3] - inter
    iou = inter / union if union > 0 else 0.0
    c = (max(ax1, bx1) - min(ax0, bx0)) * (max(ay1, by1) - min(ay0, by0))
    return iou - ((c - union) / c if c > 0 else 0.0)


# ------------------------------------------------------------------- focal
def test_focal_hand_value():
    got = float(L.focal_loss(t64([0.0]), [1.0], 0.25, 2.0).data)
    assert abs(got - 0.25 * 0.5**2 * math.log(2)) < 1e-12
    assert abs(got - 0.04332) < 1e-5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-8, 8), min_size=1, max_size=10), st.data())
def test_focal_gamma_zero_is_half_bce(xs, data):
    ys = data.draw(st.lists(st.sampled_from([0.0, 1.0]), min_size=len(xs), max_size=len(xs)))
    got = float(L.focal_loss(t64(xs), ys, alpha=0.5, gamma=0.0).data)
    bce = np.mean([-(y * math.log(1 / (1 + math.exp(-x))) + (1 - y) * math.log(1 - 1 / (1 + math.exp(-x))))
                   for x, y in zip(xs, ys)])
    assert got == pytest.approx(0.5 * bce, rel=1e-9, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-20, 20), st.sampled_from([0.0, 1.0]))
def test_focal_matches_scalar_oracle(x, y):
    assert float(L.focal_loss(t64([x]), [y]).data) == pytest.approx(focal_scalar(x, y), rel=1e-9, abs=1e-15)


def test_focal_confident_correct_is_zero():
    assert float(L.focal_loss(t64([40.0, -40.0]), [1.0, 0.0]).data) < 1e-30


def test_focal_finite_for_extreme_logits():
    v = L.focal_loss(t64([-1e4, 1e4]), [1.0, 0.0])
    assert np.isfinite(v.data)


# -------------------------------------------------------------------- giou
def test_giou_identical_is_one():
    b = t64([[0.4, 0.5, 0.2, 0.3]])
    assert float(L.giou(b, b).data[0]) == pytest.approx(1.0, abs=1e-15)


def test_giou_disjoint_hand_value():
    a = t64([[0.25, 0.25, 0.1, 0.1]])
    b = t64([[0.75, 0.75, 0.1, 0.1]])
    got = float(L.giou(a, b).data[0])
    assert abs(got - (-(0.36 - 0.02) / 0.36)) < 1e-12
    assert abs(got + 0.9444) < 1e-4


def test_giou_nested_equals_iou():
    outer = t64([[0.5, 0.5, 0.4, 0.4]])
    inner = t64([[0.45, 0.55, 0.1, 0.2]])
    assert float(L.giou(outer, inner).data[0]) == pytest.approx(0.02 / 0.16, abs=1e-12)


def test_giou_degenerate_boxes_are_finite():
    point = t64([[0.5, 0.5, 0.0, 0.0]])
    box = t64([[0.5, 0.5, 0.2, 0.2]])
    assert float(L.giou(point, box).data[0]) == pytest.approx(0.0, abs=1e-12)
    assert np.isfinite(L.giou(point, point).data).all()
    far = t64([[0.9, 0.9, 0.0, 0.0]])
    assert float(L.giou(point, far).data[0]) == pytest.approx(-1.0, abs=1e-12)


box_st = st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 1), st.floats(0.01, 1))


@settings(max_examples=100, deadline=None)
@given(box_st, box_st)
def test_giou_matches_scalar_oracle_and_range(a, b):
    got = float(L.giou(t64([a]), t64([b])).data[0])
    assert got == pytest.approx(giou_scalar(a, b), abs=1e-12)
    assert -1.0 < got <= 1.0 + 1e-12


# -------------------------------------------------------------------- dice
def test_dice_perfect_is_zero():
    g = (np.random.default_rng(0).random((2, 5, 5)) > 0.5).astype(float)
    assert float(L.dice_loss(t64(g), g).data) == pytest.approx(0.0, abs=1e-15)


def test_dice_all_wrong():
    M = 1000
    assert float(L.dice_loss(t64(np.ones(M)), np.zeros(M)).data) == pytest.approx(1 - 1 / (M + 1), abs=1e-12)


def test_dice_half_prediction_large_m():
    M = 1_000_000
    got = float(L.dice_loss(t64(np.full(M, 0.5)), np.ones(M)).data)
    assert abs(got - 1 / 3) < 1e-3


def test_dice_is_joint_over_frames():
    p = np.array([[1.0, 1.0], [0.0, 0.0]])
    g = np.array([[1.0, 1.0], [1.0, 1.0]])
    joint = 1 - (2 * 2 + 1) / (2 + 4 + 1)
    assert float(L.dice_loss(t64(p), g).data) == pytest.approx(joint, abs=1e-15)


# ---------------------------------------------------------------- matching
def random_instance(rng, T=3, N=4, h=6, w=6, K=1, visible=None):
    vis = (rng.random(T) < 0.7).astype(np.float32) if visible is None else np.asarray(visible, np.float32)
    boxes = np.column_stack([rng.uniform(0.2, 0.8, (T, 2)), rng.uniform(0.05, 0.4, (T, 2))])
    masks = (rng.random((T, h, w)) < 0.3).astype(np.float32) * vis[:, None, None]
    target = L.Target(vis, boxes, masks, label=int(rng.integers(0, K)))
    logits = t64(rng.normal(size=(T, N, K)) * 2)
    pb = t64(np.column_stack([rng.uniform(0.1, 0.9, (T * N, 2)), rng.uniform(0.05, 0.5, (T * N, 2))]).reshape(T, N, 4))
    pm = t64(rng.normal(size=(T, N, h, w)) * 2)
    return logits, pb, pm, target


def naive_cost(logits, boxes, masks, target, i, w=W):
    """Per-frame loops over scalar formulas; Dice and mask focal pooled over visible frames."""
    T, N, K = logits.shape
    vis = target.visibility
    cls = 0.0
    for t in range(T):
        for k in range(K):
            y = 1.0 if (vis[t] and (K == 1 or k == target.label)) else 0.0
            cls += focal_scalar(logits.data[t, i, k], y)
    cost = w.cls * cls / T
    frames = [t for t in range(T) if vis[t]]
    if not frames:
        return cost
    l1 = sum(abs(boxes.data[t, i, c] - target.boxes[t, c]) for t in frames for c in range(4))
    gi = sum(1 - giou_scalar(boxes.data[t, i], target.boxes[t]) for t in frames)
    num = den = 0.0
    foc = []
    for t in frames:
        for y, x in np.ndindex(masks.shape[2:]):
            z = masks.data[t, i, y, x]
            p = 1 / (1 + math.exp(-z))
            g = float(target.masks[t, y, x])
            num += p * g
            den += p + g
            foc.append(focal_scalar(z, g))
    dice = 1 - (2 * num + 1) / (den + 1)
    return cost + w.l1 * l1 / T + w.giou * gi / T + w.dice * dice + w.mask_focal * np.mean(foc)


@pytest.mark.parametrize("K", [1, 3])
def test_match_cost_matches_naive_oracle(K):
    rng = np.random.default_rng(K)
    for _ in range(10):
        lg, pb, pm, tg = random_instance(rng, K=K)
        for i in range(lg.shape[1]):
            got = L.match_cost(lg[:, i], pb[:, i], pm[:, i], tg)
            assert got == pytest.approx(naive_cost(lg, pb, pm, tg, i), rel=1e-9)


def test_exact_prediction_has_near_zero_cost():
    rng = np.random.default_rng(0)
    _, _, _, tg = random_instance(rng, T=3, N=1, visible=[1, 0, 1])
    logits = t64((np.where(tg.visibility > 0, 40.0, -40.0))[:, None])
    masks = t64(np.where(tg.masks > 0, 40.0, -40.0))
    assert L.match_cost(logits, t64(tg.boxes), masks, tg) < 1e-9


def test_strictly_better_query_has_lower_cost():
    rng = np.random.default_rng(1)
    _, _, _, tg = random_instance(rng, T=3, N=1, visible=[1, 1, 1])
    good = (t64(np.full((3, 1), 3.0)), t64(tg.boxes + 0.01), t64(np.where(tg.masks > 0, 3.0, -3.0)))
    bad = (t64(np.full((3, 1), 1.0)), t64(tg.boxes + 0.05), t64(np.where(tg.masks > 0, 1.0, -1.0)))
    assert L.match_cost(*good, tg) < L.match_cost(*bad, tg)


def test_argmin_tie_break_example():
    assert L.argmin_lowest([3.2, 1.1, 5.0, 1.1, 2.0]) == 1


def test_single_query_always_index_zero():
    rng = np.random.default_rng(2)
    for _ in range(5):
        lg, pb, pm, tg = random_instance(rng, N=1)
        assert L.find_positive(lg, pb, pm, tg).positive == 0


def enumerate_oracle(costs):
    best = 0
    for i in range(1, len(costs)):
        if costs[i] < costs[best]:
            best = i
    return best


def test_find_positive_agrees_with_enumeration_100_instances():
    rng = np.random.default_rng(123)
    for n in range(100):
        N = int(rng.integers(1, 9))
        lg, pb, pm, tg = random_instance(rng, T=int(rng.integers(1, 4)), N=N, h=4, w=4)
        if N > 1 and n % 3 == 0:
            # duplicate a query so that ties really occur
            src, dst = sorted(rng.choice(N, size=2, replace=False))
            for x in (lg, pb, pm):
                x.data[:, dst] = x.data[:, src]
        costs = [naive_cost(lg, pb, pm, tg, i) for i in range(N)]
        res = L.find_positive(lg, pb, pm, tg)
        assert res.positive == enumerate_oracle(res.costs)
        np.testing.assert_allclose(res.costs, costs, rtol=1e-9)
        assert res.positive == enumerate_oracle(costs)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=8), st.integers(-50, 50))
def test_argmin_shift_invariant(costs, c):
    # small integers make ties common and the shift exact
    shifted = [x * 0.25 + c for x in costs]
    assert L.argmin_lowest(shifted) == L.argmin_lowest(costs) == enumerate_oracle(costs)


# -------------------------------------------------------------- total loss
def test_total_loss_near_zero_when_everything_right():
    rng = np.random.default_rng(3)
    _, _, _, tg = random_instance(rng, T=3, N=3, visible=[1, 1, 0])
    logits = np.full((3, 3, 1), -40.0)
    logits[:, 1, 0] = np.where(tg.visibility > 0, 40.0, -40.0)
    boxes = np.repeat(tg.boxes[:, None], 3, axis=1)
    masks = np.repeat(np.where(tg.masks > 0, 40.0, -40.0)[:, None], 3, axis=1)
    res = L.total_loss(t64(logits), t64(boxes), t64(masks), tg)
    assert res.match.positive == 1
    assert res.breakdown["total"] < 1e-9


def test_breakdown_columns_and_linearity():
    rng = np.random.default_rng(4)
    lg, pb, pm, tg = random_instance(rng, visible=[1, 1, 1])
    a = L.total_loss(lg, pb, pm, tg, W)
    b = L.total_loss(lg, pb, pm, tg, L.LossWeights(dice=2 * W.dice), match=a.match)
    assert set(a.breakdown) == {"total", "cls", "l1", "giou", "dice", "mask_focal"}
    assert b.breakdown["dice"] == pytest.approx(2 * a.breakdown["dice"], rel=1e-12)
    assert a.breakdown["total"] == pytest.approx(sum(a.breakdown[k] for k in L.TERMS), rel=1e-12)


def test_cost_and_loss_agree_on_positive():
    rng = np.random.default_rng(5)
    lg, pb, pm, tg = random_instance(rng, visible=[1, 0, 1])
    res = L.total_loss(lg, pb, pm, tg)
    i = res.match.positive
    neg_cls = sum(float(L.query_terms(lg[:, j], pb[:, j], pm[:, j], tg, positive=False)["cls"].data)
                  for j in res.match.negatives)
    assert res.breakdown["total"] - neg_cls == pytest.approx(res.match.costs[i], rel=1e-12)


def test_invisible_clip_only_classification():
    rng = np.random.default_rng(6)
    lg, pb, pm, tg = random_instance(rng, visible=[0, 0, 0])
    res = L.total_loss(lg, pb, pm, tg)
    assert np.isfinite(res.breakdown["total"])
    assert res.breakdown["l1"] == res.breakdown["dice"] == 0.0
    assert res.breakdown["total"] == pytest.approx(res.breakdown["cls"])


def test_negatives_get_classification_gradient_only():
    rng = np.random.default_rng(7)
    lg, pb, pm, tg = random_instance(rng, visible=[1, 1, 1])
    for x in (lg, pb, pm):
        x.requires_grad = True
    res = L.total_loss(lg, pb, pm, tg)
    res.total.backward()
    for j in res.match.negatives:
        assert np.all(pb.grad[:, j] == 0) and np.all(pm.grad[:, j] == 0)
        assert np.any(lg.grad[:, j] != 0)
    assert np.any(pm.grad[:, res.match.positive] != 0)


def test_downsample_mask_area_threshold():
    m = np.zeros((1, 8, 8), dtype=np.uint8)
    m[0, :2, :4] = 1  # exactly half of the top-left 4x4 cell
    m[0, 4:7, 4:7] = 1  # 9 of 16 in the bottom-right cell
    m[0, 0, 4] = 1  # 1 of 16
    out = L.downsample_mask(m, 4)
    np.testing.assert_array_equal(out[0], [[1, 0], [0, 1]])
