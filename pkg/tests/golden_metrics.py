"""Hand-built 3-clip fixture for the evaluation report, with its derivation.

All masks are 6x6, so the contour tolerance is max(1, ceil(0.008 * 8.49)) = 1.
A 2x2 square is entirely boundary (every pixel touches background).

clip "a", 1 frame: prediction == ground truth, a 2x2 square at rows 1-2, cols 1-2.
    IoU = 4/4 = 1, F = 1.
clip "b", 1 frame: same ground truth; prediction shifted right by 2 (cols 3-4).
    intersection 0, union 8 -> IoU 0.
    predicted boundary {(1,3),(1,4),(2,3),(2,4)}: column 3 is 1 px from gt
    column 2, column 4 is 2 px away -> precision 2/4. By symmetry recall 2/4.
    F = 2 * 0.5 * 0.5 / 1 = 0.5.
clip "c", 2 frames:
    frame 0: gt 3x3 square in the top-left corner (9 px); prediction is its top
    two rows (6 px). intersection 6, union 9 -> IoU 2/3.
    gt boundary: all but the centre (1,1) (outside the image is background).
    Every predicted pixel is a boundary pixel; (1,1) is 1 px from (0,1), the
    rest are gt boundary pixels themselves -> precision 1. The gt bottom row
    lies 1 px below the predicted middle row -> recall 1. F = 1.
    frame 1: both masks empty -> IoU 1, F 1.
    clip IoU = (2/3 + 1)/2 = 5/6, clip F = 1.

Report:
    J = mean clip IoU = (1 + 0 + 5/6)/3 = 11/18
    F = (1 + 0.5 + 1)/3 = 5/6
    J&F = (11/18 + 15/18)/2 = 13/18
    P@K counts clip IoU > K over {1, 0, 5/6}: K = 0.5 .. 0.8 -> 2/3, K = 0.9 -> 1/3
    overall IoU = (4 + 0 + 6 + 0)/(4 + 8 + 9 + 0) = 10/21
    mean IoU = 11/18
    mAP: thresholds 0.50..0.95; clip a hits all 10, b none, c (0.833) hits
    0.50..0.80 = 7 -> (10 + 0 + 7)/30 = 17/30
"""
import numpy as np


def square(r0, r1, c0, c1, size=6):
    m = np.zeros((size, size), dtype=np.uint8)
    m[r0:r1 + 1, c0:c1 + 1] = 1
    return m


EMPTY = np.zeros((6, 6), dtype=np.uint8)

GROUND_TRUTH = {
    "a": np.stack([square(1, 2, 1, 2)]),
    "b": np.stack([square(1, 2, 1, 2)]),
    "c": np.stack([square(0, 2, 0, 2), EMPTY]),
}
PREDICTIONS = {
    "a": np.stack([square(1, 2, 1, 2)]),
    "b": np.stack([square(1, 2, 3, 4)]),
    "c": np.stack([square(0, 1, 0, 2), EMPTY]),
}
EXPECTED = {
    "J": 11 / 18,
    "F": 5 / 6,
    "J&F": 13 / 18,
    "P@0.5": 2 / 3,
    "P@0.6": 2 / 3,
    "P@0.7": 2 / 3,
    "P@0.8": 2 / 3,
    "P@0.9": 1 / 3,
    "overall_iou": 10 / 21,
    "mean_iou": 11 / 18,
    "mAP": 17 / 30,
}
