"""Scalar-loop reference implementations used as independent oracles.

They avoid the vectorized code paths of ``videoalign.evaluation`` entirely;
trajectory alignment uses Horn's quaternion method rather than an SVD.
"""

import math

import numpy as np


def depth_metrics_loop(pred, gt, valid):
    """(abs_rel, delta) over pixels where ``valid`` is True, one pixel at a time."""
    n = 0
    rel = 0.0
    inl = 0
    for idx in np.ndindex(gt.shape):
        if not valid[idx]:
            continue
        p, g = float(pred[idx]), float(gt[idx])
        n += 1
        rel += abs(p - g) / g
        if p > 0 and max(p / g, g / p) < 1.25:
            inl += 1
    return rel / n, inl / n


def scale_shift_loop(pred, gt, valid):
    """Solve the 2x2 normal equations from explicitly accumulated sums."""
    sxx = sx = sxy = sy = 0.0
    n = 0
    for idx in np.ndindex(gt.shape):
        if not valid[idx]:
            continue
        x, y = float(pred[idx]), float(gt[idx])
        sxx += x * x
        sx += x
        sxy += x * y
        sy += y
        n += 1
    det = sxx * n - sx * sx
    s = (sxy * n - sx * sy) / det
    t = (sxx * sy - sx * sxy) / det
    return s, t


def _quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def horn_similarity(src, dst):
    """Similarity (R, t, s) minimizing sum ||s R src_i + t - dst_i||^2 via Horn's quaternion method."""
    n = len(src)
    cs = [sum(p[k] for p in src) / n for k in range(3)]
    cd = [sum(p[k] for p in dst) / n for k in range(3)]
    S = [[0.0] * 3 for _ in range(3)]
    var = 0.0
    for a, b in zip(src, dst):
        a = [a[k] - cs[k] for k in range(3)]
        b = [b[k] - cd[k] for k in range(3)]
        var += sum(v * v for v in a)
        for i in range(3):
            for j in range(3):
                S[i][j] += a[i] * b[j]
    (sxx, sxy, sxz), (syx, syy, syz), (szx, szy, szz) = S
    N = np.array(
        [
            [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
            [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
            [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
            [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
        ]
    )
    w, v = np.linalg.eigh(N)
    R = _quat_to_matrix(v[:, np.argmax(w)])
    num = 0.0
    for a, b in zip(src, dst):
        a = np.array(a) - cs
        b = np.array(b) - cd
        num += float(b @ (R @ a))
    s = num / var
    t = np.array(cd) - s * R @ np.array(cs)
    return R, t, s


def _matrix(R, t):
    M = np.eye(4)
    M[:3, :3] = R
    M[:3, 3] = t
    return M


def pose_metrics_loop(pred_R, pred_t, gt_R, gt_t):
    """(ate, rte, rre_deg) with Horn alignment and explicit 4x4 matrix inverses."""
    R, t, s = horn_similarity([list(p) for p in pred_t], [list(g) for g in gt_t])
    aligned = [_matrix(R @ Rp, s * R @ tp + t) for Rp, tp in zip(pred_R, pred_t)]
    gts = [_matrix(Rg, tg) for Rg, tg in zip(gt_R, gt_t)]
    sq = 0.0
    for a, g in zip(aligned, gts):
        d = a[:3, 3] - g[:3, 3]
        sq += float(d @ d)
    ate = math.sqrt(sq / len(gts))
    te = re = 0.0
    for i in range(len(gts) - 1):
        q = np.linalg.inv(gts[i]) @ gts[i + 1]
        p = np.linalg.inv(aligned[i]) @ aligned[i + 1]
        e = np.linalg.inv(q) @ p
        te += float(np.linalg.norm(e[:3, 3]))
        m = e[:3, :3]
        c = (m[0, 0] + m[1, 1] + m[2, 2] - 1.0) / 2.0
        sn = math.sqrt((m[2, 1] - m[1, 2]) ** 2 + (m[0, 2] - m[2, 0]) ** 2 + (m[1, 0] - m[0, 1]) ** 2) / 2.0
        re += math.atan2(sn, c)
    k = len(gts) - 1
    return ate, te / k, math.degrees(re / k), (R, t, s)
