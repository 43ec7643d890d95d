"""Slow, independent reference implementations used as test oracles.

Everything here is written with plain Python loops and the math module so
that it shares no code path with the package under test.
"""

from __future__ import annotations

import math
from itertools import product


def matvec4(m, p):
    """4x4 matrix times a 3D point in homogeneous coordinates, one row at a time."""
    x = [p[0], p[1], p[2], 1.0]
    out = []
    for r in range(4):
        acc = 0.0
        for c in range(4):
            acc += float(m[r][c]) * x[c]
        out.append(acc)
    return out[:3]


def inv_rigid(m):
    """Inverse of a rigid 4x4 transform via the transpose of its rotation block."""
    rt = [[float(m[c][r]) for c in range(3)] for r in range(3)]
    t = [float(m[r][3]) for r in range(3)]
    nt = [-sum(rt[r][c] * t[c] for c in range(3)) for r in range(3)]
    return [rt[0] + [nt[0]], rt[1] + [nt[1]], rt[2] + [nt[2]], [0.0, 0.0, 0.0, 1.0]]


def compensate_point(p, world_to_ego, pose_t1, pose_t2):
    q = matvec4(world_to_ego, p)
    q = matvec4(pose_t1, q)
    return matvec4(inv_rigid(pose_t2), q)


def project_point(p, intrinsic, extrinsic, width, height):
    """Pixel and depth of one ego-frame point, or None when culled."""
    c = matvec4(extrinsic, p)
    hom = [sum(float(intrinsic[r][k]) * c[k] for k in range(3)) for r in range(3)]
    if c[2] <= 1e-6:
        return None
    u, v = hom[0] / hom[2], hom[1] / hom[2]
    if not (0 <= u < width and 0 <= v < height):
        return None
    return (u, v), c[2]


def cam_value(theta, fmap, y, h, w):
    acc = 0.0
    for c in range(len(theta[y])):
        acc += float(theta[y][c]) * float(fmap[c][h][w])
    return acc


def polar_voxel(p, nr, na, nz, r_range, z_range):
    x, y, z = (float(t) for t in p)
    r = math.hypot(x, y)
    th = math.atan2(y, x)
    if th < 0:
        th += 2 * math.pi
    if not (r_range[0] <= r < r_range[1] and z_range[0] <= z < z_range[1]):
        return None
    ir = int((r - r_range[0]) / ((r_range[1] - r_range[0]) / nr))
    ia = int(th / (2 * math.pi / na))
    iz = int((z - z_range[0]) / ((z_range[1] - z_range[0]) / nz))
    return min(ir, nr - 1), min(ia, na - 1), min(iz, nz - 1)


def group_pool(keys, rows, pool):
    """dict voxel -> pooled row; ``keys`` are hashable voxel ids (None = dropped)."""
    groups: dict = {}
    for k, row in zip(keys, rows):
        if k is not None:
            groups.setdefault(k, []).append([float(x) for x in row])
    out = {}
    for k, members in groups.items():
        cols = list(zip(*members))
        if pool == "mean":
            out[k] = [math.fsum(col) / len(col) for col in cols]
        else:
            out[k] = [max(col) for col in cols]
    return out


def softmax(xs):
    top = max(xs)
    e = [math.exp(x - top) for x in xs]
    s = math.fsum(e)
    return [v / s for v in e]


def neighbourhood(center, nr, na, nz):
    out = []
    for dr, da, dz in product((-1, 0, 1), repeat=3):
        r, a, z = center[0] + dr, (center[1] + da) % na, center[2] + dz
        if 0 <= r < nr and 0 <= z < nz and (r, a, z) not in out:
            out.append((r, a, z))
    return out


def attend(base: dict, fused: dict, nr, na, nz):
    """Residual local attention with a dict-of-cells oracle."""
    out = {}
    for cell, q in base.items():
        keys = [fused[n] for n in neighbourhood(cell, nr, na, nz) if n in fused]
        if not keys:
            out[cell] = list(q)
            continue
        scale = math.sqrt(len(q))
        w = softmax([sum(a * b for a, b in zip(q, k)) / scale for k in keys])
        att = [math.fsum(wi * k[c] for wi, k in zip(w, keys)) for c in range(len(q))]
        out[cell] = [a + b for a, b in zip(att, q)]
    return out


def sliding_nms(heat, kernel, threshold):
    """Cells that are >= threshold, maximal in their window, and not tied with an
    earlier (row-major) cell of the window."""
    h, w = len(heat), len(heat[0])
    r = kernel // 2
    keep = []
    for i in range(h):
        for j in range(w):
            v = heat[i][j]
            if v < threshold:
                continue
            ok = True
            for a in range(max(0, i - r), min(h, i + r + 1)):
                for b in range(max(0, j - r), min(w, j + r + 1)):
                    if heat[a][b] > v or (heat[a][b] == v and (a, b) < (i, j)):
                        ok = False
            if ok:
                keep.append(((i, j), v))
    keep.sort(key=lambda c: (-c[1], c[0]))
    return keep


def nearest_center(cell, offset, centers):
    """1-based rank of the closest centre after shifting; ties favour earlier centres."""
    sx, sy = cell[0] + offset[0], cell[1] + offset[1]
    best, best_d = 0, math.inf
    for rank, (c, _) in enumerate(centers, start=1):
        d = (sx - c[0]) ** 2 + (sy - c[1]) ** 2
        if d < best_d:
            best, best_d = rank, d
    return best


def brute_pq(gt_sem, gt_inst, pr_sem, pr_inst, things, stuff, ignore):
    """Per-class (sum IoU of matches, tp, fp, fn) by comparing every segment pair."""

    def segments(sem, inst, cls, thing):
        segs: dict = {}
        for i, (s, n) in enumerate(zip(sem, inst)):
            if s != cls or gt_sem[i] in ignore:
                continue
            if thing and n <= 0:
                continue
            segs.setdefault(n if thing else 0, set()).add(i)
        return list(segs.values())

    out = {}
    for cls in sorted(things + stuff):
        thing = cls in things
        g = segments(gt_sem, gt_inst, cls, thing)
        p = segments(pr_sem, pr_inst, cls, thing)
        iou_sum, tp, used_p = 0.0, 0, set()
        used_g = set()
        for gi, gs in enumerate(g):
            for pi, ps in enumerate(p):
                inter = len(gs & ps)
                iou = inter / len(gs | ps)
                if iou > 0.5:
                    iou_sum += iou
                    tp += 1
                    used_g.add(gi)
                    used_p.add(pi)
        out[cls] = (iou_sum, tp, len(p) - len(used_p), len(g) - len(used_g))
    return out


def lovasz_class(errors, fg):
    """Lovasz extension of the Jaccard loss for one class, from its definition."""
    order = sorted(range(len(errors)), key=lambda i: -errors[i])
    total_fg = sum(fg)

    def jaccard_loss(k):
        # loss when the top-k errors are counted as mistakes
        top = set(order[:k])
        inter = sum(1 for i in range(len(fg)) if fg[i] and i not in top)
        union = total_fg + sum(1 for i in top if not fg[i])
        return 1.0 - inter / union if union else 0.0

    return math.fsum(errors[order[k - 1]] * (jaccard_loss(k) - jaccard_loss(k - 1)) for k in range(1, len(order) + 1))
