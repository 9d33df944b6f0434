"""Slow, literal reference implementations used as test oracles.

Nothing here imports the package under test: every oracle is written from the
mathematical definition with explicit loops.
"""

import math

import numpy as np


# ---------------------------------------------------------------- warping

def warp_loop(src, disp):
    """Four-tap bilinear backward warp, one pixel at a time.

    src: (H, W, C); disp: (H, W, 2) as (dx, dy). A pixel is in bounds when its
    sample point lies in [0, W-1] x [0, H-1]; out-of-bounds pixels are 0.
    """
    h, w, c = src.shape
    out = np.zeros((h, w, c), np.float64)
    inb = np.zeros((h, w), np.uint8)
    for y in range(h):
        for x in range(w):
            sx = x + float(disp[y, x, 0])
            sy = y + float(disp[y, x, 1])
            if not (0 <= sx <= w - 1 and 0 <= sy <= h - 1):
                continue
            inb[y, x] = 1
            x0, y0 = math.floor(sx), math.floor(sy)
            ax, ay = sx - x0, sy - y0
            acc = np.zeros(c)
            for yy, wy in ((y0, 1 - ay), (y0 + 1, ay)):
                for xx, wx in ((x0, 1 - ax), (x0 + 1, ax)):
                    if wx * wy == 0:
                        continue
                    acc += wx * wy * src[yy, xx]
            out[y, x] = acc
    return out, inb


def project_points(K, pose_world_from_cam, points_world):
    """Pinhole projection of world points into a camera; returns (u, v, z)."""
    cam_from_world = np.linalg.inv(pose_world_from_cam)
    out = []
    for p in points_world:
        q = cam_from_world[:3, :3] @ p + cam_from_world[:3, 3]
        u = K[0, 0] * q[0] / q[2] + K[0, 2]
        v = K[1, 1] * q[1] / q[2] + K[1, 2]
        out.append((u, v, q[2]))
    return np.array(out)


def backproject_pixel(K, pose_world_from_cam, u, v, z):
    x = (u - K[0, 2]) / K[0, 0] * z
    y = (v - K[1, 2]) / K[1, 1] * z
    return pose_world_from_cam[:3, :3] @ np.array([x, y, z]) + pose_world_from_cam[:3, 3]


# ---------------------------------------------------------------- masks

def dilate_hole_loop(mask, radius):
    """Hole (0) dilation by an L1 disc, brute force."""
    h, w = mask.shape
    out = np.ones_like(mask)
    for y in range(h):
        for x in range(w):
            for yy in range(max(0, y - radius), min(h, y + radius + 1)):
                for xx in range(max(0, x - radius), min(w, x + radius + 1)):
                    if abs(yy - y) + abs(xx - x) <= radius and mask[yy, xx] == 0:
                        out[y, x] = 0
    return out


# ---------------------------------------------------------------- attention

def extract_patches_loop(feat, k, pad):
    """feat: (H, W, C) -> (N, C*k*k) flattened as (C, ky, kx), zero padding."""
    h, w, c = feat.shape
    padded = np.zeros((h + 2 * pad, w + 2 * pad, c))
    padded[pad:pad + h, pad:pad + w] = feat
    rows = []
    for y in range(h + 2 * pad - k + 1):
        for x in range(w + 2 * pad - k + 1):
            vec = []
            for ch in range(c):
                for ky in range(k):
                    for kx in range(k):
                        vec.append(padded[y + ky, x + kx, ch])
            rows.append(vec)
    return np.array(rows)


def contextual_attention_loop(fg, bg_frames, bg_masks, k, scale, eps=1e-8):
    """Brute-force contextual attention with same padding and stride 1.

    fg: (H, W, C); bg_frames: (T, H, W, C); bg_masks: (T, H, W), 1 = known.
    Returns (reconstruction (H, W, C), scores (H*W, N)).
    """
    h, w, c = fg.shape
    pad = k // 2

    def patch(img, cy, cx):
        vec = np.zeros((c, k, k))
        for ky in range(k):
            for kx in range(k):
                y, x = cy - pad + ky, cx - pad + kx
                if 0 <= y < h and 0 <= x < w:
                    vec[:, ky, kx] = img[y, x]
        return vec

    def touches_hole(m, cy, cx):
        for ky in range(k):
            for kx in range(k):
                y, x = cy - pad + ky, cx - pad + kx
                if 0 <= y < h and 0 <= x < w and m[y, x] == 0:
                    return True
        return False

    bg_patches, valid = [], []
    for t in range(len(bg_frames)):
        for cy in range(h):
            for cx in range(w):
                bg_patches.append(patch(bg_frames[t], cy, cx))
                valid.append(not touches_hole(bg_masks[t], cy, cx))
    n = len(bg_patches)

    scores = np.zeros((h * w, n))
    acc = np.zeros((h, w, c))
    cnt = np.zeros((h, w))
    for cy in range(h):
        for cx in range(w):
            q = patch(fg, cy, cx)
            logits = []
            for j in range(n):
                if not valid[j]:
                    logits.append(-math.inf)
                    continue
                b = bg_patches[j]
                cos = float((q * b).sum()) / (math.sqrt(float((q * q).sum())) * math.sqrt(float((b * b).sum())) + eps)
                logits.append(scale * cos)
            top = max(logits)
            ex = [0.0 if l == -math.inf else math.exp(l - top) for l in logits]
            z = sum(ex)
            row = [e / z for e in ex]
            scores[cy * w + cx] = row
            blended = np.zeros((c, k, k))
            for j in range(n):
                if row[j]:
                    blended += row[j] * bg_patches[j]
            for ky in range(k):
                for kx in range(k):
                    y, x = cy - pad + ky, cx - pad + kx
                    if 0 <= y < h and 0 <= x < w:
                        acc[y, x] += blended[:, ky, kx]
                        cnt[y, x] += 1
    return acc / cnt[..., None], scores


# ---------------------------------------------------------------- losses

def weighted_bce_loop(pred, gt, eps=1e-7):
    """Class-balanced BCE for one image with the rare class up-weighted.

    w_pos = 2*N_neg/N and w_neg = 2*N_pos/N (both 1 for balanced labels and for
    single-class images).
    """
    h, w = gt.shape
    n = h * w
    n_pos = sum(int(gt[y, x]) for y in range(h) for x in range(w))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        w_pos = w_neg = 1.0
    else:
        w_pos, w_neg = 2.0 * n_neg / n, 2.0 * n_pos / n
    total = 0.0
    for y in range(h):
        for x in range(w):
            p = min(max(float(pred[y, x]), eps), 1 - eps)
            if gt[y, x]:
                total += w_pos * math.log(p)
            else:
                total += w_neg * math.log(1 - p)
    return -total / n


def reconstruction_loss_loop(coarse, refined, gt, valid, alpha, m):
    """coarse, gt: (F, C, H, W); refined: (C, H, W); valid: (F, H, W)."""
    f, c, h, w = coarse.shape
    s = n = 0.0
    for i in range(f):
        for ch in range(c):
            for y in range(h):
                for x in range(w):
                    if valid[i, y, x]:
                        s += abs(coarse[i, ch, y, x] - gt[i, ch, y, x])
                        n += 1
    s2 = n2 = 0.0
    for ch in range(c):
        for y in range(h):
            for x in range(w):
                if valid[m, y, x]:
                    s2 += abs(refined[ch, y, x] - gt[m, ch, y, x])
                    n2 += 1
    return alpha * s / n + s2 / n2


def d_hinge_loop(real, fake):
    r = [max(0.0, 1 - v) for v in np.ravel(real)]
    f = [max(0.0, 1 + v) for v in np.ravel(fake)]
    return sum(r) / len(r) + sum(f) / len(f)


def g_hinge_loop(fake):
    vals = list(np.ravel(fake))
    return -sum(vals) / len(vals)


# ---------------------------------------------------------------- metrics

def hole_stats_loop(pred8, gt8, mask):
    """MAE and RMSE over hole pixels x channels, on 8-bit-scale inputs (H, W, C)."""
    h, w, c = pred8.shape
    a = s = n = 0.0
    for y in range(h):
        for x in range(w):
            if mask[y, x] == 0:
                for ch in range(c):
                    d = float(pred8[y, x, ch]) - float(gt8[y, x, ch])
                    a += abs(d)
                    s += d * d
                    n += 1
    return a / n, math.sqrt(s / n)


def ssim_loop(x, y, mask, size=11, sigma=1.5, peak=255.0):
    """Mean local SSIM at hole pixels of single-channel images, symmetric borders."""
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    r = size // 2
    g = [math.exp(-(i - r) ** 2 / (2 * sigma ** 2)) for i in range(size)]
    win = [[a * b for b in g] for a in g]
    tot = sum(sum(row) for row in win)
    win = [[v / tot for v in row] for row in win]
    h, w = x.shape

    def refl(i, n):
        # symmetric reflection: ... b a | a b c ... (edge sample repeated)
        while i < 0 or i >= n:
            i = -i - 1 if i < 0 else 2 * n - i - 1
        return i

    vals = []
    for cy in range(h):
        for cx in range(w):
            if mask[cy, cx] != 0:
                continue
            mx = my = sxx = syy = sxy = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    wt = win[dy + r][dx + r]
                    yy, xx = refl(cy + dy, h), refl(cx + dx, w)
                    a, b = float(x[yy, xx]), float(y[yy, xx])
                    mx += wt * a
                    my += wt * b
                    sxx += wt * a * a
                    syy += wt * b * b
                    sxy += wt * a * b
            vx, vy, cov = sxx - mx * mx, syy - my * my, sxy - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(vals) / len(vals)


# ---------------------------------------------------------------- network pieces

def composite_loop(pred, image_in, mask):
    h, w = mask.shape
    out = np.empty_like(pred)
    for y in range(h):
        for x in range(w):
            out[y, x] = image_in[y, x] if mask[y, x] else pred[y, x]
    return out


def temporal_conv_loop(feats, weight, bias):
    """3D convolution of temporal depth F and spatial 'same' padding as an explicit sum.

    feats: (F, C, H, W); weight: (Cout, C, F, k, k); bias: (Cout,) -> (Cout, H, W).
    """
    f, c, h, w = feats.shape
    cout, _, _, k, _ = weight.shape
    p = k // 2
    out = np.zeros((cout, h, w))
    for o in range(cout):
        for y in range(h):
            for x in range(w):
                s = bias[o]
                for t in range(f):
                    for ci in range(c):
                        for ky in range(k):
                            for kx in range(k):
                                yy, xx = y + ky - p, x + kx - p
                                if 0 <= yy < h and 0 <= xx < w:
                                    s += weight[o, ci, t, ky, kx] * feats[t, ci, yy, xx]
                out[o, y, x] = s
    return out


def central_difference(fn, x, h):
    """Numerical gradient of a scalar function of a float64 numpy array."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = fn(x)
        x[i] = old - h
        fm = fn(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))
