"""Independent straight-line reimplementations used as test oracles.

Everything here is deliberately written as plain Python loops over plain
floats, sharing no helpers with the package under test: slow, obvious, and
easy to audit.  Group structure is passed as plain (edges, lengths) tuples
so these functions do not depend on the package's types.
"""
import math


def brute_heatmap_loss(pred, target, visibility):
    """Per-plane squared-difference sums, averaged over J planes.

    pred/target: nested lists or arrays indexable as [j][v][u]; one sample.
    """
    n_joints = len(pred)
    total = 0.0
    for j in range(n_joints):
        if not visibility[j]:
            continue
        plane_sum = 0.0
        for row_p, row_t in zip(pred[j], target[j]):
            for p, t in zip(row_p, row_t):
                d = float(p) - float(t)
                plane_sum += d * d
        total += plane_sum
    return total / n_joints


def brute_smooth_l1(pred, target, visibility, beta):
    """Smooth-L1 averaged over visible joints; one sample."""
    total = 0.0
    count = 0
    for p, t, v in zip(pred, target, visibility):
        if not v:
            continue
        d = abs(float(p) - float(t))
        total += 0.5 * d * d / beta if d < beta else d - 0.5 * beta
        count += 1
    return total / count if count else 0.0


def brute_geometric(coords, group_specs, visibility=None):
    """Sum over groups of within-group bone-ratio variance; one sample.

    coords: indexable [joint][axis]; group_specs: list of
    (edges, lengths) with edges a list of (a, b) joint pairs.
    """
    if visibility is None:
        visibility = [True] * len(coords)
    total = 0.0
    for edges, lengths in group_specs:
        ratios = []
        for (a, b), canonical in zip(edges, lengths):
            if not (visibility[a] and visibility[b]):
                continue
            d = 0.0
            for axis in range(3):
                diff = float(coords[a][axis]) - float(coords[b][axis])
                d += diff * diff
            ratios.append(math.sqrt(d) / canonical)
        if len(ratios) < 2:
            continue
        mean = sum(ratios) / len(ratios)
        total += sum((r - mean) ** 2 for r in ratios) / len(ratios)
    return total


def brute_mpjpe(pred_coords, gt_coords, visibility):
    """Mean Euclidean distance over visible joints; one pose pair."""
    dists = []
    for p, g, v in zip(pred_coords, gt_coords, visibility):
        if not v:
            continue
        d = 0.0
        for axis in range(len(p)):
            diff = float(p[axis]) - float(g[axis])
            d += diff * diff
        dists.append(math.sqrt(d))
    if not dists:
        raise ValueError("no visible joints")
    return sum(dists) / len(dists)


def brute_pckh(pred_list, gt_list, vis_list, head_segments, threshold_fraction=0.5):
    """Percentage of visible joints within the per-sample head threshold."""
    correct = 0
    total = 0
    for pred, gt, vis, head in zip(pred_list, gt_list, vis_list, head_segments):
        threshold = threshold_fraction * head
        for p, g, v in zip(pred, gt, vis):
            if not v:
                continue
            total += 1
            d = math.hypot(float(p[0]) - float(g[0]), float(p[1]) - float(g[1]))
            if d <= threshold:
                correct += 1
    return 100.0 * correct / total


def central_difference_gradient(fn, x, step=1e-4):
    """Central finite-difference gradient of a scalar function of a flat list."""
    grad = []
    for i in range(len(x)):
        hi = list(x)
        lo = list(x)
        hi[i] += step
        lo[i] -= step
        grad.append((fn(hi) - fn(lo)) / (2.0 * step))
    return grad
