"""Slow, independent reference implementations used as test oracles.

Nothing here imports from tychekit; each function is a direct loop over the
definition so it can be checked by eye.
"""

import itertools
import math


def dice_ref(a, b):
    """Dice of two flat boolean sequences, empty/empty = 1."""
    a = [bool(x) for x in a]
    b = [bool(x) for x in b]
    na, nb = sum(a), sum(b)
    if na + nb == 0:
        return 1.0
    inter = sum(1 for x, y in zip(a, b) if x and y)
    return 2.0 * inter / (na + nb)


def _flat(masks):
    return [list(m.reshape(-1)) for m in masks]


def best_candidate_dice_ref(cands, raters):
    c, r = _flat(cands), _flat(raters)
    best = -1.0
    for ck in c:
        s = 0.0
        for rj in r:
            s += dice_ref(ck, rj)
        best = max(best, s / len(r))
    return best


def ged2_ref(cands, raters):
    c, r = _flat(cands), _flat(raters)
    cross = sum(1 - dice_ref(x, y) for x in c for y in r) / (len(c) * len(r))
    rr = sum(1 - dice_ref(x, y) for x in r for y in r) / (len(r) ** 2)
    cc = sum(1 - dice_ref(x, y) for x in c for y in c) / (len(c) ** 2)
    return 2 * cross - rr - cc


def diversity_ref(cands):
    c = _flat(cands)
    pairs = list(itertools.combinations(range(len(c)), 2))
    return sum(1 - dice_ref(c[i], c[j]) for i, j in pairs) / len(pairs)


def hungarian_ref(cands, raters):
    """Best mean Dice over every bijection between the two sets after
    repeating each to lcm(K, R) members."""
    c, r = _flat(cands), _flat(raters)
    size = math.lcm(len(c), len(r))
    cc = [c[i % len(c)] for i in range(size)]
    rr = [r[i % len(r)] for i in range(size)]
    table = [[dice_ref(x, y) for y in rr] for x in cc]
    best = -1.0
    for perm in itertools.permutations(range(size)):
        best = max(best, sum(table[i][perm[i]] for i in range(size)) / size)
    return best


def conv_params(c_in, c_out, k):
    return c_in * c_out * k * k + c_out


def setblock_params(u, v, f, k, context_from_cross=True):
    pair = conv_params(u + v, f, k)
    single = conv_params(f, f, k)
    merge = conv_params(u + f, f, k)
    cand = conv_params(f, f, k)
    ctx = conv_params(f if context_from_cross else v, f, k)
    return pair + single + merge + cand + ctx


def tyche_params(depth, features, k=3, noise_channels=1, context_from_cross=True,
                 symmetric_decoder=False):
    feats = features if isinstance(features, list) else [features] * depth
    total = 0
    u, v = 1 + noise_channels, 2
    for f in feats:
        total += setblock_params(u, v, f, k, context_from_cross)
        u = v = f
    for f in reversed(feats[:-1]):
        total += setblock_params(u + f, v + f, f, k, context_from_cross)
        u = v = f
    if symmetric_decoder:
        total += setblock_params(u, v, u, k, context_from_cross)
    return total + conv_params(u, 1, 1)
