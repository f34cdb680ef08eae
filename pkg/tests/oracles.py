"""Independent scalar reference implementations used by the tests.

These deliberately avoid the package's vectorized code paths: plain Python
loops over pixels and windows.
"""
# frozen outputs of /root/notes/derive_fixtures.py (pure-Python derivation)
FIXTURES = {
    "ssim_const_05_06": 0.983609244386166,
    "l_pe_const_05_06": 0.021966071135879433,
    "g_diff_2_4": 1 / 3,
    "l_rec_single_pixel": 0.075,
    "hist_counts": (6, 0, 2),
    "alphas": (0.75, 0.0, 0.25),
    "offsets": (0.0, 0.75, 0.75),
    "remap_1100": 0.375,
    "remap_1300": 0.75,
    "png16_half": 32768,
}


def bin_scalar(x, t_min, t_max, n_bin):
    """Exact bin of an integer count: floor(n_bin * (x - t_min) / (t_max - t_min)), last bin closed."""
    return min((n_bin * (x - t_min)) // (t_max - t_min), n_bin - 1)


def histogram_scalar(values, t_min, t_max, n_bin):
    counts = [0] * n_bin
    for x in values:
        counts[bin_scalar(int(x), t_min, t_max, n_bin)] += 1
    return counts


def remap_scalar(x, t_min, t_max, counts):
    """Piecewise-linear rearrangement of one integer value, straight from the definition."""
    n_bin = len(counts)
    total = sum(counts)
    i = bin_scalar(x, t_min, t_max, n_bin)
    lo = t_min + (t_max - t_min) * i / n_bin
    width = (t_max - t_min) / n_bin
    alpha = counts[i] / total
    offset = sum(counts[:i]) / total
    return alpha * (x - lo) / width + offset


def ssim_naive(a, b, c1=0.01 ** 2, c2=0.03 ** 2):
    """3x3 uniform-window SSIM with replicate padding, one pixel at a time."""
    h, w = len(a), len(a[0])
    out = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            pa, pb = [], []
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    pa.append(float(a[yy][xx]))
                    pb.append(float(b[yy][xx]))
            ma = sum(pa) / 9
            mb = sum(pb) / 9
            va = sum(p * p for p in pa) / 9 - ma * ma
            vb = sum(p * p for p in pb) / 9 - mb * mb
            cov = sum(p * q for p, q in zip(pa, pb)) / 9 - ma * mb
            out[y][x] = ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
    return out


