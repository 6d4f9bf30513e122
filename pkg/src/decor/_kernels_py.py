"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np

_CHUNK = 1 << 15


def backward_energy(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    return np.cumsum((x * x)[::-1])[::-1].copy()


def sinc_resample(x, step, out_len, cutoff, half_width, beta):
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.shape[0]
    out = np.zeros(out_len, dtype=np.float64)
    offsets = np.arange(-half_width + 1, half_width + 1)
    norm = np.i0(beta)
    for start in range(0, out_len, _CHUNK):
        pos = np.arange(start, min(start + _CHUNK, out_len)) * step
        idx = np.floor(pos).astype(np.int64)[:, None] + offsets
        d = pos[:, None] - idx
        u = d / half_width
        inside = np.abs(u) < 1.0
        taper = np.i0(beta * np.sqrt(np.clip(1.0 - u * u, 0.0, None))) / norm
        w = np.where(inside, cutoff * np.sinc(cutoff * d) * taper, 0.0)
        valid = (idx >= 0) & (idx < n)
        samples = np.where(valid, x[np.clip(idx, 0, n - 1)], 0.0)
        wsum = w.sum(axis=1)
        acc = (w * samples).sum(axis=1)
        nz = wsum != 0.0
        out[start:start + len(pos)][nz] = acc[nz] / wsum[nz]
    return out
