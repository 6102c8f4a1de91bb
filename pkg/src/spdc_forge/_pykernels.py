"""Pure numpy implementations of the numerical kernels.

These mirror ``_ckernels.pyx`` one to one and are used whenever the
compiled extension is unavailable (or ``SPDC_FORGE_BACKEND=python``).
"""

import numpy as np

# chunk of (points x boundaries) complex entries materialised at once
_PMF_CHUNK = 1 << 22


def permanent(a):
    """Ryser's formula, vectorised over all column subsets."""
    a = np.asarray(a, dtype=complex)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("permanent needs a square matrix")
    if n == 0:
        return 1.0 + 0.0j
    if n > 20:
        raise ValueError("matrix too large for the numpy permanent")
    out = 0.0 + 0.0j
    # process subsets in blocks to bound memory
    block = 1 << min(n, 14)
    bits = np.arange(n)
    for start in range(1, 1 << n, block):
        idx = np.arange(start, min(start + block, 1 << n))
        masks = ((idx[:, None] >> bits) & 1).astype(float)
        sizes = masks.sum(axis=1)
        row_sums = a @ masks.T
        prods = np.prod(row_sums, axis=0)
        signs = np.where((n - sizes) % 2 == 0, 1.0, -1.0)
        out += np.dot(signs, prods)
    return complex(out)


def pmf_sum(dk, z, coeff):
    """sum_j coeff_j exp(i dk z_j) / (i dk), with a series near dk = 0.

    ``dk`` is 1-D (rad/m), ``z`` the domain boundaries (m) and ``coeff`` the
    sign jumps s_{j-1} - s_j. The small-argument branch keeps precision where
    the direct formula cancels.
    """
    dk = np.ascontiguousarray(dk, dtype=float).ravel()
    z = np.asarray(z, dtype=float)
    coeff = np.asarray(coeff, dtype=float)
    out = np.empty(dk.size, dtype=complex)
    zmax = np.max(np.abs(z)) if z.size else 0.0
    m1 = np.dot(coeff, z)
    m2 = np.dot(coeff, z * z)
    m3 = np.dot(coeff, z * z * z)
    step = max(1, _PMF_CHUNK // max(z.size, 1))
    for lo in range(0, dk.size, step):
        d = dk[lo:lo + step]
        small = np.abs(d) * zmax < 1e-4
        res = np.exp(1j * np.outer(d, z)) @ coeff
        with np.errstate(divide="ignore", invalid="ignore"):
            res = res / (1j * d)
        ds = d[small]
        res[small] = m1 + 0.5j * ds * m2 - ds * ds * m3 / 6.0
        out[lo:lo + step] = res
    return out


def track_signs(deltas, targets, min_run, start_sign=1):
    """Greedy sign walk that keeps a running field close to a target.

    Step k adds ``s * deltas[k]``; after the step the field is compared with
    ``targets[k]``. The sign may flip only after ``min_run`` steps with the
    current sign, and only when flipping is strictly closer (ties keep the
    previous sign).
    """
    deltas = np.asarray(deltas, dtype=complex)
    targets = np.asarray(targets, dtype=complex)
    n = deltas.size
    signs = np.empty(n, dtype=np.int8)
    field = np.empty(n, dtype=complex)
    acc = 0.0 + 0.0j
    s = 1 if start_sign >= 0 else -1
    run = min_run  # the first domain may take either sign
    for k in range(n):
        d = deltas[k]
        t = targets[k]
        if run >= min_run:
            x = acc + s * d - t
            keep = x.real * x.real + x.imag * x.imag
            x = acc - s * d - t
            flip = x.real * x.real + x.imag * x.imag
            if flip < keep:
                s = -s
                run = 0
            if k == 0:
                run = 0  # the free first choice still opens a full domain
        acc += s * d
        run += 1
        signs[k] = s
        field[k] = acc
    return signs, field


def pmf_sum_lattice(dk, z0, step, idx, coeff):
    """``pmf_sum`` for boundaries on the lattice z0 + idx * step."""
    z = z0 + np.asarray(idx, dtype=float) * step
    return pmf_sum(dk, z, coeff)
