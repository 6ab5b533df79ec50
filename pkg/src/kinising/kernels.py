"""Hot loops for single-spin-flip dynamics.

Every kernel is self-contained (no calls into other kernels) so that the
compiled and the pure-Python variants are interchangeable.  Random numbers
are always drawn by the caller with ``numpy.random.Generator`` and passed
in, which makes both variants consume identical streams.

Conventions: ``pad`` is the padded flat int8 lattice, ``site_pad[i]`` the
padded index of site ``i``, ``pad_site`` its inverse (-1 on the ring),
``offs`` the ``2d`` neighbour offsets.  A (spin, field) class index is
``s * (2d + 1) + (h + 2d) // 2`` with ``s = (spin + 1) // 2``.
"""

import math

import numpy as np

from ._jit import kernel

N_OBS = 8
OBS_MAG, OBS_CENTER, OBS_LOGF, OBS_GRAD, OBS_GRAD_GEN, OBS_BAD, OBS_MINUS, OBS_Q = range(N_OBS)


@kernel
def nfold_run(pad, site_pad, pad_site, offs, class_rate, cls, members, counts, pos,
              t, horizon, u, ev_t, ev_site, ev_spin):
    """Rejection-free continuous-time Glauber dynamics (n-fold way).

    Consumes two uniforms per event.  Stops at ``horizon``, or when ``u``
    or the event buffers run out.  Returns ``(n_events, t, reached)``.
    """
    nd = offs.shape[0]
    nf = nd + 1
    nclass = class_rate.shape[0]
    cap = ev_t.shape[0]
    n_ev = 0
    k = 0
    while n_ev < cap and k + 1 < u.shape[0]:
        total = 0.0
        for c in range(nclass):
            total += counts[c] * class_rate[c]
        if total <= 0.0:
            return n_ev, horizon, True
        dt = -math.log(1.0 - u[k]) / total
        if t + dt > horizon:
            return n_ev, horizon, True
        t += dt
        target = u[k + 1] * total
        k += 2
        chosen = nclass - 1
        for c in range(nclass):
            w = counts[c] * class_rate[c]
            if target < w:
                chosen = c
                break
            target -= w
        while counts[chosen] == 0:
            chosen -= 1
        j = int(target / class_rate[chosen])
        if j >= counts[chosen]:
            j = counts[chosen] - 1
        x = members[chosen, j]
        p = site_pad[x]
        pad[p] = -pad[p]
        ev_t[n_ev] = t
        ev_site[n_ev] = x
        ev_spin[n_ev] = pad[p]
        n_ev += 1
        # re-class x and its interior neighbours
        for q in range(nd + 1):
            if q == nd:
                y = x
                py = p
            else:
                py = p + offs[q]
                y = pad_site[py]
                if y < 0:
                    continue
            h = 0
            for r in range(nd):
                h += pad[py + offs[r]]
            s = (pad[py] + 1) // 2
            newc = s * nf + (h + nd) // 2
            oldc = cls[y]
            if newc != oldc:
                last = members[oldc, counts[oldc] - 1]
                members[oldc, pos[y]] = last
                pos[last] = pos[y]
                counts[oldc] -= 1
                members[newc, counts[newc]] = y
                pos[y] = counts[newc]
                counts[newc] += 1
                cls[y] = newc
    return n_ev, t, False


@kernel
def apply_updates(pad, site_pad, offs, plus_table, sites, U):
    """Unit-rate clock rings: site ``sites[k]`` is set to +1 iff ``U[k] < P[+ | spin, field]``.

    Returns the number of spins that changed.
    """
    nd = offs.shape[0]
    flips = 0
    for k in range(sites.shape[0]):
        p = site_pad[sites[k]]
        h = 0
        for r in range(nd):
            h += pad[p + offs[r]]
        s = (pad[p] + 1) // 2
        new = 1 if U[k] < plus_table[s, (h + nd) // 2] else -1
        if new != pad[p]:
            pad[p] = new
            flips += 1
    return flips


@kernel
def apply_updates_coupled(pad_a, pad_b, site_pad, offs, plus_table, sites, U):
    """Grand coupling: both lattices see the same (site, uniform) stream.

    Returns the number of updates after which the sitewise order ``a <= b``
    was violated at the updated site (0 for a monotone rule).
    """
    nd = offs.shape[0]
    bad = 0
    for k in range(sites.shape[0]):
        p = site_pad[sites[k]]
        ha = 0
        hb = 0
        for r in range(nd):
            ha += pad_a[p + offs[r]]
            hb += pad_b[p + offs[r]]
        sa = (pad_a[p] + 1) // 2
        sb = (pad_b[p] + 1) // 2
        pad_a[p] = 1 if U[k] < plus_table[sa, (ha + nd) // 2] else -1
        pad_b[p] = 1 if U[k] < plus_table[sb, (hb + nd) // 2] else -1
        if pad_a[p] > pad_b[p]:
            bad += 1
    return bad


@kernel
def sample_observables(pad, site_pad, offs, plus_table, class_rate, sites, U, sweep_len,
                       block_of_site, block_sum, block_ptr, block_sites, block_size,
                       m_star, pref, center, beta, tilt, out):
    """Run ``out.shape[0]`` rounds of ``sweep_len`` updates and record observables.

    With ``tilt == 0`` updates follow ``plus_table`` (the Gibbs measure);
    otherwise a heat-bath rule for the measure ``f^tilt dmu`` is used.
    ``block_sum`` is maintained incrementally.  Columns of ``out`` follow the
    ``OBS_*`` constants: magnetization, centre spin, log f, sum_x |f(s^x)/f(s) - 1|^2,
    the same weighted by c_x / 2, bad-block count, minus-block count, ramp-block count.
    """
    nd = offs.shape[0]
    nf = nd + 1
    n_sites = site_pad.shape[0]
    n_blocks = block_size.shape[0]
    lo = -0.5 * m_star
    width = 0.25 * m_star
    k = 0
    for r in range(out.shape[0]):
        for _ in range(sweep_len):
            x = sites[k]
            p = site_pad[x]
            h = 0
            for q in range(nd):
                h += pad[p + offs[q]]
            s = (pad[p] + 1) // 2
            bx = block_of_site[x]
            if tilt == 0.0:
                pplus = plus_table[s, (h + nd) // 2]
            else:
                size = block_size[bx]
                base = block_sum[bx] - pad[p]
                ua = min(max(((base + 1) / size - lo) / width, 0.0), 1.0)
                ub = min(max(((base - 1) / size - lo) / width, 0.0), 1.0)
                ga = 1.0 - ua * ua * (3.0 - 2.0 * ua)
                gb = 1.0 - ub * ub * (3.0 - 2.0 * ub)
                logit = 2.0 * beta * h + tilt * pref * (ga - gb)
                if logit >= 0:
                    pplus = 1.0 / (1.0 + math.exp(-logit))
                else:
                    e = math.exp(logit)
                    pplus = e / (1.0 + e)
            new = 1 if U[k] < pplus else -1
            if new != pad[p]:
                block_sum[bx] += 2 * new
                pad[p] = new
            k += 1
        tot = 0.0  # an int would adopt int8 in the Python variant
        for i in range(n_sites):
            tot += pad[site_pad[i]]
        logf = 0.0
        grad = 0.0
        grad_gen = 0.0
        n_bad = 0
        n_minus = 0
        n_q = 0
        for b in range(n_blocks):
            size = block_size[b]
            m = block_sum[b] / size
            if abs(m - m_star) > width and abs(m + m_star) > width:
                n_bad += 1
            if m < -width:
                n_minus += 1
            if lo <= m <= -width:
                n_q += 1
            uu = min(max((m - lo) / width, 0.0), 1.0)
            g0 = 1.0 - uu * uu * (3.0 - 2.0 * uu)
            logf += g0
            if m < lo - 2.0 / size or m > -width + 2.0 / size:
                continue
            # flipping a + spin lowers the block sum by 2, a - spin raises it
            um = min(max(((block_sum[b] - 2) / size - lo) / width, 0.0), 1.0)
            up = min(max(((block_sum[b] + 2) / size - lo) / width, 0.0), 1.0)
            gm = 1.0 - um * um * (3.0 - 2.0 * um)
            gp = 1.0 - up * up * (3.0 - 2.0 * up)
            em = math.expm1(pref * (gm - g0)) ** 2
            ep = math.expm1(pref * (gp - g0)) ** 2
            for j in range(block_ptr[b], block_ptr[b + 1]):
                y = block_sites[j]
                py = site_pad[y]
                hy = 0
                for q in range(nd):
                    hy += pad[py + offs[q]]
                sy = (pad[py] + 1) // 2
                c = class_rate[sy * nf + (hy + nd) // 2]
                e = em if pad[py] > 0 else ep
                grad += e
                grad_gen += 0.5 * c * e
        out[r, 0] = tot / n_sites
        out[r, 1] = pad[site_pad[center]]
        out[r, 2] = pref * logf
        out[r, 3] = grad
        out[r, 4] = grad_gen
        out[r, 5] = n_bad
        out[r, 6] = n_minus
        out[r, 7] = n_q
    return k
