"""Numeric kernels shared by the numba and numpy backends.

Every function here is written in the numba-compatible subset of numpy so the
exact same source can either be compiled with ``@njit`` or executed as plain
numpy (see ``shieldrl.kernels``).  Network parameters are packed row-major into
a flat float64 vector per net: for each layer, W (n_in x n_out) then b (n_out).
``sizes`` is the int64 layer-width vector [d0, d1, ..., dL] and ``acts`` holds
one activation code per layer output.
"""

import numpy as np

ACT_LINEAR = 0
ACT_RELU = 1
ACT_TANH = 2
ACT_SIGMOID = 3


def net_param_count(sizes):
    total = 0
    for li in range(sizes.shape[0] - 1):
        total += sizes[li] * sizes[li + 1] + sizes[li + 1]
    return total


def net_forward(flat, sizes, acts, x):
    """Forward pass. x: (B, d0) -> (B, dL)."""
    h = x
    off = 0
    for li in range(sizes.shape[0] - 1):
        n_in = sizes[li]
        n_out = sizes[li + 1]
        w = flat[off:off + n_in * n_out].reshape(n_in, n_out)
        off += n_in * n_out
        b = flat[off:off + n_out]
        off += n_out
        z = np.dot(h, w) + b
        code = acts[li]
        if code == ACT_RELU:
            z = np.maximum(z, 0.0)
        elif code == ACT_TANH:
            z = np.tanh(z)
        elif code == ACT_SIGMOID:
            z = 1.0 / (1.0 + np.exp(-z))
        h = z
    return h


def net_cache_width(sizes):
    """Cache columns per batch row: the summed widths of every layer."""
    total = 0
    for i in range(sizes.shape[0]):
        total += sizes[i]
    return total


def net_forward_cached(flat, sizes, acts, x, cache):
    """Forward pass storing per-layer post-activations in a flat scratch.

    cache is a preallocated 1-D buffer of length B * net_cache_width(sizes),
    laid out as consecutive contiguous (B, d_i) blocks (input first).  Returns
    the output, a view of the last block.
    """
    n_layers = sizes.shape[0] - 1
    bsz = x.shape[0]
    d0 = sizes[0]
    blk = cache[0:bsz * d0].reshape(bsz, d0)
    blk[:, :] = x
    h = blk
    poff = 0
    coff = bsz * d0
    for li in range(n_layers):
        n_in = sizes[li]
        n_out = sizes[li + 1]
        w = flat[poff:poff + n_in * n_out].reshape(n_in, n_out)
        poff += n_in * n_out
        b = flat[poff:poff + n_out]
        poff += n_out
        out = cache[coff:coff + bsz * n_out].reshape(bsz, n_out)
        coff += bsz * n_out
        np.dot(h, w, out)
        code = acts[li]
        for r in range(bsz):
            for c in range(n_out):
                v = out[r, c] + b[c]
                if code == ACT_RELU:
                    if v < 0.0:
                        v = 0.0
                elif code == ACT_TANH:
                    v = np.tanh(v)
                elif code == ACT_SIGMOID:
                    v = 1.0 / (1.0 + np.exp(-v))
                out[r, c] = v
        h = out
    return h


def net_backward(flat, sizes, acts, cache, bsz, dy, skip_last_act, dflat):
    """Backprop through a cached forward pass.

    dy is d(loss)/d(output) and is consumed as scratch.  With skip_last_act=1
    the output activation derivative is not applied, i.e. dy is taken w.r.t.
    the last pre-activation (used for the fused sigmoid + cross-entropy
    gradient).  Parameter gradients are written to the preallocated dflat;
    returns d(loss)/d(input).
    """
    n_layers = sizes.shape[0] - 1
    poff = flat.shape[0]
    coff = cache.shape[0]
    dz = dy
    for li in range(n_layers - 1, -1, -1):
        n_in = sizes[li]
        n_out = sizes[li + 1]
        poff -= n_in * n_out + n_out
        coff -= bsz * n_out
        out = cache[coff:coff + bsz * n_out].reshape(bsz, n_out)
        if li < n_layers - 1 or skip_last_act == 0:
            code = acts[li]
            if code == ACT_RELU:
                for r in range(bsz):
                    for c in range(n_out):
                        if out[r, c] <= 0.0:
                            dz[r, c] = 0.0
            elif code == ACT_TANH:
                for r in range(bsz):
                    for c in range(n_out):
                        o = out[r, c]
                        dz[r, c] *= 1.0 - o * o
            elif code == ACT_SIGMOID:
                for r in range(bsz):
                    for c in range(n_out):
                        o = out[r, c]
                        dz[r, c] *= o * (1.0 - o)
        hin = cache[coff - bsz * n_in:coff].reshape(bsz, n_in)
        dw = dflat[poff:poff + n_in * n_out].reshape(n_in, n_out)
        np.dot(hin.T, dz, dw)
        db = dflat[poff + n_in * n_out:poff + n_in * n_out + n_out]
        for c in range(n_out):
            acc = 0.0
            for r in range(bsz):
                acc += dz[r, c]
            db[c] = acc
        w = flat[poff:poff + n_in * n_out].reshape(n_in, n_out)
        dz = np.dot(dz, w.T)
    return dz


def net_input_grad(flat, sizes, acts, cache, bsz, dy):
    """Like net_backward but only propagates to the input (no param grads)."""
    n_layers = sizes.shape[0] - 1
    poff = flat.shape[0]
    coff = cache.shape[0]
    dz = dy
    for li in range(n_layers - 1, -1, -1):
        n_in = sizes[li]
        n_out = sizes[li + 1]
        poff -= n_in * n_out + n_out
        coff -= bsz * n_out
        out = cache[coff:coff + bsz * n_out].reshape(bsz, n_out)
        code = acts[li]
        if code == ACT_RELU:
            for r in range(bsz):
                for c in range(n_out):
                    if out[r, c] <= 0.0:
                        dz[r, c] = 0.0
        elif code == ACT_TANH:
            for r in range(bsz):
                for c in range(n_out):
                    o = out[r, c]
                    dz[r, c] *= 1.0 - o * o
        elif code == ACT_SIGMOID:
            for r in range(bsz):
                for c in range(n_out):
                    o = out[r, c]
                    dz[r, c] *= o * (1.0 - o)
        w = flat[poff:poff + n_in * n_out].reshape(n_in, n_out)
        dz = np.dot(dz, w.T)
    return dz


def adam_update(flat, grad, m, v, step, lr, beta1, beta2, eps):
    """One in-place Adam update with bias correction; step is 1-based."""
    b1t = 1.0 - beta1 ** step
    b2t = 1.0 - beta2 ** step
    m[:] = beta1 * m + (1.0 - beta1) * grad
    v[:] = beta2 * v + (1.0 - beta2) * grad * grad
    flat[:] = flat - lr * (m / b1t) / (np.sqrt(v / b2t) + eps)


def ensemble_forward(flats, sizes, acts, x):
    """Evaluate every ensemble member on the same batch -> (N, B, out)."""
    n = flats.shape[0]
    out_dim = sizes[sizes.shape[0] - 1]
    out = np.empty((n, x.shape[0], out_dim))
    for j in range(n):
        out[j] = net_forward(flats[j], sizes, acts, x)
    return out


def imagine_catastrophe(tr_flats, tr_sizes, tr_acts,
                        bl_flats, bl_sizes, bl_acts,
                        po_flat, po_sizes, po_acts,
                        obs0, steps,
                        mu_obs, sig_obs, mu_act, sig_act):
    """Roll the policy through every transition member for `steps` steps and
    score each imagined transition with every blocker member.

    Returns (p, step_means): p is the max over steps of the (member x blocker)
    mean catastrophe probability, step_means the per-step means.
    """
    n_t = tr_flats.shape[0]
    n_b = bl_flats.shape[0]
    obs_dim = obs0.shape[0]
    act_dim = po_sizes[po_sizes.shape[0] - 1]
    S = np.empty((n_t, obs_dim))
    for j in range(n_t):
        S[j, :] = obs0
    step_means = np.zeros(steps)
    p = 0.0
    for c in range(steps):
        Sn = (S - mu_obs) / sig_obs
        A = net_forward(po_flat, po_sizes, po_acts, Sn)
        An = (A - mu_act) / sig_act
        xt = np.empty((n_t, obs_dim + act_dim))
        xt[:, :obs_dim] = Sn
        xt[:, obs_dim:] = An
        S2 = np.empty((n_t, obs_dim))
        for j in range(n_t):
            delta = net_forward(tr_flats[j], tr_sizes, tr_acts, xt[j:j + 1])
            S2[j, :] = S[j, :] + delta[0]
        S2n = (S2 - mu_obs) / sig_obs
        xb = np.empty((n_t, 2 * obs_dim + act_dim))
        xb[:, :obs_dim] = Sn
        xb[:, obs_dim:obs_dim + act_dim] = An
        xb[:, obs_dim + act_dim:] = S2n
        total = 0.0
        for i in range(n_b):
            probs = net_forward(bl_flats[i], bl_sizes, bl_acts, xb)
            total += np.sum(probs)
        mean_c = total / (n_t * n_b)
        step_means[c] = mean_c
        if mean_c > p:
            p = mean_c
        S = S2
    return p, step_means


def ve_targets(tr_flats, tr_sizes, tr_acts,
               rw_flats, rw_sizes, rw_acts,
               dn_flats, dn_sizes, dn_acts,
               po_flat, po_sizes, po_acts,
               q_flats, q_sizes, q_acts,
               r, s1, d, horizon, gamma,
               mu_obs, sig_obs, mu_act, sig_act):
    """Value-expansion candidate targets.

    Rolls the (target) policy through each transition member starting from the
    real next observation s1, pairing reward/termination members by index, and
    bootstraps every candidate depth with every (target) critic member:

        T[h, j, c] = r + sum_{i<=h} gamma^i surv_{i-1} rhat_i
                       + gamma^{h+1} surv_h Q_c(S_h, pi(S_h))

    where surv_k = (1 - d) * prod_{i<=k} (1 - dhat_i) is the probability the
    imagined trajectory is still alive after k imagined steps.

    Returns (T, var_steps): T is (horizon+1, N_T, N_Q, B) and var_steps is
    (horizon, B), the cross-member predicted-next-state variance per imagined
    step (mean over observation dims) used for the adaptive exploration weight.
    """
    n_t = tr_flats.shape[0]
    n_r = rw_flats.shape[0]
    n_d = dn_flats.shape[0]
    n_q = q_flats.shape[0]
    bsz = s1.shape[0]
    obs_dim = s1.shape[1]
    act_dim = po_sizes[po_sizes.shape[0] - 1]

    T = np.empty((horizon + 1, n_t, n_q, bsz))
    var_steps = np.zeros((horizon, bsz))

    S = np.empty((n_t, bsz, obs_dim))
    for j in range(n_t):
        S[j] = s1
    surv = np.empty((n_t, bsz))
    base = 1.0 - d
    for j in range(n_t):
        surv[j] = base
    cum_r = np.zeros((n_t, bsz))

    s1n = (s1 - mu_obs) / sig_obs
    a0 = net_forward(po_flat, po_sizes, po_acts, s1n)
    A = np.empty((n_t, bsz, act_dim))
    for j in range(n_t):
        A[j] = a0

    # depth-0 candidates: plain TD bootstrap, identical across members j
    xq = np.empty((bsz, obs_dim + act_dim))
    xq[:, :obs_dim] = s1n
    xq[:, obs_dim:] = (a0 - mu_act) / sig_act
    for c in range(n_q):
        q = net_forward(q_flats[c], q_sizes, q_acts, xq)[:, 0]
        t0 = r + gamma * base * q
        for j in range(n_t):
            T[0, j, c] = t0

    gh = 1.0
    for h in range(1, horizon + 1):
        gh *= gamma
        S2 = np.empty((n_t, bsz, obs_dim))
        for j in range(n_t):
            sn = (S[j] - mu_obs) / sig_obs
            an = (A[j] - mu_act) / sig_act
            xt = np.empty((bsz, obs_dim + act_dim))
            xt[:, :obs_dim] = sn
            xt[:, obs_dim:] = an
            delta = net_forward(tr_flats[j], tr_sizes, tr_acts, xt)
            S2[j] = S[j] + delta
            s2n = (S2[j] - mu_obs) / sig_obs
            xr = np.empty((bsz, 2 * obs_dim + act_dim))
            xr[:, :obs_dim] = sn
            xr[:, obs_dim:obs_dim + act_dim] = an
            xr[:, obs_dim + act_dim:] = s2n
            rhat = net_forward(rw_flats[j % n_r], rw_sizes, rw_acts, xr)[:, 0]
            dhat = net_forward(dn_flats[j % n_d], dn_sizes, dn_acts, xr)[:, 0]
            cum_r[j] = cum_r[j] + gh * surv[j] * rhat
            surv[j] = surv[j] * (1.0 - dhat)

        mean_s2 = np.sum(S2, 0) / n_t
        vtot = np.zeros((bsz, obs_dim))
        for j in range(n_t):
            diff = S2[j] - mean_s2
            vtot += diff * diff
        var_steps[h - 1] = np.sum(vtot, 1) / (n_t * obs_dim)

        ghq = gh * gamma
        for j in range(n_t):
            s2n = (S2[j] - mu_obs) / sig_obs
            a_next = net_forward(po_flat, po_sizes, po_acts, s2n)
            A[j] = a_next
            xq2 = np.empty((bsz, obs_dim + act_dim))
            xq2[:, :obs_dim] = s2n
            xq2[:, obs_dim:] = (a_next - mu_act) / sig_act
            for c in range(n_q):
                q = net_forward(q_flats[c], q_sizes, q_acts, xq2)[:, 0]
                T[h, j, c] = r + cum_r[j] + ghq * surv[j] * q
        S = S2
    return T, var_steps


def loo_divergence_batch(states, us_mean, us_var, us_count, ceiling):
    """Leave-one-out KL novelty of each state w.r.t. the unsafe-set Gaussian.

    For each row s, refit the diagonal Gaussian on D_us + {s} in closed form
    and return KL(new || old).  With an empty unsafe set the ceiling is
    returned for every state.
    """
    n = states.shape[0]
    dim = states.shape[1]
    u = np.empty(n)
    if us_count < 1:
        for k in range(n):
            u[k] = ceiling
        return u
    n0 = float(us_count)
    n1 = n0 + 1.0
    for k in range(n):
        tot = 0.0
        for j in range(dim):
            mu0 = us_mean[j]
            v0 = us_var[j]
            s = states[k, j]
            mu1 = mu0 + (s - mu0) / n1
            m2 = (n0 * (v0 + mu0 * mu0) + s * s) / n1
            v1 = m2 - mu1 * mu1
            if v1 < 1e-12:
                v1 = 1e-12
            tot += 0.5 * np.log(v0 / v1) + (v1 + (mu1 - mu0) ** 2) / (2.0 * v0) - 0.5
        if tot > ceiling:
            tot = ceiling
        u[k] = tot
    return u


def loo_divergence_grad(states, us_mean, us_var, us_count, ceiling):
    """loo_divergence_batch plus d(u)/d(state) rows."""
    n = states.shape[0]
    dim = states.shape[1]
    u = np.empty(n)
    du = np.zeros((n, dim))
    if us_count < 1:
        for k in range(n):
            u[k] = ceiling
        return u, du
    n0 = float(us_count)
    n1 = n0 + 1.0
    for k in range(n):
        tot = 0.0
        for j in range(dim):
            mu0 = us_mean[j]
            v0 = us_var[j]
            s = states[k, j]
            mu1 = mu0 + (s - mu0) / n1
            m2 = (n0 * (v0 + mu0 * mu0) + s * s) / n1
            v1 = m2 - mu1 * mu1
            floored = v1 < 1e-12
            if floored:
                v1 = 1e-12
            tot += 0.5 * np.log(v0 / v1) + (v1 + (mu1 - mu0) ** 2) / (2.0 * v0) - 0.5
            d_mu1 = (mu1 - mu0) / v0 / n1
            if floored:
                d_v1 = 0.0
            else:
                d_v1 = (-0.5 / v1 + 0.5 / v0) * 2.0 * (s - mu1) / n1
            du[k, j] = d_mu1 + d_v1
        if tot > ceiling:
            tot = ceiling
            du[k, :] = 0.0
        u[k] = tot
    return u, du


def mpc_score(tr_flats, tr_sizes, tr_acts,
              rw_flats, rw_sizes, rw_acts,
              bl_flats, bl_sizes, bl_acts,
              seqs, obs0,
              mu_obs, sig_obs, mu_act, sig_act,
              us_mean, us_var, us_count, u_ceiling,
              w_b, w_u, b_sign):
    """Score K action sequences through the mean-ensemble dynamics.

    Per step: predicted reward (mean over reward members) + b_sign * w_b *
    catastrophe probability (mean over blocker members) + w_u * LOO novelty of
    the imagined next state.  Returns the summed return per sequence (K,).
    """
    kpop = seqs.shape[0]
    hor = seqs.shape[1]
    act_dim = seqs.shape[2]
    obs_dim = obs0.shape[0]
    n_t = tr_flats.shape[0]
    n_r = rw_flats.shape[0]
    n_b = bl_flats.shape[0]

    S = np.empty((kpop, obs_dim))
    for k in range(kpop):
        S[k, :] = obs0
    ret = np.zeros(kpop)
    for h in range(hor):
        A = seqs[:, h, :].copy()
        sn = (S - mu_obs) / sig_obs
        an = (A - mu_act) / sig_act
        xt = np.empty((kpop, obs_dim + act_dim))
        xt[:, :obs_dim] = sn
        xt[:, obs_dim:] = an
        delta = np.zeros((kpop, obs_dim))
        for j in range(n_t):
            delta += net_forward(tr_flats[j], tr_sizes, tr_acts, xt)
        S2 = S + delta / n_t
        s2n = (S2 - mu_obs) / sig_obs
        xr = np.empty((kpop, 2 * obs_dim + act_dim))
        xr[:, :obs_dim] = sn
        xr[:, obs_dim:obs_dim + act_dim] = an
        xr[:, obs_dim + act_dim:] = s2n
        rhat = np.zeros(kpop)
        for j in range(n_r):
            rhat += net_forward(rw_flats[j], rw_sizes, rw_acts, xr)[:, 0]
        rhat /= n_r
        bhat = np.zeros(kpop)
        for i in range(n_b):
            bhat += net_forward(bl_flats[i], bl_sizes, bl_acts, xr)[:, 0]
        bhat /= n_b
        u = loo_divergence_batch(S2, us_mean, us_var, us_count, u_ceiling)
        ret += rhat + b_sign * w_b * bhat + w_u * u
        S = S2
    return ret


def mpc_grad(tr_flats, tr_sizes, tr_acts,
             rw_flats, rw_sizes, rw_acts,
             bl_flats, bl_sizes, bl_acts,
             seqs, obs0,
             mu_obs, sig_obs, mu_act, sig_act,
             us_mean, us_var, us_count, u_ceiling,
             w_b, w_u, b_sign):
    """mpc_score plus the return gradient w.r.t. every action in each sequence.

    Hand-rolled reverse sweep through the H-step rollout; verified against the
    tape autodiff in the test suite.  Returns (ret, dA) with dA shaped like
    seqs.
    """
    kpop = seqs.shape[0]
    hor = seqs.shape[1]
    act_dim = seqs.shape[2]
    obs_dim = obs0.shape[0]
    n_t = tr_flats.shape[0]
    n_r = rw_flats.shape[0]
    n_b = bl_flats.shape[0]

    tr_cache = np.empty((hor, n_t, kpop * net_cache_width(tr_sizes)))
    rw_cache = np.empty((hor, n_r, kpop * net_cache_width(rw_sizes)))
    bl_cache = np.empty((hor, n_b, kpop * net_cache_width(bl_sizes)))
    S_hist = np.empty((hor + 1, kpop, obs_dim))
    du_hist = np.empty((hor, kpop, obs_dim))

    for k in range(kpop):
        S_hist[0, k, :] = obs0
    ret = np.zeros(kpop)

    for h in range(hor):
        S = S_hist[h]
        A = seqs[:, h, :].copy()
        sn = (S - mu_obs) / sig_obs
        an = (A - mu_act) / sig_act
        xt = np.empty((kpop, obs_dim + act_dim))
        xt[:, :obs_dim] = sn
        xt[:, obs_dim:] = an
        delta = np.zeros((kpop, obs_dim))
        for j in range(n_t):
            delta += net_forward_cached(tr_flats[j], tr_sizes, tr_acts, xt,
                                        tr_cache[h, j])
        S2 = S + delta / n_t
        S_hist[h + 1] = S2
        s2n = (S2 - mu_obs) / sig_obs
        xr = np.empty((kpop, 2 * obs_dim + act_dim))
        xr[:, :obs_dim] = sn
        xr[:, obs_dim:obs_dim + act_dim] = an
        xr[:, obs_dim + act_dim:] = s2n
        rhat = np.zeros(kpop)
        for j in range(n_r):
            rhat += net_forward_cached(rw_flats[j], rw_sizes, rw_acts, xr,
                                       rw_cache[h, j])[:, 0]
        rhat /= n_r
        bhat = np.zeros(kpop)
        for i in range(n_b):
            bhat += net_forward_cached(bl_flats[i], bl_sizes, bl_acts, xr,
                                       bl_cache[h, i])[:, 0]
        bhat /= n_b
        u, du = loo_divergence_grad(S2, us_mean, us_var, us_count, u_ceiling)
        du_hist[h] = du
        ret += rhat + b_sign * w_b * bhat + w_u * u

    dA_out = np.zeros((kpop, hor, act_dim))
    dS = np.zeros((kpop, obs_dim))
    for h in range(hor - 1, -1, -1):
        dS2 = dS + w_u * du_hist[h]
        # reward and blocker heads share the (sn, an, s2n) input layout
        dxr = np.zeros((kpop, 2 * obs_dim + act_dim))
        for j in range(n_r):
            dxr += net_input_grad(rw_flats[j], rw_sizes, rw_acts,
                                  rw_cache[h, j], kpop,
                                  np.full((kpop, 1), 1.0 / n_r))
        for i in range(n_b):
            dxr += net_input_grad(bl_flats[i], bl_sizes, bl_acts,
                                  bl_cache[h, i], kpop,
                                  np.full((kpop, 1), b_sign * w_b / n_b))
        dS2 = dS2 + dxr[:, obs_dim + act_dim:] / sig_obs
        dsn = dxr[:, :obs_dim].copy()
        dan = dxr[:, obs_dim:obs_dim + act_dim].copy()
        dxt = np.zeros((kpop, obs_dim + act_dim))
        for j in range(n_t):
            dxt += net_input_grad(tr_flats[j], tr_sizes, tr_acts,
                                  tr_cache[h, j], kpop, dS2 * (1.0 / n_t))
        dsn = dsn + dxt[:, :obs_dim]
        dan = dan + dxt[:, obs_dim:]
        dA_out[:, h, :] = dan / sig_act
        dS = dS2 + dsn / sig_obs
    return ret, dA_out
