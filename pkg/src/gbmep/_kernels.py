"""Compiled inner loops for the recursive likelihood."""

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def component_pass(own, ptr, times, weights, gammas, beta, horizon, need_grad):
    """One excitation component (start- or end-time driven) of one node.

    ``own`` holds the node's sorted start times t_1..t_n. Neighbour j's
    sorted event times are ``times[ptr[j]:ptr[j+1]]`` with spatial weight
    ``weights[j]`` and distance ``gammas[j]``.

    Per neighbour the recursion

        A_j(k) = exp(-beta (t_k - t_{k-1})) A_j(k-1) + sum_{t_{k-1} <= s < t_k} exp(-beta (t_k - s))

    is carried together with its beta-derivative D_j(k). Returned per event k:

        S[k]  = sum_j w_j A_j(k)
        G[k]  = sum_j w_j gamma_j A_j(k)
        Dv[k] = sum_j w_j D_j(k)
        Nw[k] = sum_j w_j N_j(t_k)

    and the horizon terms over all neighbour events s < horizon:

        C  = sum w (1 - exp(-beta (T - s)))
        Cg = sum w gamma (1 - exp(-beta (T - s)))
        E  = sum w (T - s) exp(-beta (T - s))
    """
    n = own.shape[0]
    m = weights.shape[0]
    S = np.zeros(n)
    G = np.zeros(n)
    Dv = np.zeros(n)
    Nw = np.zeros(n)
    A = np.zeros(m)
    D = np.zeros(m)
    cur = np.empty(m, dtype=np.int64)
    for j in range(m):
        cur[j] = ptr[j]
    ops = 0
    prev = 0.0
    for k in range(n):
        t = own[k]
        if t < prev:
            return S, G, Dv, Nw, 0.0, 0.0, 0.0, -1 - k
        dt = t - prev
        decay = np.exp(-beta * dt)
        s_acc = 0.0
        g_acc = 0.0
        d_acc = 0.0
        n_acc = 0.0
        for j in range(m):
            a_old = A[j]
            a_new = decay * a_old
            if need_grad:
                D[j] = decay * (D[j] - dt * a_old)
            c = cur[j]
            stop = ptr[j + 1]
            while c < stop and times[c] < t:
                lag = t - times[c]
                e = np.exp(-beta * lag)
                a_new += e
                if need_grad:
                    D[j] -= lag * e
                c += 1
                ops += 1
            cur[j] = c
            A[j] = a_new
            w = weights[j]
            s_acc += w * a_new
            n_acc += w * (c - ptr[j])
            if need_grad:
                g_acc += w * gammas[j] * a_new
                d_acc += w * D[j]
            ops += 1
        S[k] = s_acc
        G[k] = g_acc
        Dv[k] = d_acc
        Nw[k] = n_acc
        prev = t

    C = 0.0
    Cg = 0.0
    E = 0.0
    for j in range(m):
        w = weights[j]
        cj = 0.0
        ej = 0.0
        for c in range(ptr[j], ptr[j + 1]):
            s = times[c]
            if s >= horizon:
                break
            lag = horizon - s
            cj += -np.expm1(-beta * lag)
            if need_grad:
                ej += lag * np.exp(-beta * lag)
            ops += 1
        C += w * cj
        Cg += w * gammas[j] * cj
        E += w * ej
    return S, G, Dv, Nw, C, Cg, E, ops
