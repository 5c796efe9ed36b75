"""Statevector inner loops.

Every kernel exists twice: a numba ``@njit`` version and a vectorised numpy
version with identical semantics. ``QHPC_NO_NUMBA=1`` (or a missing numba)
selects numpy. Both sets stay importable as :data:`NUMBA_KERNELS` and
:data:`NUMPY_KERNELS` so tests and the benchmark can compare them directly.

Conventions: amplitude index bit ``q`` is qubit ``q`` (qubit 0 least
significant). States are contiguous complex128 vectors modified in place.
"""
from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)
_TO_UNIT = 1.0 / 9007199254740992.0  # 2**-53


# ---------------------------------------------------------------- numpy path


def _np_apply_1q(state, q, m00, m01, m10, m11):
    v = state.reshape(-1, 2, 1 << q)
    a = v[:, 0, :].copy()
    b = v[:, 1, :]
    v[:, 0, :] = m00 * a + m01 * b
    v[:, 1, :] = m10 * a + m11 * b


def _np_apply_cx(state, control, target):
    idx = np.arange(state.shape[0])
    sel = idx[((idx >> control) & 1 == 1) & ((idx >> target) & 1 == 0)]
    partner = sel | (1 << target)
    tmp = state[sel].copy()
    state[sel] = state[partner]
    state[partner] = tmp


def _np_prob_one(state, q):
    v = state.reshape(-1, 2, 1 << q)[:, 1, :]
    return float(np.sum(v.real**2 + v.imag**2))


def _np_collapse(state, q, outcome, scale):
    v = state.reshape(-1, 2, 1 << q)
    v[:, 1 - outcome, :] = 0.0
    v[:, outcome, :] *= scale


def _np_mix64(z):
    with np.errstate(over="ignore"):
        z = z + GOLDEN
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _np_uniforms(key, shots, draws):
    shot = np.arange(1, shots + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        shot_key = _np_mix64(np.uint64(key) + _np_mix64(shot))
        j = np.arange(1, draws + 1, dtype=np.uint64)
        z = _np_mix64(shot_key[:, None] + j[None, :] * GOLDEN)
    return (z >> _S11).astype(np.float64) * _TO_UNIT


def _np_sample_terminal(probs, qubits, uniforms):
    shots, k = uniforms.shape
    idx = np.arange(probs.shape[0])
    out = np.zeros((shots, k), dtype=np.int8)
    fixed_mask = 0
    fixed_val = np.zeros(shots, dtype=np.int64)
    for step in range(k):
        bit = 1 << int(qubits[step])
        if fixed_mask & bit:
            out[:, step] = (fixed_val & bit) != 0
            continue
        p1 = np.zeros(shots)
        for v in np.unique(fixed_val):
            sel = (idx & fixed_mask) == v
            p_all = probs[sel].sum()
            p_one = probs[sel & ((idx & bit) != 0)].sum()
            p1[fixed_val == v] = p_one / p_all if p_all > 0.0 else 0.0
        ones = uniforms[:, step] < p1
        out[:, step] = ones
        fixed_val |= np.where(ones, bit, 0)
        fixed_mask |= bit
    return out


NUMPY_KERNELS = SimpleNamespace(
    name="numpy",
    apply_1q=_np_apply_1q,
    apply_cx=_np_apply_cx,
    prob_one=_np_prob_one,
    collapse=_np_collapse,
    uniforms=_np_uniforms,
    sample_terminal=_np_sample_terminal,
)


# ---------------------------------------------------------------- numba path


def _build_numba():
    from numba import njit

    @njit(cache=True)
    def apply_1q(state, q, m00, m01, m10, m11):
        stride = 1 << q
        n = state.shape[0]
        for base in range(0, n, 2 * stride):
            for i in range(base, base + stride):
                a = state[i]
                b = state[i + stride]
                state[i] = m00 * a + m01 * b
                state[i + stride] = m10 * a + m11 * b

    @njit(cache=True)
    def apply_cx(state, control, target):
        cbit = 1 << control
        tbit = 1 << target
        for i in range(state.shape[0]):
            if (i & cbit) and not (i & tbit):
                j = i | tbit
                tmp = state[i]
                state[i] = state[j]
                state[j] = tmp

    @njit(cache=True)
    def prob_one(state, q):
        bit = 1 << q
        p = 0.0
        for i in range(state.shape[0]):
            if i & bit:
                a = state[i]
                p += a.real * a.real + a.imag * a.imag
        return p

    @njit(cache=True)
    def collapse(state, q, outcome, scale):
        bit = 1 << q
        for i in range(state.shape[0]):
            if ((i & bit) != 0) == (outcome == 1):
                state[i] *= scale
            else:
                state[i] = 0.0

    @njit(cache=True)
    def mix64(z):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    @njit(cache=True)
    def uniforms(key, shots, draws):
        out = np.empty((shots, draws), dtype=np.float64)
        k = np.uint64(key)
        g = np.uint64(0x9E3779B97F4A7C15)
        for s in range(shots):
            shot_key = mix64(k + mix64(np.uint64(s + 1)))
            for j in range(draws):
                z = mix64(shot_key + np.uint64(j + 1) * g)
                out[s, j] = np.float64(z >> np.uint64(11)) * (1.0 / 9007199254740992.0)
        return out

    @njit(cache=True)
    def sample_terminal(probs, qubits, uniforms):
        shots, k = uniforms.shape
        # marginal over the distinct measured qubits, so each shot walks a
        # table of 2**m entries instead of the full state
        slot = np.full(64, -1, dtype=np.int64)
        distinct = np.empty(k, dtype=np.int64)
        m = 0
        for step in range(k):
            q = qubits[step]
            if slot[q] < 0:
                slot[q] = m
                distinct[m] = q
                m += 1
        size = 1 << m
        marg = np.zeros(size, dtype=np.float64)
        for i in range(probs.shape[0]):
            c = 0
            for j in range(m):
                if (i >> distinct[j]) & 1:
                    c |= 1 << j
            marg[c] += probs[i]
        out = np.zeros((shots, k), dtype=np.int8)
        for s in range(shots):
            fixed_mask = 0
            fixed_val = 0
            for step in range(k):
                bit = 1 << slot[qubits[step]]
                if fixed_mask & bit:
                    out[s, step] = 1 if (fixed_val & bit) else 0
                    continue
                p_all = 0.0
                p_one = 0.0
                for c in range(size):
                    if (c & fixed_mask) == fixed_val:
                        p_all += marg[c]
                        if c & bit:
                            p_one += marg[c]
                p1 = p_one / p_all if p_all > 0.0 else 0.0
                if uniforms[s, step] < p1:
                    out[s, step] = 1
                    fixed_val |= bit
                fixed_mask |= bit
        return out

    return SimpleNamespace(
        name="numba",
        apply_1q=apply_1q,
        apply_cx=apply_cx,
        prob_one=prob_one,
        collapse=collapse,
        uniforms=uniforms,
        sample_terminal=sample_terminal,
    )


try:
    NUMBA_KERNELS = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_KERNELS = None


def _select():
    if os.environ.get("QHPC_NO_NUMBA", "").strip() not in ("", "0") or NUMBA_KERNELS is None:
        return NUMPY_KERNELS
    return NUMBA_KERNELS


K = _select()
BACKEND = K.name
