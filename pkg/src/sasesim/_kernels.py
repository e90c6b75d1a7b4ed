"""Fixed-step propagators for the driven, decaying two-level system.

Each step of length ``dt`` is a fourth-order commutator-free Magnus step: two
exact propagations over ``dt/2`` with constant effective Rabi frequencies
built from the drive at ``t_j``, ``t_j + dt/2`` and ``t_j + dt`` (Simpson
moments). Every factor is the exact flow of a valid Lindblad generator, so
positivity, the coherence bound, monotone yield and conservation hold to
rounding on any drive, smooth or not.

Two state representations are used:

* ``g21 == g2``: decay leaves the two-level system, so the state stays pure,
  ``rho = c c^H`` with ``s11 = |c1|^2``, ``s22 = |c2|^2`` and
  ``s12 = c1 conj(c2)``, and ``i dc/dt = H c`` with the non-Hermitian
  ``H = [[0, -W], [-W*, Delta - i g2/2]]``. Factors use the closed-form
  exponential of a 2x2 matrix.
* ``g21 > g2``: extra pure dephasing needs the density matrix. The real state
  ``(s11, s22, Re s12, Im s12)`` is propagated by a Taylor series of the 4x4
  generator, substepped so each substep has norm at most 1/2.

The yield increment of a step is the loss of ``s11 + s22``.

Every kernel exists twice: a numba version parallel over independent tasks and
a numpy version vectorized over the same tasks. Both call the same step
functions. Each task writes only its own output slots, so results do not
depend on the thread count.

Diagnostics (last axis of ``diag``):
    0: max |s11 + s22 + q - 1|
    1: min per-step increment of q
    2: max (|s12|^2 - s11 s22)
    3: min (s11, s22)
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import HAS_NUMBA, njit_opts

N_DIAG = 4

# Taylor coefficients of cosh(sqrt(w)) and sinh(sqrt(w))/sqrt(w), highest first;
# the remainder of these 6 terms is below 1e-17 for |w| <= 0.04 (typical steps
# have |w| ~ 0.02), larger |w| use the direct formula
COSH_SERIES = tuple(1.0 / math.factorial(2 * k) for k in range(5, -1, -1))
SINHC_SERIES = tuple(1.0 / math.factorial(2 * k + 1) for k in range(5, -1, -1))
SERIES_RADIUS = 0.04
TAYLOR_DEGREE = 16
SUBSTEP_NORM = 0.5


def effective_rabi(w0, wm, w1):
    """Constant Rabi frequencies of the two half-step factors (first, second)."""
    first = 0.5 * w0 + (2.0 / 3.0) * wm - w1 / 6.0
    second = -w0 / 6.0 + (2.0 / 3.0) * wm + 0.5 * w1
    return first, second


def horner(w, c):
    # unrolled so numba keeps the coefficients as constants
    return ((((c[0] * w + c[1]) * w + c[2]) * w + c[3]) * w + c[4]) * w + c[5]


def drive_terms(om):
    """``(i W, i W*, |W|^2)``, shared by every detuning."""
    return 1j * om, 1j * np.conj(om), om.real * om.real + om.imag * om.imag


def amp_argument(abs2, m2, tau):
    """``w = tau^2 (m^2 - |W|^2)``; the factor depends on ``sqrt(w)`` only through even functions."""
    return tau * tau * (m2 - abs2)


def amp_apply(c1, c2, iom, iomc, m, em, ch, s):
    """Exact flow of ``dc/dt = [[0, iW], [iW*, 2m]] c`` over ``tau``.

    ``m = (-i Delta - g2/2)/2``, ``em = exp(tau m)``, ``ch = cosh(tau z)`` and
    ``s = sinh(tau z)/z`` with ``z^2 = m^2 - |W|^2``.
    """
    n1 = ch * c1 + s * (iom * c2 - m * c1)
    n2 = ch * c2 + s * (iomc * c1 + m * c2)
    return em * n1, em * n2


def lindblad_apply(x0, x1, x2, x3, wr, wi, det, g2, h, tau, n_sub):
    """``exp(tau L) x`` for the density-matrix generator with constant drive.

    ``x = (s11, s22, Re s12, Im s12)``; ``h = g21/2``. Taylor series of degree
    ``TAYLOR_DEGREE`` on each of ``n_sub`` equal substeps.
    """
    sub = tau / n_sub
    for _ in range(n_sub):
        t0, t1, t2, t3 = x0, x1, x2, x3
        for k in range(1, TAYLOR_DEGREE + 1):
            f = sub / k
            d0 = 2.0 * (wr * t3 - wi * t2)
            d1 = -g2 * t1 - d0
            d2 = wi * (t0 - t1) - h * t2 - det * t3
            d3 = wr * (t1 - t0) + det * t2 - h * t3
            t0, t1, t2, t3 = f * d0, f * d1, f * d2, f * d3
            x0 = x0 + t0
            x1 = x1 + t1
            x2 = x2 + t2
            x3 = x3 + t3
    return x0, x1, x2, x3


def substeps(omega, omega_mid, dt, dets, g2, g21) -> int:
    """Substeps per half step that keep every Taylor argument below ``SUBSTEP_NORM``."""
    if g21 == g2:
        return 1
    peak = max(np.abs(omega).max(initial=0.0), np.abs(omega_mid).max(initial=0.0))
    bound = 0.5 * dt * (g2 + 0.5 * g21 + np.abs(dets).max(initial=0.0) + 4.0 * peak)
    return max(1, int(math.ceil(bound / SUBSTEP_NORM)))


def _amp_constants(det, g2, dt):
    m = 0.5 * (-1j * det - 0.5 * g2)
    return m, m * m, np.exp(0.5 * dt * m)


# -- numpy backend -----------------------------------------------------------

def _cs_numpy(w):
    ch = horner(w, COSH_SERIES)
    sc = horner(w, SINHC_SERIES)
    big = np.abs(w) > SERIES_RADIUS
    if big.any():
        z = np.sqrt(w[big])
        ch[big] = np.cosh(z)
        sc[big] = np.sinh(z) / z
    return ch, sc


class _Track:
    """Running diagnostics over arrays of runs."""

    def __init__(self, shape, n_steps):
        self.drift = np.zeros(shape)
        self.min_dq = np.full(shape, np.inf if n_steps else 0.0)
        self.coh = np.full(shape, -np.inf if n_steps else 0.0)
        self.pos = np.ones(shape) if n_steps else np.zeros(shape)

    def update(self, s11, s22, xr, xi, q, dq):
        np.maximum(self.drift, np.abs(s11 + s22 + q - 1.0), out=self.drift)
        np.minimum(self.min_dq, dq, out=self.min_dq)
        np.maximum(self.coh, xr * xr + xi * xi - s11 * s22, out=self.coh)
        np.minimum(self.pos, np.minimum(s11, s22), out=self.pos)

    def stack(self):
        return np.stack([self.drift, self.min_dq, self.coh, self.pos], axis=-1)


def _steps_numpy(omega, omega_mid, dt, n_steps, det, g2, g21, n_sub, shape, record=None):
    """Shared numpy time loop; ``det`` broadcasts against ``shape``."""
    tau = 0.5 * dt
    track = _Track(shape, n_steps)
    q = np.zeros(shape)
    amp = g21 == g2
    if amp:
        m, m2, em = _amp_constants(det, g2, dt)
        c1 = np.ones(shape, dtype=complex)
        c2 = np.zeros(shape, dtype=complex)
    else:
        x0, x1 = np.ones(shape), np.zeros(shape)
        x2, x3 = np.zeros(shape), np.zeros(shape)
    norm = np.ones(shape)
    for j in range(n_steps):
        w0 = omega[:, j:j + 1]
        wm = omega_mid[:, j:j + 1]
        w1 = omega[:, j + 1:j + 2]
        oa, ob = effective_rabi(w0, wm, w1)
        if amp:
            for om in (oa, ob):
                iom, iomc, abs2 = drive_terms(om)
                ch, sc = _cs_numpy(amp_argument(abs2, m2, tau))
                c1, c2 = amp_apply(c1, c2, iom, iomc, m, em, ch, tau * sc)
            s11 = c1.real ** 2 + c1.imag ** 2
            s22 = c2.real ** 2 + c2.imag ** 2
            s12 = c1 * np.conj(c2)
            xr, xi = s12.real, s12.imag
        else:
            x0, x1, x2, x3 = lindblad_apply(x0, x1, x2, x3, oa.real, oa.imag, det, g2,
                                            0.5 * g21, tau, n_sub)
            x0, x1, x2, x3 = lindblad_apply(x0, x1, x2, x3, ob.real, ob.imag, det, g2,
                                            0.5 * g21, tau, n_sub)
            s11, s22, xr, xi = x0, x1, x2, x3
        new = s11 + s22
        dq = norm - new
        q = q + dq
        norm = new
        track.update(s11, s22, xr, xi, q, dq)
        if record is not None:
            record(j + 1, s11, s22, xr, xi, q)
    if n_steps == 0:
        s22 = np.zeros(shape)
    return q, s22, track


def final_yield_numpy(omega, omega_mid, dt, n_steps, dets, g2, g21, n_sub=1):
    """Yield ``q(T_f) + s22(T_f)`` for every (trajectory, detuning) pair."""
    shape = (omega.shape[0], dets.shape[0])
    det = np.broadcast_to(dets[None, :], shape)
    q, s22, track = _steps_numpy(omega, omega_mid, dt, n_steps, det, g2, g21, n_sub, shape)
    return q + s22, track.stack()


def trajectories_numpy(omega, omega_mid, dt, n_steps, det, g2, g21, n_sub=1):
    """Full time series ``(s11, s22, s12, q)`` each of shape ``(n_traj, n_steps + 1)``."""
    n_traj = omega.shape[0]
    out11 = np.empty((n_traj, n_steps + 1))
    out22 = np.empty_like(out11)
    outq = np.empty_like(out11)
    out12 = np.empty((n_traj, n_steps + 1), dtype=complex)
    out11[:, 0], out22[:, 0], out12[:, 0], outq[:, 0] = 1.0, 0.0, 0.0, 0.0

    def record(j, s11, s22, xr, xi, q):
        out11[:, j] = s11[:, 0]
        out22[:, j] = s22[:, 0]
        out12[:, j] = xr[:, 0] + 1j * xi[:, 0]
        outq[:, j] = q[:, 0]

    _steps_numpy(omega, omega_mid, dt, n_steps, det, g2, g21, n_sub, (n_traj, 1), record)
    return out11, out22, out12, outq


# -- numba backend -----------------------------------------------------------

_NB = {}


def _build_numba():
    if _NB:
        return _NB
    import numba

    jit_inline = numba.njit(inline="always", **njit_opts)
    eff = jit_inline(effective_rabi)
    lind = jit_inline(lindblad_apply)
    arg = jit_inline(amp_argument)
    apply = jit_inline(amp_apply)
    terms = jit_inline(drive_terms)
    r2 = SERIES_RADIUS ** 2
    hor = jit_inline(horner)

    @numba.njit(inline="always", **njit_opts)
    def cs(w):
        if w.real * w.real + w.imag * w.imag <= r2:
            return hor(w, COSH_SERIES), hor(w, SINHC_SERIES)
        z = np.sqrt(w)
        return np.cosh(z), np.sinh(z) / z

    @numba.njit(inline="always", **njit_opts)
    def factor(c1, c2, drive, m, m2, em, tau):
        iom, iomc, abs2 = drive
        ch, sc = cs(arg(abs2, m2, tau))
        return apply(c1, c2, iom, iomc, m, em, ch, tau * sc)

    @numba.njit(**njit_opts)
    def run(omega, omega_mid, i, dt, n_steps, det, g2, g21, n_sub, o11, o22, o12, oq, rec):
        tau = 0.5 * dt
        amp = g21 == g2
        m = 0.5 * (-1j * det - 0.5 * g2)
        m2 = m * m
        em = np.exp(tau * m)
        c1 = 1.0 + 0.0j
        c2 = 0.0j
        x0, x1, x2, x3 = 1.0, 0.0, 0.0, 0.0
        s22 = 0.0
        q = 0.0
        norm = 1.0
        drift = 0.0
        min_dq = np.inf if n_steps > 0 else 0.0
        coh = -np.inf if n_steps > 0 else 0.0
        pos = 1.0 if n_steps > 0 else 0.0
        for j in range(n_steps):
            oa, ob = eff(omega[i, j], omega_mid[i, j], omega[i, j + 1])
            if amp:
                c1, c2 = factor(c1, c2, terms(oa), m, m2, em, tau)
                c1, c2 = factor(c1, c2, terms(ob), m, m2, em, tau)
                s11 = c1.real * c1.real + c1.imag * c1.imag
                s22 = c2.real * c2.real + c2.imag * c2.imag
                s12 = c1 * np.conj(c2)
                xr = s12.real
                xi = s12.imag
            else:
                x0, x1, x2, x3 = lind(x0, x1, x2, x3, oa.real, oa.imag, det, g2,
                                      0.5 * g21, tau, n_sub)
                x0, x1, x2, x3 = lind(x0, x1, x2, x3, ob.real, ob.imag, det, g2,
                                      0.5 * g21, tau, n_sub)
                s11, s22, xr, xi = x0, x1, x2, x3
            new = s11 + s22
            dq = norm - new
            q += dq
            norm = new
            d = abs(s11 + s22 + q - 1.0)
            if not d <= drift:
                drift = d
            if dq < min_dq:
                min_dq = dq
            c = xr * xr + xi * xi - s11 * s22
            if c > coh:
                coh = c
            if s11 < pos:
                pos = s11
            if s22 < pos:
                pos = s22
            if rec:
                o11[i, j + 1] = s11
                o22[i, j + 1] = s22
                o12[i, j + 1] = complex(xr, xi)
                oq[i, j + 1] = q
        return q + s22, drift, min_dq, coh, pos

    @numba.njit(parallel=True, **njit_opts)
    def final_yield(omega, omega_mid, dt, n_steps, dets, g2, g21, n_sub):
        # one task per trajectory; its detunings advance together so their
        # independent updates overlap in the pipeline
        n_traj = omega.shape[0]
        n_det = dets.shape[0]
        tau = 0.5 * dt
        amp = g21 == g2
        m = 0.5 * (-1j * dets - 0.5 * g2)
        m2 = m * m
        em = np.exp(tau * m)
        out = np.empty((n_traj, n_det))
        diag = np.empty((n_traj, n_det, 4))
        for i in numba.prange(n_traj):
            c1 = np.ones(n_det, dtype=np.complex128)
            c2 = np.zeros(n_det, dtype=np.complex128)
            x = np.zeros((n_det, 4))
            x[:, 0] = 1.0
            s22 = np.zeros(n_det)
            q = np.zeros(n_det)
            norm = np.ones(n_det)
            drift = np.zeros(n_det)
            min_dq = np.full(n_det, np.inf if n_steps > 0 else 0.0)
            coh = np.full(n_det, -np.inf if n_steps > 0 else 0.0)
            pos = np.full(n_det, 1.0 if n_steps > 0 else 0.0)
            for j in range(n_steps):
                oa, ob = eff(omega[i, j], omega_mid[i, j], omega[i, j + 1])
                da = terms(oa)
                db = terms(ob)
                for k in range(n_det):
                    if amp:
                        a1, a2 = factor(c1[k], c2[k], da, m[k], m2[k], em[k], tau)
                        a1, a2 = factor(a1, a2, db, m[k], m2[k], em[k], tau)
                        c1[k] = a1
                        c2[k] = a2
                        s11 = a1.real * a1.real + a1.imag * a1.imag
                        p22 = a2.real * a2.real + a2.imag * a2.imag
                        s12 = a1 * np.conj(a2)
                        xr = s12.real
                        xi = s12.imag
                    else:
                        y0, y1, y2, y3 = lind(x[k, 0], x[k, 1], x[k, 2], x[k, 3], oa.real,
                                              oa.imag, dets[k], g2, 0.5 * g21, tau, n_sub)
                        y0, y1, y2, y3 = lind(y0, y1, y2, y3, ob.real, ob.imag, dets[k], g2,
                                              0.5 * g21, tau, n_sub)
                        x[k, 0] = y0
                        x[k, 1] = y1
                        x[k, 2] = y2
                        x[k, 3] = y3
                        s11, p22, xr, xi = y0, y1, y2, y3
                    new = s11 + p22
                    dq = norm[k] - new
                    qk = q[k] + dq
                    q[k] = qk
                    norm[k] = new
                    s22[k] = p22
                    d = abs(new + qk - 1.0)
                    if not d <= drift[k]:
                        drift[k] = d
                    if dq < min_dq[k]:
                        min_dq[k] = dq
                    c = xr * xr + xi * xi - s11 * p22
                    if c > coh[k]:
                        coh[k] = c
                    lo = min(s11, p22)
                    if lo < pos[k]:
                        pos[k] = lo
            for k in range(n_det):
                out[i, k] = q[k] + s22[k]
                diag[i, k, 0] = drift[k]
                diag[i, k, 1] = min_dq[k]
                diag[i, k, 2] = coh[k]
                diag[i, k, 3] = pos[k]
        return out, diag

    @numba.njit(parallel=True, **njit_opts)
    def trajectories(omega, omega_mid, dt, n_steps, det, g2, g21, n_sub):
        n_traj = omega.shape[0]
        out11 = np.empty((n_traj, n_steps + 1))
        out22 = np.empty((n_traj, n_steps + 1))
        outq = np.empty((n_traj, n_steps + 1))
        out12 = np.empty((n_traj, n_steps + 1), dtype=np.complex128)
        for i in numba.prange(n_traj):
            out11[i, 0] = 1.0
            out22[i, 0] = 0.0
            out12[i, 0] = 0.0
            outq[i, 0] = 0.0
            run(omega, omega_mid, i, dt, n_steps, det, g2, g21, n_sub,
                out11, out22, out12, outq, True)
        return out11, out22, out12, outq

    _NB["final_yield"] = final_yield
    _NB["trajectories"] = trajectories
    return _NB


def _prepare(omega, omega_mid, n_steps):
    omega = np.ascontiguousarray(omega, dtype=np.complex128)
    if omega.ndim != 2 or omega.shape[1] < n_steps + 1:
        raise ValueError("Rabi series shorter than the integration range")
    if omega_mid is None:
        # linear interpolation for series given on the nodes only
        omega_mid = 0.5 * (omega[:, :-1] + omega[:, 1:])
    omega_mid = np.ascontiguousarray(omega_mid, dtype=np.complex128)
    if omega_mid.shape[0] != omega.shape[0] or omega_mid.shape[1] < n_steps:
        raise ValueError("midpoint series shorter than the integration range")
    return omega, omega_mid


def final_yield(omega, omega_mid, dt, n_steps, dets, g2, g21, backend="numba"):
    """Final yields, shape ``(n_traj, n_det)``, and per-run diagnostics.

    ``omega_mid[:, j]`` is the Rabi frequency at ``t_j + dt/2``; ``None`` falls
    back to the mean of the neighbouring nodes.
    """
    omega, omega_mid = _prepare(omega, omega_mid, n_steps)
    dets = np.ascontiguousarray(dets, dtype=np.float64)
    n_sub = substeps(omega[:, :n_steps + 1], omega_mid[:, :n_steps], dt, dets, g2, g21)
    args = (omega, omega_mid, float(dt), int(n_steps), dets, float(g2), float(g21), n_sub)
    if backend == "numba" and HAS_NUMBA:
        return _build_numba()["final_yield"](*args)
    return final_yield_numpy(*args)


def trajectories(omega, omega_mid, dt, n_steps, det, g2, g21, backend="numba"):
    omega, omega_mid = _prepare(omega, omega_mid, n_steps)
    n_sub = substeps(omega[:, :n_steps + 1], omega_mid[:, :n_steps], dt, np.array([det]),
                     g2, g21)
    args = (omega, omega_mid, float(dt), int(n_steps), float(det), float(g2), float(g21), n_sub)
    if backend == "numba" and HAS_NUMBA:
        return _build_numba()["trajectories"](*args)
    return trajectories_numpy(*args)
