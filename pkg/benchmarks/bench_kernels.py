"""Wall time of the Magnus yield kernel: numba against the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--n-traj N] [--threads T]``.
Both backends integrate the same Lorentzian-noise ensemble over the same
detunings; the script reports seconds per call, the speedup and the largest
difference between the two results.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from sasesim import _kernels
from sasesim._accel import HAS_NUMBA, set_workers
from sasesim.atomsolver import AtomParams, PulseEnsemble
from sasesim.noisegen import PowerSpectralDensity, PsdFamily
from sasesim.pulse import GaussianEnvelope


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-traj", type=int, default=256)
    ap.add_argument("--n-det", type=int, default=16)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    env = GaussianEnvelope.centered(3.0)
    psd = PowerSpectralDensity.from_bandwidth(PsdFamily.LORENTZIAN, 3.33)
    params = AtomParams(rabi_peak=1e-2)
    ens = PulseEnsemble(env, psd, params.gamma2)
    omega, omega_mid = next(ens.rabi_chunks(params.rabi_peak, ens.seeds(0, args.n_traj),
                                            args.n_traj))
    dets = np.linspace(0.0, 10.0, args.n_det)

    def run(backend):
        return _kernels.final_yield(omega, omega_mid, ens.dt, ens.n_steps, dets,
                                    params.gamma2, params.gamma21, backend)

    steps = args.n_traj * args.n_det * ens.n_steps
    print(f"{args.n_traj} pulses x {args.n_det} detunings x {ens.n_steps} steps")
    t_np = _time(lambda: run("numpy"), args.repeat)
    print(f"numpy : {t_np:8.3f} s  ({1e9 * t_np / steps:6.1f} ns/step)")
    if not HAS_NUMBA:
        print("numba : not installed")
        return
    threads = set_workers(args.threads)
    run("numba")  # compile
    t_nb = _time(lambda: run("numba"), args.repeat)
    print(f"numba : {t_nb:8.3f} s  ({1e9 * t_nb / steps:6.1f} ns/step, {threads} threads)")
    diff = np.abs(run("numba")[0] - run("numpy")[0]).max()
    print(f"speedup {t_np / t_nb:.1f}x, max |numba - numpy| = {diff:.2e}")


if __name__ == "__main__":
    main()
