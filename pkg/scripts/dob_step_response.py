#!/usr/bin/env python3
"""Step response of the disturbance observer at hover.

Applies a constant force on one translational axis while the vehicle hovers
under the inner loop, and prints the estimate against the settling time
predicted by the observer's linear filter dynamics.

Usage: python3 scripts/dob_step_response.py [--force 2.0] [--axis 0]
"""

import argparse
import math
import sys

import numpy as np

from amplan import control as ctl
from amplan import dynamics as dyn
from amplan import harness as hz


def predicted_settling_time(gains: ctl.GainSet, band: float = 0.02) -> float:
    """First time after which the filter step response stays within the band.

    With the default tuning a0 = a1^2 / 4 the filter has a real double pole at
    lam = a1 / (2 eps) and unit-step error (1 + lam t) exp(-lam t).
    """
    a0 = float(np.atleast_1d(gains.a0)[0])
    a1 = float(np.atleast_1d(gains.a1)[0])
    eps = float(np.atleast_1d(gains.eps)[0])
    disc = a1 * a1 - 4.0 * a0
    if abs(disc) < 1e-12:
        lam = a1 / (2.0 * eps)
        t = 1.0
        for _ in range(100):
            t = -math.log(band / (1.0 + lam * t)) / lam
        return t
    raise ValueError("settling-time formula implemented for the double pole only")


def run(force: float = 2.0, axis: int = 0, duration: float = 12.0,
        dt: float = 0.005, gains: ctl.GainSet | None = None,
        model: dyn.ModelParams | None = None):
    """Hover under constant disturbance; return (t, d_hat history, d_true)."""
    gains = gains or ctl.GainSet()
    model = model or dyn.ModelParams()
    q0 = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    state = dyn.VehicleState(q=q0)
    dob = hz._dob_rest_state(q0, model)
    T = np.linalg.solve(dyn.allocation(q0[3:], model),
                        dyn.gravity_vec(model, nominal=True))
    d_true = np.zeros(6)
    d_true[axis] = force

    n = int(round(duration / dt))
    times = np.arange(n) * dt
    d_hist = np.zeros((n, 6))
    for k in range(n):
        dob, d_hat = ctl.dob_update(dob, state.q, state.qdot, T, model, gains, dt)
        d_hist[k] = d_hat
        T = ctl.inner_loop(q0, np.zeros(6), state.q, state.qdot, d_hat,
                           model, gains)
        state = dyn.step(state, T, np.zeros(3), np.zeros(3), np.zeros(3),
                         d_true, dt, model)
    return times, d_hist, d_true


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--force", type=float, default=2.0)
    p.add_argument("--axis", type=int, default=0, choices=(0, 1, 2))
    p.add_argument("--duration", type=float, default=12.0)
    args = p.parse_args()

    gains = ctl.GainSet()
    t_s = predicted_settling_time(gains)
    times, d_hist, d_true = run(args.force, args.axis, args.duration)
    print(f"predicted 2% settling time: {t_s:.3f} s")
    for mark in (0.5, 1.0, 2.0, 4.0, t_s, args.duration - 0.01):
        k = min(len(times) - 1, int(mark / (times[1] - times[0])))
        print(f"t = {times[k]:6.2f} s  d_hat[{args.axis}] = "
              f"{d_hist[k, args.axis]:8.4f} N  (true {args.force:.1f} N)")
    tail = d_hist[times >= t_s, args.axis]
    err = np.max(np.abs(tail - args.force)) / abs(args.force)
    print(f"max relative error after settling: {err:.4%}")
    return 0 if err <= 0.02 else 1


if __name__ == "__main__":
    sys.exit(main())
