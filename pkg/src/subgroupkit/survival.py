"""Kaplan-Meier estimation and restricted mean survival time."""

from __future__ import annotations

import numpy as np


def km_curve(time, status):
    """Kaplan-Meier survival curve.

    Returns (event_times, survival) where survival[k] is S(t) just after
    event_times[k]; S(0) = 1 is implicit.
    """
    time = np.asarray(time, dtype=float)
    status = np.asarray(status, dtype=float)
    order = np.argsort(time, kind="stable")
    t_s, d_s = time[order], status[order]
    n = len(t_s)

    times = []
    surv = []
    s = 1.0
    at_risk = n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and t_s[j + 1] == t_s[i]:
            j += 1
        deaths = float(d_s[i:j + 1].sum())
        if deaths > 0:
            s *= 1.0 - deaths / at_risk
            times.append(t_s[i])
            surv.append(s)
        at_risk -= j - i + 1
        i = j + 1
    return np.asarray(times), np.asarray(surv)


def rmst(time, status, tau: float) -> float:
    """Area under the Kaplan-Meier curve on [0, tau]."""
    if len(np.asarray(time)) == 0:
        return float("nan")
    times, surv = km_curve(time, status)
    area = 0.0
    prev_t = 0.0
    prev_s = 1.0
    for t, s in zip(times, surv):
        if t >= tau:
            break
        area += prev_s * (t - prev_t)
        prev_t, prev_s = t, s
    area += prev_s * (tau - prev_t)
    return float(area)
