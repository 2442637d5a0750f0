import numpy as np
import pytest

from staggered_synth.panel import validate_panel


def records(Y, D, units=None, periods=None):
    Y = np.asarray(Y, dtype=float)
    D = np.asarray(D, dtype=int)
    N, P = Y.shape
    units = units or [f"u{i}" for i in range(N)]
    periods = periods or list(range(1, P + 1))
    return [(units[i], periods[p], Y[i, p], D[i, p]) for i in range(N) for p in range(P)]


def make_panel(Y, D, units=None, periods=None):
    return validate_panel(records(Y, D, units, periods))


def staggered_treatment(N, T, S, adoption):
    """``adoption[i]`` is the post period (1-based) a unit starts treatment, or None."""
    D = np.zeros((N, T + S), dtype=int)
    for i, a in enumerate(adoption):
        if a is not None:
            D[i, T + a - 1 :] = 1
    return D


def representable_panel(rng, N, T, S, adoption, tau_scale=1.0):
    """Noise-free untreated outcomes in which every unit is an exact synthetic control.

    Units 0 and 1 are random walks, units 2 and 3 repeat them, and later
    units are intercept-shifted convex combinations of the first two.
    Returns ``(Y0, D, effects)``.
    """
    assert N >= 4
    base = rng.normal(size=(2, T + S)).cumsum(axis=1)
    rows = [base[0], base[1], base[0].copy(), base[1].copy()]
    for _ in range(4, N):
        w = rng.uniform()
        rows.append(w * base[0] + (1 - w) * base[1] + rng.normal())
    Y0 = np.array(rows)
    D = staggered_treatment(N, T, S, adoption)
    effects = np.where(D == 1, tau_scale * rng.normal(size=D.shape), 0.0)
    return Y0, D, effects


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
