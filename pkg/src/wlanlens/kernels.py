"""Monte-Carlo samplers of the contention processes behind the model.

These exist to cross-check closed forms with brute force: sample the
defining stochastic process many times and histogram the outcomes.  Two
implementations of each sampler, selected at import time:

* a numba ``@njit`` loop (fast path, used when numba imports cleanly), or
* a chunked vectorized numpy path (always available).

Set ``WLAN_LENS_NO_NUMBA=1`` to force the numpy path even when numba is
installed; ``benchmarks/bench_kernels.py`` times one against the other.
Both paths draw from the same process, so statistics agree; bit-for-bit
equality across paths is not a goal.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "USING_NUMBA",
    "sample_joint_hb",
    "sample_tx_count",
    "joint_hb_frequencies",
]

_DISABLED = os.environ.get("WLAN_LENS_NO_NUMBA", "").strip() not in ("", "0", "false")

try:  # pragma: no cover - exercised via env flag in the benchmark
    if _DISABLED:
        raise ImportError("numba disabled by WLAN_LENS_NO_NUMBA")
    from numba import njit

    USING_NUMBA = True
except ImportError:  # pragma: no cover
    njit = None
    USING_NUMBA = False


def _sample_joint_hb_numpy(k: int, n_samples: int, seed: int, b_cap: int) -> np.ndarray:
    """Histogram of (h, b): stations with packets / max backlog at AP access.

    Process per sample: the AP draws an exponential backoff x (rate 1; the
    rate cancels), each of k stations completes Poisson(x) transmissions
    before it fires, and the deterministic first ACK lands on a uniformly
    chosen station.  h = number of non-empty queues, b = largest queue.
    """
    rng = np.random.default_rng(seed)
    hist = np.zeros((k + 1, b_cap + 1), dtype=np.int64)
    chunk = 1 << 18
    left = n_samples
    while left > 0:
        n = min(chunk, left)
        left -= n
        x = rng.exponential(size=n)
        loads = rng.poisson(lam=np.broadcast_to(x[:, None], (n, k)))
        first = rng.integers(0, k, size=n)
        loads[np.arange(n), first] += 1
        h = (loads > 0).sum(axis=1)
        b = np.minimum(loads.max(axis=1), b_cap)
        np.add.at(hist, (h, b), 1)
    return hist


def _sample_tx_count_numpy(n_samples: int, seed: int, m_cap: int) -> np.ndarray:
    """Histogram of M: one station's transmissions before the AP fires."""
    rng = np.random.default_rng(seed)
    hist = np.zeros(m_cap + 1, dtype=np.int64)
    chunk = 1 << 20
    left = n_samples
    while left > 0:
        n = min(chunk, left)
        left -= n
        m = rng.poisson(lam=rng.exponential(size=n))
        np.add.at(hist, np.minimum(m, m_cap), 1)
    return hist


if USING_NUMBA:

    @njit(cache=True)
    def _sample_joint_hb_numba(k: int, n_samples: int, seed: int, b_cap: int) -> np.ndarray:
        np.random.seed(seed)
        hist = np.zeros((k + 1, b_cap + 1), dtype=np.int64)
        for _ in range(n_samples):
            x = np.random.exponential(1.0)
            h = 0
            b = 0
            first = np.random.randint(0, k)
            for j in range(k):
                load = np.random.poisson(x)
                if j == first:
                    load += 1
                if load > 0:
                    h += 1
                    if load > b:
                        b = load
            if b > b_cap:
                b = b_cap
            hist[h, b] += 1
        return hist

    @njit(cache=True)
    def _sample_tx_count_numba(n_samples: int, seed: int, m_cap: int) -> np.ndarray:
        np.random.seed(seed)
        hist = np.zeros(m_cap + 1, dtype=np.int64)
        for _ in range(n_samples):
            m = np.random.poisson(np.random.exponential(1.0))
            if m > m_cap:
                m = m_cap
            hist[m] += 1
        return hist


def sample_joint_hb(k: int, n_samples: int, seed: int = 0, b_cap: int = 64) -> np.ndarray:
    """(k+1, b_cap+1) histogram of (h, b) over ``n_samples`` draws."""
    if k < 1 or n_samples < 1 or b_cap < 1:
        raise ValueError("k, n_samples and b_cap must all be >= 1")
    if USING_NUMBA:
        return _sample_joint_hb_numba(k, n_samples, seed, b_cap)
    return _sample_joint_hb_numpy(k, n_samples, seed, b_cap)


def sample_tx_count(n_samples: int, seed: int = 0, m_cap: int = 40) -> np.ndarray:
    """(m_cap+1,) histogram of station transmission counts M."""
    if n_samples < 1 or m_cap < 0:
        raise ValueError("n_samples must be >= 1 and m_cap >= 0")
    if USING_NUMBA:
        return _sample_tx_count_numba(n_samples, seed, m_cap)
    return _sample_tx_count_numpy(n_samples, seed, m_cap)


def joint_hb_frequencies(k: int, n_samples: int, seed: int = 0, b_cap: int = 64) -> np.ndarray:
    """Same histogram normalized to relative frequencies."""
    return sample_joint_hb(k, n_samples, seed, b_cap) / float(n_samples)
