"""Budget-ε₂ LDP perturbation backends for a single clipped value in [-1, 1].

Every backend is unbiased and emits outputs bounded by a constant ``bound``
that depends only on epsilon. The three backends are interchangeable behind
the same interface:

* ``duchi`` — two-point mechanism; output is ±bound with input-tilted odds.
* ``pm``    — piecewise mechanism; continuous output on [-bound, bound] with a
  high-density band (density ratio ``e^eps`` to the tails) centered per input,
  sampled by inverting the three-piece CDF.
* ``hm``    — mixes the two, preferring pm when its worst-case variance beats
  duchi's (the crossover is computed at construction, not hard-coded).

All constants are derived in ``__init__`` from epsilon alone.
"""

from __future__ import annotations

import math

import numpy as np

PERTURBATION_BACKENDS = ("duchi", "pm", "hm")
_INPUT_ATOL = 1e-9


def clip(v):
    """Clamp a value (or array) to the perturbation input range [-1, 1]."""
    if np.isscalar(v):
        return min(1.0, max(-1.0, float(v)))
    return np.clip(np.asarray(v, dtype=np.float64), -1.0, 1.0)


def _check_epsilon(epsilon: float) -> float:
    if not epsilon > 0:
        raise ValueError(f"perturbation epsilon must be > 0, got {epsilon}")
    return float(epsilon)


def _as_input_array(v) -> tuple[np.ndarray, bool]:
    arr = np.asarray(v, dtype=np.float64)
    if np.any(np.abs(arr) > 1.0 + _INPUT_ATOL):
        raise ValueError("perturbation inputs must lie in [-1, 1]; clip first")
    return np.atleast_1d(arr), arr.ndim == 0


class DuchiPerturber:
    """Two-point mechanism: emits ±C with C = (e^eps + 1) / (e^eps - 1)."""

    def __init__(self, epsilon: float):
        self.epsilon = _check_epsilon(epsilon)
        e = math.exp(self.epsilon)
        self.bound = (e + 1.0) / (e - 1.0)

    def positive_probability(self, v):
        """Exact probability of emitting +bound for input v."""
        e = math.exp(self.epsilon)
        return (np.asarray(v, dtype=np.float64) * (e - 1.0) + e + 1.0) / (2.0 * e + 2.0)

    def perturb(self, v, rng: np.random.Generator):
        arr, scalar = _as_input_array(v)
        out = np.where(rng.random(arr.shape) < self.positive_probability(arr), self.bound, -self.bound)
        return float(out[0]) if scalar else out


class PiecewisePerturber:
    """Piecewise mechanism: three-piece density on [-C, C], C = (e^{eps/2}+1)/(e^{eps/2}-1).

    The band [l(v), r(v)] of width C - 1 carries density ``e^eps`` times the
    tails; its placement is affine in v, which makes the output mean exactly v.
    """

    def __init__(self, epsilon: float):
        self.epsilon = _check_epsilon(epsilon)
        s = math.exp(self.epsilon / 2.0)
        self.bound = (s + 1.0) / (s - 1.0)
        # densities from normalization: (C-1)*high + (C+1)*low = 1, high = e^eps * low
        self._density_low = 1.0 / ((self.bound - 1.0) * math.exp(self.epsilon) + self.bound + 1.0)
        self._density_high = math.exp(self.epsilon) * self._density_low

    def band(self, v):
        """Left and right edges of the high-density band for input v."""
        v = np.asarray(v, dtype=np.float64)
        left = (self.bound + 1.0) / 2.0 * v - (self.bound - 1.0) / 2.0
        right = left + self.bound - 1.0
        # the band lies inside [-C, C] algebraically; clamp away float error
        return np.clip(left, -self.bound, self.bound), np.clip(right, -self.bound, self.bound)

    def pdf(self, x, v: float) -> np.ndarray:
        """Exact output density at x for scalar input v."""
        left, right = self.band(float(v))
        x = np.asarray(x, dtype=np.float64)
        inside = (x >= left) & (x <= right)
        in_domain = np.abs(x) <= self.bound
        return np.where(in_domain, np.where(inside, self._density_high, self._density_low), 0.0)

    def second_moment(self, v: float) -> float:
        """Exact E[output^2] for input v, by integrating the piecewise density."""
        left, right = self.band(float(v))
        c = self.bound
        high = self._density_high * (right**3 - left**3) / 3.0
        low = self._density_low * ((left**3 + c**3) + (c**3 - right**3)) / 3.0
        return high + low

    def perturb(self, v, rng: np.random.Generator):
        arr, scalar = _as_input_array(v)
        left, right = self.band(arr)
        mass_left = (left + self.bound) * self._density_low
        mass_mid = (self.bound - 1.0) * self._density_high
        u = rng.random(arr.shape)
        in_left = u < mass_left
        in_mid = ~in_left & (u < mass_left + mass_mid)
        out = np.where(
            in_left,
            -self.bound + u / self._density_low,
            np.where(
                in_mid,
                left + (u - mass_left) / self._density_high,
                right + (u - mass_left - mass_mid) / self._density_low,
            ),
        )
        out = np.clip(out, -self.bound, self.bound)
        return float(out[0]) if scalar else out


class HybridPerturber:
    """Coin-flip mixture of the piecewise and two-point mechanisms.

    The pm share is ``1 - e^{-eps/2}`` whenever pm's worst-case variance
    (attained at v = 0) undercuts duchi's, and 0 otherwise — so for small
    epsilon the mixture degenerates to duchi. That weight also cancels the
    input dependence of the mixture variance.
    """

    def __init__(self, epsilon: float):
        self.epsilon = _check_epsilon(epsilon)
        self._duchi = DuchiPerturber(epsilon)
        self._pm = PiecewisePerturber(epsilon)
        # duchi's E[output^2] is bound^2 for every input; compare at v = 0
        if self._pm.second_moment(0.0) < self._duchi.bound**2:
            self.pm_weight = 1.0 - math.exp(-self.epsilon / 2.0)
        else:
            self.pm_weight = 0.0
        self.bound = max(self._duchi.bound, self._pm.bound) if self.pm_weight > 0 else self._duchi.bound

    def perturb(self, v, rng: np.random.Generator):
        arr, scalar = _as_input_array(v)
        out = np.empty(arr.shape)
        use_pm = rng.random(arr.shape) < self.pm_weight
        if use_pm.any():
            out[use_pm] = self._pm.perturb(arr[use_pm], rng)
        if (~use_pm).any():
            out[~use_pm] = self._duchi.perturb(arr[~use_pm], rng)
        return float(out[0]) if scalar else out


_BACKENDS = {"duchi": DuchiPerturber, "pm": PiecewisePerturber, "hm": HybridPerturber}


def make_perturber(name: str, epsilon: float):
    """Construct a perturbation backend by name."""
    try:
        backend = _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"unknown perturbation backend {name!r}; valid: {', '.join(PERTURBATION_BACKENDS)}"
        ) from None
    return backend(epsilon)
