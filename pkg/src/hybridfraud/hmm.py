"""Spending-profile HMM: amount quantisation, scaled forward algorithm,
Baum-Welch training and the sliding-window deviation test.

Transaction amounts are mapped to three observation symbols (low, medium,
high) by a per-user 1-D k-means quantiser. A discrete HMM over those symbols
is trained on the user's warm-up transactions. A new transaction is suspicious
when swapping it into the recent observation window drops the window's
likelihood by more than a relative threshold.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

N_SYMBOLS = 3
STOCHASTIC_TOL = 1e-9


class SpendingSymbol(IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2


class InvalidParamsError(ValueError):
    pass


# -- quantiser ---------------------------------------------------------------


@dataclass(frozen=True)
class AmountQuantizer:
    centroids: tuple[float, ...]

    def __post_init__(self):
        c = tuple(float(x) for x in self.centroids)
        if not 1 <= len(c) <= N_SYMBOLS:
            raise ValueError(f"expected 1..{N_SYMBOLS} centroids, got {len(c)}")
        if any(b < a for a, b in zip(c, c[1:])):
            raise ValueError("centroids must be sorted ascending")
        object.__setattr__(self, "centroids", c)

    def __call__(self, amount: float) -> SpendingSymbol:
        return quantize(amount, self)


def _optimal_breaks(values: np.ndarray, k: int) -> list[int]:
    """Start indices of the k groups of sorted ``values`` minimising the
    within-group sum of squares (exact dynamic programme over split points)."""
    n = len(values)
    s1 = np.concatenate(([0.0], np.cumsum(values)))
    s2 = np.concatenate(([0.0], np.cumsum(values * values)))
    # never cut between equal values
    cut_ok = np.concatenate(([True], values[1:] > values[:-1], [True]))

    def sse(i, j):  # cost of values[i:j] for vector i, scalar j
        m = j - i
        return s2[j] - s2[i] - (s1[j] - s1[i]) ** 2 / m

    cost = np.full((k, n + 1), np.inf)
    back = np.zeros((k, n + 1), dtype=int)
    cost[0, 1:] = [sse(np.array(0), j) for j in range(1, n + 1)]
    for g in range(1, k):
        for j in range(g + 1, n + 1):
            i = np.arange(g, j)
            total = cost[g - 1, i] + sse(i, j)
            total[~cut_ok[i]] = np.inf
            best = int(np.argmin(total))
            cost[g, j], back[g, j] = total[best], i[best]
    starts, j = [], n
    for g in range(k - 1, 0, -1):
        j = back[g, j]
        starts.append(j)
    return [0] + starts[::-1]


def fit_quantizer(amounts: Sequence[float]) -> AmountQuantizer:
    """1-D k-means with k = min(3, #distinct amounts), solved exactly.

    Sorted 1-D clusters are contiguous, so the optimal partition is found by
    dynamic programming over split points; the result is deterministic and
    never stuck in a local optimum.
    """
    values = np.sort(np.asarray(amounts, dtype=float))
    if values.size == 0:
        raise ValueError("cannot fit a quantizer on no amounts")
    if (values < 0).any():
        raise ValueError("amounts must be non-negative")
    k = min(N_SYMBOLS, len(np.unique(values)))
    bounds = _optimal_breaks(values, k) + [len(values)]
    return AmountQuantizer(tuple(float(values[a:b].mean()) for a, b in zip(bounds, bounds[1:])))


def quantize(amount: float, quantizer: AmountQuantizer) -> SpendingSymbol:
    if amount < 0:
        raise ValueError("amount must be non-negative")
    c = quantizer.centroids
    if len(c) == 1:
        return SpendingSymbol.MEDIUM
    # first minimum wins, so exact midpoints go to the lower symbol
    best = min(range(len(c)), key=lambda j: abs(amount - c[j]))
    if len(c) == 2:
        return (SpendingSymbol.LOW, SpendingSymbol.HIGH)[best]
    return SpendingSymbol(best)


# -- HMM ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HmmParams:
    transition: np.ndarray
    emission: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        for name in ("transition", "emission", "initial"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    @property
    def n_states(self) -> int:
        return self.initial.shape[0]

    def validate(self) -> None:
        n = self.initial.shape[0] if self.initial.ndim == 1 else -1
        if n < 1:
            raise InvalidParamsError("initial must be a non-empty vector")
        if self.transition.shape != (n, n):
            raise InvalidParamsError(f"transition must be {n}x{n}, got {self.transition.shape}")
        if self.emission.shape != (n, N_SYMBOLS):
            raise InvalidParamsError(f"emission must be {n}x{N_SYMBOLS}, got {self.emission.shape}")
        for name, arr in (("A", self.transition), ("B", self.emission), ("pi", self.initial)):
            if not np.isfinite(arr).all() or (arr < 0).any():
                raise InvalidParamsError(f"{name} has negative or non-finite entries")
            rows = arr.reshape(-1, arr.shape[-1]).sum(axis=1)
            bad = np.flatnonzero(np.abs(rows - 1) > STOCHASTIC_TOL)
            if bad.size:
                label = name if arr.ndim == 1 else f"{name}[{bad[0]}]"
                raise InvalidParamsError(f"{label} sums to {rows[bad[0]]!r}, not 1")

    def __eq__(self, other):
        if not isinstance(other, HmmParams):
            return NotImplemented
        return (
            np.array_equal(self.transition, other.transition)
            and np.array_equal(self.emission, other.emission)
            and np.array_equal(self.initial, other.initial)
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n_states,
            "A": self.transition.tolist(),
            "B": self.emission.tolist(),
            "pi": self.initial.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmmParams":
        params = cls(d["A"], d["B"], d["pi"])
        if int(d.get("n", params.n_states)) != params.n_states:
            raise InvalidParamsError(f"n={d['n']} does not match matrices ({params.n_states})")
        return params


def _scaled_forward(params: HmmParams, obs: np.ndarray):
    A, B = params.transition, params.emission
    T, N = len(obs), params.n_states
    alpha = np.zeros((T, N))
    scale = np.zeros(T)
    a = params.initial * B[:, obs[0]]
    for t in range(T):
        if t:
            a = (alpha[t - 1] @ A) * B[:, obs[t]]
        c = a.sum()
        scale[t] = c
        if c == 0:
            return alpha, scale, False
        alpha[t] = a / c
    return alpha, scale, True


def _as_obs(symbols) -> np.ndarray:
    obs = np.asarray([int(s) for s in symbols], dtype=int)
    if obs.size == 0:
        raise ValueError("observation sequence is empty")
    if ((obs < 0) | (obs >= N_SYMBOLS)).any():
        raise ValueError("observation symbols must be in 0..2")
    return obs


def forward_likelihood(params: HmmParams, symbols: Sequence[int]) -> float:
    """P(symbols | params) via the forward recursion with per-step scaling."""
    params.validate()
    _, scale, ok = _scaled_forward(params, _as_obs(symbols))
    if not ok:
        return 0.0
    return math.prod(scale.tolist())


def forward_log_likelihood(params: HmmParams, symbols: Sequence[int]) -> float:
    params.validate()
    _, scale, ok = _scaled_forward(params, _as_obs(symbols))
    if not ok:
        return -math.inf
    return float(np.log(scale).sum())


def random_params(n_states: int, rng: np.random.Generator) -> HmmParams:
    """Random strictly positive parameters (breaks the state symmetry EM can't)."""

    def rows(shape):
        m = rng.random(shape) + 0.5
        return m / m.sum(axis=-1, keepdims=True)

    return HmmParams(rows((n_states, n_states)), rows((n_states, N_SYMBOLS)), rows(n_states))


def _normalize_rows(new: np.ndarray, old: np.ndarray, totals: np.ndarray) -> np.ndarray:
    out = old.copy()
    ok = totals > 0
    out[ok] = new[ok] / totals[ok, None]
    return out / out.sum(axis=1, keepdims=True)


def _forward_backward(params: HmmParams, obs: np.ndarray):
    A, B = params.transition, params.emission
    alpha, scale, ok = _scaled_forward(params, obs)
    if not ok:
        raise InvalidParamsError("sequence has zero likelihood under the given params")
    T, N = alpha.shape
    beta = np.ones((T, N))
    for t in range(T - 2, -1, -1):
        beta[t] = A @ (B[:, obs[t + 1]] * beta[t + 1]) / scale[t + 1]
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    return alpha, beta, gamma, scale


def state_posteriors(params: HmmParams, symbols: Sequence[int]) -> np.ndarray:
    """P(state at t | symbols) for every t, shape (T, N)."""
    params.validate()
    return _forward_backward(params, _as_obs(symbols))[2]


def _em_step(params: HmmParams, obs: np.ndarray):
    """One Baum-Welch E+M step. Returns (log-likelihood of ``params``, new params)."""
    A, B = params.transition, params.emission
    alpha, beta, gamma, scale = _forward_backward(params, obs)
    T, N = alpha.shape
    # sum over t of xi_t(i, j) = alpha_t(i) A_ij B_j(o_t+1) beta_t+1(j) / c_t+1
    weighted = B[:, obs[1:]].T * beta[1:] / scale[1:, None]
    xi_sum = (alpha[:-1].T @ weighted) * A

    pi = gamma[0] / gamma[0].sum()
    new_A = _normalize_rows(xi_sum, A, xi_sum.sum(axis=1))
    emit = np.zeros((N, N_SYMBOLS))
    for k in range(N_SYMBOLS):
        emit[:, k] = gamma[obs == k].sum(axis=0)
    new_B = _normalize_rows(emit, B, gamma.sum(axis=0))
    return float(np.log(scale).sum()), HmmParams(new_A, new_B, pi)


def baum_welch(
    symbols: Sequence[int],
    n_states: int = 3,
    max_iters: int = 50,
    tol: float = 1e-6,
    init: HmmParams | None = None,
    seed: int = 0,
    history: list | None = None,
) -> HmmParams:
    """Fit HMM parameters to one observation sequence by EM.

    Stops after ``max_iters`` updates, or once an update improves the
    log-likelihood by less than ``tol``. If ``history`` is given, the
    log-likelihood of every visited parameter set is appended to it; the last
    entry belongs to the returned parameters.
    """
    obs = _as_obs(symbols)
    if obs.size < 2:
        raise ValueError("baum_welch needs a sequence of length >= 2")
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    params = init if init is not None else random_params(n_states, np.random.default_rng(seed))
    if params.n_states != n_states:
        raise ValueError("init params have the wrong number of states")
    prev_ll = None
    for it in range(max_iters + 1):
        ll, updated = _em_step(params, obs)
        if history is not None:
            history.append(ll)
        if it == max_iters or (prev_ll is not None and ll - prev_ll < tol):
            break
        prev_ll = ll
        params = updated
    return params


@functools.lru_cache(maxsize=4096)
def _fit_cached(amounts: tuple, n_states: int, max_iters: int, tol: float, seed: int):
    quantizer = fit_quantizer(amounts)
    symbols = tuple(int(quantize(a, quantizer)) for a in amounts)
    params = baum_welch(symbols, n_states, max_iters, tol, seed=seed)
    # A scored window starts anywhere in the spending sequence, not at its
    # first transaction, so score windows from the average state posterior.
    start = state_posteriors(params, symbols).mean(axis=0)
    params = HmmParams(params.transition, params.emission, start / start.sum())
    return quantizer, params, symbols


def fit_spending_model(
    amounts: Sequence[float],
    n_states: int = 3,
    max_iters: int = 50,
    tol: float = 1e-6,
    seed: int = 0,
) -> tuple[AmountQuantizer, HmmParams, tuple[int, ...]]:
    """Quantiser, HMM and training symbols for one user's warm-up amounts.

    The initial distribution of the returned HMM is the time-averaged state
    posterior of the training sequence rather than the posterior at its first
    step, which a single training sequence collapses to one state.
    """
    return _fit_cached(tuple(float(a) for a in amounts), n_states, max_iters, tol, seed)


# -- deviation check -----------------------------------------------------------


@dataclass(frozen=True)
class DeviationVerdict:
    alpha_prev: float
    alpha_new: float
    delta: float
    is_fraud: bool
    updated_window: tuple[int, ...]


def deviation_check(
    params: HmmParams,
    window: Sequence[int],
    new_symbol: int,
    theta: float = 0.5,
) -> DeviationVerdict:
    window = tuple(int(s) for s in window)
    if not window:
        raise ValueError("observation window is not warmed up")
    candidate = window[1:] + (int(new_symbol),)
    alpha_prev = forward_likelihood(params, window)
    alpha_new = forward_likelihood(params, candidate)
    delta = 0.0 if alpha_prev == 0 else (alpha_prev - alpha_new) / alpha_prev
    is_fraud = delta > theta
    return DeviationVerdict(
        alpha_prev=alpha_prev,
        alpha_new=alpha_new,
        delta=delta,
        is_fraud=is_fraud,
        updated_window=window if is_fraud else candidate,
    )
