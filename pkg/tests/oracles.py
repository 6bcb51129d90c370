"""Slow but obviously-correct reference implementations used by the tests."""

import itertools
from fractions import Fraction


def brute_force_likelihood(params, symbols):
    """Sum over every hidden state path of pi * prod(A) * prod(B)."""
    A, B, pi = params.transition, params.emission, params.initial
    total = 0.0
    for path in itertools.product(range(params.n_states), repeat=len(symbols)):
        p = pi[path[0]] * B[path[0], symbols[0]]
        for t in range(1, len(symbols)):
            p *= A[path[t - 1], path[t]] * B[path[t], symbols[t]]
        total += p
    return total


def best_contiguous_partition(values, k):
    """Optimal 1-D k-means by trying every split of the sorted values."""
    values = sorted(values)
    best = None
    for cuts in itertools.combinations(range(1, len(values)), k - 1):
        bounds = (0,) + cuts + (len(values),)
        groups = [values[a:b] for a, b in zip(bounds, bounds[1:])]
        sse = sum(sum((x - sum(g) / len(g)) ** 2 for x in g) for g in groups)
        if best is None or sse < best[0]:
            best = (sse, [sum(g) / len(g) for g in groups])
    return best[1]


def frac_score(prev_window, new_window):
    """Exact match percentage between two count windows."""
    prev = Fraction(sum(prev_window), len(prev_window))
    new = Fraction(sum(new_window), len(new_window))
    if prev == 0:
        return Fraction(100) if new == 0 else Fraction(0)
    return max(Fraction(0), min(Fraction(100), 100 - 100 * (prev - new) / prev))


def case_oracle(score, t1, t2):
    """Cascade label spelled out as three disjoint interval tests."""
    hits = []
    if score < t1:
        hits.append("direct_reject")
    if t1 <= score <= t2:
        hits.append("escalate")
    if score > t2:
        hits.append("direct_accept")
    return hits
