"""MinCq: assemble and solve the quadratic program, and the resulting vote.

The program is

    argmin_rho  rho' M rho - A' rho
    s.t.        m' rho = c,   0 <= rho_j <= 1/n

With u = 1/(2n) * 1 we have A = 2 M u, so substituting delta = rho - u
turns it into

    argmin_delta  delta' M delta
    s.t.          m' delta = c - m' u,   |delta_j| <= 1/(2n)

which is what the solver works on. An accelerated projected gradient
(exact projection onto box intersected with the hyperplane), or a warm
start from a neighbouring solution, guesses the active bounds. A
primal-dual active-set method settles them in a few linear solves, and a
primal active-set method finishes exactly from that point.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.linalg

from pvmincq.dataset import LabeledSample
from pvmincq.utils import PVMinCqError
from pvmincq.voters import Voters, build_from_sample

LOG = logging.getLogger(__name__)

# delta' (M + RIDGE I) delta is strictly convex; among the minimizers of a
# rank deficient M it picks the one closest to u.
RIDGE = 1e-10
# Bound multipliers of the wrong sign smaller than this are treated as zero.
MULTIPLIER_TOL = 1e-10
FEASIBILITY_TOL = 1e-12
GRADIENT_ITERATIONS = 300
# Gradient steps taken only to guess the active bounds.
SEED_ITERATIONS = 60
GRADIENT_TOL = 1e-13
STEP_EPS = 1e-15
PRIMAL_DUAL_ITERATIONS = 50
# Relative distance to a bound under which a starting weight counts as on it.
BOUND_TOL = 1e-6


class InfeasibleMargin(PVMinCqError, ValueError):
    """The requested margin cannot be reached with weights in [0, 1/n]."""

    def __init__(self, c: float, low: float, high: float):
        self.c = c
        self.low = low
        self.high = high
        super().__init__(
            f"margin constraint m'rho = {c:.6g} is outside the achievable "
            f"interval [{low:.6g}, {high:.6g}]"
        )


class SolverError(PVMinCqError):
    pass


@dataclass(frozen=True, eq=False)
class QPInstance:
    M: np.ndarray
    A: np.ndarray
    m_vec: np.ndarray
    c: float

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def with_constraint(self, c: float) -> QPInstance:
        return dataclasses.replace(self, c=float(c))

    def zero_margin_constraint(self) -> float:
        """Right-hand side the equality would have with mu = 0."""
        return float(self.m_vec.sum() / (2 * self.n))

    def to_csv(self, path) -> None:
        frame = pd.DataFrame(self.M, columns=[f"M{j}" for j in range(self.n)])
        frame["A"] = self.A
        frame["m"] = self.m_vec
        frame["c"] = self.c
        frame.to_csv(path, index_label="j", float_format="%.17g")


@dataclass(frozen=True, eq=False)
class Posterior:
    weights: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def uniform(cls, n: int) -> Posterior:
        """The box midpoint, whose vote scores 0 everywhere."""
        return cls(np.full(n, 1.0 / (2 * n)))


@dataclass(frozen=True, eq=False)
class MajorityVote:
    voters: Voters
    posterior: Posterior

    def __post_init__(self):
        if self.voters.n != self.posterior.n:
            raise ValueError(
                f"{self.voters.n} voters but {self.posterior.n} posterior weights"
            )

    @property
    def signed_weights(self) -> np.ndarray:
        """2 rho_j - 1/n: the weight of h_j once -h_j is folded in."""
        n = self.posterior.n
        return 2.0 * self.posterior.weights - 1.0 / n

    def score(self, points) -> np.ndarray:
        return self.voters.evaluate(points) @ self.signed_weights

    def predict(self, points) -> np.ndarray:
        # A zero score predicts +1 here; risks count it as an error anyway.
        return np.where(self.score(points) >= 0, 1, -1)


def score(vote: MajorityVote, x):
    """Score of one point (returns a float) or of an array of points."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(vote.score(x.reshape(1, -1))[0])
    return vote.score(x)


def predict(vote: MajorityVote, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return int(vote.predict(x.reshape(1, -1))[0])
    return vote.predict(x)


def assemble(sample: LabeledSample, voters: Voters, mu: float, H=None) -> QPInstance:
    """`H` is the voter output on the sample, when the caller already has it."""
    if not mu > 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    H = voters.evaluate(sample.points) if H is None else np.asarray(H, dtype=float)
    m, n = H.shape
    y = sample.labels.astype(float)

    M = H.T @ H / m
    M = (M + M.T) / 2
    A = H.T @ H.sum(axis=1) / (n * m)
    m_vec = H.T @ y / m
    c = mu / 2 + m_vec.sum() / (2 * n)
    return QPInstance(M=M, A=A, m_vec=m_vec, c=float(c))


def objective(qp: QPInstance, rho) -> float:
    rho = np.asarray(getattr(rho, "weights", rho), dtype=float)
    return float(rho @ qp.M @ rho - qp.A @ rho)


def margin_interval(qp: QPInstance) -> tuple[float, float]:
    """Range of m' rho over the box [0, 1/n]^n."""
    n = qp.n
    low = float(np.minimum(qp.m_vec, 0).sum() / n)
    high = float(np.maximum(qp.m_vec, 0).sum() / n)
    return low, high


def _project(v: np.ndarray, a: np.ndarray, b: float, h: float) -> np.ndarray:
    """Euclidean projection of v onto {x : |x_j| <= h, a'x = b}.

    x(lam) = clip(v + lam * a) and a'x(lam) is piecewise linear and
    non-decreasing in lam, so lam is found among the breakpoints and then
    interpolated exactly on its segment.
    """
    nz = np.flatnonzero(a)
    if nz.size == 0:
        return np.clip(v, -h, h)
    breaks = np.unique(
        np.concatenate([(-h - v[nz]) / a[nz], (h - v[nz]) / a[nz]])
    )

    def phi(lam: float) -> float:
        return float(a @ np.clip(v + lam * a, -h, h))

    if b <= phi(breaks[0]):
        lam = breaks[0]
    elif b >= phi(breaks[-1]):
        lam = breaks[-1]
    else:
        lo, hi = 0, breaks.size - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if phi(breaks[mid]) <= b:
                lo = mid
            else:
                hi = mid
        f_lo, f_hi = phi(breaks[lo]), phi(breaks[hi])
        lam = breaks[lo] + (b - f_lo) * (breaks[hi] - breaks[lo]) / (f_hi - f_lo)
    return np.clip(v + lam * a, -h, h)


def _projected_gradient(Q, a, b, h, x, iterations=GRADIENT_ITERATIONS):
    n = x.size
    top = scipy.linalg.eigh(Q, eigvals_only=True, subset_by_index=[n - 1, n - 1])
    step = 1.0 / (2.0 * max(float(top[0]), RIDGE))
    y = x.copy()
    t = 1.0
    for it in range(iterations):
        x_next = _project(y - step * 2.0 * (Q @ y), a, b, h)
        if np.max(np.abs(x_next - x)) <= GRADIENT_TOL:
            x = x_next
            break
        t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        y = x_next + ((t - 1.0) / t_next) * (x_next - x)
        x, t = x_next, t_next
    LOG.debug("projected gradient stopped after %s iterations", it + 1)
    return x


def _vertex_multiplier(g, a, state) -> float:
    """Equality multiplier when no free variable carries it.

    Picks the middle of the interval of multipliers for which every fixed
    bound has the right sign (or the middle of the gap when it is empty).
    """
    low, high = -math.inf, math.inf
    for j in np.flatnonzero((state != 0) & (a != 0)):
        ratio = g[j] / a[j]
        # at the lower bound g_j - lam a_j >= 0, at the upper bound <= 0
        caps_above = (state[j] == -1) == (a[j] > 0)
        if caps_above:
            high = min(high, ratio)
        else:
            low = max(low, ratio)
    if math.isinf(low) and math.isinf(high):
        return 0.0
    if math.isinf(low):
        return high
    if math.isinf(high):
        return low
    return (low + high) / 2.0


def _subproblem(Q, a, b, x, free, fixed, has_equality):
    """Minimize over the free variables with the fixed ones held at their bound."""
    target = x.copy()
    if free.size == 0:
        return target, None
    Q_ff = Q[np.ix_(free, free)]
    rhs = -2.0 * Q[np.ix_(free, fixed)] @ x[fixed]
    a_f = a[free]
    if not has_equality or not np.any(a_f):
        target[free] = scipy.linalg.solve(2.0 * Q_ff, rhs, assume_a="pos")
        return target, None

    k = free.size
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = 2.0 * Q_ff
    kkt[:k, k] = -a_f
    kkt[k, :k] = -a_f
    full_rhs = np.append(rhs, -(b - a[fixed] @ x[fixed]))
    solution = scipy.linalg.solve(kkt, full_rhs, assume_a="sym")
    target[free] = solution[:k]
    return target, float(solution[k])


def _ratio_test(x_f, p, h):
    steps = np.full(p.shape, math.inf)
    moving = np.abs(p) > STEP_EPS
    steps[moving] = np.where(
        p[moving] > 0, (h - x_f[moving]) / p[moving], (-h - x_f[moving]) / p[moving]
    )
    i = int(np.argmin(steps))
    if steps[i] < 1.0:
        return max(float(steps[i]), 0.0), i
    return 1.0, None


def _active_set(Q, a, b, h, x, max_iter):
    n = x.size
    has_equality = bool(np.any(a))
    state = np.zeros(n, dtype=np.int8)
    state[x <= -h] = -1
    state[x >= h] = 1
    x = np.where(state == -1, -h, np.where(state == 1, h, x))

    for it in range(max_iter):
        free = np.flatnonzero(state == 0)
        fixed = np.flatnonzero(state != 0)
        target, lam = _subproblem(Q, a, b, x, free, fixed, has_equality)

        if free.size:
            p = target[free] - x[free]
            alpha, blocking = _ratio_test(x[free], p, h)
            if blocking is not None:
                j = free[blocking]
                x[free] += alpha * p
                state[j] = 1 if p[blocking] > 0 else -1
                x[j] = h * state[j]
                continue
            x[free] = np.clip(target[free], -h, h)

        g = 2.0 * (Q @ x)
        if not has_equality:
            lam = 0.0
        elif lam is None:
            lam = _vertex_multiplier(g, a, state)
        r = g - lam * a
        violation = np.where(state == -1, -r, np.where(state == 1, r, 0.0))
        j = int(np.argmax(violation))
        if violation[j] <= MULTIPLIER_TOL:
            LOG.debug(
                "active set converged after %s iterations, %s of %s weights free",
                it + 1,
                free.size,
                n,
            )
            return x
        state[j] = 0
    raise SolverError(f"active-set method did not converge in {max_iter} iterations")


def _primal_dual(Q, a, b, h, x, max_iter=PRIMAL_DUAL_ITERATIONS):
    """Primal-dual active set: guess all bounds at once from x, then re-guess.

    Each step solves the subproblem for the current guess and moves every
    bound whose primal value or multiplier has the wrong sign. Returns the
    point once the guess repeats with all conditions met, or None.
    """
    has_equality = bool(np.any(a))
    edge = h * (1.0 - BOUND_TOL)
    state = np.zeros(x.size, dtype=np.int8)
    state[x <= -edge] = -1
    state[x >= edge] = 1
    for it in range(max_iter):
        x = np.where(state == -1, -h, np.where(state == 1, h, x))
        free = np.flatnonzero(state == 0)
        fixed = np.flatnonzero(state != 0)
        try:
            x, lam = _subproblem(Q, a, b, x, free, fixed, has_equality)
        except scipy.linalg.LinAlgError:
            return None
        g = 2.0 * (Q @ x)
        if not has_equality:
            lam = 0.0
        elif lam is None:
            lam = _vertex_multiplier(g, a, state)
        r = g - lam * a

        guess = state.copy()
        guess[(state == 0) & (x > h)] = 1
        guess[(state == 0) & (x < -h)] = -1
        guess[(state == -1) & (r < -MULTIPLIER_TOL)] = 0
        guess[(state == 1) & (r > MULTIPLIER_TOL)] = 0
        if np.array_equal(guess, state):
            if has_equality and abs(a @ x - b) > FEASIBILITY_TOL * max(1.0, abs(b)):
                return None
            LOG.debug("primal-dual active set converged after %s iterations", it + 1)
            return x
        state = guess
    return None


def _restore_equality(x, a, b, h):
    """Push the rounding residual of a'x = b onto the free variables."""
    free = np.flatnonzero(np.abs(x) < h)
    a_f = a[free]
    norm = a_f @ a_f
    if norm > 0:
        x[free] += (b - a @ x) * a_f / norm
    return np.clip(x, -h, h)


def solve(qp: QPInstance, max_iter: int | None = None, start=None) -> Posterior:
    """Optimal posterior of `qp`; `start` (weights or a Posterior) seeds the bound guess."""
    n = qp.n
    h = 1.0 / (2 * n)
    u = np.full(n, h)
    a = np.asarray(qp.m_vec, dtype=float)

    low, high = margin_interval(qp)
    slack = FEASIBILITY_TOL * max(1.0, abs(qp.c))
    if not (low - slack <= qp.c <= high + slack):
        raise InfeasibleMargin(qp.c, low, high)
    reach = h * np.abs(a).sum()
    b = min(max(qp.c - a @ u, -reach), reach)

    Q = qp.M + RIDGE * np.eye(n)
    Q = (Q + Q.T) / 2
    if start is None:
        x = _project(np.zeros(n), a, b, h)
        guess = None
    else:
        rho = np.asarray(getattr(start, "weights", start), dtype=float)
        if rho.shape != (n,):
            raise ValueError(f"start has shape {rho.shape}, expected ({n},)")
        x = _project(rho - u, a, b, h)
        guess = _primal_dual(Q, a, b, h, x)
    for iterations in (SEED_ITERATIONS, GRADIENT_ITERATIONS):
        if guess is not None:
            break
        x = _projected_gradient(Q, a, b, h, x, iterations)
        guess = _primal_dual(Q, a, b, h, x)
    if guess is not None:
        x = guess
    x = _active_set(Q, a, b, h, x, max_iter or 20 * n + 100)
    x = _restore_equality(x, a, b, h)

    rho = np.clip(u + x, 0.0, 1.0 / n)
    return Posterior(rho)


def kkt_residual(qp: QPInstance, posterior) -> float:
    """Largest violation of the KKT conditions at `posterior`.

    Covers stationarity on free weights and the sign of the bound
    multipliers; the equality multiplier is fitted by least squares on the
    free weights.
    """
    rho = np.asarray(getattr(posterior, "weights", posterior), dtype=float)
    n = qp.n
    a = qp.m_vec
    g = 2.0 * qp.M @ rho - qp.A
    state = np.zeros(n, dtype=np.int8)
    state[rho <= 1e-14] = -1
    state[rho >= 1.0 / n - 1e-14] = 1
    free = state == 0
    a_f = a[free]
    if np.any(a_f):
        lam = float(a_f @ g[free] / (a_f @ a_f))
    else:
        lam = _vertex_multiplier(g, a, state)
    r = g - lam * a
    worst = 0.0
    if np.any(free):
        worst = float(np.max(np.abs(r[free])))
    if np.any(state == -1):
        worst = max(worst, float(np.max(-r[state == -1])))
    if np.any(state == 1):
        worst = max(worst, float(np.max(r[state == 1])))
    return max(worst, 0.0)


def learn(
    sample: LabeledSample,
    gamma: float,
    mu: float,
    anchors=None,
) -> MajorityVote:
    """MinCq end to end: voters on `anchors` (default: the sample), then solve."""
    voters = build_from_sample(sample if anchors is None else anchors, gamma)
    qp = assemble(sample, voters, mu)
    posterior = solve(qp)
    return MajorityVote(voters, posterior)


def learn_path(
    sample: LabeledSample,
    gamma: float,
    mus,
    anchors=None,
    H=None,
) -> list[MajorityVote | InfeasibleMargin | SolverError]:
    """`learn` for several margins sharing one set of voters.

    M, A and m are built once; each margin only moves the equality, and its
    solve starts from the solution of the next smaller margin. The list is
    aligned with `mus`; a margin that fails holds its exception instead.
    """
    mus = [float(mu) for mu in mus]
    if not mus:
        return []
    voters = build_from_sample(sample if anchors is None else anchors, gamma)
    qp = assemble(sample, voters, min(mus), H=H)
    base = qp.zero_margin_constraint()
    path: list = [None] * len(mus)
    start = None
    for i in sorted(range(len(mus)), key=mus.__getitem__):
        try:
            posterior = solve(qp.with_constraint(mus[i] / 2 + base), start=start)
        except (InfeasibleMargin, SolverError) as ex:
            path[i] = ex
            continue
        path[i] = MajorityVote(voters, posterior)
        start = posterior
    return path
