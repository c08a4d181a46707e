"""The Bernoulli-weight cascade family: exact thresholds and step solutions.

For ``N`` weights ``exp(-B_i)`` with ``B_i ~ Bernoulli(theta)``, survival
functions of min-type fixed points obey the one-step recursion ``F̄(t/e) =
g(F̄(t))`` with

    g(u) = (u^(1/N) - (1-theta) u) / theta        on [0, 1].

Everything in this module is organized around ``g``: regime classification
at the watershed ``theta = 1 - 1/N``, inversion of its increasing branch,
the threshold sequence ``a_0 > a_1 > ...`` (supercritical regime), the
explicit lattice-step solution and its scalings, the seed-extension
correspondence of the critical/subcritical regimes, the escape iteration
behind uniqueness, and recovery of the periodic modulation of a subcritical
mixture curve.

The threshold sequence decays doubly exponentially (``a_{k+1} ~ (theta
a_k)^N``), which leaves IEEE double range around k = 8 for small theta.  The
chain is therefore computed in 53-bit arbitrary-exponent floats (mpmath) and
each ``a_{k+1}`` is located by bisection followed by a unit-in-last-place
scan for an argument whose image is *bit-for-bit* equal to ``a_k``; such a
float almost always exists because ``g`` contracts adjacent-float spacing
(slope ~ a_k / (N a_{k+1}) against an ulp ratio ~ a_{k+1}/a_k).  Exactness
flags record the rare failures.  Float64 projections are provided alongside,
with the underflow point marked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from mpmath import mp, mpf

from .curves import SurvivalCurve
from .weights import BernoulliCascade

SUBCRITICAL = "subcritical"
CRITICAL = "critical"
SUPERCRITICAL = "supercritical"


@dataclass(frozen=True)
class CascadeParams:
    """Cascade family parameters: ``N >= 2`` weights, ``theta`` in (0, 1)."""

    N: int
    theta: float

    def __post_init__(self) -> None:
        if not isinstance(self.N, (int, np.integer)) or self.N < 2:
            raise ValueError("N must be an integer >= 2")
        if not (0.0 < self.theta < 1.0):
            raise ValueError("theta must lie in (0,1)")

    def model(self) -> BernoulliCascade:
        """The same parameters as a sampleable weight model."""
        return BernoulliCascade(self.N, self.theta)


def classify(params: CascadeParams) -> str:
    """Regime by exact float comparison of theta against ``1 - 1/N``."""
    watershed = 1.0 - 1.0 / params.N
    if params.theta > watershed:
        return SUBCRITICAL
    if params.theta == watershed:
        return CRITICAL
    return SUPERCRITICAL


def g_eval(params: CascadeParams, u: float) -> float:
    """``g(u) = (u^(1/N) - (1-theta) u) / theta`` for ``u`` in [0, 1]."""
    if not (0.0 <= u <= 1.0):
        raise ValueError(f"u = {u!r} outside [0, 1]")
    if params.N == 2:
        root = math.sqrt(u)
    else:
        root = u ** (1.0 / params.N)
    return (root - (1.0 - params.theta) * u) / params.theta


def _g_mp(params: CascadeParams, u) -> mpf:
    """``g`` in the active mpmath precision (callers pin 53 bits)."""
    u = mpf(u)
    theta = mpf(params.theta)
    if params.N == 2:
        root = mp.sqrt(u)
    else:
        root = mp.root(u, params.N)
    return (root - (1 - theta) * u) / theta


def g_eval_mp(params: CascadeParams, u) -> mpf:
    """53-bit, unbounded-exponent evaluation of ``g`` (no underflow)."""
    with mp.workprec(53):
        if u < 0 or u > 1:
            raise ValueError(f"u = {u!r} outside [0, 1]")
        return _g_mp(params, u)


def u_star(params: CascadeParams) -> float:
    """Location of the interior maximum of ``g`` in the supercritical regime.

    Solves ``g'(u) = 0``: ``u* = (N (1-theta))^(-N/(N-1))``.  For critical or
    subcritical parameters ``g`` is increasing throughout and 1.0 is
    returned.
    """
    n = params.N
    growth = n * (1.0 - params.theta)
    if growth <= 1.0:
        return 1.0
    return growth ** (-n / (n - 1.0))


_DEEP_TARGET = 1e-3


def _mp_preimage(params: CascadeParams, y: mpf, hi: mpf, want_exact: bool = True):
    """Exact-if-possible preimage of ``y`` under the increasing branch of g.

    Returns ``(x, exact)`` with ``g(x) == y`` bit-exactly at 53-bit precision
    when such an ``x`` exists within a small ulp neighborhood of the
    bisection limit; otherwise the nearest bisection point with ``exact =
    False``.  ``want_exact=False`` skips the ulp scan and settles for the
    bisection limit (a few ulps), which is all the seed extension needs.
    """
    with mp.workprec(53):
        y = mpf(y)
        if y == 0:
            return mpf(0), True
        lo = mpf(0)
        hi = mpf(hi)
        # Deep targets sit at x ~ (theta y)^N; a verified tight bracket
        # skips ~1800 halvings across the exponent range.
        if y < _DEEP_TARGET:
            est = (mpf(params.theta) * y) ** params.N
            blo, bhi = est / 16, est * 16
            if bhi < hi and _g_mp(params, blo) < y < _g_mp(params, bhi):
                lo, hi = blo, bhi
        for _ in range(4000):
            mid = mp.sqrt(lo * hi) if lo > 0 else hi / 2
            if mid <= lo or mid >= hi:
                break
            if _g_mp(params, mid) < y:
                lo = mid
            else:
                hi = mid
            if lo > 0 and hi - lo <= mp.eps * hi * 4:
                break
        center = hi
        if not want_exact:
            return center, False
        step = mpf(2) ** (mp.mag(center) - 54)
        best = None
        for radius in (64, 1024):
            for j in range(-radius, radius + 1):
                cand = center + j * step
                if cand <= 0:
                    continue
                if _g_mp(params, cand) == y:
                    if best is None or abs(cand - center) < abs(best - center):
                        best = cand
            if best is not None:
                return best, True
        return center, False


def exact_threshold_chain(params: CascadeParams, n: int):
    """Thresholds ``a_0 .. a_n`` as 53-bit unbounded-exponent floats.

    ``a_0`` is the preimage of 1 on the increasing branch and each further
    ``a_{k+1}`` the preimage of ``a_k``; the per-step ``exact`` flags state
    whether ``g(a_{k+1})`` reproduces ``a_k`` bit for bit.  Supercritical
    parameters only.
    """
    if classify(params) != SUPERCRITICAL:
        raise ValueError("threshold sequence exists only in the supercritical regime")
    if n < 0:
        raise ValueError("n must be >= 0")
    with mp.workprec(53):
        values = []
        flags = []
        target = mpf(1)
        hi = mpf(u_star(params))
        for _ in range(n + 1):
            x, ok = _mp_preimage(params, target, hi)
            if values and not x < values[-1]:
                raise RuntimeError("threshold chain failed to decrease strictly")
            values.append(x)
            flags.append(ok)
            target = x
            hi = x  # g is increasing on [0, a_k] and a_{k+1} < a_k
        return values, flags


def a_sequence(params: CascadeParams, n: int, tol: float = 1e-13) -> np.ndarray:
    """Float64 projection of the exact threshold chain ``a_0 .. a_n``.

    Entries below the float64 range project to 0.0; the underlying chain is
    strictly decreasing and satisfies ``|g(a_k) - a_{k-1}| <= tol`` (it is
    bit-exact whenever an exact preimage exists).
    """
    values, flags = exact_threshold_chain(params, n)
    with mp.workprec(53):
        for k, (v, ok) in enumerate(zip(values, flags)):
            if not ok:
                prev = mpf(1) if k == 0 else values[k - 1]
                if abs(_g_mp(params, v) - prev) > mpf(tol):
                    raise RuntimeError(
                        f"threshold a_{k} missed its defining identity beyond {tol!r}"
                    )
    return np.array([float(v) for v in values])


def a0(params: CascadeParams, tol: float = 1e-13) -> float:
    """First threshold: the unique ``a`` in (0,1) with ``g(a) = 1``."""
    return float(a_sequence(params, 0, tol)[0])


def g_inverse(params: CascadeParams, y: float, tol: float = 1e-13) -> float:
    """Invert ``g`` on its increasing branch by bisection.

    The branch is [0, 1] in the critical/subcritical regimes and [0, a_0]
    in the supercritical regime; stops at ``|g(x) - y| <= tol``.
    """
    if not (0.0 <= y <= 1.0):
        raise ValueError(f"y = {y!r} outside [0, 1]")
    if y == 0.0:
        return 0.0
    if classify(params) == SUPERCRITICAL:
        top = float(exact_threshold_chain(params, 0)[0][0])
    else:
        top = 1.0
    lo, hi = 0.0, top
    best_x, best_res = top, abs(g_eval(params, top) - y)
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        val = g_eval(params, mid)
        res = abs(val - y)
        if res < best_res:
            best_x, best_res = mid, res
        if res <= tol:
            return mid
        if val < y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-18 * max(hi, 1e-300):
            break
    if best_res <= tol * 10.0:
        return best_x
    raise RuntimeError(
        f"bisection failed to reach residual {tol!r} inverting g at y = {y!r}"
    )


# ---------------------------------------------------------------------------
# explicit supercritical solution
# ---------------------------------------------------------------------------


@dataclass
class CascadeSolution:
    """Explicit supercritical step solution, exact chain plus float curve.

    The survival function is 1 on ``(0, c]`` and ``a_n`` on
    ``(c e^n, c e^{n+1}]``.  ``a`` is the float64 projection of the exact
    53-bit chain ``a_exact``; ``underflow_index`` marks the first threshold
    that is not representable in float64 (``None`` if all are).
    """

    params: CascadeParams
    scale: float
    depth: int
    below: int
    a: np.ndarray
    a_exact: list
    exact_flags: list
    underflow_index: Optional[int]
    curve: SurvivalCurve

    def cells(self):
        """Cell indices ``n`` carried by the curve (values ``a_n`` or 1)."""
        return list(range(-self.below, self.depth + 1))


def explicit_solution(
    params: CascadeParams, scale: float = 1.0, depth: int = 30, below: int = 1
) -> CascadeSolution:
    """Construct the explicit lattice-step solution ``F̄(t/scale)``.

    ``depth`` is the last stored threshold cell and ``below`` the number of
    stored unit cells under the scale point.  Supercritical only.
    """
    if scale <= 0.0 or not math.isfinite(scale):
        raise ValueError("scale must be positive and finite")
    if depth < 0 or below < 1:
        raise ValueError("need depth >= 0 and below >= 1")
    values_mp, flags = exact_threshold_chain(params, depth)
    floats = np.array([float(v) for v in values_mp])
    under = np.nonzero(floats == 0.0)[0]
    underflow_index = int(under[0]) if len(under) else None

    # Lattice points are the right endpoints c e^{n+1} of the cells
    # (c e^n, c e^{n+1}]; residue decomposition keeps them in [1, e) form.
    log_c = math.log(scale)
    kappa = math.floor(log_c)
    residue = math.exp(log_c - kappa)
    if residue >= math.e:  # log rounding at the boundary
        residue = 1.0
        kappa += 1
    m_lo = -below + 1
    m_hi = depth + 1
    cell_values = np.concatenate(
        [np.ones(below), floats]
    )
    curve = SurvivalCurve(
        grid=residue * math.e ** (np.arange(m_lo, m_hi + 1, dtype=np.float64) + kappa),
        values=cell_values,
        mode="lattice-step",
        r=math.e,
        residues=np.array([residue]),
        n_lo=m_lo + kappa,
    )
    return CascadeSolution(
        params, scale, depth, below, floats, values_mp, flags, underflow_index, curve
    )


@dataclass(frozen=True)
class StepIdentityReport:
    """Per-cell residuals of the one-step recursion on a solution/extension."""

    cells: np.ndarray
    residuals: np.ndarray
    max_residual: float
    exact: bool


def step_identity_residual(solution: CascadeSolution) -> StepIdentityReport:
    """Residuals ``|v_{n-1} - g(v_n)|`` over every stored cell, exact chain.

    Computed on the 53-bit unbounded-exponent chain, so double-exponentially
    small thresholds do not fake a zero residual through underflow.
    """
    params = solution.params
    cells = np.arange(-solution.below, solution.depth + 1)
    res = np.empty(len(cells))
    with mp.workprec(53):
        for i, n in enumerate(cells):
            v_n = solution.a_exact[n] if n >= 0 else mpf(1)
            v_prev = solution.a_exact[n - 1] if n >= 1 else mpf(1)
            res[i] = float(abs(v_prev - _g_mp(params, v_n)))
    mx = float(np.max(res)) if len(res) else 0.0
    return StepIdentityReport(cells, res, mx, mx == 0.0)


# ---------------------------------------------------------------------------
# seed extension (critical / subcritical)
# ---------------------------------------------------------------------------


@dataclass
class SeedFunction:
    """Left-continuous nonincreasing step seed on ``(1, e]``.

    ``grid`` must be increasing inside ``(1, e]`` and end exactly at ``e``;
    ``values[j]`` is the value on the cell ending at ``grid[j]``, inside
    (0, 1) strictly.
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grid.ndim != 1 or len(self.grid) == 0:
            raise ValueError("seed grid must be a nonempty 1-d array")
        if self.values.shape != self.grid.shape:
            raise ValueError("seed values and grid must have the same shape")
        if np.any(np.diff(self.grid) <= 0.0):
            raise ValueError("seed grid must be strictly increasing")
        if self.grid[0] <= 1.0 or self.grid[-1] > math.e * (1.0 + 1e-12):
            raise ValueError("seed grid must lie in (1, e]")
        if abs(self.grid[-1] - math.e) > 1e-12:
            raise ValueError("seed grid must end at e (the value f(e) anchors the extension)")
        if np.any(self.values <= 0.0) or np.any(self.values >= 1.0):
            raise ValueError("seed values must lie strictly inside (0, 1)")
        if np.any(np.diff(self.values) > 0.0):
            raise ValueError("seed values must be nonincreasing")

    def at_e(self) -> float:
        return float(self.values[-1])


def seed_defect(params: CascadeParams, seed: SeedFunction) -> float:
    """How far the seed breaks ``f(t) <= g(f(e))``; 0 means admissible."""
    bound = g_eval(params, seed.at_e())
    return max(0.0, float(np.max(seed.values)) - bound)


def extend_from_seed(
    params: CascadeParams,
    seed: SeedFunction,
    n_lo: int = -20,
    n_hi: int = 20,
    tol: float = 1e-13,
) -> SurvivalCurve:
    """Extend a seed on ``(1, e]`` to a lattice-step curve over all cells.

    Cell ``(e^n, e^{n+1}]`` at seed residue ``s`` carries the ``|n|``-fold
    ``g``-iterate (``n < 0``) or ``g``-inverse iterate (``n > 0``) of the
    seed value.  Requires the critical or subcritical regime and an
    admissible seed.
    """
    regime = classify(params)
    if regime == SUPERCRITICAL:
        raise ValueError(
            "seed extension requires the critical or subcritical regime; "
            "supercritical solutions are the explicit scaled step functions"
        )
    defect = seed_defect(params, seed)
    if defect > 0.0:
        raise ValueError(
            f"seed violates f(t) <= g(f(e)) by {defect!r}; not a valid seed"
        )
    if n_lo > 0 or n_hi < 0 or n_lo >= n_hi:
        raise ValueError("need n_lo <= 0 <= n_hi with n_lo < n_hi")

    # Chains per seed point over n in [n_lo - 1, n_hi]; the extra -1 entry
    # serves the residue-1 column, whose exponent is shifted by one.
    ups = -(n_lo - 1)
    downs = n_hi
    chains = []
    with mp.workprec(53):
        for v in seed.values:
            chain = {0: float(v)}
            x = float(v)
            for k in range(1, ups + 1):
                # clip: float rounding near the fixed point 1 can overshoot by an ulp
                x = min(1.0, g_eval(params, min(x, 1.0)))
                chain[-k] = x
            # The inverse chain decays doubly exponentially (x ~ (theta x)^N
            # per step), leaving float64 range after a handful of cells, so a
            # float64 bisection would stall and break monotonicity.  Iterate
            # in unbounded-exponent 53-bit floats and project; cells beyond
            # float range underflow to an honest 0.0, whose one-step residual
            # is the size of the vanished value.
            y = mpf(float(v))
            for k in range(1, downs + 1):
                prev = y
                y = _mp_preimage(params, y, y, want_exact=False)[0]
                if abs(_g_mp(params, y) - prev) > tol:
                    raise RuntimeError(
                        f"inverse chain missed its defining identity beyond {tol!r}"
                    )
                chain[k] = float(y)
            chains.append(chain)

    interior = seed.grid[:-1]  # points strictly inside (1, e)
    residues = np.concatenate([[1.0], interior])
    q = len(residues)
    rows = n_hi - n_lo + 1
    values = np.empty(rows * q)
    for row, m in enumerate(range(n_lo, n_hi + 1)):
        # residue 1.0 at exponent m is the seed point e one cell down
        values[row * q] = chains[-1][m - 1]
        for col, _s in enumerate(interior, start=1):
            values[row * q + col] = chains[col - 1][m]
    grid = np.exp(
        np.add.outer(np.arange(n_lo, n_hi + 1, dtype=np.float64), np.log(residues))
    ).reshape(-1)
    return SurvivalCurve(
        grid=grid,
        values=values,
        mode="lattice-step",
        r=math.e,
        residues=residues,
        n_lo=n_lo,
    )


def restrict_to_seed(curve: SurvivalCurve) -> SeedFunction:
    """Restriction of a lattice-step curve (r = e) to the seed window (1, e]."""
    if curve.mode != "lattice-step" or curve.r is None or abs(curve.r - math.e) > 1e-12:
        raise ValueError("seed restriction needs a lattice-step curve with ratio e")
    if abs(curve.residues[0] - 1.0) > 1e-12:
        raise ValueError("seed restriction needs residue 1 on the curve lattice")
    q = len(curve.residues)
    n0 = -curve.n_lo  # row index of exponent 0
    rows = len(curve.grid) // q
    if n0 < 0 or n0 + 1 >= rows:
        raise ValueError("curve must cover exponents 0 and 1 to restrict")
    interior_vals = curve.values[n0 * q + 1 : (n0 + 1) * q]
    e_val = curve.values[(n0 + 1) * q]  # residue 1 at exponent 1 is the point e
    grid = np.concatenate([curve.residues[1:], [math.e]])
    vals = np.concatenate([interior_vals, [e_val]])
    return SeedFunction(grid, vals)


def curve_step_residuals(params: CascadeParams, curve: SurvivalCurve) -> StepIdentityReport:
    """Float64 one-step residuals ``|v(t/e) - g(v(t)))`` across a lattice curve."""
    if curve.mode != "lattice-step" or curve.r is None or abs(curve.r - math.e) > 1e-12:
        raise ValueError("step residuals need a lattice-step curve with ratio e")
    q = len(curve.residues)
    rows = len(curve.grid) // q
    vals = curve.values.reshape(rows, q)
    res = np.empty(((rows - 1), q))
    for i in range(rows - 1):
        for j in range(q):
            res[i, j] = abs(vals[i, j] - g_eval(params, vals[i + 1, j]))
    cells = np.arange(curve.n_lo, curve.n_lo + rows - 1)
    flat = res.reshape(-1)
    mx = float(np.max(flat)) if len(flat) else 0.0
    return StepIdentityReport(cells, flat, mx, mx == 0.0)


# ---------------------------------------------------------------------------
# escape iteration (uniqueness mechanism)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EscapeReport:
    """Trajectory of ``g``-iterates from a supercritical start value."""

    start: float
    trajectory: np.ndarray
    iterations: int
    exceeded: bool
    reached_one: bool


def escape_check(
    params: CascadeParams, x: float, max_iter: int = 100, tol_one: float = 1e-12
) -> EscapeReport:
    """Iterate ``g`` from ``x`` until the value escapes above 1 or hits 1.

    In the supercritical regime a start strictly between consecutive
    thresholds escapes above 1 (no fixed point can take such a value); a
    start exactly at a threshold walks the chain up to exactly 1 and stays.
    ``reached_one`` means ``|value - 1| <= tol_one`` before any escape.
    """
    if classify(params) != SUPERCRITICAL:
        raise ValueError("escape check applies to the supercritical regime")
    if not (0.0 < x < 1.0):
        raise ValueError("x must lie strictly inside (0, 1)")
    traj = [x]
    cur = x
    exceeded = False
    reached = False
    iters = 0
    for _ in range(max_iter):
        cur = g_eval(params, min(cur, 1.0))
        traj.append(cur)
        iters += 1
        if abs(cur - 1.0) <= tol_one:
            reached = True
            break
        if cur > 1.0:
            exceeded = True
            break
    return EscapeReport(x, np.array(traj), iters, exceeded, reached)


# ---------------------------------------------------------------------------
# modulation recovery
# ---------------------------------------------------------------------------


def extract_modulation(params, curve: SurvivalCurve, phi, alpha: float):
    """Recover the periodic modulation of a subcritical mixture curve.

    Inverts the empirical Laplace transform at each residue value of the
    curve (``h(s) = φ̂^{-1}(F̄(s)) s^{-alpha}``) by monotone bisection.
    Requires every queried value strictly inside (0, 1).
    """
    from .curves import PeriodicModulation  # local import to avoid cycle noise

    if isinstance(params, CascadeParams) and classify(params) != SUBCRITICAL:
        raise ValueError("modulation recovery applies to the subcritical regime")
    if curve.mode != "lattice-step":
        raise ValueError("modulation recovery needs a lattice-step curve")
    q = len(curve.residues)
    n0 = -curve.n_lo
    rows = len(curve.grid) // q
    if n0 < 0 or n0 >= rows:
        raise ValueError("curve must cover exponent 0 to read residue values")
    res_vals = curve.values[n0 * q : (n0 + 1) * q]
    hs = np.empty(q)
    for j, (s, v) in enumerate(zip(curve.residues, res_vals)):
        if not (0.0 < v < 1.0):
            raise ValueError(
                f"curve value {v!r} at residue {s!r} is not strictly inside (0, 1)"
            )
        x = _invert_laplace(phi, float(v))
        hs[j] = x * float(s) ** (-alpha)
    return PeriodicModulation(curve.r, curve.residues.copy(), hs)


def _invert_laplace(phi, v: float, tol: float = 1e-12, max_expand: int = 200) -> float:
    """Solve ``φ̂(x) = v`` for the monotone empirical transform."""
    lo, hi = 0.0, 1.0
    val_hi, _ = phi.evaluate(hi)
    expand = 0
    while val_hi > v:
        lo, hi = hi, hi * 2.0
        val_hi, _ = phi.evaluate(hi)
        expand += 1
        if expand > max_expand:
            raise ValueError(
                f"curve value {v!r} is below the reachable range of the transform"
            )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val, _ = phi.evaluate(mid)
        if abs(val - v) <= tol:
            return mid
        if val > v:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)
