"""Empirical laboratory: multiplicative state-space-collapse experiments,
near-optimality audits, and the input-queued-switch structural suites.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .arrivals import ArrivalModel, derive_rng
from .fluid import FluidTrajectory
from .geometry import critically_loaded, enumerate_dual_vertices, to_fraction
from .lift import LyapunovSpec, lift
from .model import NetworkModel
from .policy import Policy
from .sim import rescale, run


class NoRoot(ValueError):
    """The scalar balance equation has no root in its bracket (the workload
    vector is not in the invariant image)."""


# ---------------------------------------------------------------------------
# multiplicative state-space collapse
# ---------------------------------------------------------------------------


@dataclass
class MsscConfig:
    """One collapse experiment: diffusion scales, replications, thresholds.

    ``qhat0`` must pass the invariant-state test for (lam, weight); initial
    queue contents for scale r are r * qhat0. ``gamma`` (optional) probes
    the heavy-traffic sequence lam^r = lam - gamma / r; results under it are
    labeled probes, since the proven statement only needs lam^r -> lam.
    """

    model: NetworkModel
    policy: Policy
    lam: Sequence
    clvr: list
    spec: LyapunovSpec
    qhat0: np.ndarray
    r_list: list[int]
    T: float = 1.0
    reps: int = 20
    master_seed: int = 0
    grid_points: int = 200
    gamma: Optional[np.ndarray] = None
    sub_asymptotic_r: int = 4
    arrival_kind: str = "bernoulli"  # or "deterministic"

    def arrival_for(self, r: int) -> ArrivalModel:
        lam_f = np.array([float(to_fraction(v)) for v in self.lam])
        if self.gamma is not None:
            lam_f = np.maximum(lam_f - np.asarray(self.gamma, dtype=float) / r, 0.0)
        if self.arrival_kind == "deterministic":
            return ArrivalModel.deterministic(lam_f)
        return ArrivalModel.bernoulli(lam_f)


@dataclass
class CollapseReport:
    """Per-(r, replication) collapse ratios with per-r aggregates.

    ratio = sup_t |qhat(t) - lift(qhat(t))| / (sup_t |qhat(t)| or 1), the
    numerator taken over a subsampled grid (a lower bound on the true sup,
    reported as such) and the denominator over every simulated slot.
    """

    rows: list[tuple[int, int, float]]
    median_by_r: dict[int, float]
    p90_by_r: dict[int, float]
    trivial_lift: bool
    flags: dict = field(default_factory=dict)

    def medians_decreasing(self) -> bool:
        meds = [self.median_by_r[r] for r in sorted(self.median_by_r)]
        return all(b < a for a, b in zip(meds, meds[1:]))


def _mssc_cell(cfg: MsscConfig, ri: int, r: int, rep: int) -> tuple[int, int, float]:
    """One (scale, replication) cell; RNG stream derives from the indices,
    so cells are order-independent and safe to fan out."""
    horizon = int(math.ceil(r * r * cfg.T))
    arr = cfg.arrival_for(r)
    rng = derive_rng(cfg.master_seed, ri, rep)
    path = run(
        cfg.model,
        cfg.policy,
        arr,
        r * cfg.qhat0,
        horizon,
        rng,
        record_every=max(1, horizon // (4 * cfg.grid_points)),
    )
    scaled = rescale(path, "diffusion", r, cfg.T, num=cfg.grid_points)
    mu = None
    worst = 0.0
    for k in range(scaled.q.shape[0]):
        res = lift(cfg.model, cfg.lam, cfg.spec, cfg.clvr, scaled.q[k], mu0=mu)
        mu = res.multipliers
        worst = max(worst, float(np.abs(scaled.q[k] - res.r_star).max(initial=0.0)))
    denom = max(path.sup_q / r, 1.0)
    return (r, rep, worst / denom)


def mssc_experiment(cfg: MsscConfig, threads: int = 1) -> CollapseReport:
    """Simulate r^2 T slots per scale from Q(0) = r*qhat0, diffusion-rescale,
    and measure the relative sup distance to the lifting map. Replications
    may fan out over ``threads`` workers; the report merges in sorted
    (r, rep) order regardless."""
    trivial = len(cfg.clvr) == 0
    cells = [
        (ri, r, rep)
        for ri, r in enumerate(sorted(cfg.r_list))
        for rep in range(cfg.reps)
    ]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = sorted(pool.map(lambda c: _mssc_cell(cfg, *c), cells))
    else:
        rows = sorted(_mssc_cell(cfg, *c) for c in cells)
    med = {}
    p90 = {}
    for r in sorted(set(cfg.r_list)):
        vals = np.array([ratio for rr, _, ratio in rows if rr == r])
        med[r] = float(np.median(vals))
        p90[r] = float(np.percentile(vals, 90))
    flags = {}
    if trivial:
        flags["trivial_lift"] = "no critically loaded resources; ratios measure sup|qhat| only"
    small = [r for r in cfg.r_list if r <= cfg.sub_asymptotic_r]
    if small:
        flags["sub_asymptotic"] = f"scales {sorted(small)} are too small to be meaningful"
    if cfg.gamma is not None:
        flags["heavy_traffic_probe"] = "lam^r = lam - gamma/r is a probe beyond the proven regime"
    return CollapseReport(rows=rows, median_by_r=med, p90_by_r=p90, trivial_lift=trivial, flags=flags)


# ---------------------------------------------------------------------------
# near-optimality of fluid trajectories
# ---------------------------------------------------------------------------


@dataclass
class NearOptimalityReport:
    upper_factor: float
    upper_violation: list[float]  # per trajectory, max of 1.q(t) - factor*1.q(0)
    lower_violation: Optional[list[float]]  # None when complete loading fails
    complete_loading: bool


def near_optimality_audit(
    model: NetworkModel,
    alpha: float,
    trajectories: Sequence[FluidTrajectory],
    complete_loading: bool,
) -> NearOptimalityReport:
    """Audit total-work bounds along fluid trajectories.

    Upper bound (max-weight runs): 1.q(t) <= N^(alpha/(1+alpha)) * 1.q(0).
    Lower bound (any policy, only under complete loading):
    1.q(t) >= 1.q(0). Violations should be O(h).
    """
    n = model.n_queues
    factor = float(n) ** (alpha / (1.0 + alpha))
    upper = []
    lower = [] if complete_loading else None
    for traj in trajectories:
        tot = traj.q.sum(axis=1)
        upper.append(float((tot - factor * tot[0]).max(initial=0.0)))
        if complete_loading:
            lower.append(float((tot[0] - tot).max(initial=0.0)))
    return NearOptimalityReport(
        upper_factor=factor,
        upper_violation=upper,
        lower_violation=lower,
        complete_loading=complete_loading,
    )


# ---------------------------------------------------------------------------
# 2x2 input-queued switch workload geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Iq2x2Workload:
    """Reduced workload coordinates (w1_, w_1, w__) of a 2x2 switch state:
    row-1 workload, column-1 workload, total. Row 2 and column 2 follow as
    w__ - w1_ and w__ - w_1."""

    w1: float  # row 1
    wc1: float  # column 1
    total: float

    def __post_init__(self) -> None:
        if not (0 <= self.w1 <= self.total and 0 <= self.wc1 <= self.total):
            raise ValueError("need 0 <= w1_, w_1 <= total workload")

    @property
    def w2(self) -> float:
        return self.total - self.w1

    @property
    def wc2(self) -> float:
        return self.total - self.wc1

    @staticmethod
    def of_state(q) -> "Iq2x2Workload":
        q = np.asarray(q, dtype=float).reshape(2, 2)
        return Iq2x2Workload(w1=float(q[0].sum()), wc1=float(q[:, 0].sum()), total=float(q.sum()))


def iq2x2_membership(w: Iq2x2Workload, alpha: float) -> bool:
    """Closed-form membership of w in the invariant workload image:
    w_i. + w_.j + (w_i.^a + w_.j^a)^(1/a) >= w_.. for all i, j in {1,2}.

    The power mean degenerates to max() when a coordinate is zero; that
    case is evaluated exactly, and the comparison carries a relative
    1e-12 guard so exactly-tight boundary points do not flip on float
    round-off.
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    for wi in (w.w1, w.w2):
        for wj in (w.wc1, w.wc2):
            if wi == 0.0 or wj == 0.0:
                mean = max(wi, wj)
            else:
                mean = (wi**alpha + wj**alpha) ** (1.0 / alpha)
            if wi + wj + mean < w.total - 1e-12 * (1.0 + w.total):
                return False
    return True


def _theta(x: float, w: Iq2x2Workload, alpha: float) -> float:
    # bases are >= 0 for x in the bracket; clamp float round-off
    p = lambda v: max(v, 0.0) ** alpha
    return p(x) + p(w.total - w.w1 - w.wc1 + x) - p(w.w1 - x) - p(w.wc1 - x)


def iq2x2_theta_bracket(w: Iq2x2Workload) -> tuple[float, float]:
    """Feasible x interval for the balance equation."""
    return max(0.0, w.w1 + w.wc1 - w.total), min(w.w1, w.wc1)


def iq2x2_root_exists(w: Iq2x2Workload, alpha: float) -> bool:
    """Brute existence check: theta is increasing, so a root exists iff
    theta <= 0 at the lower bracket end and >= 0 at the upper."""
    lo, hi = iq2x2_theta_bracket(w)
    if lo > hi:
        return False
    return _theta(lo, w, alpha) <= 0.0 <= _theta(hi, w, alpha)


def iq2x2_invariant_solve(w: Iq2x2Workload, alpha: float, tol: float = 1e-12) -> np.ndarray:
    """Invert the workload map on the invariant set by bisection.

    Returns q = [[x, w1_-x], [w_1-x, w__-w1_-w_1+x]] with
    q11^a + q22^a = q12^a + q21^a. Raises NoRoot iff membership fails.
    """
    lo, hi = iq2x2_theta_bracket(w)
    if lo > hi or not iq2x2_root_exists(w, alpha):
        raise NoRoot(f"workload {w} is not in the invariant image at alpha={alpha}")
    f_lo = _theta(lo, w, alpha)
    f_hi = _theta(hi, w, alpha)
    if f_lo == 0.0:
        x = lo
    elif f_hi == 0.0:
        x = hi
    else:
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            f_mid = _theta(mid, w, alpha)
            if f_mid <= 0.0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= tol * max(1.0, hi):
                break
        x = 0.5 * (lo + hi)
    q = np.array([[x, w.w1 - x], [w.wc1 - x, w.total - w.w1 - w.wc1 + x]])
    return np.maximum(q, 0.0)


@dataclass
class AlphaMonotonicityReport:
    alphas: list[float]
    nested: bool
    strict_witnesses: dict  # (alpha_hi, alpha_lo) -> workload triple
    grid_size: int


def alpha_monotonicity_probe(
    alphas: Sequence[float],
    w_grid: Optional[Sequence[Iq2x2Workload]] = None,
) -> AlphaMonotonicityReport:
    """Verify the invariant workload image grows as alpha decreases.

    For each consecutive pair alpha_hi > alpha_lo, checks membership nesting
    on the grid and records a witness workload that is a member at alpha_lo
    but not at alpha_hi.
    """
    alphas = [float(a) for a in alphas]
    if any(b >= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be strictly decreasing")
    if w_grid is None:
        w_grid = default_workload_grid()
    nested = True
    witnesses: dict = {}
    for a_hi, a_lo in zip(alphas, alphas[1:]):
        for w in w_grid:
            m_hi = iq2x2_membership(w, a_hi)
            m_lo = iq2x2_membership(w, a_lo)
            if m_hi and not m_lo:
                nested = False
            if m_lo and not m_hi and (a_hi, a_lo) not in witnesses:
                witnesses[(a_hi, a_lo)] = (w.w1, w.wc1, w.total)
    return AlphaMonotonicityReport(
        alphas=alphas,
        nested=nested,
        strict_witnesses=witnesses,
        grid_size=len(w_grid),
    )


def default_workload_grid(step: float = 0.1, w_max: float = 2.0, tot_max: float = 6.0):
    """Grid over (w1_, w_1) in [0, w_max]^2 and totals in [0, tot_max]."""
    vals = np.arange(0.0, w_max + step / 2, step)
    tots = np.arange(0.0, tot_max + step / 2, step)
    out = []
    for w1 in vals:
        for wc1 in vals:
            for tot in tots:
                if tot >= max(w1, wc1):
                    out.append(Iq2x2Workload(float(w1), float(wc1), float(tot)))
    return out


# ---------------------------------------------------------------------------
# matching structure checks (input-queued switches)
# ---------------------------------------------------------------------------


def _matchings(m: int) -> list[np.ndarray]:
    out = []
    for perm in sorted(itertools.permutations(range(m))):
        mat = np.zeros((m, m))
        for i, j in enumerate(perm):
            mat[i, j] = 1.0
        out.append(mat)
    return out


@dataclass
class MatchingChecksReport:
    m: int
    closure_samples: int
    closure_violations: int
    coverage_samples: int
    coverage_violations: int

    @property
    def ok(self) -> bool:
        return self.closure_violations == 0 and self.coverage_violations == 0


def matching_structure_checks(
    m: int,
    samples: int,
    seed: int,
    model: Optional[NetworkModel] = None,
    coverage_samples: int = 100,
    weight_tol: float = 1e-7,
) -> MatchingChecksReport:
    """Two structural facts about max-weight matchings, brute-forced.

    Closure: for random integer weight matrices, every matching supported
    inside the union of max-weight matchings is itself max-weight (exact
    integer arithmetic). Coverage: for invariant states of MW-alpha under a
    strictly positive doubly stochastic rate matrix, every queue lies in
    some max-weight matching of q^alpha (within weight_tol, since invariant
    states are produced numerically by the lift solver).
    """
    if m > 4:
        raise ValueError("brute force over matchings supports M <= 4")
    matchings = _matchings(m)
    rng = derive_rng(seed)
    closure_bad = 0
    for _ in range(samples):
        x = rng.integers(0, 7, size=(m, m)).astype(float)
        weights = np.array([float((pi * x).sum()) for pi in matchings])
        top = weights.max()
        support = np.zeros((m, m), dtype=bool)
        for pi, wt in zip(matchings, weights):
            if wt == top:
                support |= pi > 0
        for pi, wt in zip(matchings, weights):
            if np.all(support[pi > 0]) and wt != top:
                closure_bad += 1
                break

    # invariant states via the lifting map under uniform rates
    from . import presets  # local import to avoid a cycle

    sw = model if model is not None else presets.iq_switch(m)
    vrs = enumerate_dual_vertices(sw)
    lam = [Fraction(1, m)] * (m * m)
    clvr, _ = critically_loaded(sw, lam, vrs)
    alpha = 1.0
    spec = LyapunovSpec.power(alpha)
    coverage_bad = 0
    for _ in range(coverage_samples):
        q0 = rng.random(m * m) * 3.0
        inv_state = lift(sw, lam, spec, clvr, q0).r_star.reshape(m, m)
        xw = inv_state**alpha
        weights = np.array([float((pi * xw).sum()) for pi in matchings])
        top = weights.max()
        covered = np.zeros((m, m), dtype=bool)
        for pi, wt in zip(matchings, weights):
            if wt >= top - weight_tol * (1.0 + abs(top)):
                covered |= pi > 0
        if not covered.all():
            coverage_bad += 1
    return MatchingChecksReport(
        m=m,
        closure_samples=samples,
        closure_violations=closure_bad,
        coverage_samples=coverage_samples,
        coverage_violations=coverage_bad,
    )
