"""Closed-form stopping solutions and Monte Carlo rule evaluation.

Two problems are solved in closed form: selling at a threshold on the
conditional mean (geometric conditional-mean dynamics, discounted net
proceeds at the stop) and quitting a project (additive dynamics, running
discounted conditional-mean profit).  The Monte Carlo side evaluates
arbitrary threshold rules on the conditional mean, either in *fast mode*
(the scalar conditional-mean SDE integrated exactly along the common-noise
path) or in *particle mode* (a full interacting cloud per replication).

Replication ``r`` always draws from ``SeedSequence(master_seed,
spawn_key=(r,))``, so adding replications extends the earlier streams
unchanged and every rule evaluated in one run sees the same paths (exact
common random numbers).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .generator import CylinderFunction, StoppingCandidate
from .model import LevyMeasureSpec, ModelSpec, no_jumps
from .particle import CommonNoisePath, SimulationError, _jump_increments


# ---------------------------------------------------------------------------
# parameter bundles


@dataclass(frozen=True)
class SellParams:
    alpha0: float
    sigma1: float
    sigma2: float
    rho: float
    a: float
    levy: LevyMeasureSpec = field(default_factory=no_jumps)

    def __post_init__(self) -> None:
        if self.sigma1 <= 0:
            raise ValueError("sell model requires sigma1 > 0")
        if self.rho <= 0:
            raise ValueError("discount rate rho must be > 0")
        if self.a <= 0:
            raise ValueError("transaction cost a must be > 0")
        if self.alpha0 >= self.rho:
            raise ValueError("sell model requires alpha0 < rho")


@dataclass(frozen=True)
class QuitParams:
    sigma1: float
    sigma2: float
    gamma0: float = 0.0
    intensity: float = 0.0
    rho: float = 1.0

    def __post_init__(self) -> None:
        if self.sigma1 == 0:
            raise ValueError("quit model requires sigma1 != 0")
        if self.rho <= 0:
            raise ValueError("discount rate rho must be > 0")


@dataclass(frozen=True)
class StoppingRule:
    kind: str                       # threshold_up | threshold_down | fixed_time | never
    threshold: float = math.nan
    fixed_time: float = math.nan
    horizon_cap: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("threshold_up", "threshold_down", "fixed_time", "never"):
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if self.kind.startswith("threshold") and not math.isfinite(self.threshold):
            raise ValueError("threshold rules need a finite threshold")
        if self.kind == "fixed_time" and not (self.fixed_time >= 0):
            raise ValueError("fixed_time rules need a nonnegative time")
        if self.horizon_cap is not None and self.horizon_cap <= 0:
            raise ValueError("horizon_cap must be > 0")


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    replications: int
    truncation_fraction: float


@dataclass(frozen=True)
class SimConfig:
    """Numerical settings for rule evaluation.

    ``start`` is the initial conditional mean (sell) or state (quit);
    ``start_time`` shifts the discounting clock.  ``cap_payoff`` selects how
    horizon-capped paths contribute: ``"stop"`` pays the bequest at the cap,
    ``"zero"`` drops it (diagnostic bound on the truncation bias).
    """

    dt: float
    replications: int
    seed: int
    t_max: float
    mode: str = "fast"              # fast | particle
    n_particles: int = 1000
    start: float | None = None
    start_time: float = 0.0
    cap_payoff: str = "stop"
    workers: int = 1
    batch_size: int = 16384
    block: int = 512
    floor: float = 1e-12

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.t_max < 0 or self.replications < 1:
            raise ValueError("need dt > 0, t_max >= 0, replications >= 1")
        if self.mode not in ("fast", "particle"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.cap_payoff not in ("stop", "zero"):
            raise ValueError(f"unknown cap_payoff {self.cap_payoff!r}")


@dataclass(frozen=True)
class Payoff:
    """Profit rate and bequest; shipped kinds are picklable for worker pools.

    ``kind="sell"``: no running profit, bequest ``e^{-rho t}(m - a)``.
    ``kind="quit"``: running profit ``e^{-rho t} m``, no bequest.
    ``kind="custom"``: explicit callables ``(t_abs, m) -> value``.
    """

    kind: str
    rho: float = 0.0
    a: float = 0.0
    f: Callable | None = None
    g: Callable | None = None

    def build(self) -> tuple[Callable | None, Callable | None]:
        if self.kind == "sell":
            rho, a = self.rho, self.a
            return None, lambda t, m: np.exp(-rho * t) * (m - a)
        if self.kind == "quit":
            rho = self.rho
            return (lambda t, m: np.exp(-rho * t) * m), None
        if self.kind == "custom":
            return self.f, self.g
        raise ValueError(f"unknown payoff kind {self.kind!r}")


def sell_payoff(params: SellParams) -> Payoff:
    return Payoff("sell", rho=params.rho, a=params.a)


def quit_payoff(params: QuitParams) -> Payoff:
    return Payoff("quit", rho=params.rho)


# ---------------------------------------------------------------------------
# closed forms: selling at a threshold


def lambda_roots(alpha0: float, sigma1: float, rho: float) -> tuple[float, float]:
    """Roots of ``alpha0 l + sigma1^2 l (l - 1) / 2 = rho``; returns (neg, pos)."""
    if sigma1 <= 0:
        raise ValueError("sigma1 must be > 0")
    if rho <= 0:
        raise ValueError("rho must be > 0")
    half = 0.5 * sigma1**2
    disc = math.sqrt((alpha0 - half) ** 2 + 2 * rho * sigma1**2)
    lam1 = (half - alpha0 + disc) / sigma1**2
    lam2 = (half - alpha0 - disc) / sigma1**2
    return lam2, lam1


def sell_threshold(lambda1: float, a: float) -> float:
    if lambda1 <= 1:
        raise ValueError("threshold needs lambda1 > 1 (alpha0 < rho)")
    if a <= 0:
        raise ValueError("transaction cost a must be > 0")
    return lambda1 * a / (lambda1 - 1)


def sell_value(s, z, params: SellParams, xi: float | None = None):
    """Discounted value of selling optimally (or at threshold ``xi``)."""
    _, lam1 = lambda_roots(params.alpha0, params.sigma1, params.rho)
    if xi is None:
        xi = sell_threshold(lam1, params.a)
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("conditional mean must be positive for the sell model")
    psi0 = (xi - params.a) / xi**lam1
    out = np.exp(-params.rho * np.asarray(s, float)) * np.where(
        z <= xi, psi0 * z**lam1, z - params.a
    )
    return float(out) if out.ndim == 0 else out


def sell_candidate(params: SellParams, xi: float | None = None) -> StoppingCandidate:
    """Piecewise candidate for the variational-inequality checker."""
    _, lam1 = lambda_roots(params.alpha0, params.sigma1, params.rho)
    if xi is None:
        xi = sell_threshold(lam1, params.a)
    rho, a = params.rho, params.a
    psi0 = (xi - a) / xi**lam1
    continuation = CylinderFunction(
        psi=lambda s: psi0 * np.exp(-rho * s),
        psi_prime=lambda s: -rho * psi0 * np.exp(-rho * s),
        F=lambda z: z**lam1,
        F_prime=lambda z: lam1 * z ** (lam1 - 1),
        F_double_prime=lambda z: lam1 * (lam1 - 1) * z ** (lam1 - 2),
    )
    stopping = CylinderFunction(
        psi=lambda s: np.exp(-rho * s),
        psi_prime=lambda s: -rho * np.exp(-rho * s),
        F=lambda z: z - a,
        F_prime=lambda z: np.ones_like(np.asarray(z, float)) * 1.0,
        F_double_prime=lambda z: np.zeros_like(np.asarray(z, float)) + 0.0,
    )
    return StoppingCandidate(
        continuation=continuation,
        stopping=stopping,
        threshold=xi,
        direction="up",
        g=lambda s, z: np.exp(-rho * s) * (z - a),
        f=None,
        z_floor=0.0,
    )


# ---------------------------------------------------------------------------
# closed forms: quitting a project


def quit_threshold(params: QuitParams) -> tuple[float, float, float]:
    """Decay rate, quit threshold and exponential coefficient.

    ``lam = sqrt(2 rho / sigma1^2)``; the continuity / smooth-pasting system
    at the boundary has the joint solution ``eta* = -1/lam`` with
    ``C1 = -(eta*/rho) e^{lam eta*}``.
    """
    lam = math.sqrt(2 * params.rho / params.sigma1**2)
    eta_star = -1.0 / lam
    c1 = -(eta_star / params.rho) * math.exp(lam * eta_star)
    return lam, eta_star, c1


def quit_smooth_fit_residuals(
    params: QuitParams, eta: float, c1: float
) -> tuple[float, float]:
    """Continuity and C1 pasting residuals at the candidate boundary."""
    lam, _, _ = quit_threshold(params)
    cont = eta / params.rho + c1 * math.exp(-lam * eta)
    slope = 1.0 / params.rho - lam * c1 * math.exp(-lam * eta)
    return cont, slope


def quit_value(s, z, params: QuitParams, eta: float | None = None):
    lam, eta_star, _ = quit_threshold(params)
    if eta is None:
        eta = eta_star
    c1 = -(eta / params.rho) * math.exp(lam * eta)
    z = np.asarray(z, dtype=float)
    cont = z / params.rho + c1 * np.exp(-lam * z)
    out = np.exp(-params.rho * np.asarray(s, float)) * np.where(z >= eta, cont, 0.0)
    return float(out) if out.ndim == 0 else out


def quit_candidate(params: QuitParams, eta: float | None = None) -> StoppingCandidate:
    lam, eta_star, _ = quit_threshold(params)
    if eta is None:
        eta = eta_star
    rho = params.rho
    c1 = -(eta / rho) * math.exp(lam * eta)
    continuation = CylinderFunction(
        psi=lambda s: np.exp(-rho * s),
        psi_prime=lambda s: -rho * np.exp(-rho * s),
        F=lambda z: z / rho + c1 * np.exp(-lam * z),
        F_prime=lambda z: 1.0 / rho - lam * c1 * np.exp(-lam * z),
        F_double_prime=lambda z: lam**2 * c1 * np.exp(-lam * z),
    )
    stopping = CylinderFunction(
        psi=lambda s: np.exp(-rho * s),
        psi_prime=lambda s: -rho * np.exp(-rho * s),
        F=lambda z: np.zeros_like(np.asarray(z, float)) + 0.0,
        F_prime=lambda z: np.zeros_like(np.asarray(z, float)) + 0.0,
        F_double_prime=lambda z: np.zeros_like(np.asarray(z, float)) + 0.0,
    )
    return StoppingCandidate(
        continuation=continuation,
        stopping=stopping,
        threshold=eta,
        direction="down",
        g=lambda s, z: np.zeros_like(np.asarray(z, float)) + 0.0,
        f=lambda s, z: np.exp(-rho * s) * z,
    )


# ---------------------------------------------------------------------------
# conditional-mean reduction oracle


def conditional_mean_oracle(
    spec: ModelSpec, start: float, common: CommonNoisePath
) -> np.ndarray:
    """Exact conditional-mean path along a realized common-noise path.

    Conditioning the state equation on the common-noise filtration kills the
    idiosyncratic Brownian and compensated-jump terms, leaving a scalar SDE
    in the conditional mean driven by B1 alone.
    """
    b1 = common.brownian()
    t = common.times()
    if spec.family == "sell":
        p = spec.params
        return start * np.exp(
            (p["alpha0"] - 0.5 * p["sigma1"] ** 2) * t + p["sigma1"] * b1
        )
    if spec.family == "quit":
        return start + spec.params["sigma1"] * b1
    raise ValueError("conditional-mean oracle supports shipped families only")


# ---------------------------------------------------------------------------
# Monte Carlo engine


def _rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def _start_value(spec: ModelSpec, cfg: SimConfig) -> float:
    return cfg.start if cfg.start is not None else spec.initial_law.mean


def _triggers_now(rule: StoppingRule, m: float) -> bool:
    if rule.kind == "threshold_up":
        return m >= rule.threshold
    if rule.kind == "threshold_down":
        return m <= rule.threshold
    if rule.kind == "fixed_time":
        return rule.fixed_time == 0.0
    return False


def _cap_step(rule: StoppingRule, cfg: SimConfig, n_steps: int) -> int:
    if rule.horizon_cap is None:
        return n_steps
    return min(n_steps, int(round(rule.horizon_cap / cfg.dt)))


class _RuleState:
    """Per-rule bookkeeping over one batch of replications."""

    def __init__(self, rule: StoppingRule, nb: int, cap_step: int):
        self.rule = rule
        self.cap_step = cap_step
        self.alive = np.ones(nb, dtype=bool)
        self.payoff = np.zeros(nb)
        self.fint = np.zeros(nb)
        self.trunc = np.zeros(nb, dtype=bool)


def _fast_batch(spec_or_dict, rules, payoff: Payoff, cfg: SimConfig, lo: int, hi: int):
    spec = (
        ModelSpec.from_dict(spec_or_dict)
        if isinstance(spec_or_dict, dict)
        else spec_or_dict
    )
    nb = hi - lo
    gens = [_rep_rng(cfg.seed, r) for r in range(lo, hi)]
    dt, s0 = cfg.dt, cfg.start_time
    n_steps = int(round(cfg.t_max / dt))
    f, g = payoff.build()
    start = _start_value(spec, cfg)
    if spec.family == "sell":
        if start <= 0:
            raise ValueError("sell fast mode needs a positive start value")
        p = spec.params
        y0 = math.log(start)
        mu_dt = (p["alpha0"] - 0.5 * p["sigma1"] ** 2) * dt
        vol = p["sigma1"] * math.sqrt(dt)
        to_m = np.exp

        def to_y(threshold: float) -> float:
            return math.log(threshold) if threshold > 0 else -math.inf

    elif spec.family == "quit":
        y0 = start
        mu_dt = 0.0
        vol = spec.params["sigma1"] * math.sqrt(dt)

        def to_m(y):
            return y

        def to_y(threshold: float) -> float:
            return threshold

    else:
        raise ValueError("fast mode supports shipped model families only")

    states = [_RuleState(r, nb, _cap_step(r, cfg, n_steps)) for r in rules]
    # time-0 trigger check
    for st in states:
        if _triggers_now(st.rule, start) or st.cap_step == 0:
            st.trunc[:] = st.cap_step == 0 and not _triggers_now(st.rule, start)
            if g is not None and not (st.trunc[0] and cfg.cap_payoff == "zero"):
                st.payoff[:] = g(s0, start)
            st.alive[:] = False

    y = np.full(nb, y0, dtype=float)
    steps_done = 0
    max_steps = max((st.cap_step for st in states), default=0)
    while steps_done < max_steps:
        any_alive = np.zeros(nb, dtype=bool)
        for st in states:
            any_alive |= st.alive
        act = np.flatnonzero(any_alive)
        if act.size == 0:
            break
        K = min(cfg.block, max_steps - steps_done)
        z = np.empty((act.size, K))
        for j, r in enumerate(act):
            z[j] = gens[r].standard_normal(K)
        ypath = y[act, None] + np.cumsum(mu_dt + vol * z, axis=1)
        t0 = steps_done * dt
        m_right = None
        fcum = None
        if f is not None:
            m_right = to_m(ypath)
            m_left = np.concatenate([to_m(y[act])[:, None], m_right[:, :-1]], axis=1)
            t_left = s0 + t0 + dt * np.arange(K)
            fcum = np.cumsum(f(t_left[None, :], m_left) * dt, axis=1)
        for st in states:
            sub = st.alive[act]
            if not sub.any():
                continue
            rows_local = np.flatnonzero(sub)
            rows = act[rows_local]
            klim = min(K, st.cap_step - steps_done)
            rule = st.rule
            if rule.kind == "threshold_up":
                cond = ypath[rows_local, :klim] >= to_y(rule.threshold)
            elif rule.kind == "threshold_down":
                cond = ypath[rows_local, :klim] <= to_y(rule.threshold)
            elif rule.kind == "fixed_time":
                cond = np.zeros((rows_local.size, klim), dtype=bool)
                col = int(round(rule.fixed_time / dt)) - steps_done
                if 1 <= col <= klim:
                    cond[:, col - 1] = True
            else:  # never
                cond = np.zeros((rows_local.size, klim), dtype=bool)
            hit = cond.any(axis=1)
            first = cond.argmax(axis=1)
            taken = np.where(hit, first + 1, klim)
            if f is not None:
                st.fint[rows] += fcum[rows_local, taken - 1]
            if hit.any():
                hl = rows_local[hit]
                hr = rows[hit]
                fi = first[hit]
                tau = t0 + (fi + 1) * dt
                m_tau = to_m(ypath[hl, fi]) if m_right is None else m_right[hl, fi]
                gval = g(s0 + tau, m_tau) if g is not None else 0.0
                st.payoff[hr] = st.fint[hr] + gval
                st.alive[hr] = False
            if steps_done + klim >= st.cap_step:
                left_local = rows_local[~hit]
                left = rows[~hit]
                if left.size:
                    st.trunc[left] = True
                    m_cap = to_m(ypath[left_local, klim - 1])
                    if cfg.cap_payoff == "stop" and g is not None:
                        st.payoff[left] = st.fint[left] + g(s0 + st.cap_step * dt, m_cap)
                    else:
                        st.payoff[left] = st.fint[left]
                    st.alive[left] = False
        y[act] = ypath[:, -1]
        steps_done += K
    return [
        (float(st.payoff.sum()), float((st.payoff**2).sum()), nb, int(st.trunc.sum()))
        for st in states
    ]


def _particle_batch(spec_or_dict, rules, payoff: Payoff, cfg: SimConfig, lo: int, hi: int):
    spec = (
        ModelSpec.from_dict(spec_or_dict)
        if isinstance(spec_or_dict, dict)
        else spec_or_dict
    )
    nb = hi - lo
    gens = [_rep_rng(cfg.seed, r) for r in range(lo, hi)]
    dt, s0, n = cfg.dt, cfg.start_time, cfg.n_particles
    sqdt = math.sqrt(dt)
    n_steps = int(round(cfg.t_max / dt))
    f, g = payoff.build()
    floor = cfg.floor if spec.family == "sell" else None
    states = np.empty((nb, n))
    for j in range(nb):
        states[j] = spec.initial_law.sample(gens[j], n)
    if cfg.start is not None:
        # pin the empirical mean exactly at the requested start value
        states += cfg.start - states.mean(axis=1, keepdims=True)
    m_bar = states.mean(axis=1)
    rs = [_RuleState(r, nb, _cap_step(r, cfg, n_steps)) for r in rules]
    for st in rs:
        done = np.array([_triggers_now(st.rule, m) for m in m_bar]) | (st.cap_step == 0)
        if done.any():
            if g is not None:
                st.payoff[done] = g(s0, m_bar[done])
            st.alive[done] = False

    for k in range(n_steps):
        any_alive = np.zeros(nb, dtype=bool)
        for st in rs:
            any_alive |= st.alive & (st.cap_step > k)
        act = np.flatnonzero(any_alive)
        if act.size == 0:
            break
        t = k * dt
        m_prev = m_bar.copy()
        for j in act:
            rng = gens[j]
            x = states[j]
            mb = m_prev[j]
            dB1 = rng.standard_normal() * sqdt
            dB2 = rng.standard_normal(n) * sqdt
            drift = np.asarray(spec.drift(t, x, mb), float)
            b1 = np.asarray(spec.diffusion_common(t, x, mb), float)
            b2 = np.asarray(spec.diffusion_idio(t, x, mb), float)
            new = x + drift * dt + b1 * dB1 + b2 * dB2 + _jump_increments(
                x, spec, t, mb, dt, rng
            )
            if floor is not None:
                new = np.maximum(new, floor)
            if not np.all(np.isfinite(new)):
                raise SimulationError(f"non-finite state at t={t + dt:.6f}, rep {lo + j}")
            states[j] = new
            m_bar[j] = new.mean()
        tau = (k + 1) * dt
        for st in rs:
            rows = act[st.alive[act]]
            if rows.size == 0:
                continue
            if f is not None:
                st.fint[rows] += f(s0 + t, m_prev[rows]) * dt
            rule = st.rule
            if rule.kind == "threshold_up":
                hit = m_bar[rows] >= rule.threshold
            elif rule.kind == "threshold_down":
                hit = m_bar[rows] <= rule.threshold
            elif rule.kind == "fixed_time":
                hit = np.full(rows.size, int(round(rule.fixed_time / dt)) == k + 1)
            else:
                hit = np.zeros(rows.size, dtype=bool)
            hr = rows[hit]
            if hr.size:
                gval = g(s0 + tau, m_bar[hr]) if g is not None else 0.0
                st.payoff[hr] = st.fint[hr] + gval
                st.alive[hr] = False
            if k + 1 >= st.cap_step:
                left = rows[~hit]
                if left.size:
                    st.trunc[left] = True
                    if cfg.cap_payoff == "stop" and g is not None:
                        st.payoff[left] = st.fint[left] + g(s0 + tau, m_bar[left])
                    else:
                        st.payoff[left] = st.fint[left]
                    st.alive[left] = False
    return [
        (float(st.payoff.sum()), float((st.payoff**2).sum()), nb, int(st.trunc.sum()))
        for st in rs
    ]


def _batches(reps: int, batch_size: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + batch_size, reps)) for lo in range(0, reps, batch_size)]


def _run_rules(
    spec: ModelSpec, rules: Sequence[StoppingRule], payoff: Payoff, cfg: SimConfig
) -> list[McEstimate]:
    worker = _fast_batch if cfg.mode == "fast" else _particle_batch
    parts = _batches(cfg.replications, cfg.batch_size)
    if cfg.workers > 1 and len(parts) > 1:
        if payoff.kind == "custom":
            raise ValueError("custom payoffs cannot run on worker pools")
        spec_arg = spec.to_dict()
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [
                pool.submit(worker, spec_arg, tuple(rules), payoff, cfg, lo, hi)
                for lo, hi in parts
            ]
            results = [fut.result() for fut in futures]
    else:
        results = [worker(spec, tuple(rules), payoff, cfg, lo, hi) for lo, hi in parts]
    out = []
    for i in range(len(rules)):
        total = sum(r[i][0] for r in results)
        total_sq = sum(r[i][1] for r in results)
        count = sum(r[i][2] for r in results)
        trunc = sum(r[i][3] for r in results)
        mean = total / count
        var = max(0.0, (total_sq - count * mean * mean) / max(1, count - 1))
        out.append(McEstimate(mean, math.sqrt(var / count), count, trunc / count))
    return out


def evaluate_rule_mc(
    spec: ModelSpec, rule: StoppingRule, payoff: Payoff, cfg: SimConfig
) -> McEstimate:
    """Monte Carlo estimate of the performance of one stopping rule."""
    return _run_rules(spec, [rule], payoff, cfg)[0]


@dataclass(frozen=True)
class SweepResult:
    thresholds: tuple[float, ...]
    estimates: tuple[McEstimate, ...]
    argmax_threshold: float

    def rows(self):
        return list(zip(self.thresholds, self.estimates))


def threshold_sweep(
    spec: ModelSpec,
    thresholds: Sequence[float],
    payoff: Payoff,
    cfg: SimConfig,
    kind: str = "threshold_up",
) -> SweepResult:
    """Evaluate one threshold rule per grid value on common random numbers."""
    rules = [StoppingRule(kind, threshold=float(t)) for t in thresholds]
    estimates = _run_rules(spec, rules, payoff, cfg)
    best = int(np.argmax([e.mean for e in estimates]))
    return SweepResult(
        tuple(float(t) for t in thresholds), tuple(estimates), float(thresholds[best])
    )


@dataclass(frozen=True)
class DynkinResult:
    residual: float          # E[phi(Y at exit-or-horizon)] + E[int f] - phi(start)
    std_error: float
    per_unit_time: float
    estimate: McEstimate


def dynkin_residual(
    spec: ModelSpec,
    candidate: StoppingCandidate,
    cfg: SimConfig,
    delta: float,
) -> DynkinResult:
    """Martingale drift diagnostic for a candidate value along the flow.

    Paths start inside the candidate's continuation region and run for a
    short horizon ``delta``, stopped at the first grid time outside the
    region.  If the candidate solves the continuation-region equation the
    residual is zero in expectation.
    """
    exit_kind = "threshold_up" if candidate.direction == "up" else "threshold_down"
    rule = StoppingRule(exit_kind, threshold=candidate.threshold)
    payoff = Payoff(
        "custom",
        f=(lambda t, m: candidate.f(t, m)) if candidate.f is not None else None,
        g=lambda t, m: candidate.value(t, m),
    )
    run_cfg = replace(cfg, t_max=delta, cap_payoff="stop", workers=1)
    est = evaluate_rule_mc(spec, rule, payoff, run_cfg)
    start = _start_value(spec, run_cfg)
    residual = est.mean - candidate.value(run_cfg.start_time, start)
    return DynkinResult(residual, est.std_error, residual / delta, est)
