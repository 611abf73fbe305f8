"""Model predictive robustness by Monte Carlo sampling of ego futures.

The value of a predicate at step k is the signed share of sampled terminal
states that agree with the predicate: +|compliant|/N when the predicate
holds now, -|non-compliant|/N otherwise.

Longitudinal futures are quartic polynomials to a sampled terminal speed
(terminal acceleration zero). Lateral futures are quintic polynomials to a
sampled terminal offset and lateral speed; below the switching speed the
lateral polynomial is parameterised by longitudinal progress instead of
time, so a vehicle that does not move forward cannot move sideways.
"""
from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from . import predicates as P
from .stl import Formula
from .stl.semantics import EPS, Evaluator, _RobDomain
from .world_model import Scenario

log = logging.getLogger(__name__)


class HorizonExceeded(ValueError):
    pass


@dataclass(frozen=True)
class SampleConfig:
    n_samples: int = 1500
    horizon_pred: float = 1.56
    v_window: float = 17.25
    d_window_high: float = 5.0
    d_window_low: float = 1.5
    d_dot_window_high: float = 3.0
    d_dot_window_low: float = 0.2
    v_switch: float = 4.0
    rng_seed: int = 0
    max_oversample: int = 10
    strict_horizon: bool = False

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.horizon_pred <= 0:
            raise ValueError("horizon_pred must be positive")

    def steps(self, dt: float) -> int:
        return max(1, math.ceil(self.horizon_pred / dt - 1e-9))

    @classmethod
    def from_mapping(cls, m: dict) -> "SampleConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in m.items() if k in known})


@dataclass(frozen=True)
class RobustnessEstimate:
    value: float
    compliant_count: int
    total_count: int
    truth: bool


@dataclass
class SampleSet:
    """Terminal states of the sampled futures, one array entry per sample."""
    s: np.ndarray
    s_dot: np.ndarray
    s_ddot: np.ndarray
    d: np.ndarray
    d_dot: np.ndarray
    step: int
    low_speed: bool
    diagnostics: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.s)


def _stream(seed: int, k: int, tag: str) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(k), zlib.crc32(tag.encode())])
    return np.random.default_rng(ss)


def _quartic(s0, v0, a0, v_t, T, t):
    """Position, speed, acceleration at times t (columns) for each sample (rows)."""
    c4 = -(v_t - v0 - a0 * T / 2) / (2 * T ** 3)
    c3 = (-a0 - 12 * c4 * T ** 2) / (6 * T)
    c4, c3 = c4[:, None], c3[:, None]
    s = s0 + v0 * t + a0 / 2 * t ** 2 + c3 * t ** 3 + c4 * t ** 4
    v = v0 + a0 * t + 3 * c3 * t ** 2 + 4 * c4 * t ** 3
    a = a0 + 6 * c3 * t + 12 * c4 * t ** 2
    return s, v, a


def _quintic(x0, x1, x2, xt, xt1, T, t):
    """Quintic from (x0, x0', x0'') to (xt, xt', 0) over [0, T], evaluated at t."""
    T = np.asarray(T, dtype=float)
    T = np.broadcast_to(T, np.shape(xt)).copy()
    T = np.where(T < 1e-9, 1e-9, T)
    r0 = xt - (x0 + x1 * T + x2 / 2 * T ** 2)
    r1 = xt1 - (x1 + x2 * T)
    r2 = -x2 + np.zeros_like(T)
    c3 = (10 * r0 - 4 * r1 * T + r2 * T ** 2 / 2) / T ** 3
    c4 = (-15 * r0 + 7 * r1 * T - r2 * T ** 2) / T ** 4
    c5 = (6 * r0 - 3 * r1 * T + r2 * T ** 2 / 2) / T ** 5
    c3, c4, c5 = c3[:, None], c4[:, None], c5[:, None]
    x = x0 + x1 * t + x2 / 2 * t ** 2 + c3 * t ** 3 + c4 * t ** 4 + c5 * t ** 5
    dx = x1 + x2 * t + 3 * c3 * t ** 2 + 4 * c4 * t ** 3 + 5 * c5 * t ** 4
    return x, dx


def _draw(sc: Scenario, k: int, cfg: SampleConfig, n: int, rng: np.random.Generator):
    x = sc.ego_trajectory.states[k]
    n_steps = cfg.steps(sc.dt)
    T = n_steps * sc.dt
    t = np.arange(1, n_steps + 1) * sc.dt
    low = x.s_dot < cfg.v_switch
    v_lo, v_hi = max(0.0, x.s_dot - cfg.v_window), x.s_dot + cfg.v_window
    dw = cfg.d_window_low if low else cfg.d_window_high
    ddw = cfg.d_dot_window_low if low else cfg.d_dot_window_high
    v_t = rng.uniform(v_lo, v_hi, n) if v_hi > v_lo else np.full(n, v_lo)
    d_t = x.d + (rng.uniform(-dw, dw, n) if dw > 0 else np.zeros(n))
    dd_t = rng.uniform(-ddw, ddw, n) if ddw > 0 else np.zeros(n)
    s, v, a = _quartic(x.s, x.s_dot, x.s_ddot, v_t, T, t)
    if low:
        # lateral motion as a function of longitudinal progress
        prog = s - x.s
        total = prog[:, -1]
        slope_t = dd_t / np.maximum(v_t, 1.0)
        d, dds = _quintic(x.d, 0.0, 0.0, d_t, slope_t, total, prog)
        moving = total > 1e-6
        d = np.where(moving[:, None], d, x.d)
        d_dot = np.where(moving[:, None], dds * v, 0.0)
    else:
        d, d_dot = _quintic(x.d, x.d_dot, 0.0, d_t, dd_t, T, np.broadcast_to(t, s.shape))
    return s, v, a, d, d_dot, low


def _feasible(sc: Scenario, v, a, d_dot, tol=1e-9):
    b = sc.state_bounds
    ok = (v >= b.s_dot.lo - tol) & (v <= b.s_dot.hi + tol)
    ok &= (a >= b.s_ddot.lo - tol) & (a <= b.s_ddot.hi + tol)
    ok &= (d_dot >= b.d_dot.lo - tol) & (d_dot <= b.d_dot.hi + tol)
    return ok.all(axis=1)


def sample_futures(sc: Scenario, k: int, cfg: SampleConfig = SampleConfig(), tag: str = "") -> SampleSet:
    """Terminal states of cfg.n_samples bound-respecting futures from step k.

    Samples that leave the state bounds along the way are rejected and
    redrawn; after max_oversample * n_samples draws the set is returned
    short with a diagnostic.
    """
    n_steps = cfg.steps(sc.dt)
    if not 0 <= k <= sc.horizon:
        raise IndexError(f"step {k} outside [0, {sc.horizon}]")
    if k + n_steps > sc.horizon and cfg.strict_horizon:
        raise HorizonExceeded(f"step {k} + {n_steps} exceeds horizon {sc.horizon}")
    rng = _stream(cfg.rng_seed, k, tag)
    kept = []
    need, drawn = cfg.n_samples, 0
    budget = cfg.max_oversample * cfg.n_samples
    low = False
    rate = 0.5
    while need > 0 and drawn < budget:
        batch = min(budget - drawn, max(int(need / rate * 1.2) + 1, 64))
        s, v, a, d, d_dot, low = _draw(sc, k, cfg, batch, rng)
        drawn += batch
        ok = _feasible(sc, v, a, d_dot)
        rate = max(ok.mean(), 1.0 / cfg.max_oversample)
        idx = np.flatnonzero(ok)[:need]
        if idx.size:
            kept.append(np.stack([s[idx, -1], v[idx, -1], a[idx, -1], d[idx, -1], d_dot[idx, -1]]))
            need -= idx.size
    diag = []
    if kept:
        arr = np.concatenate(kept, axis=1)
    else:
        arr = np.empty((5, 0))
    if need > 0:
        diag.append(f"only {arr.shape[1]} of {cfg.n_samples} samples respect the bounds")
        log.debug(diag[-1])
    if k + n_steps > sc.horizon:
        diag.append("obstacle states beyond the horizon are extrapolated")
    return SampleSet(arr[0], arr[1], arr[2], arr[3], arr[4], k + n_steps, low, diag)


def mpr_robustness(pred_id: str, sc: Scenario, k: int, obstacle: str | None = None,
                   cfg: SampleConfig = SampleConfig(), samples: SampleSet | None = None) -> RobustnessEstimate:
    """Signed share of sampled futures from step k that agree with the predicate.

    The futures do not depend on the predicate, so callers evaluating several
    predicates at one step may pass a shared sample set.
    """
    pd = P.get(pred_id)
    obs_now = P.obstacle_view(sc, obstacle, k) if pd.needs_obstacle else None
    truth = bool(P.margin_of(pred_id, sc, sc.ego_trajectory.states[k], k, obs_now) > 0)
    if samples is None:
        samples = sample_futures(sc, k, cfg)
    total = len(samples)
    if total == 0:
        return RobustnessEstimate(EPS if truth else -EPS, 0, 0, truth)
    obs_then = P.obstacle_view(sc, obstacle, samples.step) if pd.needs_obstacle else None
    ego = SimpleNamespace(s=samples.s, s_dot=samples.s_dot, s_ddot=samples.s_ddot,
                          d=samples.d, d_dot=samples.d_dot)
    compliant = int(np.count_nonzero(P.margin_of(pred_id, sc, ego, samples.step, obs_then) > 0))
    if truth:
        value = compliant / total
    else:
        value = -(total - compliant) / total
    if value == 0.0:
        value = EPS if truth else -EPS
    return RobustnessEstimate(value, compliant, total, truth)


class MPRSignal:
    """Signal view whose robustness channel is model predictive robustness.

    Truth values come from the predicate margins on the recorded trajectory,
    so eval agrees with TraceSignal.
    """

    def __init__(self, sc: Scenario, cfg: SampleConfig = SampleConfig(), obstacle: str | None = None):
        self.sc = sc
        self.cfg = cfg
        self.obstacle = obstacle
        self.trace = P.TraceSignal(sc, obstacle)
        self.length = self.trace.length
        self._cache: dict[tuple[str, int], float] = {}
        self._samples: dict[int, SampleSet] = {}

    def samples(self, k: int) -> SampleSet:
        if k not in self._samples:
            self._samples[k] = sample_futures(self.sc, k, self.cfg)
        return self._samples[k]

    def eval(self, pred_id: str, k: int) -> bool:
        return self.trace.eval(pred_id, k)

    def rob(self, pred_id: str, k: int) -> float:
        key = (pred_id, k)
        r = self._cache.get(key)
        if r is None:
            r = mpr_robustness(pred_id, self.sc, k, self.obstacle, self.cfg, self.samples(k)).value
            self._cache[key] = r
        return r


def proposition_robustness(prop, sc: Scenario, window: tuple[int, int],
                           cfg: SampleConfig = SampleConfig(), signal=None) -> float:
    """Robustness of the proposition's subformula at the window start."""
    tv, h = window
    if tv > h:
        raise ValueError("window start after its end")
    f: Formula = getattr(prop, "subformula", prop)
    sig = signal if signal is not None else MPRSignal(sc, cfg)
    return float(Evaluator(_RobDomain(sig), sig.length)(f, tv))


def extract_features(sc: Scenario, k: int, pred_id: str | None = None, obstacle: str | None = None) -> dict:
    """Feature vector for a learned robustness model at step k."""
    x = sc.ego_trajectory.states[k]
    road = sc.road
    intersection = road.intersection_interval is not None or bool(road.stop_lines)
    feats = {
        "location": "intersection" if intersection else "interstate",
        "ego_length": sc.ego_length, "ego_width": sc.ego_width,
        "ego_s": x.s, "ego_s_dot": x.s_dot, "ego_s_ddot": x.s_ddot, "ego_s_dddot": x.s_dddot,
        "ego_d": x.d, "ego_d_dot": x.d_dot,
        "ego_lane_left": float(road.lane_left(x.s)) - x.d,
        "ego_lane_right": x.d - float(road.lane_right(x.s)),
    }
    if k < sc.horizon:
        u = sc.ego_trajectory.inputs[k]
        feats.update(ego_u_long=u.u_long, ego_u_lat=u.u_lat)
    if pred_id is not None:
        pd = P.get(pred_id)
        obs = P.obstacle_view(sc, obstacle, k) if pd.needs_obstacle else None
        feats["characteristic"] = 1.0 if P.margin_of(pred_id, sc, x, k, obs) > 0 else -1.0
    if intersection:
        if road.intersection_interval is not None:
            feats["ego_s_entry"] = road.intersection_interval[0] - x.s
            feats["ego_s_exit"] = road.intersection_interval[1] - x.s
        ahead = [l - x.s for l in road.stop_lines if l >= x.s]
        feats["ego_s_stop"] = min(ahead) if ahead else 1000.0
    else:
        feats["ego_road_left"] = float(road.road_left(x.s)) - x.d
        feats["ego_road_right"] = x.d - float(road.road_right(x.s))
    ov = P.obstacle_view(sc, obstacle, k) if sc.obstacles else None
    if ov is not None:
        o, xo = ov
        feats.update(obs_length=o.length, obs_width=o.width, obs_s=xo.s, obs_s_dot=xo.s_dot,
                     obs_d=xo.d, obs_d_dot=xo.d_dot)
        if o.frame == "ego_path":
            feats.update(delta_s=xo.s - x.s, delta_d=xo.d - x.d,
                         delta_v_s=xo.s_dot - x.s_dot, delta_v_d=xo.d_dot - x.d_dot)
            feats["obs_lane_left"] = float(road.lane_left(xo.s)) - xo.d
            feats["obs_lane_right"] = xo.d - float(road.lane_right(xo.s))
        else:
            ca = road.conflict_area(o.id)
            if ca is not None:
                feats["obs_s_entry"] = ca.obstacle_interval[0] - xo.s
                feats["obs_s_exit"] = ca.obstacle_interval[1] - xo.s
            feats["delta_v_s"] = xo.s_dot - x.s_dot
    return feats
