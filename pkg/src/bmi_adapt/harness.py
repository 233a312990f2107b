"""Closed-loop experiment orchestration, metrics and cohort aggregation."""

from __future__ import annotations

import logging
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import decoders, plant
from .numerics import RunStreams, sample_unit_vector
from .stats import rank_sum_test
from .user_model import ErrorSignalParams, OfcParams, SimulatedUser, generate_error_signal, random_walk_tuning

log = logging.getLogger(__name__)

ERROR_CHANNEL_KINDS = ("error_based", "unsup_plus_error")
LEARNING = "learning"


class SimulationDiverged(RuntimeError):
    """A state entry exceeded the divergence limit; carries the partial records."""

    def __init__(self, message, records, step):
        super().__init__(message)
        self.records = records
        self.step = step


def default_phases(n_trials: int):
    """Freeze = last 39 trials, late = 5 trials 100 before the end, early = 1-50.

    The late window is dropped when it would overlap the early one.
    """
    phases = [("freeze", max(1, n_trials - 38), n_trials)]
    if n_trials - 99 > 50:
        phases.append(("late", n_trials - 99, n_trials - 95))
    phases.append(("early", 1, min(50, n_trials)))
    return tuple(phases)


@dataclass(frozen=True)
class SimConfig:
    decoder_kind: str
    n_trials: int = 1501
    seed: int = 0
    task: plant.TaskParams = field(default_factory=plant.TaskParams)
    ofc: OfcParams = field(default_factory=OfcParams)
    window: int = 100
    epsilon: float = 0.4
    lam: float = 1.0
    kappa: float = 0.2
    z_weight: float | None = None
    mix_weight: float = 0.5
    mix_mode: str = "standardized"
    error_angle_deg: float = 20.0
    bias: float = 1.0
    p0: float = 100.0
    sup_p0: float = 100.0
    sup_lam: float = 1.0
    # adaptation-off windows, inclusive trial ranges; None -> the default freeze phase
    freeze_schedule: tuple | None = None
    # evaluation windows (name, start, end); None -> default_phases(n_trials)
    phases: tuple | None = None
    nonstationary: bool = False
    walk_sigma: float = 0.007
    walk_scale: str = "std"
    walk_clip: float = 0.3
    init_matched: bool = False
    divergence_limit: float = 1e6
    stream_overrides: tuple = ()

    def resolved_phases(self):
        return tuple(self.phases) if self.phases is not None else default_phases(self.n_trials)

    def resolved_freeze(self):
        if self.freeze_schedule is not None:
            return tuple(tuple(w) for w in self.freeze_schedule)
        return tuple((s, e) for name, s, e in default_phases(self.n_trials) if name == "freeze")

    def validate(self):
        """Return a list of problems; empty when the config is usable."""
        bad = []
        if self.decoder_kind not in decoders.DECODER_KINDS:
            bad.append(f"decoder_kind: unknown kind {self.decoder_kind!r}")
        if self.n_trials < 1:
            bad.append("n_trials: must be positive")
        for s, e in self.resolved_freeze():
            if not 1 <= s <= e <= self.n_trials:
                bad.append(f"freeze_schedule: window {s}-{e} outside 1..{self.n_trials}")
        for name, s, e in self.resolved_phases():
            if not 1 <= s <= e <= self.n_trials:
                bad.append(f"phases: {name} window {s}-{e} outside 1..{self.n_trials}")
        if not 0 <= self.epsilon <= 1:
            bad.append("epsilon: must lie in [0, 1]")
        if not 0 < self.lam <= 1:
            bad.append("lambda: must lie in (0, 1]")
        if not 0 <= self.kappa <= 1:
            bad.append("kappa: must lie in [0, 1]")
        if not 0 <= self.mix_weight <= 1:
            bad.append("mix_weight: must lie in [0, 1]")
        if self.mix_mode not in decoders.MIX_MODES:
            bad.append(f"mix_mode: must be one of {', '.join(decoders.MIX_MODES)}")
        if not 0 < self.error_angle_deg < 180:
            bad.append("error_angle_deg: must lie in (0, 180)")
        if self.window < 1:
            bad.append("window: must be at least one step")
        if self.z_weight is not None and self.z_weight < 0:
            bad.append("z_weight: must be non-negative")
        if self.walk_scale not in ("std", "variance"):
            bad.append("walk_scale: must be 'std' or 'variance'")
        if self.walk_sigma < 0:
            bad.append("walk_sigma: must be non-negative")
        return bad

    def walk_std(self):
        return np.sqrt(self.walk_sigma) if self.walk_scale == "variance" else self.walk_sigma


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    success: bool
    duration: int
    cumulative_error: float
    decoder_was_adapting: bool
    phase: str
    goal: tuple = (0.0, 0.0)


def _phase_label(trial, phases):
    for name, s, e in phases:
        if s <= trial <= e:
            return name
    return LEARNING


def _in_windows(trial, windows):
    return any(s <= trial <= e for s, e in windows)


def make_decoder(cfg: SimConfig, beta0, rng):
    kind = cfg.decoder_kind
    if kind == "supervised":
        return decoders.SupervisedDecoder(plant.beta_to_matrix(beta0), cfg.sup_p0, cfg.sup_lam)
    if kind == "static_random":
        return decoders.StaticDecoder(np.asarray(beta0, dtype=float))
    return decoders.MetaRlsDecoder(
        kind, beta0, rng, window=cfg.window, epsilon=cfg.epsilon, lam=cfg.lam,
        bias=cfg.bias, p0=cfg.p0, z_weight=cfg.z_weight, mix_weight=cfg.mix_weight,
        mix_mode=cfg.mix_mode,
    )


def run_simulation(cfg: SimConfig, trajectory_sink=None, return_decoder=False):
    """Simulate ``cfg.n_trials`` trials of user, plant and decoder in closed loop.

    ``trajectory_sink(trial, step, x)`` receives every post-step screen state.
    Returns the list of ``TrialRecord`` (and the final decoder if requested).
    Raises ``SimulationDiverged`` when any state entry exceeds the limit.
    """
    problems = cfg.validate()
    if problems:
        raise ValueError("invalid config: " + "; ".join(problems))
    streams = RunStreams.from_seed(cfg.seed, dict(cfg.stream_overrides))
    task, ofc = cfg.task, cfg.ofc
    n_params = 2 * ofc.n_channels
    beta_u = sample_unit_vector(n_params, streams.init)
    beta_d0 = beta_u.copy() if cfg.init_matched else sample_unit_vector(n_params, streams.init)
    decoder = make_decoder(cfg, beta_d0, streams.exploration)
    user = SimulatedUser(beta_u, ofc)
    err_params = ErrorSignalParams(np.deg2rad(cfg.error_angle_deg), cfg.kappa)
    use_err = cfg.decoder_kind in ERROR_CHANNEL_KINDS
    phases = cfg.resolved_phases()
    freeze = cfg.resolved_freeze()
    obs_std = np.asarray(ofc.obs_noise_std, dtype=float)
    delay = ofc.sensory_delay
    limit = cfg.divergence_limit
    walk_std = cfg.walk_std()

    x = plant.spawn_target(plant.make_state(), task, streams.targets)
    user.reset(x)
    history = deque([x] * (delay + 1), maxlen=delay + 1)
    noise = streams.user_noise
    motor_std = np.sqrt(ofc.motor_noise_var)
    n_ch = ofc.n_channels
    hit_radius, dwell_required, timeout = task.hit_radius, task.dwell_required, task.trial_timeout
    records = []
    total_steps = 0
    for trial in range(1, cfg.n_trials + 1):
        adapting = not _in_windows(trial, freeze)
        decoder.set_adapting(adapting)
        elapsed = dwell = 0
        outcome = plant.ONGOING
        ce = 0.0
        while outcome == plant.ONGOING:
            u_star = user.control()
            u = u_star + motor_std * noise.standard_normal(n_ch)
            # realised velocity B_d u = B_d u* + B_d rho
            vel = decoder.matrix @ u
            x = np.array((x[0] + x[2], x[1] + x[3], vel[0], vel[1], x[4], x[5]))
            total_steps += 1
            elapsed += 1
            if not (abs(x[0]) <= limit and abs(x[1]) <= limit
                    and abs(vel[0]) <= limit and abs(vel[1]) <= limit):
                raise SimulationDiverged(
                    f"state exceeded {limit:g} at trial {trial}, step {elapsed}",
                    records, total_steps)
            history.appendleft(x)
            y = history[-1][:4] + obs_std * noise.standard_normal(4)
            user.observe(u_star, y)
            if decoder.adapting:
                v_int = user.b_prime @ u
                err = 0
                if use_err:
                    err = generate_error_signal(v_int, vel, err_params, streams.error_swaps)
                decoder.observe(u, v_int, vel, err)
            dist = math.hypot(x[4] - x[0], x[5] - x[1])
            ce += dist
            dwell = dwell + 1 if dist <= hit_radius else 0
            if dwell >= dwell_required:
                outcome = plant.SUCCESS
            elif elapsed >= timeout:
                outcome = plant.FAILURE
            if trajectory_sink is not None:
                trajectory_sink(trial, elapsed, x)
        records.append(TrialRecord(
            trial_index=trial,
            success=outcome == plant.SUCCESS,
            duration=elapsed,
            cumulative_error=ce,
            decoder_was_adapting=adapting,
            phase=_phase_label(trial, phases),
            goal=(float(x[4]), float(x[5])),
        ))
        x = plant.spawn_target(x, task, streams.targets)
        history[0] = x
        user.set_goal(x[plant.GOAL])
        if cfg.nonstationary:
            user.set_tuning(random_walk_tuning(user.beta_u, walk_std, cfg.walk_clip, streams.drift))
    if return_decoder:
        return records, decoder
    return records


def relative_cumulative_error(ce, supervised_baseline_mean):
    if not supervised_baseline_mean > 0:
        raise ValueError("supervised baseline must be positive")
    return np.asarray(ce, dtype=float) / supervised_baseline_mean


@dataclass
class CohortSummary:
    """Per-seed trial outcomes of one configuration, aligned by trial index.

    Aborted runs keep the trials they completed; missing trials are NaN and
    are skipped by every statistic.
    """

    cfg: SimConfig
    seeds: list
    ce: np.ndarray
    success: np.ndarray
    duration: np.ndarray
    adapting: np.ndarray
    phase_labels: list
    aborted: dict = field(default_factory=dict)
    baseline: float | None = None

    @property
    def rce(self):
        if self.baseline is None:
            return np.full_like(self.ce, np.nan)
        return relative_cumulative_error(self.ce, self.baseline)

    def with_baseline(self, baseline):
        return replace(self, baseline=baseline)

    def median_rce(self):
        return np.nanmedian(self.rce, axis=0)

    def median_ce(self):
        return np.nanmedian(self.ce, axis=0)

    def _phase_mask(self, phase):
        return np.array([label == phase for label in self.phase_labels])

    def phase_values(self, phase, metric="rce", aborted_as_failure=False):
        """Pooled per-trial values of one phase.

        With ``aborted_as_failure`` the trials an aborted run never reached
        count as unbounded errors (+inf) instead of being skipped.
        """
        vals = (self.rce if metric == "rce" else self.ce)[:, self._phase_mask(phase)]
        vals = vals.ravel()
        if aborted_as_failure:
            return np.where(np.isnan(vals), np.inf, vals)
        return vals[~np.isnan(vals)]

    def hit_rate(self, phase, aborted_as_failure=False):
        hits = self.success[:, self._phase_mask(phase)].ravel()
        if aborted_as_failure:
            hits = np.nan_to_num(hits, nan=0.0)
        hits = hits[~np.isnan(hits)]
        return float(hits.mean()) if hits.size else float("nan")

    def phases(self):
        seen = []
        for label in self.phase_labels:
            if label not in seen:
                seen.append(label)
        return seen

    def non_adapting_mean_ce(self):
        mask = self.adapting == 0
        vals = self.ce[mask]
        vals = vals[~np.isnan(vals)]
        if vals.size == 0:
            raise ValueError("cohort has no completed decoder-freeze trials")
        return float(vals.mean())

    def phase_table(self):
        rows = []
        rce = self.rce
        for phase in self.phases():
            vals = self.phase_values(phase)
            mask = self._phase_mask(phase)
            n = int(np.sum(~np.isnan(rce[:, mask]))) if self.baseline else int(np.sum(~np.isnan(self.ce[:, mask])))
            if vals.size:
                q1, med, q3 = np.percentile(vals, [25, 50, 75])
            else:
                q1 = med = q3 = float("nan")
            rows.append({
                "phase": phase,
                "median_rce": float(med),
                "iqr": float(q3 - q1),
                "hit_rate": self.hit_rate(phase),
                "n": n,
                "median_ce": float(np.median(self.phase_values(phase, "ce"))) if n else float("nan"),
            })
        return rows


def _run_one(cfg):
    try:
        return run_simulation(cfg), None
    except SimulationDiverged as exc:
        log.warning("seed %s aborted: %s", cfg.seed, exc)
        return exc.records, str(exc)


def run_cohort(cfg: SimConfig, seeds, baseline=None, jobs: int = 1) -> CohortSummary:
    """Run ``cfg`` once per seed and align the trial records by index."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    cfgs = [replace(cfg, seed=int(s)) for s in seeds]
    if jobs > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, cfgs))
    else:
        results = [_run_one(c) for c in cfgs]
    n = cfg.n_trials
    shape = (len(seeds), n)
    ce = np.full(shape, np.nan)
    success = np.full(shape, np.nan)
    duration = np.full(shape, np.nan)
    adapting = np.full(shape, np.nan)
    aborted = {}
    for i, (records, err) in enumerate(results):
        if err is not None:
            aborted[seeds[i]] = err
        for rec in records:
            j = rec.trial_index - 1
            ce[i, j] = rec.cumulative_error
            success[i, j] = rec.success
            duration[i, j] = rec.duration
            adapting[i, j] = rec.decoder_was_adapting
    phases = cfg.resolved_phases()
    labels = [_phase_label(t, phases) for t in range(1, n + 1)]
    summary = CohortSummary(cfg, seeds, ce, success, duration, adapting, labels, aborted)
    if baseline is None and cfg.decoder_kind == "supervised":
        baseline = summary.non_adapting_mean_ce()
    return summary.with_baseline(baseline)


NONSTATIONARY_PHASES = (
    ("early", 1, 50),
    ("freeze1", 1962, 2000),
    ("late", 3402, 3406),
    ("freeze2", 3463, 3501),
)


def nonstationary_configs(cfg_base: SimConfig):
    """The two arms: adaptive after the first freeze, or frozen from then on."""
    base = replace(cfg_base, nonstationary=True, n_trials=3501, phases=NONSTATIONARY_PHASES)
    adaptive = replace(base, freeze_schedule=((1962, 2000), (3463, 3501)))
    frozen = replace(base, freeze_schedule=((1962, 3501),))
    return adaptive, frozen


def nonstationary_experiment(cfg_base: SimConfig, seeds, baseline=None, jobs=1):
    """Paired cohorts with identical seeds; returns ``(adaptive, frozen)`` summaries."""
    if not cfg_base.nonstationary:
        raise ValueError("nonstationary flag must be set on the base config")
    adaptive_cfg, frozen_cfg = nonstationary_configs(cfg_base)
    return (run_cohort(adaptive_cfg, seeds, baseline, jobs),
            run_cohort(frozen_cfg, seeds, baseline, jobs))


def compare_phase(a: CohortSummary, b: CohortSummary, phase: str, aborted_as_failure=False):
    """Rank-sum p-value between the pooled phase RCEs of two cohorts."""
    xs = a.phase_values(phase, aborted_as_failure=aborted_as_failure)
    ys = b.phase_values(phase, aborted_as_failure=aborted_as_failure)
    if xs.size == 0 or ys.size == 0:
        return float("nan")
    return rank_sum_test(xs, ys)[1]
