"""Key/value configuration files for runs and campaigns.

Run configs are INI files with the sections ``[task]``, ``[user]``,
``[decoder]``, ``[error]`` and ``[experiment]``. Durations are given in
seconds and converted to whole time steps at parse time. Campaign files hold a
``[campaign]`` section plus one ``[variant NAME]`` section per variant whose
keys (``section.key = value``) override the base run config.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import plant
from .decoders import DECODER_KINDS
from .harness import SimConfig
from .user_model import OfcParams

DEFAULT_CONFIG = """\
[task]
# reach distance (m)
target_distance = 0.2
# time limit per trial and required dwell on target (s)
trial_timeout = 4.0
dwell = 0.16
# target tolerance (m); not fixed by the task description, treat as free
hit_radius = 0.01
# simulation time step (s)
dt = 0.04
# new targets are placed around: cursor | previous_target
target_anchor = cursor

[user]
# weights of squared distance-to-goal and squared control in the user's cost
q = 0.02
r = 0.02
# sensory feedback delay (s)
sensory_delay = 0.2
# observation noise: position std (m) and velocity std (m/s)
obs_pos_std = 0.0004
obs_vel_std = 0.1
# forward-model noise: position std (m) and velocity std (m/s)
fw_pos_std = 0.0025
fw_vel_std = 0.625
# motor noise variance per channel (per-step units); see calibrate_control_noise
motor_noise_var = 8e-6
n_channels = 20

[decoder]
# unsupervised_amplitude | unsupervised_deviation | unsupervised_combined |
# error_based | unsup_plus_error | supervised | static_random
kind = unsupervised_amplitude
# cost window / update period (s)
update_period = 4.0
epsilon = 0.4
lambda = 1.0
bias = 1.0
p0 = 100.0
# deviation weight of the combined cost; auto = equalise over a pilot
z_weight = auto
# share of the unsupervised term when mixed with the error term
mix_weight = 0.5
# standardized = z-score each -log cost online before mixing; raw = mix as is
mix_mode = standardized
supervised_p0 = 100.0
supervised_lambda = 1.0
init_matched = false

[error]
# probability that an error bit is flipped
kappa = 0.2
angle_threshold_deg = 20.0

[experiment]
trials = 1501
seed = 0
# number of consecutive seeds starting at `seed`
seeds = 1
# adaptation-off trial windows, e.g. 1463-1501; auto = last 39 trials
freeze = auto
# evaluation windows, e.g. early:1-50, late:1402-1406, freeze:1463-1501
phases = auto
nonstationary = false
# per-trial tuning drift; walk_scale says whether walk_sigma is a std or a variance
walk_sigma = 0.007
walk_scale = std
walk_clip = 0.3
divergence_limit = 1e6
# mean cumulative error of the supervised reference; empty = compute it
supervised_baseline =
"""

# required keys and the run setting they provide
REQUIRED = {("decoder", "kind"): "decoder_kind"}


class ConfigError(ValueError):
    """Validation failure; ``problems`` lists every offending field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class RunSpec:
    sim: SimConfig
    n_seeds: int = 1
    baseline: float | None = None

    @property
    def seeds(self):
        return list(range(self.sim.seed, self.sim.seed + self.n_seeds))


def _parser():
    return configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))


def defaults_parser():
    cp = _parser()
    cp.read_string(DEFAULT_CONFIG)
    return cp


def read_layers(*texts):
    """Defaults overlaid with the given INI texts (later ones win)."""
    cp = defaults_parser()
    for text in texts:
        layer = _parser()
        layer.read_string(text)
        for section in layer.sections():
            if not cp.has_section(section):
                cp.add_section(section)
            for key, value in layer.items(section):
                cp.set(section, key, value)
    return cp


class _Reader:
    def __init__(self, cp, explicit):
        self.cp = cp
        self.explicit = explicit
        self.problems = []

    def raw(self, section, key):
        if (section, key) in REQUIRED and (section, key) not in self.explicit:
            self.problems.append(f"{section}.{key}: required field is missing ({REQUIRED[section, key]})")
            return None
        return self.cp.get(section, key, fallback="").strip()

    def _convert(self, section, key, fn, what):
        raw = self.raw(section, key)
        if raw is None:
            return None
        try:
            return fn(raw)
        except (TypeError, ValueError):
            self.problems.append(f"{section}.{key}: expected {what}, got {raw!r}")
            return None

    def float(self, section, key):
        return self._convert(section, key, float, "a number")

    def int(self, section, key):
        return self._convert(section, key, int, "an integer")

    def bool(self, section, key):
        def to_bool(v):
            low = v.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(v)
        return self._convert(section, key, to_bool, "true/false")

    def steps(self, section, key, dt):
        seconds = self.float(section, key)
        if seconds is None or dt is None:
            return None
        try:
            return plant.seconds_to_steps(seconds, dt)
        except ValueError as exc:
            self.problems.append(f"{section}.{key}: {exc}")
            return None


def _parse_ranges(text):
    out = []
    for chunk in filter(None, (c.strip() for c in text.split(","))):
        start, end = chunk.split("-")
        out.append((int(start), int(end)))
    return tuple(out)


def _parse_phases(text):
    out = []
    for chunk in filter(None, (c.strip() for c in text.split(","))):
        name, rng = chunk.split(":")
        start, end = rng.split("-")
        out.append((name.strip(), int(start), int(end)))
    return tuple(out)


# SimConfig field -> config file key
FIELD_KEYS = {
    "decoder_kind": "decoder.kind", "n_trials": "experiment.trials", "window": "decoder.update_period",
    "epsilon": "decoder.epsilon", "lambda": "decoder.lambda", "kappa": "error.kappa",
    "mix_weight": "decoder.mix_weight", "mix_mode": "decoder.mix_mode", "z_weight": "decoder.z_weight",
    "error_angle_deg": "error.angle_threshold_deg", "freeze_schedule": "experiment.freeze",
    "phases": "experiment.phases", "walk_scale": "experiment.walk_scale",
    "walk_sigma": "experiment.walk_sigma",
}


def _field_name(problem):
    name, _, rest = problem.partition(":")
    return f"{FIELD_KEYS.get(name, name)}:{rest}"


def spec_from_parser(cp, explicit=frozenset()) -> RunSpec:
    rd = _Reader(cp, explicit)
    dt = rd.float("task", "dt")
    if dt is not None and dt <= 0:
        rd.problems.append("task.dt: must be positive")
        dt = None
    anchor = rd.raw("task", "target_anchor")
    if anchor not in ("cursor", "previous_target"):
        rd.problems.append(f"task.target_anchor: expected cursor or previous_target, got {anchor!r}")
    task_kw = dict(
        target_distance=rd.float("task", "target_distance"),
        trial_timeout=rd.steps("task", "trial_timeout", dt),
        dwell_required=rd.steps("task", "dwell", dt),
        hit_radius=rd.float("task", "hit_radius"),
    )
    vel_scale = dt if dt is not None else 0.0
    obs_pos = rd.float("user", "obs_pos_std")
    obs_vel = rd.float("user", "obs_vel_std")
    fw_pos = rd.float("user", "fw_pos_std")
    fw_vel = rd.float("user", "fw_vel_std")
    ofc_kw = dict(
        q=rd.float("user", "q"),
        r=rd.float("user", "r"),
        sensory_delay=rd.steps("user", "sensory_delay", dt),
        motor_noise_var=rd.float("user", "motor_noise_var"),
        n_channels=rd.int("user", "n_channels"),
    )
    for name in ("q", "r", "motor_noise_var"):
        if ofc_kw[name] is not None and ofc_kw[name] < 0:
            rd.problems.append(f"user.{name}: must be non-negative")
    if ofc_kw["r"] == 0:
        rd.problems.append("user.r: must be positive")

    kind = rd.raw("decoder", "kind")
    if kind is not None and kind not in DECODER_KINDS:
        rd.problems.append(f"decoder.kind: unknown kind {kind!r} (choose from {', '.join(DECODER_KINDS)})")
    z_raw = rd.raw("decoder", "z_weight")
    z_weight = None
    if z_raw not in ("auto", "", None):
        z_weight = rd.float("decoder", "z_weight")
    window = rd.steps("decoder", "update_period", dt)

    freeze_raw = rd.raw("experiment", "freeze")
    freeze = None
    if freeze_raw not in ("auto", ""):
        try:
            freeze = _parse_ranges(freeze_raw)
        except ValueError:
            rd.problems.append(f"experiment.freeze: expected ranges like 1463-1501, got {freeze_raw!r}")
    phases_raw = rd.raw("experiment", "phases")
    phases = None
    if phases_raw not in ("auto", ""):
        try:
            phases = _parse_phases(phases_raw)
        except ValueError:
            rd.problems.append(f"experiment.phases: expected name:start-end list, got {phases_raw!r}")
    base_raw = rd.raw("experiment", "supervised_baseline")
    baseline = rd.float("experiment", "supervised_baseline") if base_raw else None
    if baseline is not None and baseline <= 0:
        rd.problems.append("experiment.supervised_baseline: must be positive")
    n_seeds = rd.int("experiment", "seeds")
    if n_seeds is not None and n_seeds < 1:
        rd.problems.append("experiment.seeds: must be at least 1")

    sim_kw = dict(
        decoder_kind=kind,
        n_trials=rd.int("experiment", "trials"),
        seed=rd.int("experiment", "seed"),
        window=window,
        epsilon=rd.float("decoder", "epsilon"),
        lam=rd.float("decoder", "lambda"),
        bias=rd.float("decoder", "bias"),
        p0=rd.float("decoder", "p0"),
        z_weight=z_weight,
        mix_weight=rd.float("decoder", "mix_weight"),
        mix_mode=rd.raw("decoder", "mix_mode"),
        sup_p0=rd.float("decoder", "supervised_p0"),
        sup_lam=rd.float("decoder", "supervised_lambda"),
        init_matched=rd.bool("decoder", "init_matched"),
        kappa=rd.float("error", "kappa"),
        error_angle_deg=rd.float("error", "angle_threshold_deg"),
        freeze_schedule=freeze,
        phases=phases,
        nonstationary=rd.bool("experiment", "nonstationary"),
        walk_sigma=rd.float("experiment", "walk_sigma"),
        walk_scale=rd.raw("experiment", "walk_scale"),
        walk_clip=rd.float("experiment", "walk_clip"),
        divergence_limit=rd.float("experiment", "divergence_limit"),
    )
    # range checks run even when some fields failed to parse, so every bad field is listed
    probe = {k: v for k, v in sim_kw.items() if v is not None}
    probe.setdefault("decoder_kind", DECODER_KINDS[0])
    flagged = {p.split(":")[0] for p in rd.problems}
    extra = [_field_name(p) for p in SimConfig(**probe).validate()]
    problems = rd.problems + [p for p in extra if p.split(":")[0] not in flagged]
    if problems:
        raise ConfigError(problems)
    task = plant.TaskParams(dt=dt, target_anchor=anchor, **task_kw)
    ofc = OfcParams(
        obs_noise_std=(obs_pos, obs_pos, obs_vel * vel_scale, obs_vel * vel_scale),
        fw_noise_std=(fw_pos, fw_pos, fw_vel * vel_scale, fw_vel * vel_scale),
        **ofc_kw,
    )
    sim = SimConfig(task=task, ofc=ofc, **sim_kw)
    return RunSpec(sim, n_seeds, baseline)


def _explicit_keys(texts):
    keys = set()
    for text in texts:
        layer = _parser()
        layer.read_string(text)
        for section in layer.sections():
            for key in layer[section]:
                keys.add((section, key))
    return keys


def parse_config(*texts) -> RunSpec:
    """Parse one or more layered INI texts on top of the defaults."""
    try:
        cp = read_layers(*texts)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    return spec_from_parser(cp, _explicit_keys(texts))


def load_config(path) -> RunSpec:
    return parse_config(Path(path).read_text())


def _fmt_float(v):
    return repr(float(v))


def _per_second(value, dt):
    """Text for ``value / dt`` that multiplies back to exactly ``value``."""
    guess = value / dt
    cand = guess
    for _ in range(8):
        if cand * dt == value:
            return _fmt_float(cand)
        cand = np.nextafter(cand, np.inf if cand * dt < value else -np.inf)
    return _fmt_float(guess)


def dump_config(spec: RunSpec) -> str:
    """Serialise a run spec to INI text that parses back to an equal spec."""
    sim, task, ofc = spec.sim, spec.sim.task, spec.sim.ofc
    dt = task.dt
    freeze = ", ".join(f"{s}-{e}" for s, e in sim.resolved_freeze()) if sim.freeze_schedule is not None else "auto"
    phases = (", ".join(f"{n}:{s}-{e}" for n, s, e in sim.phases)
              if sim.phases is not None else "auto")
    sections = {
        "task": {
            "target_distance": _fmt_float(task.target_distance),
            "trial_timeout": _fmt_float(task.trial_timeout * dt),
            "dwell": _fmt_float(task.dwell_required * dt),
            "hit_radius": _fmt_float(task.hit_radius),
            "dt": _fmt_float(dt),
            "target_anchor": task.target_anchor,
        },
        "user": {
            "q": _fmt_float(ofc.q),
            "r": _fmt_float(ofc.r),
            "sensory_delay": _fmt_float(ofc.sensory_delay * dt),
            "obs_pos_std": _fmt_float(ofc.obs_noise_std[0]),
            "obs_vel_std": _per_second(ofc.obs_noise_std[2], dt),
            "fw_pos_std": _fmt_float(ofc.fw_noise_std[0]),
            "fw_vel_std": _per_second(ofc.fw_noise_std[2], dt),
            "motor_noise_var": _fmt_float(ofc.motor_noise_var),
            "n_channels": str(ofc.n_channels),
        },
        "decoder": {
            "kind": sim.decoder_kind,
            "update_period": _fmt_float(sim.window * dt),
            "epsilon": _fmt_float(sim.epsilon),
            "lambda": _fmt_float(sim.lam),
            "bias": _fmt_float(sim.bias),
            "p0": _fmt_float(sim.p0),
            "z_weight": "auto" if sim.z_weight is None else _fmt_float(sim.z_weight),
            "mix_weight": _fmt_float(sim.mix_weight),
            "mix_mode": sim.mix_mode,
            "supervised_p0": _fmt_float(sim.sup_p0),
            "supervised_lambda": _fmt_float(sim.sup_lam),
            "init_matched": str(sim.init_matched).lower(),
        },
        "error": {
            "kappa": _fmt_float(sim.kappa),
            "angle_threshold_deg": _fmt_float(sim.error_angle_deg),
        },
        "experiment": {
            "trials": str(sim.n_trials),
            "seed": str(sim.seed),
            "seeds": str(spec.n_seeds),
            "freeze": freeze,
            "phases": phases,
            "nonstationary": str(sim.nonstationary).lower(),
            "walk_sigma": _fmt_float(sim.walk_sigma),
            "walk_scale": sim.walk_scale,
            "walk_clip": _fmt_float(sim.walk_clip),
            "divergence_limit": _fmt_float(sim.divergence_limit),
            "supervised_baseline": "" if spec.baseline is None else _fmt_float(spec.baseline),
        },
    }
    lines = []
    for section, items in sections.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in items.items())
        lines.append("")
    return "\n".join(lines)


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class Variant:
    name: str
    overrides: str
    arms: str = "single"


@dataclass(frozen=True)
class CampaignSpec:
    name: str
    base_text: str
    variants: tuple
    n_seeds: int = 10
    jobs: int = 1
    trials: int | None = None
    extra: dict = field(default_factory=dict)

    def variant_spec(self, variant: Variant) -> RunSpec:
        spec = parse_config(self.base_text, variant.overrides)
        return self._finish(spec)

    def baseline_spec(self) -> RunSpec:
        spec = parse_config(self.base_text, "[decoder]\nkind = supervised\n[experiment]\nnonstationary = false\n")
        spec = self._finish(spec)
        sim = spec.sim
        if sim.phases is not None or sim.freeze_schedule is not None:
            # the reference always uses the stationary default schedule
            sim = replace(sim, phases=None, freeze_schedule=None)
        return replace(spec, sim=sim)

    def _finish(self, spec: RunSpec) -> RunSpec:
        sim = spec.sim
        if self.trials is not None:
            sim = replace(sim, n_trials=self.trials)
        return replace(spec, sim=sim, n_seeds=self.n_seeds)


def _variant_overrides(section):
    grouped = {}
    arms = "single"
    for key, value in section.items():
        if key == "arms":
            arms = value.strip()
            continue
        if "." not in key:
            raise ValueError(f"override key {key!r} must look like section.key")
        sec, sub = key.split(".", 1)
        grouped.setdefault(sec, []).append(f"{sub} = {value}")
    text = "\n".join(f"[{sec}]\n" + "\n".join(lines) for sec, lines in grouped.items())
    return text, arms


def parse_campaign(text: str, base_dir=".") -> CampaignSpec:
    cp = _parser()
    problems = []
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    if not cp.has_section("campaign"):
        raise ConfigError(["campaign: section [campaign] is missing"])
    camp = cp["campaign"]
    base_text = ""
    if camp.get("base"):
        base_path = Path(base_dir) / camp.get("base")
        if not base_path.exists():
            problems.append(f"campaign.base: file {base_path} not found")
        else:
            base_text = base_path.read_text()
    if cp.has_section("base"):
        # inline base config: keys written as section.key
        inline, _ = _variant_overrides(cp["base"])
        base_text = base_text + "\n" + inline
    variants = []
    for section in cp.sections():
        if section.startswith("variant"):
            name = section[len("variant"):].strip()
            if not name:
                problems.append(f"{section}: variant needs a name")
                continue
            try:
                overrides, arms = _variant_overrides(cp[section])
            except ValueError as exc:
                problems.append(f"{section}: {exc}")
                continue
            if arms not in ("single", "nonstationary"):
                problems.append(f"{section}.arms: expected single or nonstationary, got {arms!r}")
            variants.append(Variant(name, overrides, arms))
    if not variants:
        problems.append("campaign: at least one [variant NAME] section is required")

    def _int(key, default):
        try:
            return int(camp.get(key, default))
        except ValueError:
            problems.append(f"campaign.{key}: expected an integer")
            return default

    n_seeds = _int("seeds", 10)
    jobs = _int("jobs", 1)
    trials = camp.get("trials")
    trials = _int("trials", None) if trials else None
    spec = CampaignSpec(camp.get("name", "campaign"), base_text, tuple(variants), n_seeds, jobs, trials)
    if not problems:
        for variant in variants:
            try:
                spec.variant_spec(variant)
            except ConfigError as exc:
                problems.extend(f"variant {variant.name}: {p}" for p in exc.problems)
        try:
            spec.baseline_spec()
        except ConfigError as exc:
            problems.extend(f"baseline: {p}" for p in exc.problems)
    if problems:
        raise ConfigError(problems)
    return spec


def load_campaign(path) -> CampaignSpec:
    path = Path(path)
    return parse_campaign(path.read_text(), path.parent)
