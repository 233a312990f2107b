"""Decoder variants and their window costs.

Three decoders share one interface (``matrix``, ``observe``, ``set_adapting``):

* ``MetaRlsDecoder``: unsupervised / error-signal driven. Every ``T`` steps
  the -log cost of the finished window is regressed on the decoder
  parameters that produced it, and a new unit-norm tuning is chosen
  epsilon-greedily from the fitted log-linear model.
* ``SupervisedDecoder``: per-step RLS on the (known) intended velocity.
* ``StaticDecoder``: a fixed tuning, never adapted.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import plant
from .numerics import sample_unit_vector

UNSUP_KINDS = ("unsupervised_amplitude", "unsupervised_deviation", "unsupervised_combined")
META_KINDS = UNSUP_KINDS + ("error_based", "unsup_plus_error")
DECODER_KINDS = META_KINDS + ("supervised", "static_random")

AMPLITUDE_FLOOR = 1e-12
ERROR_FLOOR = 0.5
# how the two -log costs are put on a common scale before mixing
MIX_MODES = ("standardized", "raw")


@dataclass
class CostWindow:
    controls: np.ndarray
    err_bits: np.ndarray | None = None


def window_cost_amplitude(win: CostWindow) -> float:
    u = np.asarray(win.controls, dtype=float)
    if u.size == 0:
        raise ValueError("empty window")
    return float(np.sum(u * u))


def window_cost_deviation(win: CostWindow) -> float:
    u = np.asarray(win.controls, dtype=float)
    if u.size == 0:
        raise ValueError("empty window")
    return float(np.sum((u - u.mean(axis=0)) ** 2))


def window_cost_combined(win: CostWindow, z: float) -> float:
    if z < 0:
        raise ValueError("weight must be non-negative")
    return window_cost_amplitude(win) + z * window_cost_deviation(win)


def window_cost_error(win: CostWindow) -> float:
    if win.err_bits is None:
        raise ValueError("window has no error channel")
    return float(np.sum(win.err_bits))


def neg_log_cost(j: float, floor: float = AMPLITUDE_FLOOR) -> float:
    if j < 0:
        raise ValueError("cost must be non-negative")
    return -float(np.log(max(j, floor)))


def combine_log_costs(ell_unsup: float, ell_err: float, weight: float = 0.5) -> float:
    return weight * ell_unsup + (1.0 - weight) * ell_err


@dataclass
class MetaRlsState:
    w: np.ndarray
    p_mat: np.ndarray
    lam: float = 1.0
    bias: float = 1.0
    epsilon: float = 0.4
    window: int = 100

    @classmethod
    def initial(cls, n_params: int, delta: float = 100.0, **kw) -> "MetaRlsState":
        return cls(np.zeros(n_params + 1), delta * np.eye(n_params + 1), **kw)

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("forgetting factor must lie in (0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("exploration rate must lie in [0, 1]")


def augment(beta, bias: float = 1.0):
    return np.append(np.asarray(beta, dtype=float), bias)


def predict_neg_log_cost(beta, state: MetaRlsState) -> float:
    return float(augment(beta, state.bias) @ state.w)


def meta_rls_update(state: MetaRlsState, beta_prime, ell_observed: float) -> MetaRlsState:
    """One exponentially weighted RLS step on ``(beta', ell)``."""
    x = np.asarray(beta_prime, dtype=float)
    p = state.p_mat
    err = ell_observed - x @ state.w
    px = p @ x
    k = px / (state.lam + x @ px)
    w = state.w + k * err
    p_new = (p - np.outer(k, px)) / state.lam
    p_new = 0.5 * (p_new + p_new.T)
    return MetaRlsState(w, p_new, state.lam, state.bias, state.epsilon, state.window)


def greedy_beta(state: MetaRlsState):
    """Unit-norm tuning maximising the predicted -log cost, or None if undefined."""
    prefix = state.w[:-1]
    norm = np.linalg.norm(prefix)
    if norm < 1e-9:
        return None
    return prefix / norm


def epsilon_greedy_select(state: MetaRlsState, rng: np.random.Generator):
    """Return ``(beta, explored)``.

    One uniform is drawn per call; an exploring call then draws a random unit
    vector. A degenerate greedy direction falls back to exploration.
    """
    explore = rng.random() < state.epsilon
    beta = None if explore else greedy_beta(state)
    if beta is None:
        return sample_unit_vector(state.w.size - 1, rng), True
    return beta, False


@dataclass
class SupervisedRlsState:
    b_prime_d: np.ndarray
    p_u: np.ndarray
    lam: float = 1.0

    @classmethod
    def initial(cls, b_prime_d, delta: float = 100.0, lam: float = 1.0):
        b = np.array(b_prime_d, dtype=float)
        return cls(b, delta * np.eye(b.shape[1]), lam)


def supervised_rls_step(state: SupervisedRlsState, u, v_intent) -> SupervisedRlsState:
    u = np.asarray(u, dtype=float)
    v_hat = state.b_prime_d @ u
    err = np.asarray(v_intent, dtype=float) - v_hat
    pu = state.p_u @ u
    k = pu / (state.lam + u @ pu)
    b_new = state.b_prime_d + np.outer(err, k)
    p_new = (state.p_u - np.outer(k, pu)) / state.lam
    return SupervisedRlsState(b_new, 0.5 * (p_new + p_new.T), state.lam)


class RunningStandardizer:
    """Welford mean/variance; maps a value to its z-score including itself."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def __call__(self, value: float) -> float:
        self.n += 1
        delta = value - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (value - self.mean)
        if self.n < 2:
            return 0.0
        std = np.sqrt(self.m2 / (self.n - 1))
        return 0.0 if std <= 0 else (value - self.mean) / std


def _p_checksum(p_mat) -> str:
    return hashlib.sha256(np.ascontiguousarray(np.diag(p_mat)).tobytes()).hexdigest()[:16]


class MetaRlsDecoder:
    """Epsilon-greedy log-linear cost model fitted by RLS (one update per window)."""

    def __init__(self, kind: str, beta0, rng: np.random.Generator, *, window: int = 100,
                 epsilon: float = 0.4, lam: float = 1.0, bias: float = 1.0,
                 p0: float = 100.0, z_weight: float | None = None, mix_weight: float = 0.5,
                 mix_mode: str = "standardized", z_pilot_updates: int = 10):
        if mix_mode not in MIX_MODES:
            raise ValueError(f"unknown mix mode {mix_mode!r}")
        if kind not in META_KINDS:
            raise ValueError(f"not a meta-RLS decoder kind: {kind}")
        self.kind = kind
        self.rng = rng
        self.beta = beta0
        self.state = MetaRlsState.initial(self.beta.size, p0, lam=lam, bias=bias,
                                          epsilon=epsilon, window=window)
        n_ch = self.beta.size // 2
        self._controls = np.zeros((window, n_ch))
        self._errs = np.zeros(window)
        self._fill = 0
        self.z_weight = z_weight
        self._z_auto = z_weight is None
        self._z_pilot = z_pilot_updates
        self._pilot_amp = 0.0
        self._pilot_dev = 0.0
        self.mix_weight = mix_weight
        self.mix_mode = mix_mode
        self._std_unsup = RunningStandardizer()
        self._std_err = RunningStandardizer()
        self.adapting = True
        self.n_updates = 0
        self.n_explored = 0
        self.step_count = 0

    @property
    def beta(self):
        return self._beta

    @beta.setter
    def beta(self, value):
        self._beta = np.asarray(value, dtype=float)
        self.matrix = plant.beta_to_matrix(self._beta)

    def _window(self) -> CostWindow:
        return CostWindow(self._controls[:self._fill], self._errs[:self._fill])

    def _unsup_cost(self, win: CostWindow) -> float:
        if self.kind == "unsupervised_deviation":
            return window_cost_deviation(win)
        if self.kind == "unsupervised_combined":
            amp, dev = window_cost_amplitude(win), window_cost_deviation(win)
            if self._z_auto and self.n_updates < self._z_pilot:
                self._pilot_amp += amp
                self._pilot_dev += dev
                self.z_weight = self._pilot_amp / self._pilot_dev if self._pilot_dev > 0 else 1.0
            return amp + self.z_weight * dev
        return window_cost_amplitude(win)

    def observed_neg_log_cost(self) -> float:
        win = self._window()
        if self.kind == "error_based":
            return neg_log_cost(window_cost_error(win), ERROR_FLOOR)
        if self.kind == "unsup_plus_error":
            ell_u = neg_log_cost(window_cost_amplitude(win), AMPLITUDE_FLOOR)
            ell_e = neg_log_cost(window_cost_error(win), ERROR_FLOOR)
            if self.mix_mode == "standardized":
                ell_u, ell_e = self._std_unsup(ell_u), self._std_err(ell_e)
            return combine_log_costs(ell_u, ell_e, self.mix_weight)
        return neg_log_cost(self._unsup_cost(win), AMPLITUDE_FLOOR)

    def observe(self, u, v_intent=None, v_decoded=None, err_bit=0):
        if not self.adapting:
            return
        self._controls[self._fill] = u
        self._errs[self._fill] = err_bit
        self._fill += 1
        self.step_count += 1
        if self._fill == self.state.window:
            self.update()

    def update(self):
        ell = self.observed_neg_log_cost()
        self.state = meta_rls_update(self.state, augment(self.beta, self.state.bias), ell)
        self.n_updates += 1
        self.beta, explored = epsilon_greedy_select(self.state, self.rng)
        self.n_explored += explored
        self._fill = 0

    def set_adapting(self, flag: bool):
        if flag == self.adapting:
            return
        self.adapting = flag
        self._fill = 0
        if not flag:
            greedy = greedy_beta(self.state)
            if greedy is not None:
                self.beta = greedy

    def snapshot(self) -> dict:
        return {
            "kind": self.kind,
            "beta": self.beta.tolist(),
            "w": self.state.w.tolist(),
            "p_diag_checksum": _p_checksum(self.state.p_mat),
            "step_count": self.step_count,
            "rng_cursor": _rng_cursor(self.rng),
        }


class SupervisedDecoder:
    kind = "supervised"

    def __init__(self, b_prime0, p0: float = 100.0, lam: float = 1.0):
        self.state = SupervisedRlsState.initial(b_prime0, p0, lam)
        self.adapting = True
        self.step_count = 0

    @property
    def matrix(self):
        return self.state.b_prime_d

    @property
    def beta(self):
        return self.state.b_prime_d.ravel()

    def observe(self, u, v_intent=None, v_decoded=None, err_bit=0):
        if self.adapting:
            self.state = supervised_rls_step(self.state, u, v_intent)
            self.step_count += 1

    def set_adapting(self, flag: bool):
        self.adapting = flag

    def snapshot(self) -> dict:
        return {
            "kind": self.kind,
            "beta": self.beta.tolist(),
            "w": None,
            "p_diag_checksum": _p_checksum(self.state.p_u),
            "step_count": self.step_count,
            "rng_cursor": None,
        }


@dataclass
class StaticDecoder:
    beta: np.ndarray
    kind: str = "static_random"
    adapting: bool = field(default=False, init=False)

    @property
    def matrix(self):
        return plant.beta_to_matrix(self.beta)

    def observe(self, u, v_intent=None, v_decoded=None, err_bit=0):
        pass

    def set_adapting(self, flag: bool):
        pass

    def snapshot(self) -> dict:
        return {"kind": self.kind, "beta": np.asarray(self.beta).tolist(), "w": None,
                "p_diag_checksum": None, "step_count": 0, "rng_cursor": None}


def _rng_cursor(rng: np.random.Generator):
    st = rng.bit_generator.state
    return json.loads(json.dumps(st, default=int))
