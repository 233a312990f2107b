"""Simulated BMI user: an LQG controller with delayed, noisy feedback.

The controller gain comes from the stationary LQR recursion on the
unaugmented 6-state screen model, while the state estimator runs on the
delay-augmented model. Per-step quantities (velocities, noise standard
deviations) are in meters per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import plant
from .numerics import sample_gaussian, solve_spd

N_CHANNELS = 20
OBS_DIM = 4


class RiccatiDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class OfcParams:
    q: float = 0.02
    r: float = 0.02
    sensory_delay: int = 5
    # position stds in m, velocity stds in m/step (0.1 m/s and 0.625 m/s at 40 ms)
    obs_noise_std: tuple = (0.0004, 0.0004, 0.004, 0.004)
    fw_noise_std: tuple = (0.0025, 0.0025, 0.025, 0.025)
    motor_noise_var: float = 8e-6
    n_channels: int = N_CHANNELS

    def cost_matrices(self):
        q_mat = np.zeros((6, 6))
        for i in (0, 1):
            q_mat[i, i] = q_mat[i + 4, i + 4] = self.q
            q_mat[i, i + 4] = q_mat[i + 4, i] = -self.q
        return q_mat, self.r * np.eye(self.n_channels)

    def omega_eta(self):
        return np.diag(np.square(self.obs_noise_std))

    def omega_fw(self):
        """Forward-model noise of the augmented state: only the current p, v entries."""
        n = plant.STATE_DIM * (self.sensory_delay + 1)
        out = np.zeros((n, n))
        out[np.arange(4), np.arange(4)] = np.square(self.fw_noise_std)
        return out

    def omega_rho(self):
        return self.motor_noise_var * np.eye(self.n_channels)


@dataclass(frozen=True)
class ErrorSignalParams:
    angle_threshold: float = np.deg2rad(20.0)
    kappa: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")


def riccati_solution(a, b, q_mat, r_mat, tol=1e-9, max_iter=10_000, s_init=None):
    """Iterate the backward LQR recursion to a stationary gain.

    Returns ``(L, S)``. Iteration stops once the largest entry change of both
    ``L`` and (relative) ``S`` drops below ``tol``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    q_mat = np.asarray(q_mat, dtype=float)
    r_mat = np.asarray(r_mat, dtype=float)
    s = q_mat.copy() if s_init is None else np.array(s_init, dtype=float)
    gain = np.zeros((b.shape[1], a.shape[0]))
    for _ in range(max_iter):
        bts = b.T @ s
        new_gain = solve_spd(r_mat + bts @ b, bts @ a)
        if not np.all(np.isfinite(new_gain)) or np.max(np.abs(new_gain)) > 1e12:
            raise RiccatiDivergenceError("LQR gain diverged; system may be uncontrollable")
        s_next = q_mat + a.T @ s @ (a - b @ new_gain)
        s_next = 0.5 * (s_next + s_next.T)
        # L alone can stall at its initial value (control reaches Q only via velocity)
        delta = np.max(np.abs(new_gain - gain))
        s_delta = np.max(np.abs(s_next - s)) / max(1.0, np.max(np.abs(s_next)))
        gain, s = new_gain, s_next
        if delta < tol and s_delta < tol:
            break
    return gain, s


def riccati_gain(a, b, q_mat, r_mat, tol=1e-9, max_iter=10_000):
    return riccati_solution(a, b, q_mat, r_mat, tol, max_iter)[0]


def build_augmented(a, b, h, d: int):
    """Delay-augmented ``(A~, B~, H~)`` acting on ``(x_t, x_{t-1}, ..., x_{t-d})``."""
    if d < 0:
        raise ValueError("delay must be non-negative")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    h = np.asarray(h, dtype=float)
    n = a.shape[0]
    size = n * (d + 1)
    a_t = np.zeros((size, size))
    a_t[:n, :n] = a
    for k in range(1, d + 1):
        a_t[k * n:(k + 1) * n, (k - 1) * n:k * n] = np.eye(n)
    b_t = np.zeros((size, b.shape[1]))
    b_t[:n] = b
    h_t = np.zeros((h.shape[0], size))
    h_t[:, d * n:] = h
    return a_t, b_t, h_t


def observation_matrix():
    h = np.zeros((OBS_DIM, plant.STATE_DIM))
    h[np.arange(4), np.arange(4)] = 1.0
    return h


@dataclass
class KalmanState:
    x_hat: np.ndarray
    sigma: np.ndarray

    @classmethod
    def from_state(cls, x, d: int):
        x = np.asarray(x, dtype=float)
        return cls(np.tile(x, d + 1), np.zeros((x.size * (d + 1),) * 2))


def kalman_step(ks: KalmanState, u_star, y, matrices, omega_fw, omega_eta,
                force_gain=None) -> KalmanState:
    """One predict/correct cycle of the augmented filter.

    ``force_gain`` replaces the computed gain; it exists to probe the
    open-loop limit.
    """
    a_t, b_t, h_t = matrices
    x_prior = a_t @ ks.x_hat + b_t @ u_star
    s_prior = a_t @ ks.sigma @ a_t.T + omega_fw
    if force_gain is None:
        sh = s_prior @ h_t.T
        innov = h_t @ sh + omega_eta
        gain = solve_spd(0.5 * (innov + innov.T), sh.T).T
    else:
        gain = np.asarray(force_gain, dtype=float)
    x_post = x_prior + gain @ (np.asarray(y, dtype=float) - h_t @ x_prior)
    s_post = (np.eye(a_t.shape[0]) - gain @ h_t) @ s_prior
    return KalmanState(x_post, 0.5 * (s_post + s_post.T))


def compute_control(ks, l_gain):
    """``u* = -L x_hat``, using only the current-state block for an unaugmented gain."""
    x_hat = ks.x_hat if isinstance(ks, KalmanState) else np.asarray(ks, dtype=float)
    l_gain = np.asarray(l_gain, dtype=float)
    return -(l_gain @ x_hat[:l_gain.shape[1]])


def add_motor_noise(u_star, omega_rho, rng: np.random.Generator):
    return sample_gaussian(u_star, omega_rho, rng)


def speed_noise_factor(n_samples: int, rng: np.random.Generator, n_channels=N_CHANNELS,
                       draws_per_beta: int = 16) -> float:
    """Mean of ``|B'_beta z|`` over random unit tunings and standard normal ``z``.

    The mean speed-noise magnitude for motor noise ``sigma^2 I`` is this factor
    times ``sigma``.
    """
    betas = rng.standard_normal((n_samples, 2 * n_channels))
    betas /= np.linalg.norm(betas, axis=1, keepdims=True)
    mats = betas.reshape(n_samples, 2, n_channels)
    z = rng.standard_normal((n_samples, n_channels, draws_per_beta))
    speeds = np.linalg.norm(mats @ z, axis=1)
    return float(speeds.mean())


def calibrate_control_noise(target_speed_noise_std=0.0625, n_samples=10_000,
                            rng=None, n_channels=N_CHANNELS, dt=0.04) -> float:
    """Motor-noise variance giving the requested mean cursor speed noise (m/s)."""
    if target_speed_noise_std == 0:
        return 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    factor = speed_noise_factor(n_samples, rng, n_channels)
    sigma = target_speed_noise_std * dt / factor
    return float(sigma ** 2)


def measure_speed_noise(variance, n_samples=10_000, rng=None, n_channels=N_CHANNELS, dt=0.04):
    """Mean speed-noise magnitude in m/s produced by motor noise ``variance * I``."""
    rng = rng if rng is not None else np.random.default_rng(1)
    return np.sqrt(variance) * speed_noise_factor(n_samples, rng, n_channels) / dt


def intended_velocity(beta_u, u):
    return plant.beta_to_matrix(beta_u) @ np.asarray(u, dtype=float)


def raw_error_bit(v_intent, v_decoded, angle_threshold=np.deg2rad(20.0)) -> int:
    n1 = np.hypot(*v_intent)
    n2 = np.hypot(*v_decoded)
    if n1 < 1e-9 or n2 < 1e-9:
        return 0
    cos = (v_intent[0] * v_decoded[0] + v_intent[1] * v_decoded[1]) / (n1 * n2)
    return int(cos <= np.cos(angle_threshold))


def generate_error_signal(v_intent, v_decoded, params: ErrorSignalParams,
                          rng: np.random.Generator) -> int:
    """Binary mismatch event, flipped with probability ``kappa``.

    One uniform is consumed per call regardless of ``kappa``.
    """
    bit = raw_error_bit(v_intent, v_decoded, params.angle_threshold)
    if rng.random() < params.kappa:
        bit = 1 - bit
    return bit


def random_walk_tuning(beta_u, sigma_walk, clip=0.3, rng=None):
    beta_u = np.asarray(beta_u, dtype=float)
    step = sigma_walk * rng.standard_normal(beta_u.shape)
    return np.clip(beta_u + step, -clip, clip)


@dataclass
class SimulatedUser:
    """Bundles tuning, LQR gain and delayed Kalman estimator for one run.

    The filter covariance does not depend on the data, so once it stops
    changing the gain is cached and only the mean recursion is evaluated,
    using the shift structure of the augmented transition.
    """

    beta_u: np.ndarray
    params: OfcParams = field(default_factory=OfcParams)
    gain: np.ndarray = field(init=False)
    kalman: KalmanState = field(init=False)

    def __post_init__(self):
        self._a = plant.transition_matrix()
        self._q, self._r = self.params.cost_matrices()
        self._s = None
        self._h = observation_matrix()
        self._omega_eta = self.params.omega_eta()
        self._omega_fw = self.params.omega_fw()
        self._motor_std = np.sqrt(self.params.motor_noise_var)
        self._steady_gain = None
        self.set_tuning(self.beta_u)
        self.reset(plant.make_state())

    def set_tuning(self, beta_u):
        self.beta_u = np.asarray(beta_u, dtype=float)
        self.b_prime = plant.beta_to_matrix(self.beta_u)
        b = plant.input_matrix(self.b_prime)
        self.gain, self._s = riccati_solution(self._a, b, self._q, self._r, s_init=self._s)
        self._aug = build_augmented(self._a, b, self._h, self.params.sensory_delay)

    def reset(self, x):
        self.kalman = KalmanState.from_state(x, self.params.sensory_delay)
        self._steady_gain = None

    def set_goal(self, goal):
        self.kalman.x_hat.reshape(-1, plant.STATE_DIM)[:, plant.GOAL] = goal

    def control(self):
        return -(self.gain @ self.kalman.x_hat[:plant.STATE_DIM])

    def noisy(self, u_star, rng):
        return u_star + self._motor_std * rng.standard_normal(u_star.shape[0])

    def observe(self, u_star, y):
        if self._steady_gain is None:
            prev = self.kalman.sigma
            self.kalman = kalman_step(self.kalman, u_star, y, self._aug,
                                      self._omega_fw, self._omega_eta)
            if np.max(np.abs(self.kalman.sigma - prev)) < 1e-16:
                a_t, _, h_t = self._aug
                s_prior = a_t @ self.kalman.sigma @ a_t.T + self._omega_fw
                sh = s_prior @ h_t.T
                self._steady_gain = solve_spd(h_t @ sh + self._omega_eta, sh.T).T
            return
        xh = self.kalman.x_hat
        prior = np.empty_like(xh)
        prior[6:] = xh[:-6]
        prior[0:2] = xh[0:2] + xh[2:4]
        prior[2:4] = self.b_prime @ u_star
        prior[4:6] = xh[4:6]
        prior += self._steady_gain @ (y - prior[-6:-2])
        self.kalman.x_hat = prior
