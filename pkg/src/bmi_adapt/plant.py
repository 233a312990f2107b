"""Screen/cursor dynamics, target protocol and trial bookkeeping.

A screen state is a length-6 array ``(p1, p2, v1, v2, g1, g2)``. Positions are
in meters and velocities in meters per time step, so that the position update
is simply ``p + v``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

POS = slice(0, 2)
VEL = slice(2, 4)
GOAL = slice(4, 6)
STATE_DIM = 6

ONGOING = "ongoing"
SUCCESS = "success"
FAILURE = "failure"


def transition_matrix():
    """The 6x6 matrix ``A``: positions integrate velocity, velocity rows are zero."""
    a = np.zeros((STATE_DIM, STATE_DIM))
    a[0, 0] = a[1, 1] = 1.0
    a[0, 2] = a[1, 3] = 1.0
    a[4, 4] = a[5, 5] = 1.0
    return a


def input_matrix(b_prime):
    """Embed a 2xC velocity tuning matrix into rows 3-4 of a 6xC matrix."""
    b_prime = np.asarray(b_prime, dtype=float)
    if b_prime.ndim != 2 or b_prime.shape[0] != 2:
        raise ValueError(f"velocity tuning must be 2xC, got {b_prime.shape}")
    b = np.zeros((STATE_DIM, b_prime.shape[1]))
    b[VEL] = b_prime
    return b


def beta_to_matrix(beta):
    """View a flat tuning vector ``[row3, row4]`` as the 2xC matrix."""
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or beta.size % 2:
        raise ValueError("tuning vector must be 1-D with an even length")
    return beta.reshape(2, -1)


def make_state(p=(0.0, 0.0), v=(0.0, 0.0), g=(0.0, 0.0)):
    return np.array([*p, *v, *g], dtype=float)


@dataclass(frozen=True)
class TaskParams:
    target_distance: float = 0.2
    trial_timeout: int = 100
    dwell_required: int = 4
    hit_radius: float = 0.01
    dt: float = 0.04
    # new goals are placed around the previous goal or around the cursor
    target_anchor: str = "cursor"

    def __post_init__(self):
        if self.target_anchor not in ("previous_target", "cursor"):
            raise ValueError(f"unknown target anchor {self.target_anchor!r}")

    @classmethod
    def from_seconds(cls, timeout_s=4.0, dwell_s=0.16, dt=0.04, **kw):
        return cls(
            trial_timeout=seconds_to_steps(timeout_s, dt),
            dwell_required=seconds_to_steps(dwell_s, dt),
            dt=dt,
            **kw,
        )


def seconds_to_steps(seconds: float, dt: float) -> int:
    """Convert a duration to whole steps; non-integer step counts are rejected."""
    steps = seconds / dt
    rounded = round(steps)
    if abs(steps - rounded) > 1e-6:
        raise ValueError(f"{seconds} s is not a whole number of {dt} s steps")
    return int(rounded)


@dataclass(frozen=True)
class TrialStatus:
    elapsed: int = 0
    dwell_counter: int = 0
    outcome: str = ONGOING


def plant_step(x, u, b_d, omega):
    """Advance the screen one step.

    ``b_d`` is the 2xC decoder matrix (or flat tuning vector), ``omega`` the
    realised velocity noise ``B_d rho`` supplied by the caller.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    b = np.asarray(b_d, dtype=float)
    if b.ndim == 1:
        b = beta_to_matrix(b)
    if x.shape != (STATE_DIM,):
        raise ValueError(f"state must have 6 entries, got {x.shape}")
    if u.shape != (b.shape[1],):
        raise ValueError(f"control has {u.shape} entries, decoder expects {b.shape[1]}")
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (2,):
        raise ValueError("velocity noise must be a 2-vector")
    out = x.copy()
    out[POS] = x[POS] + x[VEL]
    out[VEL] = b @ u + omega
    return out


def spawn_target(x, params: TaskParams, rng: np.random.Generator):
    """Place a new goal at ``target_distance`` in a uniformly random direction.

    The circle is centred on the previous goal or on the cursor, depending on
    ``params.target_anchor``. After a successful trial the two differ by at
    most the hit radius.
    """
    theta = rng.uniform(0.0, 2.0 * np.pi)
    out = np.array(x, dtype=float)
    centre = out[GOAL] if params.target_anchor == "previous_target" else out[POS]
    out[GOAL] = centre + params.target_distance * np.array([np.cos(theta), np.sin(theta)])
    return out


def update_trial_status(status: TrialStatus, x, params: TaskParams) -> TrialStatus:
    if status.outcome != ONGOING:
        raise ValueError(f"trial already finished ({status.outcome})")
    x = np.asarray(x, dtype=float)
    elapsed = status.elapsed + 1
    inside = np.hypot(*(x[POS] - x[GOAL])) <= params.hit_radius
    dwell = status.dwell_counter + 1 if inside else 0
    if dwell >= params.dwell_required:
        outcome = SUCCESS
    elif elapsed >= params.trial_timeout:
        outcome = FAILURE
    else:
        outcome = ONGOING
    return replace(status, elapsed=elapsed, dwell_counter=dwell, outcome=outcome)


def trial_cumulative_error(trajectory) -> float:
    """Sum over steps of the cursor-to-goal distance."""
    traj = np.asarray(trajectory, dtype=float)
    if traj.size == 0:
        raise ValueError("empty trajectory")
    traj = np.atleast_2d(traj)
    return float(np.sum(np.hypot(traj[:, 4] - traj[:, 0], traj[:, 5] - traj[:, 1])))
