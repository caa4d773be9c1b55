"""Learned hop model and its runtime inversion over leg angles.

The forward map (interstitial velocity, alpha, beta) -> (displacement,
next velocity) is learned by a small tanh MLP.  All quantities given to
the network live in the heading frame of the starting velocity, so the
lateral input velocity is zero for every training sample; callers pass
world-frame vectors and the rotation is handled here.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import fsolve

from .dynamics import LegPlacement, SlipParams, nominal_hop, nominal_hop_batch
from .errors import Diverged, DynamicsError, ExhaustedSampling, NonConvergence

ALPHA_RANGE = (math.pi / 4, math.pi / 2)
BETA_RANGE = (-math.pi / 2, math.pi / 2)
SPEED_RANGE = (1.0, 8.0)
DESCENT_RANGE = (0.5, math.pi / 2)

DEFAULT_WEIGHTS = (1.0, 0.25, 100.0)
BACKUP_THRESHOLD = 0.3  # cell widths

_MAGIC = b"HOPM"
_VERSION = 1


# ---------------------------------------------------------------------------
# data

@dataclass(frozen=True)
class TrainingSample:
    v_i: tuple
    alpha: float
    beta: float
    disp: tuple
    v_next: tuple


def samples_to_arrays(samples: Sequence[TrainingSample]):
    x = np.array([[*s.v_i, s.alpha, s.beta] for s in samples], dtype=float)
    y = np.array([[*s.disp, *s.v_next] for s in samples], dtype=float)
    return x, y


def generate_training_data(params: SlipParams, n: int, seed=0, speed_range=SPEED_RANGE,
                           descent_range=DESCENT_RANGE, chunk: int = 4096) -> list[TrainingSample]:
    """Forward-simulate random hops over the training ranges.

    Velocities are drawn in the heading frame: speed uniform in
    ``speed_range``, descent angle below horizontal uniform in
    ``descent_range``.  Failed hops are discarded and redrawn.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    out: list[TrainingSample] = []
    draws = fails = 0
    while len(out) < n:
        m = chunk
        speed = rng.uniform(*speed_range, m)
        theta = rng.uniform(*descent_range, m)
        v = np.column_stack([speed * np.cos(theta), np.zeros(m), -speed * np.sin(theta)])
        alpha = rng.uniform(*ALPHA_RANGE, m)
        beta = rng.uniform(*BETA_RANGE, m)
        ok, disp, v_next = nominal_hop_batch(v, alpha, beta, params)
        for i in range(m):
            draws += 1
            if not ok[i]:
                fails += 1
                continue
            out.append(TrainingSample(tuple(v[i]), float(alpha[i]), float(beta[i]),
                                      tuple(disp[i]), tuple(v_next[i])))
            if len(out) == n:
                break
        if draws >= 200 and fails > 0.5 * draws:
            raise ExhaustedSampling(f"{fails} of {draws} draws failed; check the SLIP parameters")
    return out


# ---------------------------------------------------------------------------
# model

@dataclass
class HopModel:
    sizes: tuple
    weights: list
    biases: list
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray
    n_samples: int = 0
    final_loss: float = float("nan")
    val_rmse: float = float("nan")

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        h = (x - self.x_mean) / self.x_scale
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w + b)
        return (h @ self.weights[-1] + self.biases[-1]) * self.y_scale + self.y_mean

    def predict_with_angle_jacobian(self, x: np.ndarray):
        """Outputs (n, 5) and their derivatives w.r.t. (alpha, beta): (n, 5, 2)."""
        h = (x - self.x_mean) / self.x_scale
        tang = np.zeros((len(x), 2, h.shape[1]))
        tang[:, 0, 3] = 1.0 / self.x_scale[3]
        tang[:, 1, 4] = 1.0 / self.x_scale[4]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w + b)
            tang = (tang @ w) * (1.0 - h**2)[:, None, :]
        out = (h @ self.weights[-1] + self.biases[-1]) * self.y_scale + self.y_mean
        jac = (tang @ self.weights[-1]) * self.y_scale
        return out, np.transpose(jac, (0, 2, 1))

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<B", _VERSION))
        buf.write(struct.pack("<I", len(self.sizes)))
        buf.write(struct.pack(f"<{len(self.sizes)}I", *self.sizes))
        for arr in (self.x_mean, self.x_scale, self.y_mean, self.y_scale):
            buf.write(np.asarray(arr, dtype="<f8").tobytes())
        buf.write(struct.pack("<Qdd", self.n_samples, self.final_loss, self.val_rmse))
        for w, b in zip(self.weights, self.biases):
            buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            buf.write(np.asarray(b, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "HopModel":
        if data[:4] != _MAGIC:
            raise ValueError("not a hop model file")
        version = data[4]
        if version != _VERSION:
            raise ValueError(f"unsupported hop model version {version}")
        pos = 5
        (n_sizes,) = struct.unpack_from("<I", data, pos)
        pos += 4
        sizes = struct.unpack_from(f"<{n_sizes}I", data, pos)
        pos += 4 * n_sizes

        def take(count):
            nonlocal pos
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(float)
            pos += 8 * count
            return arr

        x_mean, x_scale = take(sizes[0]), take(sizes[0])
        y_mean, y_scale = take(sizes[-1]), take(sizes[-1])
        n_samples, final_loss, val_rmse = struct.unpack_from("<Qdd", data, pos)
        pos += struct.calcsize("<Qdd")
        weights, biases = [], []
        for i, o in zip(sizes[:-1], sizes[1:]):
            weights.append(take(i * o).reshape(i, o))
            biases.append(take(o))
        return cls(tuple(sizes), weights, biases, x_mean, x_scale, y_mean, y_scale,
                   int(n_samples), float(final_loss), float(val_rmse))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "HopModel":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple = (64, 64)
    epochs: int = 300
    batch_size: int = 128
    learning_rate: float = 3e-3
    val_fraction: float = 0.1
    seed: int = 0


def _backprop(weights, biases, x, y):
    # overflow shows up as a non-finite loss, which the caller reports as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        return _backprop_unchecked(weights, biases, x, y)


def _backprop_unchecked(weights, biases, x, y):
    hs = [x]
    for w, b in zip(weights[:-1], biases[:-1]):
        hs.append(np.tanh(hs[-1] @ w + b))
    out = hs[-1] @ weights[-1] + biases[-1]
    err = out - y
    g = 2.0 * err / err.size
    gw, gb = [None] * len(weights), [None] * len(weights)
    for i in reversed(range(len(weights))):
        gw[i] = hs[i].T @ g
        gb[i] = g.sum(0)
        if i > 0:
            g = (g @ weights[i].T) * (1.0 - hs[i] ** 2)
    return float((err**2).mean()), gw, gb


def train(config: TrainConfig, samples: Sequence[TrainingSample]) -> HopModel:
    """Fit the hop model with mini-batch Adam and a cosine learning-rate schedule.

    Returns the weights with the lowest validation loss seen at epoch ends.
    """
    if len(samples) < 500:
        raise ValueError("need at least 500 training samples")
    x, y = samples_to_arrays(samples)
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("training samples contain non-finite values")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(x))
    n_val = max(1, int(round(config.val_fraction * len(x))))
    val_idx, tr_idx = perm[:n_val], perm[n_val:]

    x_mean = x[tr_idx].mean(0)
    x_scale = x[tr_idx].std(0)
    x_scale[x_scale < 1e-12] = 1.0
    y_mean = y[tr_idx].mean(0)
    y_scale = y[tr_idx].std(0)
    y_scale[y_scale < 1e-12] = 1.0
    xn = (x - x_mean) / x_scale
    yn = (y - y_mean) / y_scale
    xt, yt, xv, yv = xn[tr_idx], yn[tr_idx], xn[val_idx], yn[val_idx]

    sizes = (x.shape[1], *config.hidden, y.shape[1])
    weights = [rng.normal(0.0, 1.0 / math.sqrt(i), (i, o)) for i, o in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(o) for o in sizes[1:]]
    params = weights + biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, eps = 0.9, 0.999, 1e-8

    n_batches = max(1, len(xt) // config.batch_size)
    total = config.epochs * n_batches
    step = 0
    best = (math.inf, None)
    loss = math.nan
    for _ in range(config.epochs):
        order = rng.permutation(len(xt))
        for j in range(n_batches):
            idx = order[j * config.batch_size:(j + 1) * config.batch_size]
            loss, gw, gb = _backprop(weights, biases, xt[idx], yt[idx])
            if not math.isfinite(loss):
                raise Diverged("training loss became non-finite")
            step += 1
            lr = config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * step / total))
            for k, (p, g) in enumerate(zip(params, gw + gb)):
                m1[k] = b1 * m1[k] + (1 - b1) * g
                m2[k] = b2 * m2[k] + (1 - b2) * g * g
                p -= lr * (m1[k] / (1 - b1**step)) / (np.sqrt(m2[k] / (1 - b2**step)) + eps)
        val_loss, _, _ = _backprop(weights, biases, xv, yv)
        if not math.isfinite(val_loss):
            raise Diverged("validation loss became non-finite")
        if val_loss < best[0]:
            best = (val_loss, ([w.copy() for w in weights], [b.copy() for b in biases]))

    weights, biases = best[1]
    model = HopModel(sizes, weights, biases, x_mean, x_scale, y_mean, y_scale,
                     n_samples=len(x), final_loss=float(loss))
    model.val_rmse = displacement_rmse(model, x[val_idx], y[val_idx])
    return model


def displacement_rmse(model: HopModel, x: np.ndarray, y: np.ndarray) -> float:
    """Root mean squared Euclidean displacement error (m)."""
    pred = model.predict(x)
    return float(np.sqrt(((pred[:, :2] - y[:, :2]) ** 2).sum(1).mean()))


# ---------------------------------------------------------------------------
# inversion

def bound_penalty(alpha, beta, alpha_range=ALPHA_RANGE, beta_range=BETA_RANGE):
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    pa = np.maximum.reduce([alpha - alpha_range[1], alpha_range[0] - alpha, np.zeros_like(alpha)])
    pb = np.maximum.reduce([beta - beta_range[1], beta_range[0] - beta, np.zeros_like(beta)])
    return pa + pb


def _bound_grad(alpha, beta):
    ga = np.where(alpha > ALPHA_RANGE[1], 1.0, np.where(alpha < ALPHA_RANGE[0], -1.0, 0.0))
    gb = np.where(beta > BETA_RANGE[1], 1.0, np.where(beta < BETA_RANGE[0], -1.0, 0.0))
    return ga, gb


@dataclass(frozen=True)
class AngleSolution:
    placement: LegPlacement
    cost: float
    predicted_disp: np.ndarray = field(compare=False)
    predicted_v: np.ndarray = field(compare=False)
    disp_error: float = math.nan  # |predicted displacement - target| (m)


def _heading(v) -> float:
    return math.atan2(v[1], v[0]) if math.hypot(v[0], v[1]) > 1e-9 else 0.0


def _rot(vec, angle):
    c, s = math.cos(angle), math.sin(angle)
    out = np.array(vec, dtype=float)
    out[0], out[1] = c * vec[0] - s * vec[1], s * vec[0] + c * vec[1]
    return out


def _cost_terms(model, v_local, alpha, beta, target, v_des, weights, with_grad):
    n = len(alpha)
    x = np.column_stack([np.tile(v_local, (n, 1)), alpha, beta])
    c1, c2, c3 = weights
    if with_grad:
        out, jac = model.predict_with_angle_jacobian(x)
    else:
        out, jac = model.predict(x), None
    dd = out[:, :2] - target
    dv = out[:, 2:] - v_des
    nd = np.sqrt((dd**2).sum(1))
    nv = np.sqrt((dv**2).sum(1))
    cost = c1 * nd + c2 * nv + c3 * bound_penalty(alpha, beta)
    if not with_grad:
        return cost, out, None
    ud = dd / np.maximum(nd, 1e-12)[:, None]
    uv = dv / np.maximum(nv, 1e-12)[:, None]
    grad = c1 * np.einsum("nk,nkj->nj", ud, jac[:, :2, :]) \
        + c2 * np.einsum("nk,nkj->nj", uv, jac[:, 2:, :])
    ga, gb = _bound_grad(alpha, beta)
    grad[:, 0] += c3 * ga
    grad[:, 1] += c3 * gb
    return cost, out, grad


def multistart_grid(n_alpha=4, n_beta=4):
    a = ALPHA_RANGE[0] + (np.arange(n_alpha) + 0.5) / n_alpha * (ALPHA_RANGE[1] - ALPHA_RANGE[0])
    b = BETA_RANGE[0] + (np.arange(n_beta) + 0.5) / n_beta * (BETA_RANGE[1] - BETA_RANGE[0])
    aa, bb = np.meshgrid(a, b, indexing="ij")
    return aa.ravel(), bb.ravel()


def solve_leg_angles(model: HopModel, v_i, target_disp, v_des, weights=DEFAULT_WEIGHTS,
                     iterations: int = 200, starts=None) -> AngleSolution:
    """Minimize the weighted tracking cost over (alpha, beta).

    Every start is refined by normalized gradient descent with an
    accept/reject step-size rule, so no start ever ends above its seed cost.
    ``v_i``, ``target_disp`` and ``v_des`` are world-frame vectors.
    """
    v_i = np.asarray(v_i, dtype=float)
    psi = _heading(v_i)
    v_local = _rot(v_i, -psi)
    v_local[1] = 0.0
    target = _rot(np.asarray(target_disp, dtype=float), -psi)
    v_des_local = _rot(np.asarray(v_des, dtype=float), -psi)

    alpha, beta = multistart_grid() if starts is None else (np.asarray(starts[0], float),
                                                            np.asarray(starts[1], float))
    alpha, beta = alpha.copy(), beta.copy()
    cost, out, grad = _cost_terms(model, v_local, alpha, beta, target, v_des_local, weights, True)
    step = np.full(len(alpha), 0.05)
    for _ in range(iterations):
        gnorm = np.sqrt((grad**2).sum(1))
        flat = gnorm < 1e-12
        direction = -grad / np.maximum(gnorm, 1e-300)[:, None]
        if flat.any():
            direction[flat] = _coordinate_direction(model, v_local, alpha[flat], beta[flat],
                                                    step[flat], target, v_des_local, weights,
                                                    cost[flat])
        na = alpha + step * direction[:, 0]
        nb = beta + step * direction[:, 1]
        ncost, nout, ngrad = _cost_terms(model, v_local, na, nb, target, v_des_local, weights, True)
        better = ncost < cost
        alpha = np.where(better, na, alpha)
        beta = np.where(better, nb, beta)
        cost = np.where(better, ncost, cost)
        out = np.where(better[:, None], nout, out)
        grad = np.where(better[:, None], ngrad, grad)
        step = np.where(better, np.minimum(step * 1.2, 0.5), step * 0.5)
        if np.all(step < 1e-9):
            break
    best = int(np.argmin(cost))
    disp = _rot(out[best, :2], psi)
    v_next = _rot(out[best, 2:], psi)
    return AngleSolution(LegPlacement(float(alpha[best]), float(beta[best])), float(cost[best]),
                         disp, v_next, float(np.linalg.norm(disp - np.asarray(target_disp)[:2])))


def _coordinate_direction(model, v_local, alpha, beta, step, target, v_des, weights, cost):
    """Gradient-free fallback: best improving axis move, or zero."""
    cands = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=float)
    best_dir = np.zeros((len(alpha), 2))
    best_cost = cost.copy()
    for d in cands:
        c, _, _ = _cost_terms(model, v_local, alpha + step * d[0], beta + step * d[1], target,
                              v_des, weights, False)
        improve = c < best_cost
        best_dir[improve] = d
        best_cost = np.where(improve, c, best_cost)
    return best_dir


def select_backup(model: HopModel, v_i, candidate_actions, weights=DEFAULT_WEIGHTS):
    """Solve every (target_disp, v_des) candidate; return (index, solution) of least cost."""
    if not candidate_actions:
        raise ValueError("candidate list is empty")
    best_idx, best_sol = -1, None
    for i, (target, v_des) in enumerate(candidate_actions):
        sol = solve_leg_angles(model, v_i, target, v_des, weights)
        if best_sol is None or sol.cost < best_sol.cost:
            best_idx, best_sol = i, sol
    return best_idx, best_sol


# ---------------------------------------------------------------------------
# gait and calibration

@dataclass(frozen=True)
class Gait:
    speed: float
    descent: float  # angle of the interstitial velocity below horizontal
    alpha: float
    distance: float

    def velocity(self, direction) -> np.ndarray:
        """Interstitial velocity of the gait heading along a planar unit ``direction``."""
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        h = self.speed * math.cos(self.descent)
        return np.array([h * d[0], h * d[1], -self.speed * math.sin(self.descent)])


def steady_gait(params: SlipParams, speed: float = 5.0, distance: float = 1.0,
                guess=(1.3, 1.4)) -> Gait:
    """Shooting for a periodic straight-line hop covering ``distance`` per hop."""

    def residual(z):
        theta, alpha = z
        v = [speed * math.cos(theta), 0.0, -speed * math.sin(theta)]
        try:
            disp, v_next = nominal_hop(v, LegPlacement(alpha, 0.0), params)
        except DynamicsError:
            return [10.0, 10.0]
        return [disp[0] - distance, math.atan2(-v_next[2], v_next[0]) - theta]

    sol, info, ier, msg = fsolve(residual, guess, full_output=True, xtol=1e-12)
    if ier != 1 or max(abs(r) for r in residual(sol)) > 1e-6:
        raise NonConvergence(f"steady gait shooting failed: {msg}")
    return Gait(speed, float(sol[0]), float(sol[1]), distance)


def calibrate_ctrl_err(model: HopModel, params: SlipParams, gait: Gait, n: int = 200,
                       seed: int = 0, cell: float = 1.0, quantile: float = 0.9) -> float:
    """Quantile of |simulated - target| displacement over random grid-action hops.

    Starts from the gait, executes random 1- and 2-cell hops in the four
    compass directions with the backup rule, from random in-cell offsets.
    """
    rng = np.random.default_rng(seed)
    dirs = [np.array(d, dtype=float) for d in ((0, 1), (1, 0), (0, -1), (-1, 0))]
    v = gait.velocity((1.0, 0.0))
    offset = np.zeros(2)
    errors = []
    while len(errors) < n:
        cands = []
        for d in dirs:
            for length in (1, 2):
                cands.append((d * length * cell - offset, gait.velocity(d)))
        want = int(rng.integers(len(cands)))
        sol = solve_leg_angles(model, v, *cands[want])
        if sol.disp_error > BACKUP_THRESHOLD * cell:
            want, sol = select_backup(model, v, cands)
        try:
            disp, v_next = nominal_hop(v, sol.placement, params)
        except DynamicsError:
            v = gait.velocity(dirs[int(rng.integers(4))])
            continue
        errors.append(float(np.linalg.norm(disp - cands[want][0])))
        landing = offset + disp
        offset = landing - np.round(landing / cell) * cell
        v = v_next
    return float(np.quantile(errors, quantile))
