"""Desk-scale conditional flow-matching downscaler.

A small fully connected residual network approximates the velocity field of
a linear noise-to-data interpolation over flattened state sequences of shape
(seq_len, n_var, height, width).  The path convention is tau=0 noise,
tau=1 data:

    x_tau = (1 - tau) * x0 + tau * x1,      target velocity u = x1 - x0,

and the network minimizes the mean squared error between its prediction and
u.  The velocity field is related to the score of the interpolation marginal
by an affine transformation; only the velocity form is implemented here.

Time conditioning: each step's hour-of-day (0/6/12/18) and month (1..12)
index learned embedding tables whose per-step sums are concatenated and fed
additively into the first hidden layer.  During training the whole tag
vector is replaced by a learned null embedding with probability `p_drop`, so
conditional and unconditional velocities can be combined at sampling time
(v_uncond + w * (v_cond - v_uncond)).

The velocity is parameterized through an anchored head.  With
rho(tau) = min(1 / (1 - tau), GAIN_CLAMP), the network output n(x, tau,
tags) enters as

    v = sqrt(rho) * (n - x),        n = x + MLP(features),

so the fixed head and the learned correction each carry half of the
inverse-time gain rho that drives the late-path collapse onto the data
manifold: the MLP only ever needs bounded coefficients, the loss curvature
stays within a factor sqrt(GAIN_CLAMP) of uniform (plain fixed-step SGD
remains stable), and the composed velocity still reaches the full
(xhat1 - x) / (1 - tau) form of the exact field.  The loss is the plain
flow-matching regression of v onto u.

Observation guidance: for a linear coarsening operator A with Gaussian noise
sigma_y, each Euler step forms the one-step data estimate
x1_hat = x + (1 - tau) * v (identical to the network's prediction wherever
the gain is unclamped) and adds a term proportional to
A^T (y - A x1_hat) / sigma_y^2.  The proportionality follows the
conjugate-Gaussian schedule for a unit-variance prior, which makes the
construction exact for an isotropic Gaussian data distribution and a good
approximation after per-variable standardization.  This is a deliberate
simplification of full posterior machinery: it never differentiates through
the network.

Everything is plain NumPy with an exact hand-written backward pass, so
gradients are finite-difference checkable and results are bit-reproducible
from a seed.  Networks are sized for desk-scale grids (height, width <= 16,
seq_len <= 8).
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    MetaMismatchError,
    MissingFileError,
    NonFiniteLossError,
    NonFiniteStateError,
    ShapeMismatchError,
    ValidationError,
)
from .gridstore import GridField

VALID_HOURS = (0, 6, 12, 18)

MAX_HEIGHT = 16
MAX_WIDTH = 16
MAX_SEQ_LEN = 8

#: Cap on the inverse-time gain 1/(1 - tau) of the velocity head; Euler
#: sampling stays stable for n_steps >= GAIN_CLAMP.
GAIN_CLAMP = 16.0


def _gain(tau):
    return np.minimum(1.0 / np.maximum(1.0 - tau, 1.0 / GAIN_CLAMP),
                      GAIN_CLAMP)


@dataclass(frozen=True)
class TimeTags:
    """Per-step hour-of-day and month tags for one sequence."""

    hours: np.ndarray
    months: np.ndarray

    def __post_init__(self):
        hours = np.asarray(self.hours, dtype=np.int64)
        months = np.asarray(self.months, dtype=np.int64)
        if hours.shape != months.shape or hours.ndim != 1:
            raise ValidationError("hours and months must be equal-length 1-D")
        if not np.all(np.isin(hours, VALID_HOURS)):
            raise ValidationError(
                f"hours must be drawn from {VALID_HOURS}, got {hours.tolist()}"
            )
        if hours.size and (months.min() < 1 or months.max() > 12):
            raise ValidationError("months must lie in 1..12")
        object.__setattr__(self, "hours", hours)
        object.__setattr__(self, "months", months)

    def __len__(self):
        return self.hours.size


def tags_from_times(times):
    """Build TimeTags from epoch-second timestamps."""
    times = np.asarray(times, dtype=np.int64)
    hours = (times // 3600) % 24
    dt64 = times.astype("datetime64[s]")
    months = dt64.astype("datetime64[M]").astype(np.int64) % 12 + 1
    return TimeTags(hours, months)


@dataclass(frozen=True)
class FlowConfig:
    """Network and problem dimensions for one flow model."""

    seq_len: int
    n_var: int
    height: int
    width: int
    hidden: int = 128
    n_blocks: int = 2
    d_embed: int = 8
    n_fourier: int = 4
    p_drop: float = 0.1

    def __post_init__(self):
        if self.seq_len < 1 or self.seq_len > MAX_SEQ_LEN:
            raise ValidationError(f"seq_len must be in 1..{MAX_SEQ_LEN}")
        if self.height < 1 or self.height > MAX_HEIGHT:
            raise ValidationError(f"height must be in 1..{MAX_HEIGHT}")
        if self.width < 1 or self.width > MAX_WIDTH:
            raise ValidationError(f"width must be in 1..{MAX_WIDTH}")
        if self.n_var < 1:
            raise ValidationError("n_var must be positive")
        if self.hidden < 1 or self.d_embed < 1 or self.n_fourier < 1:
            raise ValidationError("hidden, d_embed, n_fourier must be >= 1")
        if self.n_blocks < 0:
            raise ValidationError("n_blocks must be >= 0")
        if not (0.0 <= self.p_drop < 1.0):
            raise ValidationError("p_drop must lie in [0, 1)")

    @property
    def state_dim(self):
        return self.seq_len * self.n_var * self.height * self.width

    @property
    def state_shape(self):
        return (self.seq_len, self.n_var, self.height, self.width)


@dataclass
class FlowModel:
    """Parameters of the velocity network plus normalization metadata.

    `params` maps names to float64 arrays.  `norm_mean`/`norm_std` hold the
    per-variable standardization applied at the public API boundary (raw in,
    raw out); identity by default.  `variables`, `fine_step_s`, `lats`,
    `lons` are set when the model is trained on gridded fields and are what
    the downscaling pipeline needs to reassemble outputs.
    """

    config: FlowConfig
    params: dict
    norm_mean: np.ndarray
    norm_std: np.ndarray
    variables: tuple = ()
    fine_step_s: int = 0
    lats: np.ndarray = None
    lons: np.ndarray = None
    seed: int = 0
    metadata: dict = field(default_factory=dict)


def _param_spec(cfg):
    """Canonical (name, shape) list; fixes blob order for checkpoints."""
    d, hid = cfg.state_dim, cfg.hidden
    spec = [
        # Input features are [x, (2 tau - 1) x]: the ramp-scaled copy lets
        # the first layer express the tau-dependent linear velocity that
        # dominates near-Gaussian targets.
        ("w_in", (2 * d, hid)),
        ("w_tau", (2 * cfg.n_fourier, hid)),
        ("w_tag", (cfg.seq_len * cfg.d_embed, hid)),
        ("b_in", (hid,)),
    ]
    for r in range(cfg.n_blocks):
        spec += [
            (f"blk{r}_w1", (hid, hid)),
            (f"blk{r}_b1", (hid,)),
            (f"blk{r}_w2", (hid, hid)),
            (f"blk{r}_b2", (hid,)),
        ]
    spec += [
        ("w_out", (hid, d)),
        ("b_out", (d,)),
        ("emb_hour", (4, cfg.d_embed)),
        ("emb_month", (12, cfg.d_embed)),
        ("emb_null", (cfg.seq_len * cfg.d_embed,)),
    ]
    return spec


def init_flow_model(cfg, seed=0):
    """Initialize a model with fan-in scaled Gaussian weights."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in _param_spec(cfg):
        if name.startswith("b"):
            params[name] = np.zeros(shape)
        elif name.startswith("emb"):
            params[name] = rng.normal(0.0, 0.5, size=shape)
        elif name == "w_out" or name.endswith("_w2"):
            params[name] = rng.normal(0.0, 0.1, size=shape)
        else:
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
    return FlowModel(
        config=cfg,
        params=params,
        norm_mean=np.zeros(cfg.n_var),
        norm_std=np.ones(cfg.n_var),
        seed=int(seed),
    )


def n_params(model):
    return sum(p.size for p in model.params.values())


def get_flat_params(model):
    return np.concatenate([model.params[n].ravel()
                           for n, _ in _param_spec(model.config)])


def set_flat_params(model, flat):
    flat = np.asarray(flat, dtype=np.float64)
    pos = 0
    for name, shape in _param_spec(model.config):
        size = int(np.prod(shape))
        model.params[name] = flat[pos:pos + size].reshape(shape).copy()
        pos += size
    if pos != flat.size:
        raise ShapeMismatchError(
            f"parameter vector has {flat.size} entries, model needs {pos}"
        )


def _fourier(tau, n_fourier):
    tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    freqs = 2.0 ** np.arange(n_fourier)
    ang = 2.0 * np.pi * tau[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _tag_vectors(model, hours, months, dropped):
    """Per-element tag vector (B, L*d): embedded tags or the null vector."""
    cfg = model.config
    p = model.params
    B, L = hours.shape
    idx_h = hours // 6
    per_step = p["emb_hour"][idx_h] + p["emb_month"][months - 1]  # (B, L, d)
    vec = per_step.reshape(B, L * cfg.d_embed)
    if dropped is not None and dropped.any():
        vec = np.where(dropped[:, None], p["emb_null"][None, :], vec)
    return vec


def _forward(model, x_flat, tau, hours, months, dropped, cache=False):
    """Endpoint prediction for a batch; optionally keep activations.

    Residual-stream writes (block outputs and the final projection) carry a
    fixed 1/sqrt(hidden) scale so the loss curvature is width-independent
    and fixed-step SGD stays stable.
    """
    p = model.params
    scale = 1.0 / np.sqrt(model.config.hidden)
    tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    four = _fourier(tau, model.config.n_fourier)
    tagvec = _tag_vectors(model, hours, months, dropped)
    ramp = (2.0 * tau - 1.0)[:, None]
    x_feats = np.concatenate([x_flat, ramp * x_flat], axis=1)
    h = (x_feats @ p["w_in"] + four @ p["w_tau"] + tagvec @ p["w_tag"]
         + p["b_in"])
    acts = {"four": four, "tagvec": tagvec, "x_feats": x_feats,
            "h_in": [], "t": []}
    for r in range(model.config.n_blocks):
        if cache:
            acts["h_in"].append(h)
        t = np.tanh(h @ p[f"blk{r}_w1"] + p[f"blk{r}_b1"])
        if cache:
            acts["t"].append(t)
        h = h + scale * (t @ p[f"blk{r}_w2"]) + p[f"blk{r}_b2"]
    acts["h_out"] = h
    # Identity skip: the MLP predicts the correction from the current state
    # to the expected endpoint, so it starts near-optimal at tau -> 1.
    xhat = x_flat + scale * (h @ p["w_out"]) + p["b_out"]
    return (xhat, acts) if cache else (xhat, None)


def _head(x_flat, tau, xhat):
    """Velocity from the anchored prediction: sqrt(gain) * (xhat - x)."""
    tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    return np.sqrt(_gain(tau))[:, None] * (xhat - x_flat)


def _backward(model, x_flat, dropped, hours, months, acts, dv):
    """Exact gradients of the network output contracted with dv."""
    p = model.params
    cfg = model.config
    grads = {}
    scale = 1.0 / np.sqrt(cfg.hidden)
    h_out = acts["h_out"]
    grads["w_out"] = scale * (h_out.T @ dv)
    grads["b_out"] = dv.sum(axis=0)
    dh = scale * (dv @ p["w_out"].T)
    for r in reversed(range(cfg.n_blocks)):
        t = acts["t"][r]
        h_in = acts["h_in"][r]
        grads[f"blk{r}_w2"] = scale * (t.T @ dh)
        grads[f"blk{r}_b2"] = dh.sum(axis=0)
        dt = scale * (dh @ p[f"blk{r}_w2"].T)
        da = dt * (1.0 - t * t)
        grads[f"blk{r}_w1"] = h_in.T @ da
        grads[f"blk{r}_b1"] = da.sum(axis=0)
        dh = dh + da @ p[f"blk{r}_w1"].T
    grads["w_in"] = acts["x_feats"].T @ dh
    grads["w_tau"] = acts["four"].T @ dh
    grads["w_tag"] = acts["tagvec"].T @ dh
    grads["b_in"] = dh.sum(axis=0)

    dtag = dh @ p["w_tag"].T                              # (B, L*d)
    grads["emb_hour"] = np.zeros_like(p["emb_hour"])
    grads["emb_month"] = np.zeros_like(p["emb_month"])
    grads["emb_null"] = np.zeros_like(p["emb_null"])
    if dropped is None:
        kept = np.ones(x_flat.shape[0], dtype=bool)
    else:
        kept = ~dropped
        grads["emb_null"] = dtag[dropped].sum(axis=0)
    if kept.any():
        B_kept = int(kept.sum())
        dstep = dtag[kept].reshape(B_kept, cfg.seq_len, cfg.d_embed)
        idx_h = (hours[kept] // 6).ravel()
        idx_m = (months[kept] - 1).ravel()
        flat = dstep.reshape(-1, cfg.d_embed)
        np.add.at(grads["emb_hour"], idx_h, flat)
        np.add.at(grads["emb_month"], idx_m, flat)
    return grads


def _standardize(model, x):
    mean = model.norm_mean.reshape(1, -1, 1, 1)
    std = model.norm_std.reshape(1, -1, 1, 1)
    return (x - mean) / std


def _destandardize(model, x):
    mean = model.norm_mean.reshape(1, -1, 1, 1)
    std = model.norm_std.reshape(1, -1, 1, 1)
    return x * std + mean


def _check_batch(model, x1, hours, months):
    cfg = model.config
    x1 = np.asarray(x1, dtype=np.float64)
    if x1.ndim == 4:
        x1 = x1[None]
    if x1.shape[1:] != cfg.state_shape:
        raise ShapeMismatchError(
            f"batch shape {x1.shape[1:]} != model state {cfg.state_shape}"
        )
    B = x1.shape[0]
    hours = np.broadcast_to(np.asarray(hours, dtype=np.int64), (B, cfg.seq_len))
    months = np.broadcast_to(np.asarray(months, dtype=np.int64),
                             (B, cfg.seq_len))
    return x1, hours, months


def fm_loss(model, x1, hours, months, rng):
    """Flow-matching loss and exact parameter gradients for one batch.

    Draws tau ~ U(0, 1) and x0 ~ N(0, I) per element, forms the linear
    interpolant x_tau = (1 - tau) x0 + tau x1 and regresses the network
    velocity onto u = x1 - x0 (mean squared error over all components).
    Each element's tags are replaced by the null embedding with probability
    `p_drop` (classifier-free training).

    Parameters
    ----------
    model : FlowModel
    x1 : array, shape (B, L, V, H, W) or (L, V, H, W)
        Data batch in physical units.
    hours, months : arrays broadcastable to (B, L)
    rng : numpy Generator
        Drives tau, noise, and tag dropout; fixing it makes the loss a
        deterministic function of the parameters.

    Returns
    -------
    (loss, grads)
        Scalar loss and a dict of per-parameter gradient arrays.

    Raises
    ------
    NonFiniteLossError
        If the loss is NaN or infinite.
    """
    cfg = model.config
    x1, hours, months = _check_batch(model, x1, hours, months)
    B = x1.shape[0]
    x1 = _standardize(model, x1).reshape(B, cfg.state_dim)

    tau = rng.uniform(0.0, 1.0, size=B)
    x0 = rng.standard_normal((B, cfg.state_dim))
    dropped = (rng.uniform(size=B) < cfg.p_drop) if cfg.p_drop > 0 else None
    x_tau = (1.0 - tau)[:, None] * x0 + tau[:, None] * x1
    u = x1 - x0

    xhat, acts = _forward(model, x_tau, tau, hours, months, dropped,
                          cache=True)
    v = _head(x_tau, tau, xhat)
    diff = v - u
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"loss is {loss}")
    dxhat = (2.0 / diff.size) * diff * np.sqrt(_gain(tau))[:, None]
    grads = _backward(model, x_tau, dropped, hours, months, acts, dxhat)
    return loss, grads


def sgd_step(model, grads, lr):
    """Plain fixed-step gradient descent update, in place."""
    for name in model.params:
        model.params[name] -= lr * grads[name]


def train(model, data, hours, months, steps, batch_size, lr, rng,
          log_every=0):
    """Train with plain SGD on random minibatches.

    Parameters
    ----------
    model : FlowModel (updated in place)
    data : array (N, L, V, H, W)
        Training sequences in physical units.
    hours, months : arrays (N, L)
    steps, batch_size, lr : SGD settings (fixed step size).
    rng : numpy Generator
    log_every : int
        If positive, record the running loss every that many steps.

    Returns
    -------
    list of (step, loss) pairs (empty if log_every == 0).
    """
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    history = []
    running = 0.0
    for step in range(1, steps + 1):
        idx = rng.integers(0, n, size=min(batch_size, n))
        loss, grads = fm_loss(model, data[idx], hours[idx], months[idx], rng)
        sgd_step(model, grads, lr)
        running += loss
        if log_every and step % log_every == 0:
            history.append((step, running / log_every))
            running = 0.0
    return history


def fit_normalization(model, data):
    """Set per-variable standardization from training data, in place."""
    data = np.asarray(data, dtype=np.float64)
    axes = (0, 1, 3, 4)
    mean = data.mean(axis=axes)
    std = data.std(axis=axes)
    std = np.where(std > 1e-12, std, 1.0)
    model.norm_mean = mean
    model.norm_std = std


def _integrate(velocity_fn, x0, n_steps, tau_grid="left"):
    """Euler integration of dx/dtau = v(x, tau) from tau=0 to 1.

    One velocity evaluation per step.  `tau_grid="left"` evaluates at the
    interval's left endpoint (exact for fields that are singularly
    contracting at tau -> 1); `"mid"` evaluates at the interval midpoint,
    which halves the leading integration bias of smooth learned fields and
    is what the model samplers use.
    """
    if n_steps < 1:
        raise ValidationError(f"n_steps must be >= 1, got {n_steps}")
    offset = 0.5 if tau_grid == "mid" else 0.0
    x = x0.astype(np.float64, copy=True)
    dtau = 1.0 / n_steps
    for k in range(n_steps):
        tau = (k + offset) * dtau
        x = x + dtau * velocity_fn(x, tau)
        if not np.all(np.isfinite(x)):
            raise NonFiniteStateError(f"state diverged at tau={tau:.4f}")
    return x


def _model_velocity(model, x_flat, tau, tags):
    B = x_flat.shape[0]
    L = model.config.seq_len
    if tags is None:
        hours = np.zeros((B, L), dtype=np.int64)
        months = np.ones((B, L), dtype=np.int64)
        dropped = np.ones(B, dtype=bool)
    else:
        hours = np.broadcast_to(tags.hours, (B, L))
        months = np.broadcast_to(tags.months, (B, L))
        dropped = None
    tau_vec = np.full(B, tau)
    xhat, _ = _forward(model, x_flat, tau_vec, hours, months, dropped)
    return _head(x_flat, tau_vec, xhat)


def fm_sample(model, tags, n_steps, rng):
    """Draw one sequence by Euler integration of the learned velocity.

    Parameters
    ----------
    model : FlowModel
    tags : TimeTags or None
        None samples the unconditional branch (null embedding).
    n_steps : int
        Euler steps from noise (tau=0) to data (tau=1).
    rng : numpy Generator
        Supplies the initial noise; same seed, same sample.

    Returns
    -------
    array, shape (L, V, H, W), in physical units.
    """
    cfg = model.config
    if tags is not None and len(tags) != cfg.seq_len:
        raise ShapeMismatchError(
            f"tags length {len(tags)} != seq_len {cfg.seq_len}"
        )
    x0 = rng.standard_normal((1, cfg.state_dim))
    x = _integrate(lambda x, tau: _model_velocity(model, x, tau, tags),
                   x0, n_steps, tau_grid="mid")
    x = x.reshape((1,) + cfg.state_shape)
    return _destandardize(model, x)[0]


@dataclass(frozen=True)
class ObservationModel:
    """Linear block-mean coarsening plus Gaussian observation noise.

    The operator averages blocks of `temporal_factor` steps and
    `lat_factor` x `lon_factor` cells (variables are never mixed).
    """

    temporal_factor: int = 1
    lat_factor: int = 1
    lon_factor: int = 1
    noise_std: float = 0.1

    def __post_init__(self):
        if min(self.temporal_factor, self.lat_factor, self.lon_factor) < 1:
            raise ValidationError("coarsening factors must be >= 1")
        if not self.noise_std > 0:
            raise ValidationError("noise_std must be positive")

    @property
    def block_size(self):
        return self.temporal_factor * self.lat_factor * self.lon_factor

    def _check(self, shape):
        L, V, H, W = shape
        if (L % self.temporal_factor or H % self.lat_factor
                or W % self.lon_factor):
            raise ShapeMismatchError(
                f"factors {(self.temporal_factor, self.lat_factor, self.lon_factor)} "
                f"do not divide state shape {shape}"
            )

    def apply(self, x):
        """A x: block means, (L, V, H, W) -> (L/ft, V, H/fy, W/fx)."""
        x = np.asarray(x, dtype=np.float64)
        self._check(x.shape)
        L, V, H, W = x.shape
        ft, fy, fx = self.temporal_factor, self.lat_factor, self.lon_factor
        blocks = x.reshape(L // ft, ft, V, H // fy, fy, W // fx, fx)
        return blocks.mean(axis=(1, 4, 6))

    def adjoint(self, y):
        """A^T y: replicate over blocks and divide by the block size."""
        y = np.asarray(y, dtype=np.float64)
        ft, fy, fx = self.temporal_factor, self.lat_factor, self.lon_factor
        out = np.repeat(y, ft, axis=0)
        out = np.repeat(out, fy, axis=2)
        out = np.repeat(out, fx, axis=3)
        return out / self.block_size


def guided_sample(model, y, obs_model, tags, n_steps, guidance_scale, rng):
    """Sample a sequence consistent with a coarse observation.

    At every Euler step the conditional and unconditional velocities are
    combined as v_u + w * (v_c - v_u), the one-step data estimate
    x1_hat = x + (1 - tau) * v is formed, and a likelihood-gradient term
    proportional to A^T (y - A x1_hat) / sigma_y^2 is added with the
    conjugate-Gaussian schedule (exact for a unit-variance isotropic prior).

    Parameters
    ----------
    model : FlowModel
    y : array or None
        Coarse observation, shape (L/ft, V, H/fy, W/fx) in physical units;
        None disables observation guidance.
    obs_model : ObservationModel
    tags : TimeTags or None
    n_steps : int
    guidance_scale : float
        Classifier-free weight w; 0 is purely unconditional, 1 purely
        conditional.
    rng : numpy Generator

    Returns
    -------
    array, shape (L, V, H, W), in physical units.
    """
    cfg = model.config
    if tags is not None and len(tags) != cfg.seq_len:
        raise ShapeMismatchError(
            f"tags length {len(tags)} != seq_len {cfg.seq_len}"
        )
    obs_model._check(cfg.state_shape)
    if y is not None:
        y = np.asarray(y, dtype=np.float64)
        expected = (cfg.seq_len // obs_model.temporal_factor, cfg.n_var,
                    cfg.height // obs_model.lat_factor,
                    cfg.width // obs_model.lon_factor)
        if y.shape != expected:
            raise ShapeMismatchError(
                f"observation shape {y.shape} != A's output {expected}"
            )
        # Standardize exactly like states; A preserves per-variable affine
        # transforms because its rows sum to one within a variable.
        y_std = ((y - model.norm_mean.reshape(1, -1, 1, 1))
                 / model.norm_std.reshape(1, -1, 1, 1))
    w = float(guidance_scale)
    bsz = obs_model.block_size
    sig2 = obs_model.noise_std ** 2

    def velocity(x_flat, tau):
        if w == 1.0:
            v = _model_velocity(model, x_flat, tau, tags)
        elif w == 0.0:
            v = _model_velocity(model, x_flat, tau, None)
        else:
            v_c = _model_velocity(model, x_flat, tau, tags)
            v_u = _model_velocity(model, x_flat, tau, None)
            v = v_u + w * (v_c - v_u)
        if y is None:
            return v
        x = x_flat.reshape((-1,) + cfg.state_shape)
        vv = v.reshape(x.shape)
        x1_hat = x + (1.0 - tau) * vv
        denom_tau = tau * tau + (1.0 - tau) ** 2
        s_tau = (1.0 - tau) ** 2 / denom_tau       # Var(x1 | x_tau), unit prior
        kappa = (1.0 - tau) / denom_tau            # s_tau / (1 - tau)
        resid = y_std - obs_model.apply(x1_hat[0])
        grad = obs_model.adjoint(resid) * bsz      # A^T resid * block size
        guidance = kappa * grad / (s_tau + bsz * sig2)
        return (vv + guidance[None]).reshape(v.shape)

    x0 = rng.standard_normal((1, cfg.state_dim))
    x = _integrate(velocity, x0, n_steps, tau_grid="mid")
    x = x.reshape((1,) + cfg.state_shape)
    return _destandardize(model, x)[0]


# ---------------------------------------------------------------------------
# Training on gridded fields and the downscaling pipeline


def _stack_fields(fields, variables):
    first = fields[variables[0]]
    arrays = []
    for name in variables:
        f = fields[name]
        if not f.same_axes(first):
            raise ShapeMismatchError(f"field {name} is on different axes")
        arrays.append(f.values.astype(np.float64))
    return np.stack(arrays, axis=1), first   # (T, V, H, W)


def make_sequences(fields, variables, seq_len, stride=None):
    """Cut gridded fields into (N, L, V, H, W) sequences plus per-step tags.

    Windows are taken at multiples of `stride` (default: non-overlapping,
    stride = seq_len).
    """
    stacked, first = _stack_fields(fields, variables)
    n_time = stacked.shape[0]
    stride = seq_len if stride is None else stride
    starts = np.arange(0, n_time - seq_len + 1, stride)
    if starts.size == 0:
        raise ShapeMismatchError(
            f"series of {n_time} steps too short for seq_len {seq_len}"
        )
    data = np.stack([stacked[s:s + seq_len] for s in starts])
    hours = np.stack([((first.times[s:s + seq_len] // 3600) % 24)
                      for s in starts])
    dt64 = first.times.astype("datetime64[s]")
    months_all = dt64.astype("datetime64[M]").astype(np.int64) % 12 + 1
    months = np.stack([months_all[s:s + seq_len] for s in starts])
    return data, hours.astype(np.int64), months.astype(np.int64), first


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for training on gridded fields."""

    seq_len: int = 4
    hidden: int = 128
    n_blocks: int = 2
    d_embed: int = 8
    n_fourier: int = 4
    p_drop: float = 0.1
    steps: int = 2000
    batch_size: int = 64
    lr: float = 0.02
    seed: int = 0


def train_on_fields(fields, cfg=TrainConfig(), variables=None):
    """Train a flow model on a set of fine-resolution gridded fields.

    Parameters
    ----------
    fields : mapping
        Variable id -> GridField on shared axes.
    cfg : TrainConfig
    variables : sequence, optional
        Variable order; defaults to sorted(fields).

    Returns
    -------
    (FlowModel, history)
    """
    variables = tuple(sorted(fields) if variables is None else variables)
    data, hours, months, first = make_sequences(fields, variables, cfg.seq_len)
    flow_cfg = FlowConfig(
        seq_len=cfg.seq_len, n_var=len(variables),
        height=first.lats.size, width=first.lons.size,
        hidden=cfg.hidden, n_blocks=cfg.n_blocks, d_embed=cfg.d_embed,
        n_fourier=cfg.n_fourier, p_drop=cfg.p_drop,
    )
    model = init_flow_model(flow_cfg, seed=cfg.seed)
    model.variables = variables
    model.fine_step_s = first.time_step_s
    model.lats = first.lats
    model.lons = first.lons
    fit_normalization(model, data)
    rng = np.random.default_rng(cfg.seed)
    history = train(model, data, hours, months, cfg.steps, cfg.batch_size,
                    cfg.lr, rng, log_every=max(1, cfg.steps // 20))
    return model, history


@dataclass(frozen=True)
class DownscaleConfig:
    """Sampling settings for the downscaling pipeline."""

    n_samples: int = 10
    n_steps: int = 64
    sigma_y: float = 0.1
    guidance_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValidationError("n_samples must be >= 1")


def downscale_pipeline(coarse_fields, model, cfg=DownscaleConfig()):
    """Generate fine-resolution samples consistent with coarse fields.

    The coarse fields are processed in non-overlapping temporal chunks of
    the model's sequence length; each chunk is sampled `n_samples` times
    with observation guidance, using hour/month tags derived from the fine
    timestamps.

    Parameters
    ----------
    coarse_fields : mapping
        Variable id -> coarse GridField; the variable set must match the
        model's training variables, and the coarse grid must be an integer
        coarsening of the model's fine grid.
    model : FlowModel trained via `train_on_fields`.
    cfg : DownscaleConfig

    Returns
    -------
    (samples, mean)
        `samples` is a list of n_samples dicts of fine GridFields;
        `mean` is the per-variable arithmetic mean across samples.
    """
    if not model.variables:
        raise ValidationError("model was not trained on gridded fields")
    if set(coarse_fields) != set(model.variables):
        raise ValidationError(
            f"coarse variables {sorted(coarse_fields)} != model variables "
            f"{sorted(model.variables)}"
        )
    variables = model.variables
    y_all, first = _stack_fields(coarse_fields, variables)
    mcfg = model.config

    fy = mcfg.height // first.lats.size
    fx = mcfg.width // first.lons.size
    if fy * first.lats.size != mcfg.height or fx * first.lons.size != mcfg.width:
        raise ShapeMismatchError(
            f"coarse grid {first.lats.size}x{first.lons.size} is not an "
            f"integer coarsening of {mcfg.height}x{mcfg.width}"
        )
    coarse_step = first.time_step_s or model.fine_step_s
    if coarse_step % model.fine_step_s:
        raise ShapeMismatchError(
            f"coarse step {coarse_step}s not a multiple of fine "
            f"{model.fine_step_s}s"
        )
    ft = coarse_step // model.fine_step_s
    if mcfg.seq_len % ft:
        raise ShapeMismatchError(
            f"temporal factor {ft} must divide seq_len {mcfg.seq_len}"
        )
    n_coarse_per_chunk = mcfg.seq_len // ft
    if y_all.shape[0] % n_coarse_per_chunk:
        raise ShapeMismatchError(
            f"{y_all.shape[0]} coarse steps do not tile into chunks of "
            f"{n_coarse_per_chunk}"
        )
    n_chunks = y_all.shape[0] // n_coarse_per_chunk
    obs = ObservationModel(temporal_factor=ft, lat_factor=fy, lon_factor=fx,
                           noise_std=cfg.sigma_y)

    n_fine = n_coarse_per_chunk * ft * n_chunks
    fine_times = (int(first.times[0])
                  + model.fine_step_s * np.arange(n_fine, dtype=np.int64))

    streams = [np.random.default_rng(s)
               for s in np.random.SeedSequence(cfg.seed).generate_state(
                   cfg.n_samples)]
    outputs = np.empty((cfg.n_samples, n_fine, len(variables),
                        mcfg.height, mcfg.width))
    for c in range(n_chunks):
        t0 = c * mcfg.seq_len
        tags = tags_from_times(fine_times[t0:t0 + mcfg.seq_len])
        y_chunk = y_all[c * n_coarse_per_chunk:(c + 1) * n_coarse_per_chunk]
        for s in range(cfg.n_samples):
            seq = guided_sample(model, y_chunk, obs, tags, cfg.n_steps,
                                cfg.guidance_scale, streams[s])
            outputs[s, t0:t0 + mcfg.seq_len] = seq

    def to_fields(arr):
        out = {}
        for vi, name in enumerate(variables):
            out[name] = GridField(
                coarse_fields[name].variable, fine_times, model.lats,
                model.lons, arr[:, vi].astype(np.float32))
        return out

    samples = [to_fields(outputs[s]) for s in range(cfg.n_samples)]
    mean = to_fields(outputs.mean(axis=0))
    return samples, mean


# ---------------------------------------------------------------------------
# Checkpoints: JSON header + raw little-endian float32 parameter blob

CHECKPOINT_FORMAT = "gridlull-flowmodel-v1"


def save_checkpoint(model, path):
    """Write `model.json` (header) and `params.f32le` (blob) under `path`."""
    os.makedirs(path, exist_ok=True)
    cfg = model.config
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": {
            "seq_len": cfg.seq_len, "n_var": cfg.n_var,
            "height": cfg.height, "width": cfg.width,
            "hidden": cfg.hidden, "n_blocks": cfg.n_blocks,
            "d_embed": cfg.d_embed, "n_fourier": cfg.n_fourier,
            "p_drop": cfg.p_drop,
        },
        "norm_mean": model.norm_mean.tolist(),
        "norm_std": model.norm_std.tolist(),
        "variables": list(model.variables),
        "fine_step_s": int(model.fine_step_s),
        "lats": None if model.lats is None else model.lats.tolist(),
        "lons": None if model.lons is None else model.lons.tolist(),
        "seed": int(model.seed),
        "params": [{"name": n, "shape": list(s)}
                   for n, s in _param_spec(cfg)],
        "metadata": model.metadata,
    }
    with open(os.path.join(path, "model.json"), "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    blob = np.ascontiguousarray(get_flat_params(model), dtype="<f4")
    with open(os.path.join(path, "params.f32le"), "wb") as fh:
        fh.write(blob.tobytes())


def load_checkpoint(path):
    """Load a checkpoint directory written by `save_checkpoint`."""
    header_path = os.path.join(path, "model.json")
    blob_path = os.path.join(path, "params.f32le")
    if not os.path.isfile(header_path) or not os.path.isfile(blob_path):
        raise MissingFileError(f"no checkpoint at {path}")
    with open(header_path, "r", encoding="utf-8") as fh:
        header = json.load(fh)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise MetaMismatchError(
            f"unsupported checkpoint format {header.get('format')!r}"
        )
    cfg = FlowConfig(**header["config"])
    model = init_flow_model(cfg, seed=header.get("seed", 0))
    expected = sum(int(np.prod(p["shape"])) for p in header["params"])
    flat = np.fromfile(blob_path, dtype="<f4").astype(np.float64)
    if flat.size != expected:
        raise MetaMismatchError(
            f"parameter blob has {flat.size} values, header declares {expected}"
        )
    set_flat_params(model, flat)
    model.norm_mean = np.asarray(header["norm_mean"], dtype=np.float64)
    model.norm_std = np.asarray(header["norm_std"], dtype=np.float64)
    model.variables = tuple(header.get("variables", ()))
    model.fine_step_s = int(header.get("fine_step_s", 0))
    model.lats = (None if header.get("lats") is None
                  else np.asarray(header["lats"], dtype=np.float64))
    model.lons = (None if header.get("lons") is None
                  else np.asarray(header["lons"], dtype=np.float64))
    model.metadata = header.get("metadata", {})
    return model
