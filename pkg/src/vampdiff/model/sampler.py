"""Deterministic DDIM sampling, reconstruction, generation, interpolation."""
from __future__ import annotations

import numpy as np

from ..numcore import Tensor, no_grad
from .schedule import DiffusionSchedule


class SamplerError(Exception):
    pass


def ddim_timesteps(T: int, n_steps: int) -> np.ndarray:
    """Uniform-stride decreasing timestep subsequence from T down to 1."""
    if not 1 <= n_steps <= T:
        raise SamplerError(f"n_steps={n_steps} outside 1..{T}")
    ts = np.round(np.linspace(T, 1, n_steps)).astype(int)
    ts = np.unique(ts)[::-1]
    return ts


def ddim_sample(predict_x0, sched: DiffusionSchedule, z: Tensor,
                x_T: np.ndarray, n_steps: int) -> np.ndarray:
    """Deterministic (eta = 0) reverse pass under clean-signal prediction.

    ``predict_x0(x_t, t, z)`` maps a noisy batch [B,1,L] at integer
    timestep t to a clean-signal estimate. Returns the final x_0 array.
    """
    ts = ddim_timesteps(sched.T, n_steps)
    x = np.asarray(x_T, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != 1:
        raise SamplerError(f"x_T must be [B,1,L], got {x.shape}")
    B = x.shape[0]
    with no_grad():
        for i, t in enumerate(ts):
            t_prev = int(ts[i + 1]) if i + 1 < len(ts) else 0
            ab_t = sched.alpha_bar(int(t))
            ab_p = sched.alpha_bar(t_prev)
            x0_hat = predict_x0(Tensor(x), np.full(B, t), z).data
            eps_hat = (x - np.sqrt(ab_t) * x0_hat) / np.sqrt(1.0 - ab_t)
            if t_prev == 0:
                x = x0_hat
            else:
                x = np.sqrt(ab_p) * x0_hat + np.sqrt(1.0 - ab_p) * eps_hat
    return x


def seeded_noise(shape: tuple, seed: int, index: int = 0) -> np.ndarray:
    """Deterministic standard-normal draw keyed by (seed, index)."""
    return np.random.default_rng((seed, index)).standard_normal(shape)


def reconstruct(model, x: np.ndarray, seed: int = 0,
                denorm: bool = True) -> np.ndarray:
    """Encode each window to its posterior mean and run the reverse pass.

    ``x`` is a normalized batch [B,1,L]; returns [B,1,L] in original
    units when ``denorm`` and the model carries normalization stats.
    """
    x = np.asarray(x, dtype=np.float64)
    B, _, L = x.shape
    with no_grad():
        post = model.encode(Tensor(x))
        z = post.mu
    x_T = np.stack([seeded_noise((1, L), seed, i) for i in range(B)])
    out = ddim_sample(model.predict_x0, model.schedule, z, x_T,
                      model.config.ddim_steps)
    if denorm and model.norm_stats is not None:
        out = out * model.norm_stats.sigma_train + model.norm_stats.mu_train
    return out


def generate(model, n: int, seed: int = 0, batch_size: int = 32,
             denorm: bool = True) -> np.ndarray:
    """Draw n windows: pick pseudo-input components uniformly, sample the
    full-resolution latent from the component posterior, then decode."""
    if n < 1:
        raise SamplerError("n must be >= 1")
    rng = np.random.default_rng(seed)
    L = model.config.window_len
    ks = rng.integers(0, model.pseudo.K, size=n)
    outs = []
    with no_grad():
        pseudo_post = model.encode(model.pseudo.as_batch())
    for start in range(0, n, batch_size):
        sel = ks[start:start + batch_size]
        mu = pseudo_post.mu.data[sel]
        logvar = pseudo_post.logvar.data[sel]
        eps = rng.standard_normal(mu.shape)
        z = Tensor(mu + np.exp(0.5 * logvar) * eps)
        x_T = np.stack([seeded_noise((1, L), seed, start + i)
                        for i in range(len(sel))])
        outs.append(ddim_sample(model.predict_x0, model.schedule, z, x_T,
                                model.config.ddim_steps))
    out = np.concatenate(outs, axis=0)
    if denorm and model.norm_stats is not None:
        out = out * model.norm_stats.sigma_train + model.norm_stats.mu_train
    return out


def interpolate_latent(model, x_a: np.ndarray, x_b: np.ndarray,
                       alphas, seed: int = 0,
                       denorm: bool = True) -> np.ndarray:
    """Decode convex combinations of two windows' posterior-mean latents.

    Every step shares one terminal-noise draw so differences come from the
    latent alone. Returns [len(alphas), 1, L].
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.ndim != 1 or alphas.size == 0:
        raise SamplerError("alphas must be a nonempty 1-D sequence")
    if alphas.min() < 0 or alphas.max() > 1:
        raise SamplerError("alphas must lie in [0, 1]")
    pair = np.stack([np.asarray(x_a, dtype=np.float64),
                     np.asarray(x_b, dtype=np.float64)])[:, None, :]
    with no_grad():
        post = model.encode(Tensor(pair))
    za, zb = post.mu.data[0], post.mu.data[1]
    z = Tensor(np.stack([(1 - a) * za + a * zb for a in alphas]))
    L = pair.shape[2]
    x_T = np.repeat(seeded_noise((1, 1, L), seed), alphas.size, axis=0)
    out = ddim_sample(model.predict_x0, model.schedule, z, x_T,
                      model.config.ddim_steps)
    if denorm and model.norm_stats is not None:
        out = out * model.norm_stats.sigma_train + model.norm_stats.mu_train
    return out
