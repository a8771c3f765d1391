"""Training losses: diffusion term, morphology-preserving auxiliary terms,
and the KL annealing schedule."""
from __future__ import annotations

import numpy as np

from .config import RunConfig
from .model.schedule import DiffusionSchedule, kl_weight
from .numcore import (
    Tensor,
    add,
    conv1d,
    huber,
    log1p,
    mul,
    rdft,
    rmax,
    rmean,
    rmin,
    rstd,
    scale,
    sqrt,
    square,
    sub,
)

SPECTRAL_EPS = 1e-12


class LossError(Exception):
    pass


def smooth_l1(pred: Tensor, target: Tensor) -> Tensor:
    """Mean elementwise SmoothL1 (quadratic below 1, linear above)."""
    if pred.shape != target.shape:
        raise LossError(f"shape mismatch {pred.shape} vs {target.shape}")
    return rmean(huber(sub(pred, target)))


def _log_magnitude(x: Tensor) -> Tensor:
    re, im = rdft(x)
    mag = sqrt(add(add(square(re), square(im)),
                   Tensor(np.full((1,) * re.ndim, SPECTRAL_EPS))))
    return log1p(mag)


def spectral_loss(pred: Tensor, target: Tensor) -> Tensor:
    """SmoothL1 between log(1 + |DFT|) magnitude spectra."""
    if pred.shape != target.shape:
        raise LossError(f"shape mismatch {pred.shape} vs {target.shape}")
    return rmean(huber(sub(_log_magnitude(pred), _log_magnitude(target))))


_DIFF_KERNEL = Tensor(np.array([[[-1.0, 1.0]]]))
_DIFF_BIAS = Tensor(np.zeros(1))


def _first_diff(x: Tensor) -> Tensor:
    return conv1d(x, _DIFF_KERNEL, _DIFF_BIAS)


def deriv_loss(pred: Tensor, target: Tensor) -> Tensor:
    """SmoothL1 between first differences of the two signals."""
    if pred.shape != target.shape:
        raise LossError(f"shape mismatch {pred.shape} vs {target.shape}")
    return rmean(huber(sub(_first_diff(pred), _first_diff(target))))


def amp_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared difference of per-window (population) standard deviations."""
    if pred.shape != target.shape:
        raise LossError(f"shape mismatch {pred.shape} vs {target.shape}")
    axes = tuple(range(1, pred.ndim))
    return rmean(square(sub(rstd(pred, axes=axes), rstd(target, axes=axes))))


def ptp_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared difference of per-window peak-to-peak ranges."""
    if pred.shape != target.shape:
        raise LossError(f"shape mismatch {pred.shape} vs {target.shape}")
    axes = tuple(range(1, pred.ndim))

    def ptp(x):
        return sub(rmax(x, axes=axes), rmin(x, axes=axes))
    return rmean(square(sub(ptp(pred), ptp(target))))


def diffusion_loss(pred: Tensor, target: Tensor, t: np.ndarray,
                   sched: DiffusionSchedule) -> Tensor:
    """Timestep-weighted mean squared clean-signal prediction error.

    Weight w_t is the exact Gaussian-KL coefficient of the reverse
    posterior; the squared error is averaged over signal dimensions so
    the term stays O(1) across window lengths.
    """
    if pred.shape != target.shape:
        raise LossError(f"shape mismatch {pred.shape} vs {target.shape}")
    t = np.asarray(t).reshape(-1)
    if t.size != pred.shape[0]:
        raise LossError(f"t has {t.size} entries for batch {pred.shape[0]}")
    w = np.array([kl_weight(int(ti), sched) if ti >= 2 else 1.0 for ti in t])
    axes = tuple(range(1, pred.ndim))
    per = rmean(square(sub(pred, target)), axes=axes)  # [B]
    return rmean(mul(per, Tensor(w)))


def beta_at(epoch: int, config: RunConfig) -> float:
    """KL coefficient for a 1-based epoch: freeze value, then a floor,
    then a linear ramp to the target, then constant."""
    if epoch < 1:
        raise LossError("epoch is 1-based")
    if config.kl_beta_zero:
        return 0.0
    if epoch <= config.freeze_epochs:
        return float(config.freeze_beta)
    if epoch <= config.beta_floor_until:
        return float(config.beta_floor_value)
    if epoch <= config.beta_ramp_until:
        span = config.beta_ramp_until - config.beta_floor_until
        frac = (epoch - config.beta_floor_until) / span
        return float(config.beta_floor_value
                     + frac * (config.beta_ramp_target - config.beta_floor_value))
    return float(config.beta_ramp_target)


def total_loss(x0: Tensor, x0_hat: Tensor, t: np.ndarray,
               sched: DiffusionSchedule, config: RunConfig,
               kl_term: Tensor | None = None,
               beta: float = 0.0) -> tuple[Tensor, dict]:
    """Weighted sum of all terms plus beta * KL; returns (loss, breakdown)."""
    aux = 0.0 if config.zero_aux_losses else 1.0
    terms = {
        "diffusion": (config.lambda_diff, diffusion_loss(x0_hat, x0, t, sched)),
        "recon": (aux * config.lambda_recon, smooth_l1(x0_hat, x0)),
        "spectral": (aux * config.lambda_spec, spectral_loss(x0_hat, x0)),
        "deriv": (aux * config.lambda_deriv, deriv_loss(x0_hat, x0)),
        "amp": (aux * config.lambda_amp, amp_loss(x0_hat, x0)),
        "ptp": (aux * config.lambda_ptp, ptp_loss(x0_hat, x0)),
    }
    total = None
    breakdown = {}
    for name, (lam, val) in terms.items():
        breakdown[name] = float(val.data)
        if lam == 0.0:
            continue
        piece = scale(val, lam)
        total = piece if total is None else add(total, piece)
    if total is None:
        total = Tensor(np.zeros(()))
    if kl_term is not None:
        breakdown["kl"] = float(kl_term.data)
        if beta != 0.0:
            total = add(total, scale(kl_term, beta))
    breakdown["beta"] = beta
    breakdown["total"] = float(total.data)
    return total, breakdown
