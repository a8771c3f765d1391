"""Optimizer, joint training loop, and the respiratory-rate regressor."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .checkpoint import save_model
from .config import RunConfig
from .losses import beta_at, total_loss
from .model import (
    VampDiffModel,
    kl_pooled,
    reparameterize,
    stratified_init,
)
from .model.base import ParamModule, conv_init, linear_init
from .numcore import (
    Tensor,
    conv1d,
    groupnorm,
    linear,
    no_grad,
    reshape,
    rmean,
    silu,
    square,
    sub,
)
from . import signal as sg


class TrainError(Exception):
    pass


# ----------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay and per-group learning rates."""

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=1e-4):
        # groups: list of {"params": [Tensor], "lr": float,
        #                  "weight_decay": optional float}
        self.groups = []
        seen = set()
        for g in groups:
            params = list(g["params"])
            for p in params:
                if id(p) in seen:
                    raise TrainError("parameter appears in multiple groups")
                seen.add(id(p))
            self.groups.append({
                "params": params,
                "lr": float(g["lr"]),
                "weight_decay": float(g.get("weight_decay", weight_decay)),
                "m": [np.zeros_like(p.data) for p in params],
                "v": [np.zeros_like(p.data) for p in params],
            })
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for g in self.groups:
            for p, m, v in zip(g["params"], g["m"], g["v"]):
                grad = p.grad
                if grad is None:
                    continue
                m *= self.b1
                m += (1 - self.b1) * grad
                v *= self.b2
                v += (1 - self.b2) * grad * grad
                update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                p.data = p.data - g["lr"] * (update
                                             + g["weight_decay"] * p.data)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"t": np.asarray(float(self.t))}
        for gi, g in enumerate(self.groups):
            for pi in range(len(g["params"])):
                out[f"g{gi}.m{pi}"] = g["m"][pi]
                out[f"g{gi}.v{pi}"] = g["v"][pi]
        return out


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    grads = [p.grad for p in params if p.grad is not None]
    for g in grads:
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        factor = max_norm / norm
        for g in grads:
            g *= factor
    return norm


# ----------------------------------------------------------------------
# joint training
# ----------------------------------------------------------------------

def make_optimizer(model: VampDiffModel, config: RunConfig) -> AdamW:
    groups = model.param_groups()
    return AdamW([
        {"params": groups["decoder"], "lr": config.lr_decoder},
        {"params": groups["encoder"], "lr": config.lr_encoder},
        {"params": groups["pseudo"], "lr": config.lr_pseudo,
         "weight_decay": 0.0},
    ], weight_decay=config.weight_decay)


def train_step(model: VampDiffModel, opt: AdamW, x0: np.ndarray,
               epoch: int, rng: np.random.Generator) -> dict:
    """One joint update on a normalized batch x0 of shape [B, 1, L].

    During the encoder-freeze phase the latent is computed without
    gradient tracking, the KL term is skipped, and encoder gradients are
    guaranteed to be identically zero.
    """
    config = model.config
    sched = model.schedule
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 3 or x0.shape[1] != 1:
        raise TrainError(f"batch must be [B,1,L], got {x0.shape}")
    B = x0.shape[0]
    frozen = epoch <= config.freeze_epochs
    beta = beta_at(epoch, config)

    noise = rng.standard_normal(
        (B, config.latent_channels, config.latent_len))
    if frozen:
        with no_grad():
            post = model.encode(Tensor(x0))
            z = reparameterize(post, Tensor(noise))
    else:
        post = model.encode(Tensor(x0))
        z = reparameterize(post, Tensor(noise))

    t = rng.integers(1, sched.T + 1, size=B)
    eps = rng.standard_normal(x0.shape)
    ab = np.array([sched.alpha_bar(int(ti)) for ti in t])[:, None, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps

    x0_hat = model.predict_x0(Tensor(x_t), t, z)

    # KL enters whenever its coefficient is nonzero; during the freeze the
    # posterior is already detached and encoder gradients are nulled below
    kl_term = None
    if beta != 0.0:
        kl_term = kl_pooled(
            post, z, model.pseudo, model.encoder, config.pooled_len,
            rng=rng, variance_mode=config.pooled_variance,
            prior_kind=config.prior_kind)
    loss, breakdown = total_loss(Tensor(x0), x0_hat, t, sched, config,
                                 kl_term=kl_term, beta=beta)
    if not np.isfinite(loss.data):
        raise TrainError(f"non-finite loss at epoch {epoch}: {breakdown}")

    model.zero_grads()
    loss.backward()
    if frozen:
        for p in model.encoder.params():
            p.grad = None
    breakdown["grad_norm"] = clip_global_norm(model.params(),
                                              config.clip_norm)
    opt.step()
    return breakdown


LOG_FIELDS = ["epoch", "total", "diffusion", "recon", "spectral", "deriv",
              "amp", "ptp", "kl", "beta", "grad_norm"]


def fit(model: VampDiffModel, x_train: np.ndarray,
        out_dir: str | Path | None = None,
        log_every: int = 1, progress=None) -> list[dict]:
    """Seeded epoch loop over normalized windows x_train [N, L].

    Writes ``training_log.csv`` and periodic checkpoints into out_dir
    when given. Fully deterministic for a fixed config seed.
    """
    config = model.config
    x_train = np.asarray(x_train, dtype=np.float64)
    if x_train.ndim != 2 or x_train.shape[1] != config.window_len:
        raise TrainError(
            f"x_train must be [N, {config.window_len}], got {x_train.shape}")
    N = x_train.shape[0]
    if N < 1:
        raise TrainError("empty training set")
    opt = make_optimizer(model, config)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    history: list[dict] = []
    rows: list[dict] = []
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng((config.seed, epoch))
        order = rng.permutation(N)
        sums: dict[str, float] = {}
        n_batches = 0
        for start in range(0, N, config.batch_size):
            batch = x_train[order[start:start + config.batch_size]]
            br = train_step(model, opt, batch[:, None, :], epoch, rng)
            n_batches += 1
            for k, val in br.items():
                sums[k] = sums.get(k, 0.0) + val
        mean = {k: val / n_batches for k, val in sums.items()}
        mean["epoch"] = epoch
        history.append(mean)
        if progress is not None and epoch % log_every == 0:
            progress(mean)
        rows.append({f: mean.get(f, "") for f in LOG_FIELDS})
        if out_dir is not None:
            if epoch % config.checkpoint_every == 0 or epoch == config.epochs:
                save_model(out_dir / f"checkpoint_ep{epoch:04d}.vdp", model,
                           meta={"epoch": epoch})
    if out_dir is not None:
        with open(out_dir / "training_log.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=LOG_FIELDS)
            writer.writeheader()
            writer.writerows(rows)
        save_model(out_dir / "model.vdp", model,
                   meta={"epoch": config.epochs})
    return history


def build_model(config: RunConfig,
                train_windows: list[sg.SignalWindow] | None = None,
                norm_stats: sg.NormStats | None = None) -> VampDiffModel:
    """Construct a model, stratifying pseudo-inputs over real windows when
    a training set is supplied."""
    pseudo_init = None
    if train_windows is not None:
        pseudo_init = stratified_init(
            config.pseudo_inputs, train_windows,
            band=(config.band_lo_hz, config.band_hi_hz),
            peak_params=(config.peak_min_distance_s,
                         config.peak_prominence_frac,
                         config.peak_height_percentile))
    model = VampDiffModel(config, rng=np.random.default_rng(config.seed),
                          pseudo_init=pseudo_init)
    model.norm_stats = norm_stats
    return model


# ----------------------------------------------------------------------
# respiratory-rate regressor
# ----------------------------------------------------------------------

class RRNet(ParamModule):
    """Dilated 1-D convnet regressing breaths/min from a PPG window."""

    def __init__(self, stem_channels: int = 32, widths=(32, 64, 128, 128),
                 dilations=(1, 2, 4, 8), groups: int = 4,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.widths = tuple(widths)
        self.dilations = tuple(dilations)
        self.groups = groups
        if len(widths) != len(dilations):
            raise TrainError("widths and dilations must align")
        self.add_param("stem.kernel", conv_init(rng, stem_channels, 1, 11))
        self.add_param("stem.bias", np.zeros(stem_channels))
        cin = stem_channels
        for i, (w, _) in enumerate(zip(widths, dilations)):
            self.add_param(f"stage{i}.kernel", conv_init(rng, w, cin, 3))
            self.add_param(f"stage{i}.bias", np.zeros(w))
            self.add_param(f"gn{i}.gamma", np.ones(w))
            self.add_param(f"gn{i}.beta", np.zeros(w))
            cin = w
        self.add_param("fc1.weight", linear_init(rng, cin, cin))
        self.add_param("fc1.bias", np.zeros(cin))
        self.add_param("fc2.weight", linear_init(rng, 1, cin))
        self.add_param("fc2.bias", np.zeros(1))

    def __call__(self, x: Tensor) -> Tensor:
        h = conv1d(x, self._params["stem.kernel"], self._params["stem.bias"],
                   stride=2, padding=5)
        for i, d in enumerate(self.dilations):
            h = conv1d(h, self._params[f"stage{i}.kernel"],
                       self._params[f"stage{i}.bias"], padding=d, dilation=d)
            h = silu(groupnorm(h, self.groups,
                               self._params[f"gn{i}.gamma"],
                               self._params[f"gn{i}.beta"]))
        pooled = rmean(h, axes=2)  # global average pool -> [B, C]
        h = silu(linear(pooled, self._params["fc1.weight"],
                        self._params["fc1.bias"]))
        out = linear(h, self._params["fc2.weight"], self._params["fc2.bias"])
        return reshape(out, (out.shape[0],))


def train_rr_estimator(x: np.ndarray, y: np.ndarray, config: RunConfig,
                       progress=None) -> RRNet:
    """Fit the RR regressor with Adam on mean squared error.

    x: [N, L] normalized windows; y: [N] breaths/min labels.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise TrainError("x must be [N, L] aligned with y")
    dilations = tuple(2 ** i for i in range(len(config.rr_widths)))
    net = RRNet(stem_channels=config.rr_stem_channels,
                widths=config.rr_widths, dilations=dilations,
                groups=config.groupnorm_groups,
                rng=np.random.default_rng(config.seed + 1))
    opt = AdamW([{"params": net.params(), "lr": config.rr_lr,
                  "weight_decay": 0.0}])
    N = x.shape[0]
    for epoch in range(1, config.rr_epochs + 1):
        rng = np.random.default_rng((config.seed, 7919, epoch))
        order = rng.permutation(N)
        losses = []
        for start in range(0, N, config.batch_size):
            sel = order[start:start + config.batch_size]
            pred = net(Tensor(x[sel][:, None, :]))
            loss = rmean(square(sub(pred, Tensor(y[sel]))))
            if not np.isfinite(loss.data):
                raise TrainError(f"non-finite RR loss at epoch {epoch}")
            net.zero_grads()
            loss.backward()
            clip_global_norm(net.params(), config.clip_norm)
            opt.step()
            losses.append(float(loss.data))
        if progress is not None:
            progress({"epoch": epoch, "mse": float(np.mean(losses))})
    return net
