"""Quantitative evaluation: reconstruction, generation, distribution tests,
latent sensitivity, corruption detection, RR consistency, interpolation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import signal as sg
from .model import reconstruct as _reconstruct
from .model import generate as _generate
from .model import interpolate_latent, seeded_noise, ddim_sample
from .numcore import Tensor, no_grad


class EvalError(Exception):
    pass


class UndefinedRatioError(EvalError):
    pass


# ----------------------------------------------------------------------
# scalar metrics
# ----------------------------------------------------------------------

def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size or a.size == 0:
        raise EvalError("pearson needs equal nonempty lengths")
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        raise EvalError("pearson undefined for a constant input")
    return float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))


def ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    """Max absolute difference of right-continuous empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise EvalError("ks_statistic needs nonempty inputs")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.abs(cdf_a - cdf_b).max())


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of average ranks (ties averaged)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size or a.size == 0:
        raise EvalError("spearman needs equal nonempty lengths")
    return pearson(_average_ranks(a), _average_ranks(b))


def _check_binary(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels).astype(int).ravel()
    if not set(np.unique(labels)) <= {0, 1}:
        raise EvalError("labels must be 0/1")
    if labels.min() == labels.max():
        raise EvalError("both classes must be present")
    return labels


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney rank statistic; tied scores contribute one half."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = _check_binary(labels)
    ranks = _average_ranks(scores)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auprc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Average precision: step-wise precision at each positive threshold."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = _check_binary(labels)
    n_pos = int(labels.sum())
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    ap = 0.0
    tp = fp = 0
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s[j + 1] == s[i]:
            j += 1
        d_tp = int(y[i:j + 1].sum())
        d_fp = (j - i + 1) - d_tp
        tp += d_tp
        fp += d_fp
        ap += d_tp * tp / (tp + fp)
        i = j + 1
    return float(ap / n_pos)


def tpr_at_fpr(scores: np.ndarray, labels: np.ndarray,
               fpr: float = 0.05) -> float:
    """TPR at the most permissive score threshold whose FPR <= the target."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = _check_binary(labels)
    if not 0 <= fpr <= 1:
        raise EvalError("fpr must be in [0, 1]")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    best = 0.0
    for thr in np.unique(scores)[::-1]:
        pred = scores >= thr
        cur_fpr = (pred & (labels == 0)).sum() / n_neg
        if cur_fpr <= fpr:
            best = max(best, (pred & (labels == 1)).sum() / n_pos)
    return float(best)


# ----------------------------------------------------------------------
# reconstruction
# ----------------------------------------------------------------------

def _hr_of(window: sg.SignalWindow, config) -> tuple | None:
    filt = sg.bandpass(window, config.band_lo_hz, config.band_hi_hz)
    peaks = sg.detect_peaks(filt, config.peak_min_distance_s,
                            config.peak_prominence_frac,
                            config.peak_height_percentile)
    if len(peaks) < 2:
        return None
    hr, ibi = sg.estimate_hr(peaks, window.fs)
    return hr, ibi


def recon_metrics(x0: sg.SignalWindow, xhat: sg.SignalWindow, config) -> dict:
    """Per-window MAE/RMSE/Pearson plus HR and IBI errors when detectable."""
    if len(x0) != len(xhat):
        raise EvalError("windows must have equal length")
    a, b = x0.samples, xhat.samples
    rec = {
        "mae": float(np.abs(a - b).mean()),
        "rmse": float(np.sqrt(((a - b) ** 2).mean())),
        "pearson_r": pearson(a, b),
        "hr_err": None,
        "ibi_mae": None,
        "hr_detectable": False,
    }
    ha = _hr_of(x0, config)
    hb = _hr_of(xhat, config)
    if ha is not None and hb is not None:
        rec["hr_err"] = abs(ha[0] - hb[0])
        rec["ibi_mae"] = abs(ha[1] - hb[1])
        rec["hr_detectable"] = True
    return rec


@dataclass
class ReconReport:
    records: list = field(default_factory=list)

    def aggregate(self) -> dict:
        if not self.records:
            raise EvalError("empty reconstruction report")
        out = {}
        for key in ("mae", "rmse", "pearson_r"):
            vals = np.array([r[key] for r in self.records])
            out[f"{key}_mean"] = float(vals.mean())
            out[f"{key}_std"] = float(vals.std())
        hr = [r["hr_err"] for r in self.records if r["hr_detectable"]]
        ibi = [r["ibi_mae"] for r in self.records if r["hr_detectable"]]
        out["hr_err_mean"] = float(np.mean(hr)) if hr else None
        out["ibi_mae_mean"] = float(np.mean(ibi)) if ibi else None
        out["n_windows"] = len(self.records)
        out["n_hr_detectable"] = len(hr)
        return out


def reconstruction_report(model, windows: list[sg.SignalWindow],
                          seed: int = 0, batch_size: int = 16) -> ReconReport:
    """Posterior-mean reconstructions of denormalized windows + metrics."""
    if model.norm_stats is None:
        raise EvalError("model has no normalization stats")
    report = ReconReport()
    xs = np.stack([w.samples for w in windows])
    ns = model.norm_stats
    xn = (xs - ns.mu_train) / ns.sigma_train
    for start in range(0, len(windows), batch_size):
        batch = xn[start:start + batch_size][:, None, :]
        recon = _reconstruct(model, batch, seed=seed + start)
        for i, w in enumerate(windows[start:start + batch_size]):
            what = sg.SignalWindow(recon[i, 0], w.fs)
            report.records.append(recon_metrics(w, what, model.config))
    return report


# ----------------------------------------------------------------------
# latent sensitivity / anomaly scores
# ----------------------------------------------------------------------

def sensitivity_ratio(x0: np.ndarray, model, seed: int = 0) -> float:
    """Mean absolute difference between decoding the posterior-mean latent
    and a random latent (shared terminal noise), over the posterior-mean
    decoding's range."""
    x0 = np.asarray(x0, dtype=np.float64).reshape(1, 1, -1)
    L = x0.shape[2]
    with no_grad():
        post = model.encode(Tensor(x0))
    z_mu = post.mu
    z_rand = Tensor(np.random.default_rng((seed, 1)).standard_normal(
        z_mu.shape))
    x_T = seeded_noise((1, 1, L), seed)
    dec_mu = ddim_sample(model.predict_x0, model.schedule, z_mu, x_T,
                         model.config.ddim_steps)
    dec_rand = ddim_sample(model.predict_x0, model.schedule, z_rand, x_T,
                           model.config.ddim_steps)
    rng_ = float(dec_mu.max() - dec_mu.min())
    if rng_ == 0:
        raise UndefinedRatioError("posterior-mean decoding has zero range")
    return float(np.abs(dec_mu - dec_rand).mean() / rng_)


def anomaly_scores(x0: sg.SignalWindow, model,
                   seed: int = 0) -> tuple[float, float]:
    """(MAE score, 1 - Pearson score) of a window vs its reconstruction,
    both on denormalized signals."""
    if model.norm_stats is None:
        raise EvalError("model has no normalization stats")
    ns = model.norm_stats
    xn = ((x0.samples - ns.mu_train) / ns.sigma_train)[None, None, :]
    recon = _reconstruct(model, xn, seed=seed)[0, 0]
    mae = float(np.abs(x0.samples - recon).mean())
    corr = 1.0 - pearson(x0.samples, recon)
    return mae, corr


@dataclass
class AnomalyReport:
    auroc_mae: float
    auprc_mae: float
    tpr5_mae: float
    auroc_corr: float
    per_kind: dict
    spearman_input_recon: float | None = None


def anomaly_report(model, clean: list[sg.SignalWindow],
                   corrupted: list[tuple[str, sg.SignalWindow]],
                   seed: int = 0) -> AnomalyReport:
    """Score clean vs corrupted windows by reconstruction error."""
    scores_mae, scores_corr, labels, kinds = [], [], [], []
    for i, w in enumerate(clean):
        m, c = anomaly_scores(w, model, seed=seed + i)
        scores_mae.append(m)
        scores_corr.append(c)
        labels.append(0)
        kinds.append("clean")
    for i, (kind, w) in enumerate(corrupted):
        m, c = anomaly_scores(w, model, seed=seed + len(clean) + i)
        scores_mae.append(m)
        scores_corr.append(c)
        labels.append(1)
        kinds.append(kind)
    scores_mae = np.array(scores_mae)
    scores_corr = np.array(scores_corr)
    labels = np.array(labels)
    per_kind = {}
    for kind in sorted({k for k in kinds if k != "clean"}):
        mask = np.array([k in ("clean", kind) for k in kinds])
        per_kind[kind] = {
            "auroc": auroc(scores_mae[mask], labels[mask]),
            "auprc": auprc(scores_mae[mask], labels[mask]),
            "tpr5": tpr_at_fpr(scores_mae[mask], labels[mask], 0.05),
            "median_mae_corrupt": float(np.median(
                scores_mae[mask & (labels == 1)])),
        }
    return AnomalyReport(
        auroc_mae=auroc(scores_mae, labels),
        auprc_mae=auprc(scores_mae, labels),
        tpr5_mae=tpr_at_fpr(scores_mae, labels, 0.05),
        auroc_corr=auroc(scores_corr, labels),
        per_kind=per_kind,
    )


# ----------------------------------------------------------------------
# generation
# ----------------------------------------------------------------------

@dataclass
class GenReport:
    hr: list
    ptp: list
    std: list
    peak_counts: list
    peak_fraction: float
    hr_gap: float | None
    ks_hr: float | None
    ks_ptp: float
    ks_std: float
    mean_pairwise_dist: float


def _window_stats(samples: np.ndarray, fs: float, config):
    w = sg.SignalWindow(np.asarray(samples, dtype=np.float64), fs)
    res = _hr_of(w, config)
    filt = sg.bandpass(w, config.band_lo_hz, config.band_hi_hz)
    peaks = sg.detect_peaks(filt, config.peak_min_distance_s,
                            config.peak_prominence_frac,
                            config.peak_height_percentile)
    hr = res[0] if res is not None else None
    return hr, float(np.ptp(w.samples)), float(w.samples.std()), len(peaks)


def generation_report(model, n: int, reference: list[sg.SignalWindow],
                      seed: int = 0, generated: np.ndarray | None = None,
                      max_pairs: int = 200) -> GenReport:
    """Physiological statistics of n generated windows vs a reference set."""
    if n < 2:
        raise EvalError("n must be >= 2")
    if generated is None:
        generated = _generate(model, n, seed=seed)
    fs = model.config.fs
    hrs, ptps, stds, counts = [], [], [], []
    for i in range(generated.shape[0]):
        hr, ptp, std, cnt = _window_stats(generated[i, 0], fs, model.config)
        if hr is not None:
            hrs.append(hr)
        ptps.append(ptp)
        stds.append(std)
        counts.append(cnt)
    peak_fraction = float(np.mean([c >= 2 for c in counts]))

    ref_hrs, ref_ptps, ref_stds = [], [], []
    for w in reference:
        hr, ptp, std, _ = _window_stats(w.samples, w.fs, model.config)
        if hr is not None:
            ref_hrs.append(hr)
        ref_ptps.append(ptp)
        ref_stds.append(std)

    hr_gap = (abs(float(np.mean(hrs)) - float(np.mean(ref_hrs)))
              if hrs and ref_hrs else None)
    ks_hr = ks_statistic(hrs, ref_hrs) if hrs and ref_hrs else None

    rng = np.random.default_rng((seed, 2))
    n_gen = generated.shape[0]
    pairs = [(i, j) for i in range(n_gen) for j in range(i + 1, n_gen)]
    if len(pairs) > max_pairs:
        sel = rng.choice(len(pairs), size=max_pairs, replace=False)
        pairs = [pairs[int(k)] for k in sel]
    dists = [float(np.linalg.norm(generated[i, 0] - generated[j, 0]))
             for i, j in pairs]
    return GenReport(
        hr=hrs, ptp=ptps, std=stds, peak_counts=counts,
        peak_fraction=peak_fraction, hr_gap=hr_gap, ks_hr=ks_hr,
        ks_ptp=ks_statistic(ptps, ref_ptps),
        ks_std=ks_statistic(stds, ref_stds),
        mean_pairwise_dist=float(np.mean(dists)),
    )


# ----------------------------------------------------------------------
# RR consistency and interpolation
# ----------------------------------------------------------------------

def rr_consistency(windows: list[sg.SignalWindow], labels: list,
                   model, rr_net, seed: int = 0,
                   batch_size: int = 16) -> dict:
    """Compare the RR estimator on real windows and their reconstructions.

    labels[i] is the capnography-derived breaths/min for windows[i] or
    None when unavailable; such windows are skipped for MAE aggregates.
    """
    if len(windows) != len(labels):
        raise EvalError("windows and labels must align")
    if model.norm_stats is None:
        raise EvalError("model has no normalization stats")
    ns = model.norm_stats
    xs = np.stack([w.samples for w in windows])
    xn = (xs - ns.mu_train) / ns.sigma_train
    recs = []
    for start in range(0, len(windows), batch_size):
        batch = xn[start:start + batch_size]
        recon = _reconstruct(model, batch[:, None, :], seed=seed + start,
                             denorm=False)
        with no_grad():
            pred_real = rr_net(Tensor(batch[:, None, :])).data
            pred_recon = rr_net(Tensor(recon)).data
        for i in range(batch.shape[0]):
            recs.append({
                "rr_label": labels[start + i],
                "pred_real": float(pred_real[i]),
                "pred_recon": float(pred_recon[i]),
                "abs_delta": float(abs(pred_real[i] - pred_recon[i])),
            })
    labeled = [r for r in recs if r["rr_label"] is not None]
    out = {
        "records": recs,
        "mean_abs_delta": float(np.mean([r["abs_delta"] for r in recs])),
        "mae_real": None,
        "mae_recon": None,
    }
    if labeled:
        out["mae_real"] = float(np.mean(
            [abs(r["pred_real"] - r["rr_label"]) for r in labeled]))
        out["mae_recon"] = float(np.mean(
            [abs(r["pred_recon"] - r["rr_label"]) for r in labeled]))
    return out


def interpolation_sweep(x_lo: sg.SignalWindow, x_hi: sg.SignalWindow,
                        model, alphas, seed: int = 0) -> list:
    """Decode latent interpolations; returns ordered (alpha, hr-or-None)."""
    for name, w in (("x_lo", x_lo), ("x_hi", x_hi)):
        if _hr_of(w, model.config) is None:
            raise EvalError(f"{name} has no detectable heart rate")
    if model.norm_stats is None:
        raise EvalError("model has no normalization stats")
    ns = model.norm_stats
    a = (x_lo.samples - ns.mu_train) / ns.sigma_train
    b = (x_hi.samples - ns.mu_train) / ns.sigma_train
    alphas = sorted(float(x) for x in np.atleast_1d(alphas))
    decoded = interpolate_latent(model, a, b, np.asarray(alphas), seed=seed)
    out = []
    for i, alpha in enumerate(alphas):
        res = _hr_of(sg.SignalWindow(decoded[i, 0], model.config.fs),
                     model.config)
        out.append((alpha, res[0] if res is not None else None))
    return out
