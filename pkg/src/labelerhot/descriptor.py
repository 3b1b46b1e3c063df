"""Fixed-layout signal descriptor of a single-channel EEG event.

An event centred at sample ``c`` is described by three contiguous windows:
``[left | central | right]`` where the central window lasts 0.2 s and each
neighbourhood window 0.8 s. Six feature groups are computed and stacked:

* anomaly score of an autoregressive predictor fitted on the neighbourhood,
* band log-powers for central window, neighbourhood and their difference,
* Teager-Kaiser energy for central window, neighbourhood and their quotient,
* waveform-length quotient,
* statistics of Ricker-wavelet coefficients of the neighbourhood-standardised
  central window,
* statistics of the first difference of the central window.

All batch functions take window matrices of shape ``(n_events, length)`` and
are row-independent, so the same event yields the same values regardless of
batch composition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LAYOUT_VERSION = 1

CENTRAL_SECONDS = 0.2
NEIGHBOURHOOD_SECONDS = 0.8
AR_ORDER = 8
AR_RIDGE = 1e-6
AR_RMS_FLOOR = 1e-8
LOG_POWER_FLOOR = 1e-12
RATIO_GUARD = 1e-12
STD_FLOOR = 1e-8
CENTRAL_NFFT = 64
NEIGHBOURHOOD_NFFT = 512
BAND_EDGES = (0.5, 2.0, 4.0, 8.0, 12.0, 16.0, 24.0, 32.0, 64.0)
RICKER_SCALES = (1, 2, 4, 8, 16)
STAT_NAMES = ("mean", "sd", "skew", "min", "max")


def _band_names() -> list[str]:
    e = BAND_EDGES
    return [f"{e[i]:g}_{e[i + 1]:g}" for i in range(len(e) - 1)]


FEATURE_NAMES: tuple[str, ...] = tuple(
    ["anomaly"]
    + [f"fft_central_{b}" for b in _band_names()]
    + [f"fft_nbhd_{b}" for b in _band_names()]
    + [f"fft_quotient_{b}" for b in _band_names()]
    + ["teager_central", "teager_nbhd", "teager_quotient"]
    + ["wl_quotient"]
    + [f"cwt_s{a}_{s}" for a in RICKER_SCALES for s in STAT_NAMES]
    + [f"diff_{s}" for s in STAT_NAMES]
)
N_FEATURES = len(FEATURE_NAMES)


class ContextError(IndexError):
    """The requested centre lacks full left/right context in the channel."""


def central_length(fs: float) -> int:
    return int(np.floor(CENTRAL_SECONDS * fs + 0.5))


def neighbourhood_length(fs: float) -> int:
    return int(np.floor(NEIGHBOURHOOD_SECONDS * fs + 0.5))


def context_bounds(fs: float) -> tuple[int, int]:
    """Samples needed before and after (inclusive of) the centre sample."""
    lc, ln = central_length(fs), neighbourhood_length(fs)
    half = lc // 2
    return half + ln, lc - half + ln


def valid_center(center_index: int, n_samples: int, fs: float) -> bool:
    before, after = context_bounds(fs)
    return center_index - before >= 0 and center_index + after <= n_samples


@dataclass(frozen=True, eq=False)
class WindowTriplet:
    left: np.ndarray
    central: np.ndarray
    right: np.ndarray
    fs: float

    @property
    def neighbourhood(self) -> np.ndarray:
        return np.concatenate([self.left, self.right])

    @property
    def signal(self) -> np.ndarray:
        return np.concatenate([self.left, self.central, self.right])

    def _batch(self) -> np.ndarray:
        return self.signal.reshape(1, -1).astype(np.float64)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    layout_version: int = LAYOUT_VERSION

    def __len__(self):
        return len(self.values)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.values.tolist()))


def extract_windows(channel_samples, center_index: int, fs: float) -> WindowTriplet:
    x = np.asarray(channel_samples, dtype=np.float64)
    if not valid_center(center_index, len(x), fs):
        before, after = context_bounds(fs)
        raise ContextError(
            f"centre {center_index} needs samples [{center_index - before}, "
            f"{center_index + after}) but channel has {len(x)}"
        )
    lc, ln = central_length(fs), neighbourhood_length(fs)
    start = center_index - lc // 2
    return WindowTriplet(
        left=x[start - ln : start].copy(),
        central=x[start : start + lc].copy(),
        right=x[start + lc : start + lc + ln].copy(),
        fs=fs,
    )


def window_matrix(channel_samples, centers, fs: float) -> np.ndarray:
    """Stack ``[left|central|right]`` segments for many centres, shape (n, 2*ln+lc)."""
    x = np.asarray(channel_samples, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.int64).reshape(-1)
    before, after = context_bounds(fs)
    bad = (centers - before < 0) | (centers + after > len(x))
    if np.any(bad):
        c = int(centers[np.argmax(bad)])
        raise ContextError(
            f"centre {c} needs samples [{c - before}, {c + after}) but channel has {len(x)}"
        )
    offs = np.arange(-before, after)
    return x[centers[:, None] + offs[None, :]]


# -- batch feature groups ------------------------------------------------------


def _split(W: np.ndarray, fs: float):
    lc, ln = central_length(fs), neighbourhood_length(fs)
    return W[:, :ln], W[:, ln : ln + lc], W[:, ln + lc :]


def _lagged(x: np.ndarray, order: int):
    v = np.lib.stride_tricks.sliding_window_view(x, order + 1, axis=1)
    return v[..., :order], v[..., order]


def anomaly_scores(W: np.ndarray, fs: float, order: int = AR_ORDER) -> np.ndarray:
    left, central, right = _split(W, fs)
    ln = left.shape[1]
    zl, yl = _lagged(left, order)
    zr, yr = _lagged(right, order)
    Z = np.concatenate([zl, zr], axis=1)
    y = np.concatenate([yl, yr], axis=1)
    A = np.einsum("nki,nkj->nij", Z, Z)
    b = np.einsum("nki,nk->ni", Z, y)
    eye = np.eye(order)
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(A)
    singular = ~(cond < 1e12)
    A[singular] += AR_RIDGE * eye
    coef = np.linalg.solve(A, b[..., None])[..., 0]
    res_n = y - np.einsum("nki,ni->nk", Z, coef)
    rms_n = np.sqrt(np.mean(res_n**2, axis=1))
    # central one-step predictions use the true preceding samples
    zc, yc = _lagged(W[:, ln - order : ln + central.shape[1]], order)
    res_c = yc - np.einsum("nki,ni->nk", zc, coef)
    rms_c = np.sqrt(np.mean(res_c**2, axis=1))
    return rms_c / np.maximum(rms_n, AR_RMS_FLOOR)


def _rowsum(x: np.ndarray) -> np.ndarray:
    # sequential per row: numpy's axis reductions may pair terms differently
    # depending on how many rows are in the batch
    return np.cumsum(x, axis=1)[:, -1] if x.shape[1] else np.zeros(x.shape[0])


def _band_log_power(x: np.ndarray, nfft: int, fs: float) -> np.ndarray:
    w = np.hanning(x.shape[1])
    xw = x * w
    # row by row: the multi-row transform is not bit-identical to a single row,
    # and a descriptor must not depend on what else is in the batch
    spec = np.empty((x.shape[0], nfft // 2 + 1))
    for i in range(x.shape[0]):
        spec[i] = np.abs(np.fft.rfft(xw[i], n=nfft)) ** 2
    weight = np.full(spec.shape[1], 2.0)
    weight[0] = 1.0
    if nfft % 2 == 0:
        weight[-1] = 1.0
    # one-sided power normalised so the bins sum to the window-weighted mean square
    power = spec * weight / (nfft * np.sum(w**2))
    freqs = np.arange(spec.shape[1]) * fs / nfft
    out = np.empty((x.shape[0], len(BAND_EDGES) - 1))
    for i in range(len(BAND_EDGES) - 1):
        lo, hi = BAND_EDGES[i], BAND_EDGES[i + 1]
        last = i == len(BAND_EDGES) - 2
        sel = (freqs >= lo) & ((freqs <= hi) if last else (freqs < hi))
        out[:, i] = np.log(_rowsum(power[:, sel]) + LOG_POWER_FLOOR)
    return out


def fft_band_features_batch(W: np.ndarray, fs: float) -> np.ndarray:
    left, central, right = _split(W, fs)
    pc = _band_log_power(central, CENTRAL_NFFT, fs)
    pn = _band_log_power(np.concatenate([left, right], axis=1), NEIGHBOURHOOD_NFFT, fs)
    return np.concatenate([pc, pn, pc - pn], axis=1)


def _teager(x: np.ndarray) -> np.ndarray:
    return x[:, 1:-1] ** 2 - x[:, :-2] * x[:, 2:]


def teager_features_batch(W: np.ndarray, fs: float) -> np.ndarray:
    left, central, right = _split(W, fs)
    c = _teager(central).mean(axis=1)
    n = np.concatenate([_teager(left), _teager(right)], axis=1).mean(axis=1)
    return np.stack([c, n, c / (n + RATIO_GUARD)], axis=1)


def waveform_length_quotient_batch(W: np.ndarray, fs: float) -> np.ndarray:
    left, central, right = _split(W, fs)
    wl = lambda x: np.abs(np.diff(x, axis=1)).sum(axis=1)
    per_c = wl(central) / (central.shape[1] - 1)
    per_n = (wl(left) + wl(right)) / (left.shape[1] - 1 + right.shape[1] - 1)
    return per_c / (per_n + RATIO_GUARD)


def ricker(t, a: float):
    """Ricker (Mexican hat) wavelet with width parameter `a` samples."""
    t = np.asarray(t, dtype=np.float64)
    amp = 2.0 / (np.sqrt(3.0 * a) * np.pi**0.25)
    q = (t / a) ** 2
    return amp * (1.0 - q) * np.exp(-q / 2.0)


_CWT_CACHE: dict[tuple[int, float], np.ndarray] = {}


def _cwt_operator(n: int, a: float) -> np.ndarray:
    """Matrix of the zero-padded same-length convolution with a Ricker kernel
    supported on |t| <= 5a."""
    key = (n, a)
    if key not in _CWT_CACHE:
        lag = np.arange(n)[:, None] - np.arange(n)[None, :]
        M = np.where(np.abs(lag) <= 5 * a, ricker(lag, a), 0.0)
        _CWT_CACHE[key] = M
    return _CWT_CACHE[key]


def stats5(x: np.ndarray) -> np.ndarray:
    """Row-wise (mean, population sd, skewness, min, max); skewness of a
    constant row is 0."""
    mu = x.mean(axis=1)
    d = x - mu[:, None]
    sd = np.sqrt(np.mean(d**2, axis=1))
    # skewness from d / max|d|, which cannot underflow for tiny inputs
    peak = np.max(np.abs(d), axis=1)
    flat = (peak == 0) | (sd**2 <= 1e-20 * np.mean(x**2, axis=1))
    u = d / np.where(flat, 1.0, peak)[:, None]
    m2 = np.where(flat, 1.0, np.mean(u**2, axis=1))
    skew = np.where(flat, 0.0, np.mean(u**3, axis=1) / m2**1.5)
    return np.stack([mu, sd, skew, x.min(axis=1), x.max(axis=1)], axis=1)


def standardize_central(W: np.ndarray, fs: float) -> np.ndarray:
    left, central, right = _split(W, fs)
    nb = np.concatenate([left, right], axis=1)
    mu = nb.mean(axis=1, keepdims=True)
    sd = np.maximum(nb.std(axis=1, keepdims=True), STD_FLOOR)
    return (central - mu) / sd


def cwt_stats_batch(W: np.ndarray, fs: float) -> np.ndarray:
    z = standardize_central(W, fs)
    out = []
    for a in RICKER_SCALES:
        M = _cwt_operator(z.shape[1], float(a))
        coef = np.einsum("nj,ij->ni", z, M)
        out.append(stats5(coef))
    return np.concatenate(out, axis=1)


def diff_stats_batch(W: np.ndarray, fs: float) -> np.ndarray:
    _, central, _ = _split(W, fs)
    return stats5(np.diff(central, axis=1))


def describe_windows(W: np.ndarray, fs: float, ar_order: int = AR_ORDER) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    return np.concatenate(
        [
            anomaly_scores(W, fs, ar_order)[:, None],
            fft_band_features_batch(W, fs),
            teager_features_batch(W, fs),
            waveform_length_quotient_batch(W, fs)[:, None],
            cwt_stats_batch(W, fs),
            diff_stats_batch(W, fs),
        ],
        axis=1,
    )


def describe_events(channel_samples, centers, fs: float, ar_order: int = AR_ORDER) -> np.ndarray:
    """Feature matrix (n_centres, 59) for centres on one channel."""
    centers = np.asarray(centers, dtype=np.int64).reshape(-1)
    if centers.size == 0:
        return np.empty((0, N_FEATURES))
    return describe_windows(window_matrix(channel_samples, centers, fs), fs, ar_order)


# -- single-triplet API ----------------------------------------------------------


def anomaly_score(triplet: WindowTriplet, order: int = AR_ORDER) -> float:
    return float(anomaly_scores(triplet._batch(), triplet.fs, order)[0])


def fft_band_features(triplet: WindowTriplet) -> np.ndarray:
    return fft_band_features_batch(triplet._batch(), triplet.fs)[0]


def teager_features(triplet: WindowTriplet) -> np.ndarray:
    return teager_features_batch(triplet._batch(), triplet.fs)[0]


def waveform_length_quotient(triplet: WindowTriplet) -> float:
    return float(waveform_length_quotient_batch(triplet._batch(), triplet.fs)[0])


def cwt_stats(triplet: WindowTriplet) -> np.ndarray:
    return cwt_stats_batch(triplet._batch(), triplet.fs)[0]


def diff_stats(triplet: WindowTriplet) -> np.ndarray:
    return diff_stats_batch(triplet._batch(), triplet.fs)[0]


def describe_event(channel_samples, center_index: int, fs: float) -> FeatureVector:
    triplet = extract_windows(channel_samples, center_index, fs)
    return FeatureVector(values=describe_windows(triplet._batch(), fs)[0])


def features_to_csv(path, X: np.ndarray, names=FEATURE_NAMES) -> None:
    """Diagnostic export with feature names as the header row."""
    X = np.asarray(X)
    if X.shape[1] != len(names):
        raise ValueError(f"{X.shape[1]} columns but {len(names)} names")
    np.savetxt(path, X, delimiter=",", header=",".join(names), comments="", fmt="%.17g")
