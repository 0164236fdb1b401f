"""Reference-based quality measures (SI-SDR, segmental SNR).

Latency compensation is the caller's job: shift the estimate by ``B`` frames
before comparing.
"""
import numpy as np

SI_SDR_CAP_DB = 100.0


def _as_samples(x):
    return np.asarray(getattr(x, "samples", x), dtype=np.float64)


def si_sdr(reference, estimate, cap_db: float = SI_SDR_CAP_DB) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, capped at ``cap_db``."""
    ref = _as_samples(reference)
    est = _as_samples(estimate)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {est.shape}")
    ref_energy = np.dot(ref, ref)
    if ref_energy <= 0:
        raise ValueError("reference has zero energy")
    target = (np.dot(est, ref) / ref_energy) * ref
    residual = est - target
    num = np.dot(target, target)
    den = np.dot(residual, residual)
    if den <= num * 10 ** (-cap_db / 10):
        return cap_db
    return float(10 * np.log10(num / den))


def seg_snr(reference, estimate, sample_rate: int = 16000, frame_ms: float = 32.0,
            floor_db: float = -10.0, ceil_db: float = 35.0) -> float:
    """Mean over non-overlapping frames of the per-frame SNR clamped to [floor_db, ceil_db]."""
    ref = _as_samples(reference)
    est = _as_samples(estimate)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {est.shape}")
    if np.dot(ref, ref) <= 0:
        raise ValueError("reference has zero energy")
    n = max(1, int(round(sample_rate * frame_ms / 1000)))
    count = len(ref) // n
    if count == 0:
        raise ValueError("signal shorter than one segment")
    r = ref[: count * n].reshape(count, n)
    e = (est[: count * n] - ref[: count * n]).reshape(count, n)
    sig = np.sum(r**2, axis=1)
    err = np.sum(e**2, axis=1)
    tiny = np.finfo(np.float64).tiny
    with np.errstate(divide="ignore", over="ignore"):
        snr = 10 * np.log10(np.maximum(sig, tiny) / np.maximum(err, tiny))
    return float(np.mean(np.clip(snr, floor_db, ceil_db)))
