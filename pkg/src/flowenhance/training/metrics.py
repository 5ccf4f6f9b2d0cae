import numpy as np

from ..audio import Waveform
from ..errors import DegenerateInputError, ShapeError

SI_SDR_CAP_DB = 100.0


def si_sdr(estimate: Waveform, reference: Waveform) -> float:
    """Scale-invariant SDR in dB, capped at ``SI_SDR_CAP_DB``."""
    e = np.asarray(getattr(estimate, "samples", estimate), dtype=np.float64)
    r = np.asarray(getattr(reference, "samples", reference), dtype=np.float64)
    if e.shape != r.shape:
        raise ShapeError("estimate and reference lengths differ")
    ref_energy = float(r @ r)
    if ref_energy == 0.0:
        raise DegenerateInputError("reference has zero energy")
    target = (e @ r) / ref_energy * r
    residual = e - target
    num, den = float(target @ target), float(residual @ residual)
    if den == 0.0 or num / den > 10.0 ** (SI_SDR_CAP_DB / 10.0):
        return SI_SDR_CAP_DB
    if num == 0.0:
        return -SI_SDR_CAP_DB
    return 10.0 * np.log10(num / den)
