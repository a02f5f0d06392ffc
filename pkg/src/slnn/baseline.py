"""Per-cell harmonic regression baseline.

Each ocean cell gets an independent least-squares fit of

    y(t) = a0 + a1*t + a2*t**2
         + s1*sin(2*pi*t/12) + c1*cos(2*pi*t/12)
         + s2*sin(4*pi*t/12) + c2*cos(4*pi*t/12)

with t in months from the first training month.  Prediction is plain
design-matrix evaluation, i.e. pure extrapolation beyond the fit period.
"""

from dataclasses import dataclass

import numpy as np

from slnn.data import GridSeries, add_months

N_COEFFS = 7
COEFF_NAMES = ("a0", "a1", "a2", "s1", "c1", "s2", "c2")


def design_matrix(months):
    """Rows of the regression design for integer month indices."""
    t = np.asarray(months, dtype=np.float64)
    w = 2.0 * np.pi / 12.0
    return np.column_stack(
        [
            np.ones_like(t),
            t,
            t * t,
            np.sin(w * t),
            np.cos(w * t),
            np.sin(2.0 * w * t),
            np.cos(2.0 * w * t),
        ]
    )


@dataclass
class HarmonicModel:
    """coeffs [H,W,7]; land cells carry no model (all-zero rows, masked)."""

    coeffs: np.ndarray
    mask: np.ndarray
    template: GridSeries  # geometry + t=0 epoch of the fit axis


def fit_baseline(train):
    """Least-squares harmonic fit for every ocean cell of the training
    series.

    The quadratic columns are centered and scaled internally (t**2 over a
    couple hundred months is badly conditioned otherwise) and the
    coefficients mapped back to the raw month axis.  Solved with numpy's
    orthogonal-factorization least squares, all cells in one call.
    """
    t_count = train.months
    if t_count < N_COEFFS:
        raise ValueError(f"need at least {N_COEFFS} training months, got {t_count}")
    t = np.arange(t_count, dtype=np.float64)
    mu = t.mean()
    sigma = t.std()
    if sigma == 0.0:
        raise ValueError("degenerate t range: design is rank-deficient")
    tc = (t - mu) / sigma
    w = 2.0 * np.pi / 12.0
    design = np.column_stack(
        [
            np.ones_like(t),
            tc,
            tc * tc,
            np.sin(w * t),
            np.cos(w * t),
            np.sin(2.0 * w * t),
            np.cos(2.0 * w * t),
        ]
    )
    ocean = train.mask == 1
    targets = train.fields[:, ocean]
    beta, _, rank, _ = np.linalg.lstsq(design, targets, rcond=None)
    if rank < N_COEFFS:
        raise ValueError(
            f"rank-deficient design (rank {rank} of {N_COEFFS}): degenerate t range"
        )
    # Undo the centering: b0 + b1*tc + b2*tc^2 -> a0 + a1*t + a2*t^2.
    raw = beta.copy()
    raw[2] = beta[2] / sigma**2
    raw[1] = beta[1] / sigma - 2.0 * beta[2] * mu / sigma**2
    raw[0] = beta[0] - beta[1] * mu / sigma + beta[2] * (mu / sigma) ** 2
    coeffs = np.zeros((train.height, train.width, N_COEFFS))
    coeffs[ocean] = raw.T
    return HarmonicModel(coeffs, train.mask.copy(), train.slice_months(0, 1))


def predict_baseline(model, months):
    """Evaluate the fitted model at contiguous month indices (fit axis).

    Negative indices and indices past the training period extrapolate.
    Land cells carry the fill value.
    """
    months = np.asarray(list(months), dtype=np.int64)
    if months.size == 0:
        raise ValueError("no months requested")
    if months.size > 1 and not np.all(np.diff(months) == 1):
        raise ValueError("months must be contiguous ascending indices")
    design = design_matrix(months)
    tpl = model.template
    ocean = model.mask == 1
    fields = np.full((months.size, tpl.height, tpl.width), tpl.fill)
    fields[:, ocean] = design @ model.coeffs[ocean].T
    y, m = add_months(tpl.epoch_year, tpl.epoch_month, int(months[0]))
    return GridSeries(
        fields,
        model.mask.copy(),
        tpl.lat0,
        tpl.lon0,
        tpl.dlat,
        tpl.dlon,
        y,
        m,
        tpl.fill,
    ).validate()


def coefficients_csv(model, path):
    """Export per-cell coefficients as lon,lat,a0..c2 rows (ocean cells)."""
    tpl = model.template
    with open(path, "w", newline="") as f:
        f.write("lon,lat," + ",".join(COEFF_NAMES) + "\n")
        for i in range(tpl.height):
            for j in range(tpl.width):
                if model.mask[i, j] != 1:
                    continue
                lon = tpl.lon0 + j * tpl.dlon
                lat = tpl.lat0 + i * tpl.dlat
                row = ",".join(repr(float(v)) for v in model.coeffs[i, j])
                f.write(f"{lon},{lat},{row}\n")
