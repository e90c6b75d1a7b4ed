"""Linewidth extraction and Voigt profiles for yield-versus-detuning scans."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

__all__ = [
    "LineshapeScan",
    "RangeTooNarrowError",
    "MultipleCrossingsWarning",
    "GridTooCoarseError",
    "VoigtFit",
    "fwhm",
    "voigt_width",
    "voigt_profile",
    "lorentzian",
    "gaussian",
    "fit_voigt",
]

FWHM_GAUSS = 2.0 * math.sqrt(2.0 * math.log(2.0))


class RangeTooNarrowError(ValueError):
    """The half maximum is not crossed inside the sampled range."""


class MultipleCrossingsWarning(UserWarning):
    """The curve crosses its half maximum more often than a single peak would."""


class GridTooCoarseError(ValueError):
    pass


@dataclass
class LineshapeScan:
    """Mean yield versus detuning (units of the natural linewidth).

    ``half`` marks a scan sampled only for detuning >= 0 of a curve that is
    symmetric about zero.
    """

    detunings: np.ndarray
    yields: np.ndarray
    stderrs: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)
    half: bool = False

    def __post_init__(self):
        self.detunings = np.asarray(self.detunings, dtype=float)
        self.yields = np.asarray(self.yields, dtype=float)
        if self.stderrs is None:
            self.stderrs = np.zeros_like(self.yields)
        self.stderrs = np.asarray(self.stderrs, dtype=float)
        if not (self.detunings.shape == self.yields.shape == self.stderrs.shape):
            raise ValueError("detunings, yields and stderrs must have equal length")
        if self.detunings.size and np.any(np.diff(self.detunings) <= 0):
            raise ValueError("detunings must be strictly increasing")
        if np.any(self.yields < 0):
            raise ValueError("yields must be non-negative")
        if self.half and self.detunings.size and self.detunings[0] < 0:
            raise ValueError("a half scan starts at detuning >= 0")

    def __len__(self):
        return self.detunings.size

    @property
    def fwhm(self) -> float:
        return fwhm(self)

    def mirrored(self) -> "LineshapeScan":
        """Full symmetric scan built from a half scan."""
        if not self.half:
            return self
        start = 1 if self.detunings[0] == 0 else 0
        return LineshapeScan(
            np.concatenate([-self.detunings[start:][::-1], self.detunings]),
            np.concatenate([self.yields[start:][::-1], self.yields]),
            np.concatenate([self.stderrs[start:][::-1], self.stderrs]),
            dict(self.metadata),
            half=False,
        )

    def to_csv(self, path, header=()):
        from .io import write_csv

        return write_csv(
            path,
            {"detuning": self.detunings, "yield": self.yields, "stderr": self.stderrs},
            header,
        )

    @classmethod
    def from_csv(cls, path) -> "LineshapeScan":
        from .io import read_csv

        cols, header = read_csv(path)
        half = bool(cols["detuning"].size) and cols["detuning"][0] >= 0
        return cls(cols["detuning"], cols["yield"], cols.get("stderr"), {"header": header}, half)


def _crossing(x0, y0, x1, y1, level):
    return x0 + (level - y0) * (x1 - x0) / (y1 - y0)


def fwhm(curve, y=None, *, half: bool | None = None) -> float:
    """Full width at half maximum by linear interpolation between samples.

    ``curve`` is a :class:`LineshapeScan` or the x samples (with ``y``). For
    half scans the width is twice the right crossing.
    """
    if isinstance(curve, LineshapeScan):
        x, y = curve.detunings, curve.yields
        half = curve.half if half is None else half
    else:
        x = np.asarray(curve, dtype=float)
        y = np.asarray(y, dtype=float)
        half = bool(half)
    if x.size < 2:
        raise RangeTooNarrowError("need at least two samples")
    p = int(np.argmax(y))
    level = 0.5 * y[p]
    above = y >= level
    n_cross = int(np.count_nonzero(above[1:] != above[:-1]))

    hi = int(np.nonzero(above)[0][-1])
    if hi == x.size - 1:
        raise RangeTooNarrowError("half maximum not reached on the right side of the scan")
    right = _crossing(x[hi], y[hi], x[hi + 1], y[hi + 1], level)
    if half:
        if n_cross > 1:
            warnings.warn("multiple half-maximum crossings; using the outermost",
                          MultipleCrossingsWarning, stacklevel=2)
        return 2.0 * right

    lo = int(np.nonzero(above)[0][0])
    if lo == 0:
        raise RangeTooNarrowError("half maximum not reached on the left side of the scan")
    if n_cross > 2:
        warnings.warn("multiple half-maximum crossings; using the outermost",
                      MultipleCrossingsWarning, stacklevel=2)
    left = _crossing(x[lo - 1], y[lo - 1], x[lo], y[lo], level)
    return right - left


def voigt_width(gamma2: float, delta_omega_s: float) -> float:
    """Approximate FWHM of a Lorentzian (FWHM ``gamma2``) convolved with a
    Gaussian (FWHM ``delta_omega_s``)."""
    if not gamma2 > 0 or delta_omega_s < 0:
        raise ValueError("gamma2 must be positive and delta_omega_s non-negative")
    r = delta_omega_s / gamma2
    return gamma2 * (0.5346 + math.sqrt(0.2166 + r * r))


def lorentzian(x, fwhm_l):
    hw = 0.5 * fwhm_l
    return hw / (math.pi * (np.asarray(x, dtype=float) ** 2 + hw * hw))


def gaussian(x, fwhm_g):
    s = fwhm_g / FWHM_GAUSS
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2.0 * math.pi))


def voigt_profile(gamma_lorentz, fwhm_gauss, delta, *, peak_normalized=False, step=None):
    """Unit-area Lorentzian convolved with a unit-area Gaussian, by direct quadrature.

    The convolution runs over the Gaussian's support (+-8 sigma) with a step
    of ``min(widths) / 20`` unless ``step`` is given.
    """
    if not (gamma_lorentz > 0 and fwhm_gauss > 0):
        raise ValueError("widths must be positive")
    wmin = min(gamma_lorentz, fwhm_gauss)
    if step is None:
        step = wmin / 20.0
    if step > wmin / 10.0:
        raise GridTooCoarseError(
            f"quadrature step {step:.3g} exceeds min(widths)/10 = {wmin / 10:.3g}"
        )
    sg = fwhm_gauss / FWHM_GAUSS
    n = int(math.ceil(8.0 * sg / step))
    y = np.arange(-n, n + 1) * step
    wts = gaussian(y, fwhm_gauss) * step
    wts[0] *= 0.5
    wts[-1] *= 0.5
    delta = np.asarray(delta, dtype=float)
    flat = delta.ravel()
    out = np.empty(flat.size)
    chunk = max(1, 4_000_000 // y.size)
    for s in range(0, flat.size, chunk):
        d = flat[s:s + chunk, None]
        out[s:s + chunk] = lorentzian(d - y[None, :], gamma_lorentz) @ wts
    out = out.reshape(delta.shape)
    if peak_normalized:
        out = out / float(lorentzian(-y, gamma_lorentz) @ wts)
    return out


@dataclass
class VoigtFit:
    gamma_voigt: float
    amplitude: float
    fwhm_gauss: float
    fwhm_lorentz: float
    residual: float
    n_iter: int
    converged: bool
    message: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _gauss_from_width(total, gl):
    a = total - 0.5346 * gl
    v = a * a - 0.2166 * gl * gl
    return math.sqrt(v) if v > 0 else 0.1 * gl


def fit_voigt(scan: LineshapeScan, gamma_lorentz: float | None = None, *,
              free_lorentz: bool = False) -> VoigtFit:
    """Least-squares Voigt fit with the Lorentzian width fixed (default) or free.

    Residuals are weighted by ``1/stderr^2`` where standard errors are
    available. The Gaussian component is the free width; the reported total
    width is :func:`voigt_width` of the fitted components.
    """
    if len(scan) < 8:
        raise ValueError("fit_voigt needs at least 8 scan points")
    if gamma_lorentz is None:
        gamma_lorentz = float(scan.metadata.get("gamma2", 1.0))
    full = scan.mirrored()
    x, y, e = full.detunings, full.yields, full.stderrs
    w = np.where(e > 0, 1.0 / np.where(e > 0, e, 1.0) ** 2, 0.0)
    if not np.any(w > 0):
        w = np.ones_like(y)
    else:
        w = np.where(w > 0, w, w[w > 0].max())
    w = w / w.max()
    scale = float(y.max())
    yn = y / scale

    total0 = fwhm(scan)
    floor = 1e-6 * gamma_lorentz

    def unpack(p):
        amp = p[0]
        gg = max(math.exp(p[1]), floor)
        gl = max(math.exp(p[2]), floor) if free_lorentz else gamma_lorentz
        return amp, gg, gl

    def cost(p):
        amp, gg, gl = unpack(p)
        model = amp * voigt_profile(gl, gg, x, peak_normalized=True)
        return float(np.sum(w * (yn - model) ** 2))

    p0 = [1.0, math.log(max(_gauss_from_width(total0, gamma_lorentz), 10 * floor))]
    if free_lorentz:
        p0.append(math.log(gamma_lorentz))
    res = minimize(cost, np.array(p0), method="Nelder-Mead",
                   options={"xatol": 1e-8, "fatol": 1e-14, "maxiter": 4000})
    amp, gg, gl = unpack(res.x)
    return VoigtFit(
        gamma_voigt=voigt_width(gl, gg),
        amplitude=amp * scale,
        fwhm_gauss=gg,
        fwhm_lorentz=gl,
        residual=float(res.fun),
        n_iter=int(res.nit),
        converged=bool(res.success),
        message=str(res.message),
    )
