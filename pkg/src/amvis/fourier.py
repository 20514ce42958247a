"""Frequency-domain image parameterization.

The optimized variable is a per-channel half spectrum ``a + b i`` of shape
[C, H, W//2+1]. Decoding multiplies it by a radial frequency weight, applies
the orthonormal inverse real FFT and squashes the result into [0, 1] with a
sigmoid. Because only the half spectrum is stored, the decoded image is real
by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import lmt
from . import tensor as T
from .tensor import Tensor


@dataclass
class SpectralScale:
    """Weights ``max(f, f_min) ** -decay`` with ``f`` the radial frequency in cycles/pixel.

    ``f_min=None`` means ``1 / max(H, W)``. ``decay=0`` turns scaling off.
    """

    decay: float = 1.0
    f_min: float | None = None

    def __post_init__(self):
        if self.decay < 0:
            raise ValueError("decay must be >= 0")

    def weights(self, height: int, width: int) -> np.ndarray:
        fy = np.fft.fftfreq(height)[:, None]
        fx = np.fft.rfftfreq(width)[None, :]
        f = np.sqrt(fy * fy + fx * fx)
        f_min = self.f_min if self.f_min is not None else 1.0 / max(height, width)
        return np.maximum(f, f_min) ** (-self.decay)


@dataclass
class ComplexSpectrum:
    real: Tensor
    imag: Tensor
    extent: tuple[int, int]

    @property
    def channels(self) -> int:
        return self.real.shape[0]

    def parameters(self) -> list[Tensor]:
        return [self.real, self.imag]

    def numpy(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data

    @classmethod
    def from_complex(cls, z: np.ndarray, extent: tuple[int, int], requires_grad: bool = False, dtype=np.float32):
        return cls(
            Tensor(np.ascontiguousarray(z.real, dtype=dtype), requires_grad=requires_grad),
            Tensor(np.ascontiguousarray(z.imag, dtype=dtype), requires_grad=requires_grad),
            tuple(extent),
        )


def init_spectrum(extent: tuple[int, int, int], seed: int = 0, amplitude: float = 0.01, dtype=np.float32) -> ComplexSpectrum:
    """I.i.d. normal(0, amplitude^2) real and imaginary parts."""
    c, h, w = extent
    if h < 4 or w < 4:
        raise ValueError(f"spectrum extent must be at least 4x4, got {h}x{w}")
    rng = np.random.default_rng(seed)
    shape = (c, h, w // 2 + 1)
    a = (amplitude * rng.standard_normal(shape)).astype(dtype)
    b = (amplitude * rng.standard_normal(shape)).astype(dtype)
    return ComplexSpectrum(Tensor(a, requires_grad=True), Tensor(b, requires_grad=True), (h, w))


def decode_linear(z: ComplexSpectrum, scale: SpectralScale | None = None) -> Tensor:
    """Scaled inverse FFT without the range mapping (the "pre-sigmoid" image).

    ``scale=None`` uses the default ``SpectralScale()``; pass ``SpectralScale(0)``
    for an unweighted transform.
    """
    h, w = z.extent
    wgt = (scale or SpectralScale()).weights(h, w).astype(z.real.dtype)
    return T.irfft2(z.real * wgt, z.imag * wgt, (h, w))


def decode(z: ComplexSpectrum, scale: SpectralScale | None = None) -> Tensor:
    """Spectrum to a [C,H,W] image in [0, 1]."""
    return T.sigmoid(decode_linear(z, scale))


def forward_fft(image, scale: SpectralScale | None = None) -> ComplexSpectrum:
    """Orthonormal half-spectrum FFT of a [C,H,W] (or [H,W]) image.

    Without ``scale`` this is the plain transform, so it recovers the scaled
    spectrum that ``decode_linear`` inverted. With ``scale`` the weights are
    divided out, giving ``z`` with ``decode_linear(z, scale) == image``.
    """
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    h, w = data.shape[-2:]
    spec = np.fft.rfft2(data.astype(np.float64), norm="ortho")
    if scale is not None:
        spec = spec / scale.weights(h, w)
    dtype = data.dtype if data.dtype.kind == "f" else np.float32
    return ComplexSpectrum.from_complex(spec, (h, w), dtype=dtype)


def hermitian_weights(width: int) -> np.ndarray:
    """Multiplicity of each half-spectrum column in the full spectrum."""
    m = np.full(width // 2 + 1, 2.0)
    m[0] = 1.0
    if width % 2 == 0:
        m[-1] = 1.0
    return m


def spectral_energy(z: ComplexSpectrum, scale: SpectralScale | None = None) -> float:
    """Energy of the full (scaled) spectrum implied by the half spectrum.

    Equals the spatial energy of ``decode_linear(z, scale)`` when ``z`` is
    Hermitian-consistent, e.g. anything returned by :func:`forward_fft`.
    """
    h, w = z.extent
    wgt = (scale or SpectralScale()).weights(h, w)
    mag2 = np.abs(z.numpy().astype(np.complex128) * wgt) ** 2
    return float((mag2 * hermitian_weights(w)).sum())


def high_freq_energy_ratio(image, cutoff: float = 0.25) -> float:
    """Fraction of non-DC spectral energy at radial frequency above ``cutoff`` cycles/pixel."""
    if not 0 < cutoff <= 0.5:
        raise ValueError("cutoff must lie in (0, 0.5]")
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    data = np.asarray(data, dtype=np.float64)
    h, w = data.shape[-2:]
    power = np.abs(np.fft.fft2(data, norm="ortho")) ** 2
    if power.ndim > 2:
        power = power.reshape(-1, h, w).sum(axis=0)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.sqrt(fy * fy + fx * fx)
    power[0, 0] = 0.0
    total = power.sum()
    if total <= 0:
        return 0.0
    return float(power[radius > cutoff].sum() / total)


def save_spectrum(z: ComplexSpectrum, prefix) -> None:
    """Write ``<prefix>.real.lmt``, ``<prefix>.imag.lmt`` and ``<prefix>.extent``."""
    prefix = Path(prefix)
    lmt.save(prefix.with_name(prefix.name + ".real.lmt"), z.real.data)
    lmt.save(prefix.with_name(prefix.name + ".imag.lmt"), z.imag.data)
    prefix.with_name(prefix.name + ".extent").write_text(f"{z.extent[0]} {z.extent[1]}\n", encoding="utf-8")


def load_spectrum(prefix) -> ComplexSpectrum:
    prefix = Path(prefix)
    a = lmt.load(prefix.with_name(prefix.name + ".real.lmt"))
    b = lmt.load(prefix.with_name(prefix.name + ".imag.lmt"))
    h, w = (int(v) for v in prefix.with_name(prefix.name + ".extent").read_text(encoding="utf-8").split())
    return ComplexSpectrum(Tensor(a), Tensor(b), (h, w))
