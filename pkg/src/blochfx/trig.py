"""Trigonometric interpolation of periodic samples on uniform grids."""
from __future__ import annotations

import numpy as np


def _symmetric_modes(n: int) -> np.ndarray:
    return np.fft.fftfreq(n, d=1.0 / n)


class TrigInterpolant:
    """Periodic trigonometric interpolant in ``d`` variables.

    ``values`` has shape ``(n,)*d + tail``; sample ``i`` sits at
    ``k = i * period / n`` along each axis.  Even-``n`` Nyquist modes are
    split symmetrically so real data gives a real interpolant, and the
    interpolant reproduces the samples exactly.
    """

    def __init__(self, values, periods):
        values = np.asarray(values)
        self.periods = np.atleast_1d(np.asarray(periods, dtype=float))
        self.d = len(self.periods)
        self.shape = values.shape[: self.d]
        self.tail = values.shape[self.d:]
        coef = np.fft.fftn(values, axes=tuple(range(self.d))) / np.prod(self.shape)
        modes, weights = [], []
        for n in self.shape:
            m = _symmetric_modes(n)
            w = np.ones(n)
            if n % 2 == 0:
                # split the Nyquist mode into +n/2 and -n/2 halves
                m = np.append(m, n // 2)
                w[n // 2] = 0.5
                w = np.append(w, 0.5)
            modes.append(m)
            weights.append(w)
        idx = [np.where(np.arange(len(m)) < n, np.arange(len(m)), n // 2) for m, n in zip(modes, self.shape)]
        grids = np.meshgrid(*idx, indexing="ij")
        c = coef[tuple(grids)]
        wt = np.ones(())
        for w in weights:
            wt = np.multiply.outer(wt, w)
        c = c * wt.reshape(wt.shape + (1,) * len(self.tail))
        mgrids = np.meshgrid(*modes, indexing="ij")
        self.modes = np.stack([g.ravel() for g in mgrids], axis=-1)  # (M, d)
        self.coef = c.reshape((-1,) + self.tail)  # (M, *tail)

    def __call__(self, k, order: int = 0):
        """Evaluate at ``k`` of shape ``(B, d)``.

        Returns ``[f]`` (shape ``(B, *tail)``), plus ``grad`` with a new axis
        of length d after B when order >= 1, plus ``hess`` (two axes) when
        order >= 2.
        """
        k = np.asarray(k, dtype=float).reshape(-1, self.d)
        wave = 2 * np.pi * self.modes / self.periods  # (M, d)
        ph = np.exp(1j * (k @ wave.T))  # (B, M)
        flat = self.coef.reshape(len(self.modes), -1)
        out = [(ph @ flat).reshape((len(k),) + self.tail)]
        if order >= 1:
            g = np.stack([(ph * (1j * wave[:, j])) @ flat for j in range(self.d)], axis=1)
            out.append(g.reshape((len(k), self.d) + self.tail))
        if order >= 2:
            hs = np.empty((len(k), self.d, self.d, flat.shape[1]), dtype=complex)
            for i in range(self.d):
                for j in range(self.d):
                    hs[:, i, j] = (ph * (-wave[:, i] * wave[:, j])) @ flat
            out.append(hs.reshape((len(k), self.d, self.d) + self.tail))
        return out
