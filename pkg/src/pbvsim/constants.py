"""Physical constants and measured reference values (SI units)."""

from scipy import constants as _c

H = _c.h
K_B = _c.k
MU_B_HZ_PER_T = 13.996e9

# ground-state spin-orbit splitting of the measured emitter
DELTA_GS = 3.903e12
# transform-limited optical linewidth (FWHM)
LINEWIDTH_FWHM = 38e6
C_LINE_WAVELENGTH = 550e-9
D_LINE_WAVELENGTH = 554e-9
ZPL_FREQ = _c.c / C_LINE_WAVELENGTH
