"""Dense 2×2 density-matrix oracle for the Bloch-form maps."""

import numpy as np

# experimental values
DT = 16e-9
TAU = 1.0 / 1.97e6
RABI = 2.0 * np.pi * 2.16e6


def density_from_bloch(x, y, z):
    return 0.5 * np.array([[1 + z, x - 1j * y], [x + 1j * y, 1 - z]], dtype=complex)


def bloch_from_density(rho):
    return (
        float(2 * np.real(rho[1, 0])),
        float(2 * np.imag(rho[1, 0])),
        float(np.real(rho[0, 0] - rho[1, 1])),
    )


def povm_matrix(r, eps):
    """Dense M_r = (ε/2π)^{1/4} exp[-ε(r - σz)²/4]."""
    pref = (eps / (2 * np.pi)) ** 0.25
    return pref * np.diag([np.exp(-eps * (r - 1) ** 2 / 4), np.exp(-eps * (r + 1) ** 2 / 4)]).astype(complex)


def rotation_y(theta):
    """exp(-iθσy/2)."""
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rotation_z(theta):
    """exp(-iθσz/2)."""
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])
