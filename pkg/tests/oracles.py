"""Reference computations that share no code with the package.

Everything here is built from explicit matrix elements or closed forms so
it can check the library rather than restate it.
"""

import math

import numpy as np

# default constants, written out literally
D_GS = 2.87e9
GAMMA_E = 28e9
GAMMA_N = 3.077e6
A_Z = 2.2e6
A_PERP = -2.62e6
QUAD_P = -4.945e6
F_CONST = 2.75
T_PI = 35e-9

M = (1, 0, -1)


def g_closed_form(b_z, b_perp, d=D_GS, ge=GAMMA_E, ap=A_PERP, f=F_CONST):
    return ge * b_perp * ap * f / (math.pi * (d - ge * b_z))


def _jplus(m):
    # <m+1|J+|m> for spin 1
    return math.sqrt(2 - m * (m + 1))


def hamiltonian9(b_z, b_perp, d=D_GS, ge=GAMMA_E, gn=GAMMA_N, az=A_Z, ap=A_PERP, p=QUAD_P):
    """9x9 lab Hamiltonian from explicit <ms' mi'|H|ms mi> elements (azimuth 0)."""
    labels = [(ms, mi) for ms in M for mi in M]
    h = np.zeros((9, 9), dtype=complex)
    for a, (ms, mi) in enumerate(labels):
        h[a, a] = d * ms ** 2 + ge * b_z * ms + p * mi ** 2 - gn * b_z * mi + az * ms * mi
        for b, (ns, ni) in enumerate(labels):
            # electron transverse Zeeman: ge b_perp (S+ + S-)/2
            if ni == mi and abs(ns - ms) == 1:
                lo = min(ns, ms)
                h[b, a] += ge * b_perp * 0.5 * _jplus(lo)
            # nuclear transverse Zeeman: -gn b_perp (I+ + I-)/2
            if ns == ms and abs(ni - mi) == 1:
                lo = min(ni, mi)
                h[b, a] += -gn * b_perp * 0.5 * _jplus(lo)
            # flip-flop: ap (S+I- + S-I+)/2
            if ns == ms + 1 and ni == mi - 1:
                h[b, a] += ap * 0.5 * _jplus(ms) * _jplus(ni)
            if ns == ms - 1 and ni == mi + 1:
                h[b, a] += ap * 0.5 * _jplus(ns) * _jplus(mi)
    return h, labels


def rabi_excited(omega, detuning, t):
    """Two-level excited population, rates in Hz."""
    w = math.hypot(omega, detuning)
    return (omega / w) ** 2 * math.sin(math.pi * w * t) ** 2


def tau_from_condition(f, t_pi):
    return (1 / (2 * f) - t_pi) / 2


def u_trans(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1, 0, 0, 0], [0, -1j * c, s, 0], [0, s, -1j * c, 0], [0, 0, 0, -1]])


def normalized(s0, s1):
    return (s0 - s1) / (s0 + s1)


def transfer_populations(theta, c0sq, c1sq):
    return c0sq + c1sq * math.cos(theta) ** 2, c1sq * math.sin(theta) ** 2


def bresenham_high_count(frac, n):
    return round(frac * n)


def branch_frequencies(b_z, b_perp=0.0):
    """Branch targets from exact diagonalization of the oracle Hamiltonian.

    Average of the nuclear transition frequency in m_S = 0 and -1 for the
    two 14N transitions; returned low first.
    """
    h, labels = hamiltonian9(b_z, b_perp)
    ev = np.linalg.eigvalsh(h)
    # at small b_perp, diagonal ordering identifies states; use perturbed diagonal order
    diag = np.real(np.diag(h))
    order = np.argsort(diag)
    e = dict(zip([labels[k] for k in order], np.sort(ev)))
    out = []
    for pair in ((1, 0), (0, -1)):
        f = 0.5 * (abs(e[(0, pair[0])] - e[(0, pair[1])]) + abs(e[(-1, pair[0])] - e[(-1, pair[1])]))
        out.append(f)
    return sorted(out)
