"""Laser-ion interaction in the interaction picture.

Covers both rotating-wave branches of the drive:

* z-branch: slow drive (omega_I far below the spin splitting) giving a
  state-dependent force, spin factor alpha_0 1 + alpha_3 sigma_z;
* xy-branch: near-resonant drive giving spin flips, factor
  (alpha_1 + alpha_2 / i) sigma_+ / 2 + h.c.

Hamiltonians are hbar-scaled (rad/s).  The constant optical phase k.x0 is
taken as already absorbed into the per-ion phases phi when the Lamb-Dicke
tensor was built.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import hilbert
from .crystal import LambDickeTensor
from .hilbert import SpaceSpec, OperatorSpec, build_operator, kappa_matrix


class DriveError(Exception):
    pass


@dataclass(frozen=True)
class DriveSpec:
    """One laser drive: strengths, phases, spin coefficients, mode couplings.

    ``lamb_dicke`` rows are the modes this drive addresses; per-mode
    detunings come either from explicit ``detunings`` (rad/s) or from the
    drive frequency ``omega_drive`` as delta_m = omega_I - omega_m.  For the
    xy-branch, ``carrier_detuning`` holds omega_I - omega_updown.
    """

    branch: str
    omegas: tuple                  # per-ion interaction strength Omega (rad/s)
    phases: tuple                  # per-ion phase phi (rad)
    alphas: tuple                  # (alpha_0, alpha_1, alpha_2, alpha_3)
    lamb_dicke: LambDickeTensor
    omega_drive: float = None      # rad/s
    explicit_detunings: tuple = None
    carrier_detuning: float = 0.0  # rad/s, xy-branch bookkeeping

    def __post_init__(self):
        a0, a1, a2, a3 = self.alphas
        if self.branch == "z":
            if a1 != 0 or a2 != 0:
                raise DriveError("z-branch requires alpha_1 = alpha_2 = 0")
            if a0 == 0 and a3 == 0:
                raise DriveError("z-branch drive has no spin coupling")
        elif self.branch == "xy":
            if a0 != 0 or a3 != 0:
                raise DriveError("xy-branch requires alpha_0 = alpha_3 = 0")
            if a1 == 0 and a2 == 0:
                raise DriveError("xy-branch drive has no spin coupling")
        else:
            raise DriveError(f"unknown branch {self.branch!r}")
        n = self.lamb_dicke.n_ions
        object.__setattr__(self, "omegas", _per_ion(self.omegas, n))
        object.__setattr__(self, "phases", _per_ion(self.phases, n))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if self.explicit_detunings is not None:
            det = tuple(float(d) for d in self.explicit_detunings)
            if len(det) != self.lamb_dicke.n_modes:
                raise DriveError("one detuning per addressed mode required")
            object.__setattr__(self, "explicit_detunings", det)
        elif self.branch == "z" and self.omega_drive is None:
            raise DriveError("z-branch drive needs omega_drive or detunings")

    @property
    def n_ions(self):
        return self.lamb_dicke.n_ions

    @property
    def n_modes(self):
        return self.lamb_dicke.n_modes

    @property
    def detunings(self):
        """delta_m = omega_I - omega_m per addressed mode (rad/s)."""
        if self.explicit_detunings is not None:
            return np.asarray(self.explicit_detunings)
        return self.omega_drive - self.lamb_dicke.mode_frequencies

    @property
    def eta(self):
        return self.lamb_dicke.eta

    def select_modes(self, indices):
        det = None
        if self.explicit_detunings is not None:
            det = tuple(self.explicit_detunings[i] for i in indices)
        return DriveSpec(self.branch, self.omegas, self.phases, self.alphas,
                         self.lamb_dicke.select(indices), self.omega_drive,
                         det, self.carrier_detuning)

    def scale_omega(self, factor):
        return DriveSpec(self.branch, tuple(o * factor for o in self.omegas),
                         self.phases, self.alphas, self.lamb_dicke,
                         self.omega_drive, self.explicit_detunings,
                         self.carrier_detuning)

    def space(self, n_max):
        """SpaceSpec with one truncated mode per addressed mode."""
        t = self.lamb_dicke
        labels = t.labels or tuple(f"m{m}" for m in range(t.n_modes))
        if np.isscalar(n_max):
            n_max = (int(n_max),) * t.n_modes
        modes = tuple(hilbert.ModeSpec(l, float(w), n)
                      for l, w, n in zip(labels, t.mode_frequencies, n_max))
        return SpaceSpec(n_spins=t.n_ions, modes=modes)

    def resolved_sideband_warnings(self):
        """Warn-level diagnostics when |Omega eta| is not small vs the mode
        frequency (RWA stress); exploring the breakdown is allowed."""
        notes = []
        for m in range(self.n_modes):
            w = self.lamb_dicke.mode_frequencies[m]
            if w <= 0:
                continue
            y = max(abs(o * self.eta[m, i]) for i, o in enumerate(self.omegas))
            if y > w / 5:
                notes.append(
                    f"mode {m}: coupling {y:.3e} rad/s exceeds omega/5 = {w / 5:.3e}")
        return notes


def _per_ion(value, n):
    if np.isscalar(value):
        return (float(value),) * n
    vals = tuple(float(v) for v in value)
    if len(vals) != n:
        raise DriveError(f"expected {n} per-ion values, got {len(vals)}")
    return vals


# --- Rabi rates and the closed-form two-level solution ---------------------------

def rabi_rate(n_out, n_in, omega, eta):
    """Generalised Rabi rate Omega_{n',n} between Fock levels (rad/s):

        Omega e^{-eta^2/2} eta^{|n'-n|} sqrt(n_<!/n_>!) L_{n_<}^{(|n'-n|)}(eta^2)

    Symmetric in (n_out, n_in) by construction.
    """
    if n_out < 0 or n_in < 0:
        raise ValueError("Fock indices must be non-negative")
    k = abs(n_out - n_in)
    n_lt, n_gt = min(n_out, n_in), max(n_out, n_in)
    if eta == 0.0:
        return omega if k == 0 else 0.0
    log_mag = -0.5 * eta**2 + 0.5 * (math.lgamma(n_lt + 1) - math.lgamma(n_gt + 1))
    sign = 1.0
    if k:
        log_mag += k * math.log(abs(eta))
        sign = math.copysign(1.0, eta) ** k
    return omega * sign * math.exp(log_mag) * hilbert.laguerre(n_lt, k, eta**2)


@dataclass(frozen=True)
class RabiProblem:
    """Two-level problem: detuning delta = (omega_I - omega_updown) - (n'-n) omega,
    complex coupling Y (rad/s), duration t (s)."""

    delta: float
    coupling: complex
    duration: float

    def generalized_rabi(self):
        return math.sqrt(self.delta**2 / 4.0 + abs(self.coupling) ** 2)


def rabi_matrix(problem):
    """Closed-form 2x2 evolution matrix on (c_up, c_down).

    Frame note: the off-diagonal phases e^{-+ i delta t / 2} belong to the
    rotating frame in which the coupled equations were solved; populations
    and fringe contrasts are frame-invariant and are what we test.
    """
    d, y, t = problem.delta, problem.coupling, problem.duration
    x = problem.generalized_rabi()
    if x == 0.0:
        return np.eye(2, dtype=complex)
    c, s = math.cos(x * t), math.sin(x * t)
    em, ep = np.exp(-0.5j * d * t), np.exp(0.5j * d * t)
    return np.array([
        [(c + 0.5j * d * s / x) * em, (y / x) * s * em],
        [(-np.conj(y) / x) * s * ep, (c - 0.5j * d * s / x) * ep],
    ])


def rabi_solution(problem, c_start):
    """Apply the closed-form matrix to (c_up(0), c_down(0))."""
    return rabi_matrix(problem) @ np.asarray(c_start, dtype=complex)


def rabi_coupling(omega, eta, n_out, n_in, alphas=(0, 1, 0, 0), phase=0.0):
    """Y_{n',n} = -i Omega_{n',n} (alpha_1 + alpha_2/i) i^{|n'-n|} e^{i phi}."""
    a1, a2 = alphas[1], alphas[2]
    k = abs(n_out - n_in)
    return (-1j * rabi_rate(n_out, n_in, omega, eta)
            * (a1 + a2 / 1j) * (1j**k) * np.exp(1j * phase))


def rabi_hamiltonian(problem):
    """Time-dependent 2x2 generator matching the closed form, for oracles:
    H(t) = [[0, i Y e^{-i d t}], [-i Y* e^{i d t}, 0]] on (c_up, c_down)."""
    d, y = problem.delta, problem.coupling

    def h(t):
        return np.array([[0.0, 1j * y * np.exp(-1j * d * t)],
                         [-1j * np.conj(y) * np.exp(1j * d * t), 0.0]])

    return h


def rotation(theta, phi):
    """Carrier rotation R(theta, phi) in the stored (down, up) basis order.

    Same matrix as the resonant-carrier closed form, rows/columns permuted
    into this package's basis convention; R(pi/2, pi/2) |down> = |right>.
    """
    c = math.cos(theta / 2.0)
    s = math.sin(theta / 2.0)
    return np.array([
        [c, -1j * np.exp(-1j * phi) * s],
        [-1j * np.exp(1j * phi) * s, c],
    ])


# --- interaction-picture Hamiltonians ----------------------------------------------

def _spin_factor(drive):
    a0, a1, a2, a3 = drive.alphas
    if drive.branch == "z":
        return kappa_matrix(drive.alphas)          # Hermitian, shared by +h.c.
    return 0.5 * (a1 + a2 / 1j) * hilbert.SIGMA_P  # xy: pairs with h.c.


def build_branch_hamiltonian(space, drive, t, *, lamb_dicke_order=None):
    """Interaction-picture Hamiltonian of the declared RWA branch at time t.

    With ``lamb_dicke_order=None`` the exact displacement factors
    exp(i sum_m eta_m (a e^{-i w t} + ad e^{i w t})) are used (one
    displacement operator per mode, no expansion).  ``lamb_dicke_order=1``
    selects the first-order resolved-sideband form (z-branch only), where
    each term rotates at its mode detuning delta_m.
    """
    if len(space.modes) != drive.n_modes:
        raise DriveError("space and drive address different mode sets")
    if space.n_spins != drive.n_ions:
        raise DriveError("space and drive have different ion counts")
    if lamb_dicke_order is None:
        return _full_hamiltonian(space, drive, t)
    if lamb_dicke_order == 1:
        if drive.branch != "z":
            raise DriveError("first-order Lamb-Dicke form implemented for the z-branch")
        return _ldr_hamiltonian_factory(space, drive).matrix(t)
    raise DriveError("lamb_dicke_order must be None or 1")


def _full_hamiltonian(space, drive, t):
    dims = space.fock_dims
    freqs = drive.lamb_dicke.mode_frequencies
    if drive.branch == "z":
        if drive.omega_drive is not None:
            omega_i = drive.omega_drive
        else:
            omega_i = freqs[0] + drive.detunings[0]
            for m in range(drive.n_modes):
                if abs(freqs[m] + drive.detunings[m] - omega_i) > 1e-6 * max(1.0, abs(omega_i)):
                    raise DriveError("z-branch detunings imply inconsistent drive frequencies")
        rot = -omega_i * t
    else:
        rot = -drive.carrier_detuning * t
    h = np.zeros((space.dim, space.dim), dtype=complex)
    spin2 = _spin_factor(drive)
    for i in range(drive.n_ions):
        disp = [("d", 1j * drive.eta[m, i] * np.exp(1j * freqs[m] * t))
                for m in range(drive.n_modes)]
        spins = ["i"] * space.n_spins
        spins[i] = spin2
        term = drive.omegas[i] * np.exp(1j * (rot + drive.phases[i])) * build_operator(
            space, OperatorSpec(tuple(spins), tuple(disp)))
        h += term
    return h + h.conj().T


def _ldr_hamiltonian_factory(space, drive):
    """Precompute the constant matrices of the first-order z-branch form:
    H(t) = sum_{i,m} i Omega_i eta_mi e^{i(phi_i - delta_m t)} ad_m kappa_i + h.c."""
    det = drive.detunings
    kappa2 = kappa_matrix(drive.alphas)
    terms = []
    for m in range(drive.n_modes):
        mat = np.zeros((space.dim, space.dim), dtype=complex)
        for i in range(drive.n_ions):
            coeff = 1j * drive.omegas[i] * drive.eta[m, i] * np.exp(1j * drive.phases[i])
            if coeff == 0:
                continue
            spins = ["i"] * space.n_spins
            spins[i] = kappa2
            modes = ["i"] * drive.n_modes
            modes[m] = "ad"
            mat += coeff * build_operator(space, OperatorSpec(tuple(spins), tuple(modes)))

        def coeff_fn(t, _d=float(det[m])):
            return np.exp(-1j * _d * t)

        terms.append((coeff_fn, mat))
    return hilbert.TermHamiltonian(space.dim, terms)


def hamiltonian_factory(space, drive, *, lamb_dicke_order=None):
    """Callable t -> H(t) for propagation; precomputes what it can."""
    if lamb_dicke_order == 1:
        if drive.branch != "z":
            raise DriveError("first-order Lamb-Dicke form implemented for the z-branch")
        return _ldr_hamiltonian_factory(space, drive)
    return lambda t: _full_hamiltonian(space, drive, t)


def static_frame_hamiltonian(space, drive, *, include_mode_energy=True,
                             field_omegas=None, bias_compensation=None):
    """Time-independent spin-phonon Hamiltonian in the drive-rotating frame:

        H = sum_{i,m} [i Omega_i eta_mi e^{i phi_i} ad_m kappa_i + h.c.]
            - sum_m delta_m n_m  (+ sum_i Omega_M sigma_x_i)

    This is the frame in which the effective spin model is derived; the
    optional transverse-field term has strength B_x = Omega_M per ion, and
    ``bias_compensation`` adds per-ion sigma_z coefficients (rad/s).
    """
    if drive.branch != "z":
        raise DriveError("static frame applies to z-branch drives")
    det = drive.detunings
    kappa2 = kappa_matrix(drive.alphas)
    half = np.zeros((space.dim, space.dim), dtype=complex)
    for m in range(drive.n_modes):
        for i in range(drive.n_ions):
            coeff = 1j * drive.omegas[i] * drive.eta[m, i] * np.exp(1j * drive.phases[i])
            if coeff == 0:
                continue
            spins = ["i"] * space.n_spins
            spins[i] = kappa2
            modes = ["i"] * drive.n_modes
            modes[m] = "ad"
            half += coeff * build_operator(space, OperatorSpec(tuple(spins), tuple(modes)))
    h = half + half.conj().T
    if include_mode_energy:
        for m in range(drive.n_modes):
            h -= det[m] * hilbert.embed_mode(space, m, hilbert.mode_matrix("n", space.modes[m].n_max))
    if field_omegas is not None:
        field = _per_ion(field_omegas, drive.n_ions)
        for i, b in enumerate(field):
            if b:
                h += b * hilbert.embed_spin(space, i, hilbert.SIGMA_X)
    if bias_compensation is not None:
        comp = _per_ion(bias_compensation, drive.n_ions)
        for i, c in enumerate(comp):
            if c:
                h += c * hilbert.embed_spin(space, i, hilbert.SIGMA_Z)
    return h
