"""Truncated spin (x) Fock Hilbert-space engine.

Basis convention: amplitudes are indexed by spin configuration first (ion 1 is
the fastest index, with |down> before |up>), then by the Fock numbers of each
mode (mode 1 fastest among the modes).  Spin operators follow the
sigma_z |up> = +|up> convention with sigma_+- normalised to matrix entries of
2 ([sigma_+, sigma_-] = 4 sigma_z), so in the stored (down, up) ordering
sigma_z = diag(-1, +1) and sigma_+ = [[0, 0], [2, 0]].

Energies are hbar-scaled throughout: Hamiltonians are rad/s and propagation
solves d|psi>/dt = -i H(t) |psi>.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm
from scipy.integrate import solve_ivp

DOWN, UP = 0, 1

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, 1.0j], [-1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[-1.0, 0.0], [0.0, 1.0]], dtype=complex)
SIGMA_P = np.array([[0.0, 0.0], [2.0, 0.0]], dtype=complex)
SIGMA_M = np.array([[0.0, 2.0], [0.0, 0.0]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)

_DEFAULT_DIM_CAP = 2**20


class HilbertError(Exception):
    pass


class NonHermitianError(HilbertError):
    pass


class LeakageError(HilbertError):
    """Population in the top Fock levels of a mode exceeded the threshold."""

    def __init__(self, message, leakage):
        super().__init__(message)
        self.leakage = leakage


def dimension_cap():
    """Amplitude-count cap; override with IONDESK_DIM_CAP."""
    return int(os.environ.get("IONDESK_DIM_CAP", _DEFAULT_DIM_CAP))


@dataclass(frozen=True)
class ModeSpec:
    label: str
    frequency: float   # rad/s
    n_max: int

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")


@dataclass(frozen=True)
class SpaceSpec:
    """Shape of the simulation space: spin count plus truncated modes."""

    n_spins: int
    modes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if self.n_spins < 1:
            raise ValueError("need at least one spin")
        if self.dim > dimension_cap():
            raise ValueError(
                f"space dimension {self.dim} exceeds cap {dimension_cap()}")

    @property
    def spin_dim(self):
        return 2**self.n_spins

    @property
    def fock_dims(self):
        return tuple(m.n_max + 1 for m in self.modes)

    @property
    def fock_dim(self):
        d = 1
        for f in self.fock_dims:
            d *= f
        return d

    @property
    def dim(self):
        return self.spin_dim * self.fock_dim

    def index_of(self, spin_bits, fock=()):
        """Linear index of |spin_bits> (x) |n_1, n_2, ...>."""
        if not 0 <= spin_bits < self.spin_dim:
            raise ValueError("spin configuration out of range")
        idx = 0
        for n, d in zip(reversed(tuple(fock)), reversed(self.fock_dims)):
            if not 0 <= n < d:
                raise ValueError("Fock number out of range")
            idx = idx * d + n
        return idx * self.spin_dim + spin_bits

    def split_index(self, index):
        """Inverse of index_of: (spin_bits, fock tuple)."""
        spin_bits = index % self.spin_dim
        rest = index // self.spin_dim
        fock = []
        for d in self.fock_dims:
            fock.append(rest % d)
            rest //= d
        return spin_bits, tuple(fock)

    def config_label(self, spin_bits):
        """'d'/'u' string, ion 1 leftmost."""
        return "".join("u" if (spin_bits >> i) & 1 else "d" for i in range(self.n_spins))

    def config_bits(self, label):
        if len(label) != self.n_spins or set(label) - {"d", "u"}:
            raise ValueError(f"bad spin label {label!r}")
        return sum(1 << i for i, ch in enumerate(label) if ch == "u")

    def config_labels(self):
        return tuple(self.config_label(b) for b in range(self.spin_dim))

    def basis_label(self, index):
        bits, fock = self.split_index(index)
        if self.modes:
            return self.config_label(bits) + ";" + ",".join(str(n) for n in fock)
        return self.config_label(bits)


@dataclass
class SimState:
    """Complex amplitude vector over the basis of a SpaceSpec."""

    space: SpaceSpec
    amplitudes: np.ndarray
    norm_drift: float = 0.0
    leakage_record: dict = field(default_factory=dict)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.space.dim,):
            raise ValueError(f"amplitudes must have shape ({self.space.dim},)")
        self.amplitudes = amps

    @classmethod
    def from_product(cls, space, spins="", fock=None):
        """|spins> (x) |fock>; spins like 'dd', fock a tuple (default ground)."""
        bits = space.config_bits(spins) if isinstance(spins, str) else int(spins)
        fock = tuple(fock) if fock is not None else (0,) * len(space.modes)
        amps = np.zeros(space.dim, dtype=complex)
        amps[space.index_of(bits, fock)] = 1.0
        return cls(space=space, amplitudes=amps)

    def norm(self):
        return float(np.linalg.norm(self.amplitudes))

    def copy(self):
        return SimState(self.space, self.amplitudes.copy(),
                        self.norm_drift, dict(self.leakage_record))

    def fock_spin_matrix(self):
        """(fock_dim, spin_dim) view: row = Fock block, column = spin config."""
        return self.amplitudes.reshape(self.space.fock_dim, self.space.spin_dim)

    def leakage(self):
        """Probability in the top two Fock levels, per mode label."""
        probs = np.abs(self.amplitudes) ** 2
        shaped = probs.reshape(*reversed(self.space.fock_dims), self.space.spin_dim) \
            if self.space.modes else probs.reshape(1, -1)
        out = {}
        n_modes = len(self.space.modes)
        for m, mode in enumerate(self.space.modes):
            axis = n_modes - 1 - m   # mode m varies along axis n_modes-1-m
            moved = np.moveaxis(shaped, axis, 0)
            top = float(np.sum(moved[-2:]))
            out[mode.label] = top
        return out


# --- single-factor operators ----------------------------------------------------

def spin_matrix(factor):
    """2x2 matrix for a per-spin factor: 'i x y z + -', ('kappa', alphas),
    or an explicit matrix."""
    if isinstance(factor, np.ndarray):
        if factor.shape != (2, 2):
            raise ValueError("spin factor matrix must be 2x2")
        return factor.astype(complex)
    if isinstance(factor, tuple) and factor and factor[0] == "kappa":
        return kappa_matrix(factor[1])
    table = {"i": IDENTITY_2, "x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z,
             "+": SIGMA_P, "-": SIGMA_M}
    try:
        return table[factor]
    except KeyError:
        raise ValueError(f"unknown spin factor {factor!r}") from None


def kappa_matrix(alphas):
    """alpha_0 1 + alpha_1 sigma_x + alpha_2 sigma_y + alpha_3 sigma_z."""
    a0, a1, a2, a3 = alphas
    return a0 * IDENTITY_2 + a1 * SIGMA_X + a2 * SIGMA_Y + a3 * SIGMA_Z


def ladder(n_max):
    """Annihilation operator on n_max+1 levels: a|n> = sqrt(n)|n-1>."""
    return np.diag(np.sqrt(np.arange(1, n_max + 1)), k=1).astype(complex)


def mode_matrix(factor, n_max):
    """Matrix for a per-mode factor: 'i a ad n', ('d', lambda), or explicit."""
    if isinstance(factor, np.ndarray):
        if factor.shape != (n_max + 1, n_max + 1):
            raise ValueError("mode factor matrix has wrong dimension")
        return factor.astype(complex)
    if isinstance(factor, tuple) and factor and factor[0] == "d":
        return displacement_operator(n_max, factor[1])
    if factor == "i":
        return np.eye(n_max + 1, dtype=complex)
    if factor == "a":
        return ladder(n_max)
    if factor == "ad":
        return ladder(n_max).conj().T
    if factor == "n":
        return np.diag(np.arange(n_max + 1).astype(complex))
    raise ValueError(f"unknown mode factor {factor!r}")


@dataclass(frozen=True)
class OperatorSpec:
    """Per-spin and per-mode factor choices for a Kronecker-product operator."""

    spins: tuple
    modes: tuple = ()


def build_operator(space, spec):
    """Dense operator from per-factor matrices, in the declared basis order.

    Spin 1 is the fastest tensor index, then the remaining spins, then the
    modes (mode 1 fastest among modes).
    """
    if len(spec.spins) != space.n_spins:
        raise ValueError(f"expected {space.n_spins} spin factors, got {len(spec.spins)}")
    if len(spec.modes) != len(space.modes):
        raise ValueError(f"expected {len(space.modes)} mode factors, got {len(spec.modes)}")
    acc = None
    factors = [spin_matrix(s) for s in spec.spins]
    factors += [mode_matrix(f, m.n_max) for f, m in zip(spec.modes, space.modes)]
    for mat in factors:  # fastest factor first; kron(slow, fast)
        acc = mat if acc is None else np.kron(mat, acc)
    return acc


def embed_spin(space, ion, mat2):
    """Operator acting as ``mat2`` on one spin (0-based) and trivially elsewhere."""
    spins = ["i"] * space.n_spins
    spins[ion] = np.asarray(mat2, dtype=complex)
    return build_operator(space, OperatorSpec(tuple(spins), ("i",) * len(space.modes)))


def embed_mode(space, mode, mat):
    modes = ["i"] * len(space.modes)
    modes[mode] = np.asarray(mat, dtype=complex)
    return build_operator(space, OperatorSpec(("i",) * space.n_spins, tuple(modes)))


# --- Laguerre polynomials and displacement matrix elements ------------------------

def laguerre(n, alpha, x):
    """Associated Laguerre polynomial L_n^{(alpha)}(x) by the stable
    three-term recurrence."""
    if n < 0 or alpha < 0:
        raise ValueError("need n >= 0 and alpha >= 0")
    if n == 0:
        return 1.0
    prev = 1.0
    curr = 1.0 + alpha - x
    for k in range(2, n + 1):
        prev, curr = curr, ((2 * k - 1 + alpha - x) * curr - (k - 1 + alpha) * prev) / k
    return curr


def displacement_matrix_element(n_out, n_in, lam):
    """<n_out| D(lambda) |n_in> with D = exp(lambda a^dag - lambda* a).

    Evaluated in log space (factorial ratios via lgamma) so large quantum
    numbers stay finite.
    """
    if n_out < 0 or n_in < 0:
        raise ValueError("Fock indices must be non-negative")
    lam = complex(lam)
    if lam == 0:
        return 1.0 + 0.0j if n_out == n_in else 0.0j
    d = n_out - n_in
    n_lt, n_gt = min(n_out, n_in), max(n_out, n_in)
    base = lam if d >= 0 else -lam.conjugate()
    k = abs(d)
    mag = abs(lam)
    log_mag = -0.5 * mag**2 + 0.5 * (math.lgamma(n_lt + 1) - math.lgamma(n_gt + 1))
    if k:
        log_mag += k * math.log(mag)
        phase = (base / abs(base)) ** k
    else:
        phase = 1.0
    return math.exp(log_mag) * phase * laguerre(n_lt, k, mag**2)


def displacement_operator(n_max, lam):
    """Dense (n_max+1)-level D(lambda) from the closed-form matrix elements."""
    d = np.empty((n_max + 1, n_max + 1), dtype=complex)
    for n_out in range(n_max + 1):
        for n_in in range(n_max + 1):
            d[n_out, n_in] = displacement_matrix_element(n_out, n_in, lam)
    return d


def suggested_n_max(lam_max):
    """Truncation rule for a drive whose largest displacement is |lambda|_max."""
    return int(math.ceil(lam_max**2 + 6.0 * lam_max + 10.0))


# --- propagation -----------------------------------------------------------------

class TermHamiltonian:
    """H(t) = static + sum_k c_k(t) A_k + conj(c_k(t)) A_k^dag.

    Keeps the constant matrices precomputed so the propagator evaluates the
    action of H(t) with matrix-vector products only; ``static`` must be
    Hermitian and the paired-conjugate structure makes the sum Hermitian for
    any coefficients.
    """

    def __init__(self, dim, terms=(), static=None):
        self.dim = dim
        self.terms = [(fn, np.asarray(a, dtype=complex),
                       np.asarray(a, dtype=complex).conj().T) for fn, a in terms]
        self.static = None if static is None else np.asarray(static, dtype=complex)

    def matrix(self, t):
        h = np.zeros((self.dim, self.dim), dtype=complex)
        if self.static is not None:
            h += self.static
        for fn, a, adag in self.terms:
            c = fn(t)
            h += c * a + np.conj(c) * adag
        return h

    def apply(self, t, y):
        out = self.static @ y if self.static is not None else np.zeros_like(y)
        for fn, a, adag in self.terms:
            c = fn(t)
            out += c * (a @ y) + np.conj(c) * (adag @ y)
        return out

    def __call__(self, t):
        return self.matrix(t)


def _check_hermitian(h, t):
    scale = max(1.0, float(np.max(np.abs(h))))
    if np.max(np.abs(h - h.conj().T)) > 1e-10 * scale:
        raise NonHermitianError(f"generator is not Hermitian at t = {t}")


def propagate(hamiltonian, state, t0, t1, tol=1e-10, *,
              max_leakage=1e-6, t_eval=None, check_hermitian=True):
    """Solve d|psi>/dt = -i H(t) |psi| from t0 to t1 (H in rad/s).

    ``hamiltonian`` is a constant matrix or a callable t -> matrix.  Constant
    generators are propagated exactly through an eigendecomposition; time
    dependent ones with adaptive DOP853 at local tolerance ``tol``.  Norm
    drift beyond 1e-12 is renormalised and recorded on the returned state;
    leakage above ``max_leakage`` raises LeakageError (pass None to disable).

    With ``t_eval`` (sorted times in [t0, t1]) a list of SimStates is
    returned instead of the final state only.
    """
    space = state.space
    psi0 = state.amplitudes
    is_terms = isinstance(hamiltonian, TermHamiltonian)
    constant = not is_terms and not callable(hamiltonian)
    h0 = np.asarray(hamiltonian, dtype=complex) if constant \
        else np.asarray(hamiltonian.matrix(t0) if is_terms else hamiltonian(t0), dtype=complex)
    if h0.shape != (space.dim, space.dim):
        raise ValueError("generator dimension does not match the space")
    if check_hermitian:
        _check_hermitian(h0, t0)
        if not constant and not is_terms:   # term sums are Hermitian by construction
            _check_hermitian(np.asarray(hamiltonian(0.5 * (t0 + t1))), 0.5 * (t0 + t1))
            _check_hermitian(np.asarray(hamiltonian(t1)), t1)

    times = [t1] if t_eval is None else list(t_eval)

    if constant:
        evals, evecs = np.linalg.eigh(h0)
        coeff = evecs.conj().T @ psi0
        psis = [evecs @ (np.exp(-1j * evals * (t - t0)) * coeff) for t in times]
    elif t1 == t0:
        psis = [psi0.copy() for _ in times]
    else:
        if is_terms:
            def rhs(t, y):
                return -1j * hamiltonian.apply(t, y)
        else:
            def rhs(t, y):
                return -1j * (hamiltonian(t) @ y)

        sol = solve_ivp(rhs, (t0, t1), psi0, method="DOP853",
                        rtol=tol, atol=tol * 1e-2, t_eval=times, dense_output=False)
        if not sol.success:
            raise HilbertError(f"propagation failed: {sol.message}")
        psis = [sol.y[:, k].copy() for k in range(sol.y.shape[1])]

    norm_in = np.linalg.norm(psi0)
    out = []
    for psi in psis:
        drift = abs(np.linalg.norm(psi) / norm_in - 1.0) if norm_in > 0 else 0.0
        new = SimState(space, psi, state.norm_drift, dict(state.leakage_record))
        if drift > 1e-12:
            new.amplitudes = psi * (norm_in / np.linalg.norm(psi))
            new.norm_drift += drift
        leak = new.leakage()
        new.leakage_record = leak
        if max_leakage is not None and leak and max(leak.values()) > max_leakage:
            worst = max(leak, key=leak.get)
            raise LeakageError(
                f"leakage {leak[worst]:.3e} in mode {worst} exceeds {max_leakage:.1e}",
                leak)
        out.append(new)
    return out if t_eval is not None else out[0]


# --- measurement -----------------------------------------------------------------

def measure_populations(state):
    """Spin-configuration probabilities with all modes traced out."""
    mat = state.fock_spin_matrix()
    probs = np.sum(np.abs(mat) ** 2, axis=0)
    total = float(np.sum(probs))
    if abs(total - 1.0) > 1e-9:
        raise HilbertError(f"state norm deviates from 1 by {abs(total - 1):.3e}")
    return {state.space.config_label(b): float(p) for b, p in enumerate(probs)}


def sample_shots(state, shots, seed):
    """Multinomial projective readout; deterministic for a fixed seed."""
    if shots < 1:
        raise ValueError("need at least one shot")
    pops = measure_populations(state)
    labels = state.space.config_labels()
    p = np.array([pops[l] for l in labels])
    p = np.clip(p, 0.0, None)
    p = p / p.sum()
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(shots, p)
    return {l: int(c) for l, c in zip(labels, counts)}


def reduced_spin_density(state):
    """Spin density matrix (2^N x 2^N) with the modes traced out."""
    mat = state.fock_spin_matrix()
    return mat.T @ mat.conj()


def spin_entropy(state):
    """Von Neumann entropy (nats) of the spin-reduced state: the
    spin-motion entanglement witness for a pure total state."""
    rho = reduced_spin_density(state)
    evals = np.linalg.eigvalsh(rho)
    evals = evals[evals > 1e-15]
    return float(-np.sum(evals * np.log(evals)))


def state_to_csv(state):
    """CSV snapshot (index, basis label, re, im) for debugging/golden tests."""
    lines = ["index,label,re,im"]
    for idx, amp in enumerate(state.amplitudes):
        lines.append(f"{idx},{state.space.basis_label(idx)},"
                     f"{format(amp.real, '.17g')},{format(amp.imag, '.17g')}")
    return "\n".join(lines) + "\n"


# --- identity verification ---------------------------------------------------------

@dataclass
class IdentityReport:
    """Max interior residuals of the operator-transformation identities."""

    pauli_rotation: float
    mode_rotation: float
    canonical: float
    samples: int
    seed: int

    def max_residual(self):
        return max(self.pauli_rotation, self.mode_rotation, self.canonical)


def verify_identities(samples=100, seed=0, *, n_max=30, buffer=8):
    """Spot-check the operator identities used throughout on random draws.

    (i)   exp(i k sz) s+- exp(-i k sz) = exp(+-2ik) s+-          (exact, 2x2)
    (ii)  exp(i l n) exp(i x (a+ad)) exp(-i l n)
            = exp(i x [a e^{-il} + ad e^{il}])                   (interior)
    (iii) U_c (x ad + x* a - k n) U_c^dag = |x|^2/k - k n        (interior)

    Interior means matrix elements with both Fock indices below
    n_max - buffer, away from the truncation boundary.  Identity (ii) is
    checked against scipy's matrix exponential; (iii) uses the closed-form
    displacement elements for U_c (themselves verified against expm in the
    acceptance suite) so no truncation-reflection artifacts leak inward.
    """
    rng = np.random.default_rng(seed)
    a = ladder(n_max)
    ad = a.conj().T
    keep = n_max + 1 - buffer
    n_canon = 40
    nn_canon = np.diag(np.arange(n_canon + 1).astype(complex))
    a_canon = ladder(n_canon)
    keep_canon = n_canon + 1 - 14
    r_pauli = r_mode = r_canon = 0.0
    for _ in range(samples):
        kap = rng.uniform(-np.pi, np.pi)
        rot = np.diag(np.exp(1j * kap * np.array([-1.0, 1.0])))  # exp(i k sigma_z)
        for sig, sign in ((SIGMA_P, +1), (SIGMA_M, -1)):
            lhs = rot @ sig @ rot.conj().T
            rhs = np.exp(sign * 2j * kap) * sig
            r_pauli = max(r_pauli, float(np.max(np.abs(lhs - rhs))))

        lam = rng.uniform(-np.pi, np.pi)
        xi = rng.uniform(-1.0, 1.0)
        u = np.diag(np.exp(1j * lam * np.arange(n_max + 1)))
        lhs = u @ expm(1j * xi * (a + ad)) @ u.conj().T
        rhs = expm(1j * xi * (a * np.exp(-1j * lam) + ad * np.exp(1j * lam)))
        r_mode = max(r_mode, float(np.max(np.abs((lhs - rhs)[:keep, :keep]))))

        # keep |xi/kappa| <= 0.6 so the canonical displacement stays far from
        # the truncation boundary of the check space
        kappa = rng.uniform(0.3, 2.0) * rng.choice([-1.0, 1.0])
        lam_c = (rng.uniform(-1.0, 1.0) + 1j * rng.uniform(-1.0, 1.0)) * 0.6 / np.sqrt(2)
        xi_c = lam_c * kappa
        uc = displacement_operator(n_canon, -lam_c)
        h = xi_c * a_canon.conj().T + np.conj(xi_c) * a_canon - kappa * nn_canon
        lhs = uc @ h @ uc.conj().T
        rhs = (abs(xi_c) ** 2 / kappa) * np.eye(n_canon + 1) - kappa * nn_canon
        r_canon = max(r_canon, float(np.max(np.abs((lhs - rhs)[:keep_canon, :keep_canon]))))
    return IdentityReport(pauli_rotation=r_pauli, mode_rotation=r_mode,
                          canonical=r_canon, samples=samples, seed=seed)
