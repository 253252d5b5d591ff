"""Ion crystal statics and normal modes for per-ion harmonic wells.

Every ion sits in its own harmonic well (a common linear trap is the special
case of identical wells); the total potential is the sum of the wells and the
pairwise Coulomb repulsion.  Positions use the flat layout
``[x_1..x_N, y_1..y_N, z_1..z_N]`` so that coordinate ``k`` of ion ``i`` lives
at index ``i + k*N``, matching the row convention of the mode matrix.

All public quantities are SI (kg, C, m, rad/s).  The equilibrium solver works
internally in a dimensionless system scaled by the Coulomb length
``l = (Q^2 / (4 pi eps0 M w_ref^2))^(1/3)`` for conditioning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import constants
from scipy.optimize import minimize

HBAR = constants.hbar
EPS0 = constants.epsilon_0
ELEMENTARY_CHARGE = constants.e
ATOMIC_MASS = constants.atomic_mass

_AXIS_ORTHO_TOL = 1e-12
_DEGENERACY_RTOL = 1e-9
_SIGN_TOL = 1e-9
_MARGINAL_FRACTION = 1e-9


class CrystalError(Exception):
    """Base class for crystal-solver failures."""


class CoincidentIonsError(CrystalError):
    """Two ions closer than the minimum allowed separation."""


class ConvergenceError(CrystalError):
    """Equilibrium search did not reach the target gradient norm."""

    def __init__(self, message, gradient_norm):
        super().__init__(message)
        self.gradient_norm = gradient_norm


class UnstableCrystalError(CrystalError):
    """A normal mode has negative stiffness (imaginary frequency)."""

    def __init__(self, message, mode_index, eigenvalue):
        super().__init__(message)
        self.mode_index = mode_index
        self.eigenvalue = eigenvalue


@dataclass(frozen=True)
class IonSpecies:
    """Single ion species; all ions in a configuration share it.

    mass in kg, charge in C (integer multiple of the elementary charge).
    """

    mass: float
    charge: float = ELEMENTARY_CHARGE

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"ion mass must be positive, got {self.mass}")
        if self.charge == 0:
            raise ValueError("ion charge must be nonzero")


def species_from_amu(mass_amu, charge_e=1):
    return IonSpecies(mass=mass_amu * ATOMIC_MASS, charge=charge_e * ELEMENTARY_CHARGE)


BERYLLIUM_9 = species_from_amu(9.012182)
MAGNESIUM_25 = species_from_amu(24.985837)


@dataclass(frozen=True)
class HarmonicWell:
    """Harmonic well of one ion: three frequencies (rad/s) along orthonormal
    principal axes, centred at ``minimum`` (m)."""

    frequencies: tuple
    axes: tuple        # three orthonormal 3-vectors (rows)
    minimum: tuple

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=float)
        axes = np.asarray(self.axes, dtype=float)
        if freqs.shape != (3,) or not np.all(freqs > 0):
            raise ValueError("well needs three positive frequencies")
        if axes.shape != (3, 3):
            raise ValueError("well needs three principal axes")
        gram = axes @ axes.T
        if np.max(np.abs(gram - np.eye(3))) > _AXIS_ORTHO_TOL:
            raise ValueError("principal axes are not orthonormal to 1e-12")
        if np.asarray(self.minimum, dtype=float).shape != (3,):
            raise ValueError("well minimum must be a 3-vector")
        object.__setattr__(self, "frequencies", tuple(float(f) for f in freqs))
        object.__setattr__(self, "axes", tuple(tuple(float(a) for a in row) for row in axes))
        object.__setattr__(self, "minimum", tuple(float(p) for p in np.asarray(self.minimum, dtype=float)))

    @property
    def axes_array(self):
        return np.asarray(self.axes, dtype=float)

    @property
    def minimum_array(self):
        return np.asarray(self.minimum, dtype=float)


def isotropic_well(omega, minimum=(0.0, 0.0, 0.0)):
    return HarmonicWell((omega, omega, omega), np.eye(3), minimum)


@dataclass(frozen=True)
class TrapConfiguration:
    """Ion species plus one harmonic well per ion."""

    species: IonSpecies
    wells: tuple

    def __post_init__(self):
        if len(self.wells) == 0:
            raise ValueError("configuration needs at least one ion")
        object.__setattr__(self, "wells", tuple(self.wells))

    @property
    def n_ions(self):
        return len(self.wells)

    @property
    def coulomb_constant(self):
        """Q^2 / (4 pi eps0) in J*m."""
        return self.species.charge**2 / (4 * np.pi * EPS0)


def linear_trap(n_ions, species, omega_x, omega_y, omega_z):
    """Common linear trap: identical wells for all ions, axes = lab frame,
    minima at the origin.  Axial direction is z by convention."""
    well = HarmonicWell((omega_x, omega_y, omega_z), np.eye(3), (0.0, 0.0, 0.0))
    return TrapConfiguration(species=species, wells=(well,) * n_ions)


# --- position layout helpers -------------------------------------------------

def positions_to_matrix(positions, n_ions):
    """Flat [x.., y.., z..] -> (N, 3) rows."""
    return np.asarray(positions, dtype=float).reshape(3, n_ions).T


def matrix_to_positions(r):
    """(N, 3) rows -> flat [x.., y.., z..]."""
    return np.asarray(r, dtype=float).T.reshape(-1)


def _min_separation(r):
    n = r.shape[0]
    if n < 2:
        return np.inf
    diff = r[:, None, :] - r[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    return np.min(dist[np.triu_indices(n, k=1)])


# --- potential, gradient, hessian --------------------------------------------

def total_potential(config, positions):
    """Total potential energy (J): harmonic wells plus pairwise Coulomb.

    The pairwise sum ``sum_{i<j} Q^2/(4 pi eps0 r_ij)`` counts each pair once.
    """
    n = config.n_ions
    r = positions_to_matrix(positions, n)
    if _min_separation(r) <= 1e-12:
        raise CoincidentIonsError("ion separation below 1e-12 m")
    mass = config.species.mass
    v = 0.0
    for i, well in enumerate(config.wells):
        d = r[i] - well.minimum_array
        proj = well.axes_array @ d
        v += 0.5 * mass * np.dot(np.asarray(well.frequencies) ** 2, proj**2)
    k = config.coulomb_constant
    for i in range(n):
        for j in range(i + 1, n):
            v += k / np.linalg.norm(r[i] - r[j])
    return v


def potential_gradient(config, positions):
    """Analytic gradient of total_potential, flat layout (J/m)."""
    n = config.n_ions
    r = positions_to_matrix(positions, n)
    if _min_separation(r) <= 1e-12:
        raise CoincidentIonsError("ion separation below 1e-12 m")
    mass = config.species.mass
    grad = np.zeros((n, 3))
    for i, well in enumerate(config.wells):
        d = r[i] - well.minimum_array
        axes = well.axes_array
        w2 = np.asarray(well.frequencies) ** 2
        grad[i] += mass * (axes.T * w2) @ (axes @ d)
    k = config.coulomb_constant
    for i in range(n):
        for j in range(i + 1, n):
            dij = r[i] - r[j]
            f = -k * dij / np.linalg.norm(dij) ** 3
            grad[i] += f
            grad[j] -= f
    return matrix_to_positions(grad)


def hessian(config, positions, *, warn_if_not_equilibrium=True):
    """Mass-scaled Hessian A = (1/M) d^2V/dr_k dr_l at ``positions`` (1/s^2).

    Eigenvalues of A are the squared normal-mode frequencies.  ``positions``
    should be an equilibrium; a warning is issued otherwise but the matrix is
    still returned.
    """
    n = config.n_ions
    r = positions_to_matrix(positions, n)
    if _min_separation(r) <= 1e-12:
        raise CoincidentIonsError("ion separation below 1e-12 m")
    mass = config.species.mass
    if warn_if_not_equilibrium:
        scale = _gradient_scale(config)
        gnorm = np.linalg.norm(potential_gradient(config, positions)) / scale
        if gnorm > 1e-6:
            warnings.warn(
                f"hessian evaluated away from equilibrium (scaled |grad| = {gnorm:.3e})",
                stacklevel=2,
            )

    blocks = np.zeros((n, n, 3, 3))
    for i, well in enumerate(config.wells):
        axes = well.axes_array
        w2 = np.asarray(well.frequencies) ** 2
        blocks[i, i] += (axes.T * w2) @ axes
    k = config.coulomb_constant / mass
    for i in range(n):
        for j in range(i + 1, n):
            dij = r[i] - r[j]
            dist = np.linalg.norm(dij)
            u = dij / dist
            cpl = k * (3.0 * np.outer(u, u) - np.eye(3)) / dist**3
            blocks[i, i] += cpl
            blocks[j, j] += cpl
            blocks[i, j] -= cpl
            blocks[j, i] -= cpl

    a = np.zeros((3 * n, 3 * n))
    for i in range(n):
        for j in range(n):
            for c1 in range(3):
                for c2 in range(3):
                    a[i + c1 * n, j + c2 * n] = blocks[i, j, c1, c2]
    return 0.5 * (a + a.T)


# --- equilibrium search -------------------------------------------------------

def _reference_frequency(config):
    return max(max(w.frequencies) for w in config.wells)


def coulomb_length(config, omega_ref=None):
    """Characteristic length l = (Q^2/(4 pi eps0 M w^2))^(1/3)."""
    if omega_ref is None:
        omega_ref = _reference_frequency(config)
    return (config.coulomb_constant / (config.species.mass * omega_ref**2)) ** (1.0 / 3.0)


def _gradient_scale(config):
    """Force scale M w_ref^2 l used to express gradient norms dimensionlessly."""
    w = _reference_frequency(config)
    return config.species.mass * w**2 * coulomb_length(config, w)


def _weakest_direction(config):
    """Principal-axis direction of the globally smallest well frequency."""
    best = None
    for well in config.wells:
        for f, axis in zip(well.frequencies, well.axes_array):
            if best is None or f < best[0]:
                best = (f, axis)
    return np.asarray(best[1])


def default_initial_guess(config):
    """Ions spaced at 1.1 l along the weakest confinement direction, centred
    on the mean of the well minima."""
    n = config.n_ions
    ell = coulomb_length(config)
    axis = _weakest_direction(config)
    centre = np.mean([w.minimum_array for w in config.wells], axis=0)
    offsets = (np.arange(n) - (n - 1) / 2.0) * 1.1 * ell
    r = centre[None, :] + offsets[:, None] * axis[None, :]
    return matrix_to_positions(r)


def find_equilibrium(config, initial_guess=None, *, gradient_tol=1e-12, max_iterations=2000):
    """Equilibrium positions (flat 3N, m) minimising the total potential.

    Quasi-Newton (BFGS) with the analytic gradient, polished by Newton steps
    on the analytic Hessian; falls back to damped gradient descent if the
    line search stalls.  Convergence target: scaled gradient norm below
    ``gradient_tol``.
    """
    n = config.n_ions
    if initial_guess is None:
        x0 = default_initial_guess(config)
    else:
        x0 = np.asarray(initial_guess, dtype=float).copy()
        if x0.shape != (3 * n,):
            x0 = matrix_to_positions(np.asarray(initial_guess, dtype=float).reshape(n, 3))

    ell = coulomb_length(config)
    escale = _gradient_scale(config) * ell  # energy scale M w^2 l^2
    fscale = _gradient_scale(config)

    def fun(u):
        return total_potential(config, u * ell) / escale

    def jac(u):
        return potential_gradient(config, u * ell) * (ell / escale)

    u0 = x0 / ell
    res = minimize(fun, u0, jac=jac, method="BFGS",
                   options={"gtol": 1e-10, "maxiter": max_iterations})
    u = res.x

    # Newton polish: quadratic convergence down to ~1e-15 scaled gradient.
    for _ in range(60):
        g = jac(u)
        gnorm = np.linalg.norm(g)
        if gnorm < gradient_tol:
            break
        h = hessian(config, u * ell, warn_if_not_equilibrium=False)
        h_scaled = h * (config.species.mass * ell**2 / escale)
        try:
            step = np.linalg.solve(h_scaled, -g)
        except np.linalg.LinAlgError:
            step = -g
        if not np.all(np.isfinite(step)):
            step = -g
        # damped acceptance: shrink until the energy does not increase
        f0 = fun(u)
        lam = 1.0
        for _ in range(30):
            u_try = u + lam * step
            try:
                f_try = fun(u_try)
            except CoincidentIonsError:
                f_try = np.inf
            if f_try <= f0 + 1e-15 * max(1.0, abs(f0)):
                break
            lam *= 0.5
        u = u + lam * step

    gnorm = np.linalg.norm(jac(u))
    if gnorm >= gradient_tol:
        # fallback: damped gradient descent, then report honestly
        lr = 1e-2
        for _ in range(max_iterations):
            g = jac(u)
            gnorm = np.linalg.norm(g)
            if gnorm < gradient_tol:
                break
            u = u - lr * g
        gnorm = np.linalg.norm(jac(u))
        if gnorm >= gradient_tol:
            raise ConvergenceError(
                f"equilibrium search stalled at scaled |grad| = {gnorm:.3e}", gnorm)

    x = u * ell
    # local-minimum check (positive semidefinite Hessian up to margin)
    evals = np.linalg.eigvalsh(hessian(config, x, warn_if_not_equilibrium=False))
    wmax = float(np.max(np.abs(evals)))
    if evals[0] < -_MARGINAL_FRACTION * wmax:
        raise UnstableCrystalError(
            f"converged to a saddle point (eigenvalue {evals[0]:.3e} 1/s^2)",
            0, float(evals[0]))
    return x


# --- normal modes --------------------------------------------------------------

def normal_modes(a):
    """Mode frequencies (rad/s, ascending) and orthogonal mode matrix B.

    Rows of B are the mode eigenvectors (q = B x).  Deterministic
    conventions: the first row component above 1e-9 in magnitude is positive;
    rows inside a degenerate eigenvalue group (1e-9 relative) are ordered
    lexicographically.
    """
    a = np.asarray(a, dtype=float)
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > 1e-12 * scale:
        raise ValueError("hessian must be symmetric")
    evals, evecs = np.linalg.eigh(0.5 * (a + a.T))
    wmax = float(np.max(np.abs(evals))) if evals.size else 0.0
    for m, lam in enumerate(evals):
        if lam < -_MARGINAL_FRACTION * wmax:
            raise UnstableCrystalError(
                f"unstable crystal: mode {m} has eigenvalue {lam:.6e} (rad/s)^2",
                m, float(lam))
    clamped = np.where(evals < 0, 0.0, evals)
    if np.any(evals < 0):
        warnings.warn("marginal mode: tiny negative stiffness clamped to zero", stacklevel=2)

    b = evecs.T.copy()
    # deterministic sign: first component with |v| > 1e-9 positive
    for row in b:
        for v in row:
            if abs(v) > _SIGN_TOL:
                if v < 0:
                    row *= -1
                break
    # deterministic order inside degenerate groups
    order = np.arange(len(clamped))
    start = 0
    while start < len(clamped):
        stop = start + 1
        while stop < len(clamped) and (
            abs(clamped[stop] - clamped[start]) <= _DEGENERACY_RTOL * max(clamped[stop], 1e-300)
        ):
            stop += 1
        if stop - start > 1:
            group = order[start:stop]
            keys = [tuple(np.round(b[m], 12)) for m in group]
            order[start:stop] = [g for _, g in sorted(zip(keys, group))]
        start = stop
    b = b[order]
    clamped = clamped[order]
    return np.sqrt(clamped), b


@dataclass(frozen=True)
class CrystalSolution:
    """Equilibrium positions plus normal-mode data for one configuration."""

    positions: np.ndarray           # flat 3N, m
    mode_frequencies: np.ndarray    # 3N, rad/s, ascending
    mode_matrix: np.ndarray         # 3N x 3N, rows are modes
    hessian_eigenvalues: np.ndarray  # (rad/s)^2

    @property
    def n_ions(self):
        return len(self.positions) // 3

    def positions_matrix(self):
        return positions_to_matrix(self.positions, self.n_ions)


def solve_crystal(config, initial_guess=None):
    """Find the equilibrium and diagonalise the crystal in one call."""
    x0 = find_equilibrium(config, initial_guess)
    a = hessian(config, x0, warn_if_not_equilibrium=False)
    omega, b = normal_modes(a)
    ortho = np.max(np.abs(b @ b.T - np.eye(b.shape[0])))
    if ortho > 1e-10:
        raise CrystalError(f"mode matrix lost orthogonality ({ortho:.2e})")
    return CrystalSolution(
        positions=x0,
        mode_frequencies=omega,
        mode_matrix=b,
        hessian_eigenvalues=omega**2,
    )


# --- Lamb-Dicke tensor ----------------------------------------------------------

@dataclass(frozen=True)
class LambDickeTensor:
    """eta[m, i]: coupling of drive wavevector at ion i to mode m.

    Carries the mode frequencies so drives can derive per-mode detunings;
    ``labels`` are optional human-readable mode names.
    """

    eta: np.ndarray                 # (n_modes, n_ions)
    mode_frequencies: np.ndarray    # (n_modes,), rad/s
    labels: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float))
        object.__setattr__(self, "mode_frequencies",
                           np.asarray(self.mode_frequencies, dtype=float))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_modes(self):
        return self.eta.shape[0]

    @property
    def n_ions(self):
        return self.eta.shape[1]

    def select(self, indices):
        """Sub-tensor restricted to the given mode rows."""
        idx = list(indices)
        labels = tuple(self.labels[i] for i in idx) if self.labels is not None else None
        return LambDickeTensor(self.eta[idx], self.mode_frequencies[idx], labels)


def lamb_dicke(solution, species, k_vectors):
    """Lamb-Dicke tensor eta[m, i] for effective wavevector(s) k_I (1/m).

    eta_{m,i} = q0_m * sum_c B[m, i + c N] (k_i . e_c) with
    q0_m = sqrt(hbar / (2 M omega_m)).  ``k_vectors`` is a single 3-vector
    (same drive at every ion) or an (N, 3) array.
    """
    n = solution.n_ions
    k = np.asarray(k_vectors, dtype=float)
    if k.shape == (3,):
        k = np.tile(k, (n, 1))
    if k.shape != (n, 3):
        raise ValueError(f"k_vectors must be (3,) or ({n}, 3)")
    omega = solution.mode_frequencies
    if np.any(omega <= 0):
        raise CrystalError("marginal/zero-frequency mode has no Lamb-Dicke parameter")
    q0 = np.sqrt(HBAR / (2.0 * species.mass * omega))
    b = solution.mode_matrix
    eta = np.zeros((3 * n, n))
    for m in range(3 * n):
        for i in range(n):
            eta[m, i] = q0[m] * sum(b[m, i + c * n] * k[i, c] for c in range(3))
    return LambDickeTensor(eta=eta, mode_frequencies=omega.copy(),
                           labels=label_modes(solution))


def label_modes(solution):
    """Deterministic mode labels: dominant lab axis + in/out-of-phase pattern.

    In-phase modes are 'com'; out-of-phase modes along the crystal axis are
    'str', perpendicular ones 'roc'.  Repeated labels get numeric suffixes.
    """
    n = solution.n_ions
    b = solution.mode_matrix
    r = solution.positions_matrix()
    if n > 1:
        spread = r - np.mean(r, axis=0)
        # crystal alignment axis from the largest positional spread
        cov = spread.T @ spread
        axis_idx = int(np.argmax(np.diag(cov)))
    else:
        axis_idx = 2
    names = []
    for m in range(3 * n):
        comps = np.array([np.sum(np.abs(b[m, c * n:(c + 1) * n])) for c in range(3)])
        c = int(np.argmax(comps))
        block = b[m, c * n:(c + 1) * n]
        sig = block[np.abs(block) > 1e-9]
        in_phase = sig.size > 0 and (np.all(sig > 0) or np.all(sig < 0))
        if n == 1 or in_phase:
            kind = "com"
        elif c == axis_idx:
            kind = "str"
        else:
            kind = "roc"
        names.append(f"{kind}_{'xyz'[c]}")
    counts = {}
    labels = []
    for name in names:
        counts[name] = counts.get(name, 0) + 1
        labels.append(name if counts[name] == 1 else f"{name}{counts[name]}")
    return tuple(labels)


def solution_to_csv(solution):
    """Flat CSV dump (kind, index, values...) for plotting and golden tests."""
    lines = ["kind,index,values"]
    r = solution.positions_matrix()
    for i, row in enumerate(r):
        vals = ",".join(_fmt(v) for v in row)
        lines.append(f"position,{i},{vals}")
    for m, w in enumerate(solution.mode_frequencies):
        vals = ",".join(_fmt(v) for v in solution.mode_matrix[m])
        lines.append(f"mode,{m},{_fmt(w)},{vals}")
    for m, lam in enumerate(solution.hessian_eigenvalues):
        lines.append(f"eigenvalue,{m},{_fmt(lam)}")
    return "\n".join(lines) + "\n"


def _fmt(x):
    return format(float(x), ".17g")
