"""Effective quantum Ising model from state-dependent optical forces.

A far-detuned z-branch drive plus a resonant carrier field reduce, after a
canonical displacement transformation, to

    H = sum_i B_x sigma_x^i + sum_{i != j} J_ij sigma_z^i sigma_z^j
        (+ bias sigma_z terms)

with J_ij = sum_m W_i W_j eta_mi eta_mj alpha_3^2 / delta_m for i != j and
B_x = Omega_M.  Everything is hbar-scaled (rad/s).  The i = j self-terms of
the underlying double sum are excluded from J and folded into the bias and a
constant; the bias can be compensated exactly (the slightly-off-resonant
field trick), which is the default for adiabatic runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import drive as drv
from . import gate as gt
from . import hilbert
from .hilbert import SpaceSpec, SimState


class IsingError(Exception):
    pass


@dataclass(frozen=True)
class IsingModel:
    """Couplings J (symmetric, zero diagonal), transverse field B_x and
    longitudinal bias per ion; all rad/s."""

    coupling: np.ndarray
    field_x: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        j = np.asarray(self.coupling, dtype=float)
        n = j.shape[0]
        if j.shape != (n, n) or np.max(np.abs(j - j.T)) > 0:
            raise IsingError("J must be square and symmetric")
        if np.max(np.abs(np.diag(j))) > 0:
            raise IsingError("J diagonal must be zero")
        object.__setattr__(self, "coupling", j)
        object.__setattr__(self, "field_x", _as_vector(self.field_x, n))
        object.__setattr__(self, "bias", _as_vector(self.bias, n))

    @property
    def n_ions(self):
        return self.coupling.shape[0]

    @classmethod
    def uniform(cls, n, j, b_x, bias=0.0):
        coupling = np.full((n, n), float(j))
        np.fill_diagonal(coupling, 0.0)
        return cls(coupling, np.full(n, float(b_x)), np.full(n, float(bias)))


def _as_vector(x, n):
    v = np.full(n, float(x)) if np.isscalar(x) else np.asarray(x, dtype=float)
    if v.shape != (n,):
        raise IsingError(f"expected {n} per-ion values")
    return v


# --- couplings from a drive -----------------------------------------------------

def _coupling_kernel(spec):
    """G_ij = sum_m W_i W_j eta_mi eta_mj cos(phi_i - phi_j) / delta_m,
    full double sum including the i = j self-terms."""
    det = np.asarray(spec.detunings, dtype=float)
    if np.any(det == 0):
        raise IsingError("zero detuning: the adiabatic elimination diverges")
    omegas = np.asarray(spec.omegas)
    phases = np.asarray(spec.phases)
    amp = spec.eta * omegas[None, :]          # (modes, ions)
    cosm = np.cos(phases[:, None] - phases[None, :])
    g = np.einsum("mi,mj,m->ij", amp, amp, 1.0 / det)
    return g * cosm


def coupling_matrix(spec, crystal=None):
    """Ising couplings J_ij (rad/s) of a z-branch drive; diagonal excluded.

    ``crystal`` is accepted for signature symmetry with bias_field but the
    Lamb-Dicke tensor carried by the drive already holds everything needed.
    """
    if spec.branch != "z":
        raise IsingError("spin-spin couplings come from z-branch drives")
    a3 = spec.alphas[3]
    j = a3**2 * _coupling_kernel(spec)
    np.fill_diagonal(j, 0.0)
    return 0.5 * (j + j.T)


def bias_field(spec, crystal=None):
    """Per-ion sigma_z coefficients 2 (alpha_0/alpha_3) sum_j J~_ij (rad/s),
    where the j-sum runs over the full kernel including the self-terms."""
    if spec.branch != "z":
        raise IsingError("bias fields come from z-branch drives")
    a0, _, _, a3 = spec.alphas
    g = _coupling_kernel(spec)
    return 2.0 * a0 * a3 * np.sum(g, axis=1)


def com_bias_formula(spec, com_mode_indices):
    """Closed COM-mode bias for a uniform drive in a common linear trap:
    2 Omega^2 N alpha_0 alpha_3 sum_{m in COM} eta_m^2 / delta_m."""
    a0, _, _, a3 = spec.alphas
    omega = spec.omegas[0]
    n = spec.n_ions
    det = np.asarray(spec.detunings, dtype=float)
    total = 0.0
    for m in com_mode_indices:
        total += spec.eta[m, 0] ** 2 / det[m]
    return 2.0 * omega**2 * n * a0 * a3 * total


def model_from_drive(spec, field_omega, crystal=None):
    """IsingModel with J and bias from the drive and B_x = Omega_M."""
    j = coupling_matrix(spec, crystal)
    b = bias_field(spec, crystal)
    return IsingModel(j, _as_vector(field_omega, spec.n_ions), b)


# --- spin-space Hamiltonians -------------------------------------------------------

def effective_hamiltonian(model, *, include_bias=False):
    """Dense spin-space H = sum_i B_x sigma_x + sum_{i!=j} J_ij sigma_z sigma_z
    (+ bias sigma_z when requested).  The double sum counts each pair twice,
    so a pair's total sigma_z sigma_z weight is 2 J_ij."""
    n = model.n_ions
    space = SpaceSpec(n_spins=n)
    h = np.zeros((space.dim, space.dim), dtype=complex)
    for i in range(n):
        if model.field_x[i]:
            h += model.field_x[i] * hilbert.embed_spin(space, i, hilbert.SIGMA_X)
        if include_bias and model.bias[i]:
            h += model.bias[i] * hilbert.embed_spin(space, i, hilbert.SIGMA_Z)
    zdiag = _zz_diagonal(model.coupling)
    h += np.diag(zdiag)
    return h


def _zz_diagonal(coupling):
    """Diagonal of sum_{i!=j} J_ij sigma_z sigma_z in the spin basis."""
    n = coupling.shape[0]
    dim = 2**n
    z = np.array([[1.0 if (b >> i) & 1 else -1.0 for i in range(n)]
                  for b in range(dim)])
    return np.einsum("ij,si,sj->s", coupling, z, z)


def ground_state(h):
    evals, evecs = np.linalg.eigh(h)
    return float(evals[0]), evecs[:, 0]


def spectral_gap(h):
    evals = np.linalg.eigvalsh(h)
    return float(evals[1] - evals[0])


def ferro_probability(state_or_amps):
    amps = state_or_amps.amplitudes if isinstance(state_or_amps, SimState) else state_or_amps
    return float(abs(amps[0]) ** 2 + abs(amps[-1]) ** 2)


# --- ramp schedules ------------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    """Scalar schedule factor on [0, T]: 'constant', 'linear' or
    'exponential' (time constant tau), rising 0 -> 1 unless ``down``."""

    kind: str = "constant"
    tau: float = None
    down: bool = False

    def value(self, t, total):
        if self.kind == "constant":
            v = 1.0
        elif self.kind == "linear":
            v = t / total if total > 0 else 1.0
        elif self.kind == "exponential":
            if not self.tau or self.tau <= 0:
                raise IsingError("exponential profile needs a positive tau")
            v = (1.0 - math.exp(-t / self.tau)) / (1.0 - math.exp(-total / self.tau))
        else:
            raise IsingError(f"unknown profile kind {self.kind!r}")
        return 1.0 - v if self.down and self.kind != "constant" else v


@dataclass(frozen=True)
class RampSchedule:
    """Adiabatic schedule: total time, B_x(t) and J-scale(t) profiles."""

    total_time: float
    field_profile: Profile = Profile("constant")
    coupling_profile: Profile = Profile("linear")
    samples: int = 257

    def field_scale(self, t):
        return self.field_profile.value(t, self.total_time)

    def coupling_scale(self, t):
        return self.coupling_profile.value(t, self.total_time)

    def grid(self):
        return np.linspace(0.0, self.total_time, self.samples)


def prepared_state(n_ions):
    """|down...down> rotated by a global R(pi/2, pi/2): the +x product state."""
    space = SpaceSpec(n_spins=n_ions)
    state = SimState.from_product(space, "d" * n_ions)
    op = gt._rotation_operator(space, gt.Rotation(math.pi / 2.0, math.pi / 2.0))
    return SimState(space, op @ state.amplitudes)


@dataclass
class AdiabaticResult:
    times: np.ndarray
    states: list
    populations: np.ndarray        # (samples, 2^N)
    magnetization_x: np.ndarray
    ferro_probability: np.ndarray
    witness: np.ndarray            # GHZ-fidelity lower bound
    gaps: np.ndarray               # instantaneous gap at snapshot times
    snapshot_times: np.ndarray
    ground_overlap: float          # |<gs(T)|psi(T)>|^2
    min_gap: float

    @property
    def final_state(self):
        return self.states[-1]


def adiabatic_run(model, schedule, initial=None, *, compensate_bias=True,
                  include_bias=True, tol=1e-10, snapshot_every=32):
    """Integrate the spin-only effective model along the ramp.

    B_x(t) = field_profile * B_x, J(t) = coupling_profile * J; the bias term
    scales with J and is cancelled exactly when ``compensate_bias`` (the
    off-resonance trick).  Reports populations, <sigma_x>, the
    ferro-manifold probability, a GHZ-type entanglement witness
    (P_dd.. + P_uu..)/2 + |rho_{d..d,u..u}|, instantaneous gaps every
    ``snapshot_every`` samples, and the final ground-state overlap from
    exact diagonalization.
    """
    n = model.n_ions
    space = SpaceSpec(n_spins=n)
    state = initial if initial is not None else prepared_state(n)
    if state.space.dim != space.dim:
        raise IsingError("initial state dimension mismatch")

    h_field = np.zeros((space.dim, space.dim), dtype=complex)
    for i in range(n):
        h_field += model.field_x[i] * hilbert.embed_spin(space, i, hilbert.SIGMA_X)
    zdiag = _zz_diagonal(model.coupling)
    bias = model.bias if include_bias else np.zeros(n)
    if compensate_bias:
        bias = bias - model.bias
    zbias = np.array([sum(b * (1.0 if (s >> i) & 1 else -1.0)
                          for i, b in enumerate(bias)) for s in range(space.dim)])

    def h_of(t):
        fb = schedule.field_scale(t)
        fj = schedule.coupling_scale(t)
        return fb * h_field + np.diag(fj * (zdiag + zbias))

    times = schedule.grid()
    states = hilbert.propagate(h_of, state, 0.0, schedule.total_time, tol,
                               max_leakage=None, t_eval=times, check_hermitian=False)

    pops = np.array([np.abs(s.amplitudes) ** 2 for s in states])
    magx = np.empty(len(states))
    sx_total = sum(hilbert.embed_spin(space, i, hilbert.SIGMA_X) for i in range(n))
    wit = np.empty(len(states))
    for k, s in enumerate(states):
        a = s.amplitudes
        magx[k] = float(np.real(a.conj() @ (sx_total @ a))) / n
        wit[k] = 0.5 * (abs(a[0]) ** 2 + abs(a[-1]) ** 2) + abs(a[0] * np.conj(a[-1]))
    pferro = pops[:, 0] + pops[:, -1]

    snap_idx = list(range(0, len(times), snapshot_every))
    if snap_idx[-1] != len(times) - 1:
        snap_idx.append(len(times) - 1)
    gaps = np.array([spectral_gap(h_of(times[k])) for k in snap_idx])
    _, gs = ground_state(h_of(schedule.total_time))
    overlap = float(abs(np.vdot(gs, states[-1].amplitudes)) ** 2)

    return AdiabaticResult(
        times=times, states=states, populations=pops, magnetization_x=magx,
        ferro_probability=pferro, witness=wit, gaps=gaps,
        snapshot_times=times[snap_idx], ground_overlap=overlap,
        min_gap=float(np.min(gaps)))


def crossover_curve(n_ions, ratios, *, b_x=1.0, time_factor=50.0,
                    ferromagnetic=True, schedule_kind="linear", tol=1e-10):
    """P(ferro) after an adiabatic ramp for each |J|/B_x ratio.

    B_x is held constant (magnitude ``b_x``, sign chosen so the prepared +x
    state is the field ground state) while J ramps from zero to the target;
    T = time_factor / b_x.  Returns a list of (ratio, p_ferro) rows.
    """
    sign = -1.0 if ferromagnetic else 1.0
    rows = []
    for ratio in ratios:
        if ratio == 0:
            state = prepared_state(n_ions)
            rows.append((0.0, ferro_probability(state)))
            continue
        model = IsingModel.uniform(n_ions, sign * ratio * b_x, -b_x)
        schedule = RampSchedule(total_time=time_factor / b_x,
                                coupling_profile=Profile(schedule_kind))
        res = adiabatic_run(model, schedule, tol=tol)
        rows.append((float(ratio), float(res.ferro_probability[-1])))
    return rows


def ground_state_crossover(n_ions, ratios, *, ferromagnetic=True):
    """Oracle curve: P(ferro) of the exact ground state at each ratio."""
    sign = -1.0 if ferromagnetic else 1.0
    rows = []
    for ratio in ratios:
        model = IsingModel.uniform(n_ions, sign * ratio, -1.0)
        _, gs = ground_state(effective_hamiltonian(model))
        rows.append((float(ratio), ferro_probability(gs)))
    return rows


# --- exact vs effective -----------------------------------------------------------------

@dataclass
class ExactVsEffectiveReport:
    times: np.ndarray
    infidelity: np.ndarray          # 1 - <psi_eff| rho_spin |psi_eff>
    entanglement_entropy: np.ndarray
    population_error: np.ndarray    # max |sigma_z population difference|
    endpoint_infidelity: float
    coupling_scale: float           # max |Omega eta / delta| over modes/ions


def exact_vs_effective(spec, field_omega, duration, n_max, *,
                       samples=9, compensate_bias=True, tol=1e-9,
                       max_leakage=1e-4):
    """Run the full spin-phonon model and the spin-only effective model side
    by side from the same prepared +x state.

    The full model is the static-frame Hamiltonian (spin-phonon coupling,
    mode energies, transverse field, and the same exact bias compensation
    applied as a sigma_z term); the effective model is the Ising reduction.
    Reports the spin-reduced infidelity over time, the residual spin-motion
    entanglement entropy, and the worst sigma_z population disagreement.
    """
    if spec.branch != "z":
        raise IsingError("exact-vs-effective applies to z-branch drives")
    n = spec.n_ions
    space = spec.space(n_max)
    comp = -bias_field(spec) if compensate_bias else None
    h_full = drv.static_frame_hamiltonian(space, spec, field_omegas=field_omega,
                                          bias_compensation=comp)

    spin_state = prepared_state(n)
    full0 = SimState.from_product(space, "d" * n)
    rot = gt._rotation_operator(space, gt.Rotation(math.pi / 2.0, math.pi / 2.0))
    full0 = SimState(space, rot @ full0.amplitudes)

    model = model_from_drive(spec, field_omega)
    h_eff = effective_hamiltonian(model, include_bias=not compensate_bias)

    times = np.linspace(0.0, duration, samples)
    full_states = hilbert.propagate(h_full, full0, 0.0, duration, tol,
                                    max_leakage=max_leakage, t_eval=times)
    eff_states = hilbert.propagate(h_eff, spin_state, 0.0, duration, tol,
                                   max_leakage=None, t_eval=times)

    infid = np.empty(samples)
    entropy = np.empty(samples)
    pop_err = np.empty(samples)
    for k in range(samples):
        rho = hilbert.reduced_spin_density(full_states[k])
        psi = eff_states[k].amplitudes
        infid[k] = 1.0 - float(np.real(psi.conj() @ rho @ psi))
        entropy[k] = hilbert.spin_entropy(full_states[k])
        p_full = np.real(np.diag(rho))
        p_eff = np.abs(psi) ** 2
        pop_err[k] = float(np.max(np.abs(p_full - p_eff)))

    det = np.asarray(spec.detunings, dtype=float)
    scale = max(abs(spec.omegas[i] * spec.eta[m, i] / det[m])
                for m in range(spec.n_modes) for i in range(n))
    return ExactVsEffectiveReport(
        times=times, infidelity=infid, entanglement_entropy=entropy,
        population_error=pop_err, endpoint_infidelity=float(infid[-1]),
        coupling_scale=float(scale))


def infidelity_scaling(spec, field_omega, duration, n_max, **kwargs):
    """Endpoint infidelity at the drive's coupling and at half coupling;
    the ratio sits in the quadratic-error window when the dressing error
    dominates."""
    full = exact_vs_effective(spec, field_omega, duration, n_max, **kwargs)
    half = exact_vs_effective(spec.scale_omega(0.5), field_omega, duration,
                              n_max, **kwargs)
    ratio = full.endpoint_infidelity / half.endpoint_infidelity
    return full, half, float(ratio)


def fit_power_law(separations, magnitudes):
    """Least-squares exponent p of |J| ~ 1/d^p on a log-log grid."""
    x = np.log(np.asarray(separations, dtype=float))
    y = np.log(np.asarray(magnitudes, dtype=float))
    slope, _ = np.polyfit(x, y, 1)
    return float(-slope)


def dipolar_exponent(j, *, min_pairs=1):
    """Fit |J_{i,i+d}| vs separation d, averaging pairs at each distance."""
    n = j.shape[0]
    seps, mags = [], []
    for d in range(1, n):
        vals = [abs(j[i, i + d]) for i in range(n - d)]
        if len(vals) >= min_pairs:
            seps.append(d)
            mags.append(float(np.mean(vals)))
    return fit_power_law(seps, mags), list(zip(seps, mags))
