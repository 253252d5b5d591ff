"""Geometric phase gates on state-dependent displacement drives.

The closed-form propagator of a first-order (Lamb-Dicke) z-branch drive
factorises per spin configuration into mode displacements plus a phase that
splits into sigma_z(x)sigma_z (geometric), sigma_z (dynamic) and identity
(global) parts.  The ledger records all three per mode and configuration;
an adaptive integrator over the same Hamiltonian serves as the independent
engine for cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import drive as drv
from . import hilbert
from .drive import DriveSpec, rotation
from .hilbert import SimState, SpaceSpec


class GateError(Exception):
    pass


# --- pulse programs -----------------------------------------------------------------

@dataclass(frozen=True)
class Rotation:
    """Carrier rotation R(theta, phi) on the addressed ions (None = all).
    Treated as instantaneous; gate times follow the convention that rotation
    durations are excluded."""

    theta: float
    phi: float
    ions: tuple = None


@dataclass(frozen=True)
class DisplacementPulse:
    drive: DriveSpec
    duration: float

    def __post_init__(self):
        if self.duration < 0:
            raise GateError("pulse duration must be non-negative")
        if self.drive.branch != "z":
            raise GateError("displacement pulses are z-branch drives")


@dataclass(frozen=True)
class Idle:
    duration: float

    def __post_init__(self):
        if self.duration < 0:
            raise GateError("idle duration must be non-negative")


@dataclass(frozen=True)
class PulseProgram:
    segments: tuple

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    def displacement_segments(self):
        return [s for s in self.segments if isinstance(s, DisplacementPulse)]


# --- phase ledger ----------------------------------------------------------------------

@dataclass
class ModeLedger:
    """Per-mode bookkeeping of one displacement interval, keyed by the spin
    configuration label at the time the drive acted."""

    label: str
    geometric: dict = field(default_factory=dict)
    dynamic: dict = field(default_factory=dict)
    displacement: dict = field(default_factory=dict)
    global_phase: float = 0.0

    def closure_residual(self):
        return max(abs(v) for v in self.displacement.values())


@dataclass
class PhaseLedger:
    """Ledger of one analytic displacement interval (one entry per mode)."""

    modes: list
    t_start: float
    t_stop: float

    def mode(self, label):
        for m in self.modes:
            if m.label == label:
                return m
        raise KeyError(label)

    def total_phase(self, config):
        g = sum(m.geometric[config] + m.dynamic[config] for m in self.modes)
        return g + sum(m.global_phase for m in self.modes)

    def max_closure_residual(self):
        return max((m.closure_residual() for m in self.modes), default=0.0)


def _phase_kernel(delta, dt, dphi):
    """[delta dt cos(dphi) - sin(delta dt - dphi)] / delta^2, evaluated through
    the delta -> 0 limit by series (straight-line drive, phase ~ t^2)."""
    x = delta * dt
    if abs(x) > 1e-4:
        a = (x - math.sin(x)) / delta**2
        b = (math.cos(x) - 1.0) / delta**2
    else:
        # (x - sin x)/d^2 = d t^3/6 - d^3 t^5/120 ; (cos x - 1)/d^2 = -t^2/2 + d^2 t^4/24
        a = delta * dt**3 / 6.0 - delta**3 * dt**5 / 120.0
        b = -dt**2 / 2.0 + delta**2 * dt**4 / 24.0
    return math.cos(dphi) * a + math.sin(dphi) * b


def _displacement_factor(delta, t0, t1):
    """(e^{-i delta (t1-t0)} - 1)/delta * e^{-i delta t0}, series for small delta."""
    dt = t1 - t0
    x = delta * dt
    if abs(x) > 1e-8:
        num = complex(-2.0 * math.sin(0.5 * x) ** 2, -math.sin(x))
        val = num / delta
    else:
        val = dt * complex(-0.5 * x + x**3 / 24.0, -1.0 + x**2 / 6.0)
    return val * np.exp(-1j * delta * t0)


def analytic_propagator(space, drive, t0, t1):
    """Closed-form propagator of a z-branch drive over [t0, t1].

    Returns (PhaseLedger, U) where U acts on the full space.  Valid within
    the first-order Lamb-Dicke force model; delta_m = 0 is handled as the
    straight-line limit.  The phase per spin configuration s is

        -sum_m sum_ij (W_i W_j eta_mi eta_mj / delta_m^2) kappa_i(s) kappa_j(s)
              [delta_m dt cos(phi_i - phi_j) - sin(delta_m dt - (phi_i - phi_j))]

    split into geometric (alpha_3^2, all i,j), dynamic (alpha_0 alpha_3) and
    global (alpha_0^2) parts; the per-mode displacement is

        lambda_m(s) = i sum_i (W_i eta_mi / delta_m)(e^{-i delta_m dt} - 1)
                      e^{-i delta_m t0} e^{i phi_i} kappa_i(s).
    """
    if drive.branch != "z":
        raise GateError("analytic propagator requires a z-branch drive")
    if space.n_spins != drive.n_ions or len(space.modes) != drive.n_modes:
        raise GateError("space and drive shapes disagree")
    a0, _, _, a3 = drive.alphas
    det = drive.detunings
    omegas = np.asarray(drive.omegas)
    phases = np.asarray(drive.phases)
    eta = drive.eta
    n_ions = drive.n_ions
    dt = t1 - t0

    z = np.array([1.0 if (bits >> i) & 1 else -1.0
                  for bits in range(space.spin_dim)
                  for i in range(n_ions)]).reshape(space.spin_dim, n_ions)
    kappa_vals = a0 + a3 * z     # (configs, ions)

    ledgers = []
    mode_ops = []
    phase_total = np.zeros(space.spin_dim)
    for m, mode in enumerate(space.modes):
        kern = np.empty((n_ions, n_ions))
        for i in range(n_ions):
            for j in range(n_ions):
                kern[i, j] = (omegas[i] * omegas[j] * eta[m, i] * eta[m, j]
                              * _phase_kernel(det[m], dt, phases[i] - phases[j]))
        geo = -a3**2 * np.einsum("ij,si,sj->s", kern, z, z)
        dyn = -a0 * a3 * (np.einsum("ij,si->s", kern, z) + np.einsum("ij,sj->s", kern, z))
        glob = -a0**2 * float(np.sum(kern))

        disp_base = _displacement_factor(det[m], t0, t1)
        lam = 1j * disp_base * (kappa_vals @ (omegas * eta[m] * np.exp(1j * phases)))

        labels = space.config_labels()
        led = ModeLedger(label=mode.label,
                         geometric={l: float(g) for l, g in zip(labels, geo)},
                         dynamic={l: float(d) for l, d in zip(labels, dyn)},
                         displacement={l: complex(v) for l, v in zip(labels, lam)},
                         global_phase=glob)
        ledgers.append(led)
        phase_total += geo + dyn + glob
        mode_ops.append([hilbert.displacement_operator(mode.n_max, lam[s])
                         for s in range(space.spin_dim)])

    u = np.zeros((space.dim, space.dim), dtype=complex)
    sdim = space.spin_dim
    for s in range(sdim):
        block = None
        for ops in mode_ops:       # mode 0 fastest: kron(slow, fast)
            block = ops[s] if block is None else np.kron(ops[s], block)
        if block is None:
            block = np.eye(1, dtype=complex)
        u[s::sdim, s::sdim] = np.exp(1j * phase_total[s]) * block
    ledger = PhaseLedger(modes=ledgers, t_start=t0, t_stop=t1)
    return ledger, u


# --- program execution --------------------------------------------------------------------

@dataclass
class ProgramResult:
    state: SimState
    ledgers: list
    engine: str
    overlap: float = None          # |<analytic|integrated>| when engine='both'
    integrated_state: SimState = None


def _rotation_operator(space, seg):
    mat = rotation(seg.theta, seg.phi)
    ions = seg.ions if seg.ions is not None else tuple(range(space.n_spins))
    spins = [np.asarray(mat) if i in ions else "i" for i in range(space.n_spins)]
    return hilbert.build_operator(
        space, hilbert.OperatorSpec(tuple(spins), ("i",) * len(space.modes)))


def run_program(space, program, initial, engine="analytic", *,
                lamb_dicke_order=1, tol=1e-10, max_leakage=1e-6):
    """Execute a pulse program.

    engine='analytic' uses the closed-form displacement propagator (and
    returns the phase ledger); 'integrate' time-orders the branch Hamiltonian
    numerically; 'both' runs the two and reports their state overlap.
    Analytic/integrate agreement is only meaningful when the integrator uses
    the same first-order Lamb-Dicke model (lamb_dicke_order=1).
    """
    if engine not in ("analytic", "integrate", "both"):
        raise GateError(f"unknown engine {engine!r}")
    do_analytic = engine in ("analytic", "both")
    do_integrate = engine in ("integrate", "both")

    state_a = initial.copy() if do_analytic else None
    state_i = initial.copy() if do_integrate else None
    ledgers = []
    t = 0.0
    for seg in program.segments:
        if isinstance(seg, Rotation):
            op = _rotation_operator(space, seg)
            if do_analytic:
                state_a = SimState(space, op @ state_a.amplitudes,
                                   state_a.norm_drift, state_a.leakage_record)
            if do_integrate:
                state_i = SimState(space, op @ state_i.amplitudes,
                                   state_i.norm_drift, state_i.leakage_record)
        elif isinstance(seg, Idle):
            t += seg.duration
        elif isinstance(seg, DisplacementPulse):
            t1 = t + seg.duration
            if do_analytic:
                ledger, u = analytic_propagator(space, seg.drive, t, t1)
                ledgers.append(ledger)
                state_a = SimState(space, u @ state_a.amplitudes,
                                   state_a.norm_drift, state_a.leakage_record)
            if do_integrate:
                h = drv.hamiltonian_factory(space, seg.drive,
                                            lamb_dicke_order=lamb_dicke_order)
                state_i = hilbert.propagate(h, state_i, t, t1, tol,
                                            max_leakage=max_leakage)
            t = t1
        else:
            raise GateError(f"unknown segment {seg!r}")

    overlap = None
    if engine == "both":
        overlap = float(abs(np.vdot(state_a.amplitudes, state_i.amplitudes)))
    final = state_a if do_analytic else state_i
    return ProgramResult(state=final, ledgers=ledgers, engine=engine,
                         overlap=overlap,
                         integrated_state=state_i if engine == "both" else None)


def spin_echo_dynamic_residuals(ledgers, space):
    """Net dynamic phase per mode and configuration across a two-pulse
    spin-echo program: the global pi pulse between the pulses maps each
    configuration to its bitwise complement, so the second pulse's dynamic
    phase is read off the flipped configuration."""
    if len(ledgers) != 2:
        raise GateError("spin-echo residuals need exactly two displacement ledgers")
    out = {}
    full = space.spin_dim - 1
    for m1 in ledgers[0].modes:
        m2 = ledgers[1].mode(m1.label)
        res = {}
        for bits in range(space.spin_dim):
            lab = space.config_label(bits)
            flipped = space.config_label(full ^ bits)
            res[lab] = m1.dynamic[lab] + m2.dynamic[flipped]
        out[m1.label] = res
    return out


# --- observables -----------------------------------------------------------------------

def spin_fidelity(state, target_amplitudes):
    """<target| rho_spin |target> with the modes traced out."""
    rho = hilbert.reduced_spin_density(state)
    t = np.asarray(target_amplitudes, dtype=complex)
    t = t / np.linalg.norm(t)
    return float(np.real(t.conj() @ rho @ t))


def bell_state(space_or_n, kind="phi_i"):
    """Two-spin Bell amplitudes in storage order; 'phi_i' = (|dd> + i|uu>)/sqrt2."""
    amps = np.zeros(4, dtype=complex)
    if kind == "phi_i":
        amps[0] = 1.0 / math.sqrt(2.0)
        amps[3] = 1j / math.sqrt(2.0)
    elif kind == "phi_plus":
        amps[0] = amps[3] = 1.0 / math.sqrt(2.0)
    else:
        raise GateError(f"unknown Bell state {kind!r}")
    return amps


def parity_scan(state, analysis_phases):
    """<sigma_z (x) sigma_z> after a common R(pi/2, phi) analysis pulse.

    Works on the two-spin reduced density matrix of any state; an ideal Bell
    state gives a unit-contrast cosine in 2 phi.
    """
    if state.space.n_spins != 2:
        raise GateError("parity scan is a two-spin observable")
    rho = hilbert.reduced_spin_density(state)
    zz = np.diag([1.0, -1.0, -1.0, 1.0])   # dd, ud, du, uu
    vals = []
    for phi in analysis_phases:
        r = rotation(math.pi / 2.0, phi)
        u = np.kron(r, r)
        vals.append(float(np.real(np.trace(zz @ u @ rho @ u.conj().T))))
    return np.asarray(vals)


def fringe_contrast(analysis_phases, parity_values):
    """Amplitude of the cos(2 phi) component on a uniform phase grid."""
    phases = np.asarray(analysis_phases)
    vals = np.asarray(parity_values)
    c = 2.0 * np.abs(np.sum(vals * np.exp(-2j * phases))) / len(vals)
    return float(c)


def bell_fidelity_bound(populations, contrast):
    """Standard parity-fringe fidelity lower bound (P_dd + P_uu)/2 + C/2."""
    return 0.5 * (populations["dd"] + populations["uu"]) + 0.5 * contrast


# --- reference sequences ---------------------------------------------------------------

def phase_gate_program(drive, duration, *, echo=False):
    """Common geometric-phase-gate sequences.

    Without echo: R(pi/2, pi/2) - displacement - R(pi/2, pi) - R(pi/2, pi/2)
    (single-pulse axial gate).  With echo: R(pi/2, pi/2) - displacement -
    R(pi, pi/2) - displacement - R(pi/2, pi/2); each displacement closes all
    driven modes and contributes half the differential phase, and the pi
    pulse cancels the uniform dynamic phases.
    """
    half = math.pi / 2.0
    if not echo:
        return PulseProgram((
            Rotation(half, half),
            DisplacementPulse(drive, duration),
            Rotation(half, math.pi),
            Rotation(half, half),
        ))
    return PulseProgram((
        Rotation(half, half),
        DisplacementPulse(drive, duration),
        Rotation(math.pi, half),
        DisplacementPulse(drive, duration),
        Rotation(half, half),
    ))


def tune_drive_for_differential_phase(drive, duration, target, *, space=None):
    """Scale the drive strength so the anti-aligned vs aligned differential
    phase over one pulse equals ``target`` (geometric phases scale as
    Omega^2, so the solve is exact)."""
    probe_space = space or drive.space(2)
    ledger, _ = analytic_propagator(probe_space, drive, 0.0, duration)
    labels = probe_space.config_labels()
    anti = next(l for l in labels if "d" in l and "u" in l)
    aligned = labels[0]
    base = (sum(m.geometric[anti] for m in ledger.modes)
            - sum(m.geometric[aligned] for m in ledger.modes))
    if base == 0:
        raise GateError("drive produces no differential phase; cannot tune")
    factor = math.sqrt(abs(target / base))
    if target * base < 0:
        raise GateError(
            "differential phase has the wrong sign for this target; "
            "flip the detuning sign instead of the drive strength")
    return drive.scale_omega(factor)


def leibfried_phase(omega, eta, delta, alpha3, loops=1):
    """Anti-aligned geometric phase of the single-mode two-ion gate after
    ``loops`` full circles: -2 pi l * 4 (Omega eta / delta)^2 alpha_3^2,
    with the overall sign following sign(delta)."""
    return -2.0 * math.pi * loops * 4.0 * (omega * eta / delta) ** 2 \
        * alpha3**2 * math.copysign(1.0, delta)


@dataclass
class SchmitzReport:
    """Diagnostics of the two-mode commensurate gate at its closure time."""

    gate_time: float
    commensurate: bool
    closure_residual: float
    str_phase_anti: float          # stretch-mode geometric phase, anti-aligned
    com_phase_aligned: float       # COM-mode geometric phase, aligned
    differential_phase: float
    dynamic_com_aligned: float     # residual dynamic phase magnitude (COM)
    dynamic_over_com_geometric: float
    omega_tuned: float


def schmitz_phase_check(eta_com, eta_str, delta_str, *, ratio=-5,
                        alphas=(-0.25, 0.0, 0.0, 1.25), omega=None,
                        target_differential=math.pi / 2.0, n_max=12,
                        mode_frequencies=(1.0, 1.0)):
    """Two-ion gate driving stretch and COM modes simultaneously with
    commensurate detunings delta_com = ratio * delta_str (ratio = -5 for the
    reference configuration, stretch red / COM blue of the drive).

    Verifies at T_g = |2 pi / delta_str| that (i) both mode trajectories
    close, (ii) the differential geometric phase between anti-aligned and
    aligned configurations can be tuned to the target, and (iii) the
    leftover COM dynamic phase has magnitude |2 alpha_0 / alpha_3| of the
    COM geometric phase.  Non-integer ratios are reported as closure
    failures rather than raised.
    """
    from .crystal import LambDickeTensor

    delta_com = ratio * delta_str
    commensurate = abs(ratio - round(ratio)) < 1e-12
    tensor = LambDickeTensor(eta=[[eta_com, eta_com], [eta_str, -eta_str]],
                             mode_frequencies=list(mode_frequencies),
                             labels=("com", "str"))
    spec = DriveSpec("z", (1.0, 1.0) if omega is None else (omega, omega),
                     (0.0, 0.0), alphas, tensor,
                     explicit_detunings=(delta_com, delta_str))
    t_g = abs(2.0 * math.pi / delta_str)
    space = spec.space(n_max)
    if omega is None:
        spec = tune_drive_for_differential_phase(spec, t_g, target_differential,
                                                 space=space)
    ledger, _ = analytic_propagator(space, spec, 0.0, t_g)
    com = ledger.mode("com")
    stretch = ledger.mode("str")
    str_anti = stretch.geometric["ud"]
    com_aligned = com.geometric["dd"]
    dyn_com = abs(com.dynamic["dd"])
    differential = (str_anti + com.geometric["ud"]) - (com_aligned + stretch.geometric["dd"])
    return SchmitzReport(
        gate_time=t_g,
        commensurate=commensurate,
        closure_residual=ledger.max_closure_residual(),
        str_phase_anti=str_anti,
        com_phase_aligned=com_aligned,
        differential_phase=differential,
        dynamic_com_aligned=dyn_com,
        dynamic_over_com_geometric=dyn_com / abs(com_aligned) if com_aligned else math.inf,
        omega_tuned=spec.omegas[0],
    )
