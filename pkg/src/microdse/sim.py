"""Ground-truth simulator for the coupled microgrid plant.

Integrates the coupled LTI model with exact (zero-order-hold)
discretization at the plant step, regulates each DGU terminal voltage
with a PI law, applies scheduled load-step events, and attaches seeded
measurement/input noise to the recorded streams.  Same config and seed
always reproduce bit-identical traces.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .discretize import discretize_exact
from .kalman import NoiseSpec
from .models import MicrogridTopology, build_coupled_plant, dgu_input_labels


class SimulationDivergedError(RuntimeError):
    """Raised when the integrated state leaves the plausible range."""


@dataclass(frozen=True)
class LoadStep:
    """Step change of one bus's constant-current dq load."""

    time_s: float
    bus: int
    delta_d: float
    delta_q: float

    def __post_init__(self):
        if self.time_s < 0.0 or not np.isfinite(self.time_s):
            raise ValueError("event time must be finite and non-negative")
        if self.bus < 1:
            raise ValueError("bus indices are 1-based")


@dataclass(frozen=True)
class EventSchedule:
    steps: tuple[LoadStep, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        times = [s.time_s for s in self.steps]
        if any(b >= a for a, b in zip(times[1:], times)):
            raise ValueError("event times must be strictly increasing")

    @property
    def last_time(self) -> float:
        return self.steps[-1].time_s if self.steps else 0.0


@dataclass(frozen=True)
class RegulatorConfig:
    """Gains and references of the per-DGU terminal-voltage regulator."""

    kp: float
    ki: float  # 1/s
    virtual_resistance: float  # ohm; damps the LC resonance
    droop: float  # V per A of bus output d-current
    reference: np.ndarray  # per-bus d-axis voltage amplitude, V
    v_max_scale: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "reference", np.asarray(self.reference, dtype=float))
        if self.kp <= 0.0 or self.ki <= 0.0:
            raise ValueError("kp and ki must be strictly positive")
        if self.virtual_resistance < 0.0 or self.droop < 0.0:
            raise ValueError("virtual_resistance and droop must be non-negative")
        if self.v_max_scale <= 1.0:
            raise ValueError("v_max_scale must exceed 1")
        if self.reference.ndim != 1 or (self.reference <= 0.0).any():
            raise ValueError("reference must be a 1-D array of positive voltages")


class VoltageRegulator:
    """Discrete PI regulator holding each bus at (reference, 0) in dq.

    A virtual-resistance term on the filter current damps the otherwise
    nearly undamped LC resonance, and an optional droop term lowers the
    d-axis reference in proportion to the bus output current so that load
    changes shift the steady-state line flows.  Outputs clamp at
    ``v_max_scale`` times the base reference with conditional anti-windup.
    """

    def __init__(self, config: RegulatorConfig, dt: float, n_units: int):
        if config.reference.shape != (n_units,):
            raise ValueError(
                f"reference must have one entry per unit ({n_units}), "
                f"got shape {config.reference.shape}"
            )
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        self.config = config
        self.dt = dt
        self.integ_d = np.zeros(n_units)
        self.integ_q = np.zeros(n_units)

    def step(self, v_d, v_q, i_td, i_tq, i_od=None):
        """One control update from the current bus state; returns (v_td, v_tq)."""
        cfg = self.config
        ref = cfg.reference
        if i_od is not None and cfg.droop != 0.0:
            ref = ref - cfg.droop * np.asarray(i_od)
        e_d = ref - v_d
        e_q = -np.asarray(v_q)
        raw_d = ref + cfg.kp * e_d + cfg.ki * self.integ_d - cfg.virtual_resistance * i_td
        raw_q = cfg.kp * e_q + cfg.ki * self.integ_q - cfg.virtual_resistance * i_tq
        vmax = cfg.v_max_scale * cfg.reference
        out_d = np.clip(raw_d, -vmax, vmax)
        out_q = np.clip(raw_q, -vmax, vmax)
        hold_d = ((raw_d > vmax) & (e_d > 0)) | ((raw_d < -vmax) & (e_d < 0))
        hold_q = ((raw_q > vmax) & (e_q > 0)) | ((raw_q < -vmax) & (e_q < 0))
        self.integ_d = self.integ_d + self.dt * np.where(hold_d, 0.0, e_d)
        self.integ_q = self.integ_q + self.dt * np.where(hold_q, 0.0, e_q)
        return out_d, out_q


@dataclass(frozen=True)
class SimNoise:
    """Per-subsystem noise specs: 4-channel DGU blocks, 2-channel line blocks.

    ``dgu.q``/``line.q`` are process covariances injected into the truth,
    ``dgu.r``/``line.r`` measurement covariances on the recorded states,
    and ``dgu.m`` the covariance of the measured DGU input channels.
    """

    dgu: NoiseSpec
    line: NoiseSpec

    def __post_init__(self):
        if self.dgu.q.shape != (4, 4) or self.dgu.m.shape != (4, 4):
            raise ValueError("DGU noise spec must be 4-channel")
        if self.line.q.shape != (2, 2):
            raise ValueError("line noise spec must be 2-channel")

    @classmethod
    def zero(cls) -> "SimNoise":
        z4 = np.zeros((4, 4))
        z2 = np.zeros((2, 2))
        return cls(dgu=NoiseSpec(z4, z4, z4), line=NoiseSpec(z2, z2, z2))


@dataclass(frozen=True)
class SimConfig:
    topology: MicrogridTopology
    duration_s: float
    plant_step_s: float
    seed: int
    initial_loads: np.ndarray  # (n_buses, 2) dq amperes
    events: EventSchedule = EventSchedule()
    noise: SimNoise | None = None
    controller: RegulatorConfig | None = None
    fixed_terminal_voltage: np.ndarray | None = None  # (n_buses, 2), used when controller is None
    start: str = "equilibrium"

    def __post_init__(self):
        nb = self.topology.n_buses
        object.__setattr__(
            self, "initial_loads", np.asarray(self.initial_loads, dtype=float)
        )
        if self.noise is None:
            object.__setattr__(self, "noise", SimNoise.zero())
        if self.plant_step_s <= 0.0:
            raise ValueError("plant_step_s must be positive")
        if self.duration_s <= 0.0:
            raise ValueError("duration_s must be positive")
        if self.duration_s < self.events.last_time:
            raise ValueError("duration must cover the latest scheduled event")
        if self.initial_loads.shape != (nb, 2):
            raise ValueError(f"initial_loads must have shape ({nb}, 2)")
        for ev in self.events.steps:
            if ev.bus > nb:
                raise ValueError(f"event bus {ev.bus} outside 1..{nb}")
        if self.start not in ("equilibrium", "zero"):
            raise ValueError("start must be 'equilibrium' or 'zero'")
        if self.controller is not None:
            if self.controller.reference.shape != (nb,):
                raise ValueError(f"controller reference must have shape ({nb},)")
        else:
            vt = self.fixed_terminal_voltage
            vt = np.zeros((nb, 2)) if vt is None else np.asarray(vt, dtype=float)
            if vt.shape != (nb, 2):
                raise ValueError(f"fixed_terminal_voltage must have shape ({nb}, 2)")
            object.__setattr__(self, "fixed_terminal_voltage", vt)

    @property
    def plant_rate_hz(self) -> float:
        return 1.0 / self.plant_step_s


@dataclass(frozen=True)
class TraceRecord:
    """One simulated instant: truth, its noisy measurement, measured inputs."""

    t: float
    true_state: np.ndarray
    noisy_measurement: np.ndarray
    inputs: np.ndarray


@dataclass(frozen=True)
class Trace:
    """Column-aligned arrays over time; rows are TraceRecords.

    ``u_true``/``u_meas`` hold the per-DGU measured-input channels
    [v_td, v_tq, i_od, i_oq] per bus, which is what the local estimators
    consume; the plant-level load inputs are internal to the simulator.
    """

    t: np.ndarray
    t_step_s: float
    x_true: np.ndarray
    z_state: np.ndarray
    u_true: np.ndarray
    u_meas: np.ndarray
    state_labels: tuple[str, ...]
    input_labels: tuple[str, ...]

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def rate_hz(self) -> float:
        return 1.0 / self.t_step_s

    def record(self, k: int) -> TraceRecord:
        return TraceRecord(
            t=float(self.t[k]),
            true_state=self.x_true[k],
            noisy_measurement=self.z_state[k],
            inputs=self.u_meas[k],
        )


def downsample(trace, target_rate_hz: float):
    """Keep every k-th record so that the result is sampled at ``target_rate_hz``.

    No interpolation: the target rate must divide the trace rate.  Works
    on any trace-like dataclass with a ``t_step_s`` field and arrays whose
    leading axis is time.
    """
    rate = 1.0 / trace.t_step_s
    factor = rate / target_rate_hz
    k = int(round(factor))
    if k < 1 or abs(factor - k) > 1e-6 * max(1.0, factor):
        raise ValueError(
            f"target rate {target_rate_hz!r} Hz does not divide the trace rate {rate!r} Hz"
        )
    if k == 1:
        return dataclasses.replace(trace)
    n = trace.t.shape[0]
    updates = {"t_step_s": trace.t_step_s * k}
    for f in dataclasses.fields(trace):
        v = getattr(trace, f.name)
        if isinstance(v, np.ndarray) and v.ndim >= 1 and v.shape[0] == n:
            updates[f.name] = v[::k].copy()
    return dataclasses.replace(trace, **updates)


def _covariance_factor(cov: np.ndarray) -> np.ndarray:
    """Factor F with F F^T = cov, valid for singular PSD matrices."""
    if not cov.any():
        return np.zeros_like(cov)
    w, v = np.linalg.eigh(cov)
    w = np.clip(w, 0.0, None)
    return v * np.sqrt(w)


def _bus_index_arrays(nb: int):
    base = 4 * np.arange(nb)
    return base, base + 1, base + 2, base + 3


def _incidence(topology: MicrogridTopology) -> np.ndarray:
    """Signed bus-line incidence: +1 where the line leaves, -1 where it enters."""
    inc = np.zeros((topology.n_buses, topology.n_lines))
    for j, line in enumerate(topology.lines):
        inc[line.from_bus - 1, j] = 1.0
        inc[line.to_bus - 1, j] = -1.0
    return inc


def _output_current_map(topology: MicrogridTopology) -> np.ndarray:
    """Maps the plant state to stacked per-bus line outflow [d, q interleaved]."""
    nb, nl = topology.n_buses, topology.n_lines
    n = 4 * nb + 2 * nl
    io = np.zeros((2 * nb, n))
    inc = _incidence(topology)
    for j in range(nl):
        col = 4 * nb + 2 * j
        io[0::2, col] = inc[:, j]
        io[1::2, col + 1] = inc[:, j]
    return io


def regulated_equilibrium(
    topology: MicrogridTopology, controller: RegulatorConfig, loads: np.ndarray
):
    """Closed-loop operating point for given per-bus dq loads.

    Solved from the steady-state circuit relations with every bus voltage
    pinned at its (droop-shifted) reference and v_q at zero.  Returns
    ``(x, integ_d, integ_q, v_t)`` where ``x`` is the plant state and the
    integrator values make the regulator reproduce ``v_t`` exactly.
    """
    nb = topology.n_buses
    omega = topology.omega
    loads = np.asarray(loads, dtype=float)
    inc = _incidence(topology)
    r_line = np.array([ln.r for ln in topology.lines])
    l_line = np.array([ln.l for ln in topology.lines])
    z2 = r_line**2 + (omega * l_line) ** 2
    g_d = r_line / z2
    g_q = -omega * l_line / z2
    kd = controller.droop
    lhs = np.eye(nb) + kd * (inc * g_d) @ inc.T
    v_d = np.linalg.solve(lhs, controller.reference - kd * loads[:, 0])
    dv = inc.T @ v_d  # per-line endpoint difference
    i_line_d = g_d * dv
    i_line_q = g_q * dv
    i_od = loads[:, 0] + inc @ i_line_d
    i_oq = loads[:, 1] + inc @ i_line_q
    c_t = np.array([d.c_t for d in topology.dgus])
    r_t = np.array([d.r_t for d in topology.dgus])
    l_t = np.array([d.l_t for d in topology.dgus])
    i_td = i_od  # v_q = 0 removes the capacitor d-axis term
    i_tq = i_oq + omega * c_t * v_d
    v_td = v_d + r_t * i_td - omega * l_t * i_tq
    v_tq = r_t * i_tq + omega * l_t * i_td
    vmax = controller.v_max_scale * controller.reference
    if (np.abs(v_td) > vmax).any() or (np.abs(v_tq) > vmax).any():
        raise ValueError("equilibrium terminal voltage exceeds the regulator clamp")
    ref_d = controller.reference - kd * i_od
    integ_d = (v_td - ref_d + controller.virtual_resistance * i_td) / controller.ki
    integ_q = (v_tq + controller.virtual_resistance * i_tq) / controller.ki
    x = np.zeros(4 * nb + 2 * topology.n_lines)
    x[0 : 4 * nb : 4] = v_d
    x[2 : 4 * nb : 4] = i_td
    x[3 : 4 * nb : 4] = i_tq
    x[4 * nb :: 2] = i_line_d
    x[4 * nb + 1 :: 2] = i_line_q
    return x, integ_d, integ_q, np.column_stack([v_td, v_tq])


def closed_loop_matrix(cfg: SimConfig) -> np.ndarray:
    """Discrete closed-loop matrix over [plant states, integrators d, q].

    Linear regime only (clamp and anti-windup ignored); its spectral
    radius must be below one for the regulated plant to be stable.
    """
    if cfg.controller is None:
        raise ValueError("closed_loop_matrix requires a controller")
    topo = cfg.topology
    ctl = cfg.controller
    nb, nl = topo.n_buses, topo.n_lines
    model = build_coupled_plant(topo)
    disc = discretize_exact(model, cfg.plant_step_s)
    n = model.n_states
    idx_vd, idx_vq, idx_itd, idx_itq = _bus_index_arrays(nb)
    sel_vd = np.zeros((nb, n))
    sel_vd[np.arange(nb), idx_vd] = 1.0
    sel_vq = np.zeros((nb, n))
    sel_vq[np.arange(nb), idx_vq] = 1.0
    sel_itd = np.zeros((nb, n))
    sel_itd[np.arange(nb), idx_itd] = 1.0
    sel_itq = np.zeros((nb, n))
    sel_itq[np.arange(nb), idx_itq] = 1.0
    d_iod = np.zeros((nb, n))  # state-dependent part of the bus output d-current
    inc = _incidence(topo)
    for j in range(nl):
        d_iod[:, 4 * nb + 2 * j] = inc[:, j]
    e_xd = -ctl.droop * d_iod - sel_vd
    e_xq = -sel_vq
    vx_d = (1.0 + ctl.kp) * e_xd + sel_vd - ctl.virtual_resistance * sel_itd
    vx_q = ctl.kp * e_xq - ctl.virtual_resistance * sel_itq
    b_vtd = disc.b_d[:, 0 : 2 * nb : 2]
    b_vtq = disc.b_d[:, 1 : 2 * nb : 2]
    a_cl = np.zeros((n + 2 * nb, n + 2 * nb))
    a_cl[:n, :n] = disc.a_d + b_vtd @ vx_d + b_vtq @ vx_q
    a_cl[:n, n : n + nb] = ctl.ki * b_vtd
    a_cl[:n, n + nb :] = ctl.ki * b_vtq
    a_cl[n : n + nb, :n] = cfg.plant_step_s * e_xd
    a_cl[n : n + nb, n : n + nb] = np.eye(nb)
    a_cl[n + nb :, :n] = cfg.plant_step_s * e_xq
    a_cl[n + nb :, n + nb :] = np.eye(nb)
    return a_cl


def run_plant(cfg: SimConfig) -> Trace:
    """Simulate the configured scenario; deterministic given the seed.

    Noise streams are drawn in a fixed order (process, state measurement,
    input measurement) so that configs differing only in noise magnitudes
    share the underlying standard-normal draws.
    """
    topo = cfg.topology
    nb, nl = topo.n_buses, topo.n_lines
    model = build_coupled_plant(topo)
    disc = discretize_exact(model, cfg.plant_step_s)
    n = model.n_states
    dt = cfg.plant_step_s
    steps = int(round(cfg.duration_s / dt))
    n_rec = steps + 1
    t = np.round(np.arange(n_rec) * dt, 9)
    rng = np.random.default_rng(cfg.seed)

    # piecewise-constant load inputs, [d, q] interleaved per bus
    loads = np.tile(cfg.initial_loads.reshape(-1), (n_rec, 1))
    for ev in cfg.events.steps:
        ke = int(np.searchsorted(t, ev.time_s - 1e-12))
        loads[ke:, 2 * (ev.bus - 1)] += ev.delta_d
        loads[ke:, 2 * (ev.bus - 1) + 1] += ev.delta_q

    regulator = None
    if cfg.controller is not None:
        regulator = VoltageRegulator(cfg.controller, dt, nb)
        rho = float(np.abs(np.linalg.eigvals(closed_loop_matrix(cfg))).max())
        if rho >= 1.0:
            raise ValueError(
                f"configured controller yields an unstable closed loop "
                f"(spectral radius {rho:.6f})"
            )
        vt_fix_d = vt_fix_q = None
    else:
        vt_fix_d = cfg.fixed_terminal_voltage[:, 0].copy()
        vt_fix_q = cfg.fixed_terminal_voltage[:, 1].copy()

    if cfg.start == "zero":
        x0 = np.zeros(n)
    elif regulator is not None:
        x0, integ_d, integ_q, _ = regulated_equilibrium(
            topo, cfg.controller, cfg.initial_loads
        )
        regulator.integ_d[:] = integ_d
        regulator.integ_q[:] = integ_q
    else:
        u0 = np.concatenate([cfg.fixed_terminal_voltage.reshape(-1), loads[0]])
        x0 = np.linalg.solve(model.a, -(model.b @ u0))

    noise = cfg.noise
    f_dgu_q = _covariance_factor(noise.dgu.q)
    f_line_q = _covariance_factor(noise.line.q)
    f_dgu_r = _covariance_factor(noise.dgu.r)
    f_line_r = _covariance_factor(noise.line.r)
    f_dgu_m = _covariance_factor(noise.dgu.m)

    w = np.zeros((steps, n))
    for b in range(nb):
        w[:, 4 * b : 4 * b + 4] = rng.standard_normal((steps, 4)) @ f_dgu_q.T
    for j in range(nl):
        c0 = 4 * nb + 2 * j
        w[:, c0 : c0 + 2] = rng.standard_normal((steps, 2)) @ f_line_q.T
    have_w = bool(w.any())

    if regulator is not None:
        nominal = max(1.0, float(cfg.controller.reference.max()))
    else:
        nominal = max(
            1.0,
            float(np.abs(x0).max()),
            float(np.abs(cfg.fixed_terminal_voltage).max()),
            float(np.abs(loads).max()),
        )
    guard = 1e6 * nominal

    io_map = _output_current_map(topo)
    idx_vd, idx_vq, idx_itd, idx_itq = _bus_index_arrays(nb)
    a_d = disc.a_d
    b_d = disc.b_d
    x_true = np.empty((n_rec, n))
    u_true = np.empty((n_rec, 4 * nb))
    u_plant = np.empty(4 * nb)
    x = x0.copy()
    x_true[0] = x

    def dgu_inputs(k, xi):
        io = io_map @ xi + loads[k]
        if regulator is not None:
            vtd, vtq = regulator.step(
                xi[idx_vd], xi[idx_vq], xi[idx_itd], xi[idx_itq], io[0::2]
            )
        else:
            vtd, vtq = vt_fix_d, vt_fix_q
        u_true[k, 0::4] = vtd
        u_true[k, 1::4] = vtq
        u_true[k, 2::4] = io[0::2]
        u_true[k, 3::4] = io[1::2]
        return vtd, vtq

    for k in range(steps):
        vtd, vtq = dgu_inputs(k, x)
        u_plant[0 : 2 * nb : 2] = vtd
        u_plant[1 : 2 * nb : 2] = vtq
        u_plant[2 * nb :] = loads[k]
        x = a_d @ x + b_d @ u_plant
        if have_w:
            x = x + w[k]
        if np.abs(x).max() > guard:
            raise SimulationDivergedError(
                f"simulation diverged at t={t[k + 1]:.6f}s: "
                f"|state| exceeded 1e6 x nominal ({guard:.3e})"
            )
        x_true[k + 1] = x
    dgu_inputs(steps, x)

    z_state = x_true.copy()
    for b in range(nb):
        z_state[:, 4 * b : 4 * b + 4] += rng.standard_normal((n_rec, 4)) @ f_dgu_r.T
    for j in range(nl):
        c0 = 4 * nb + 2 * j
        z_state[:, c0 : c0 + 2] += rng.standard_normal((n_rec, 2)) @ f_line_r.T
    u_meas = u_true.copy()
    for b in range(nb):
        u_meas[:, 4 * b : 4 * b + 4] += rng.standard_normal((n_rec, 4)) @ f_dgu_m.T

    input_labels = tuple(lab for b in range(1, nb + 1) for lab in dgu_input_labels(b))
    return Trace(
        t=t,
        t_step_s=dt,
        x_true=x_true,
        z_state=z_state,
        u_true=u_true,
        u_meas=u_meas,
        state_labels=model.state_labels,
        input_labels=input_labels,
    )
