"""Closed-loop assembly, exogenous signals, and time integration.

The controller is wired to the cascade plant through the tracking error,
yielding one linear time-invariant descriptor system driven by the
disturbance and the reference. Integration is trapezoidal with a fixed
step: the shifted operator is factored once and reused, which keeps long
horizons cheap even at fine mesh resolution.
"""

import warnings

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial import polynomial as npoly


class ExogenousSignals:
    """Reference and disturbance signals as polynomial-coefficient sums
    of sinusoids over the tracked frequencies.

    Parameters
    ----------
    spec : SignalSpec
        The frequency class the internal model replicates.
    reference : list of list of tuple
        Per output channel, terms (frequency, cos_coeffs, sin_coeffs);
        coefficient lists are polynomial coefficients from degree zero
        up, and the zero frequency uses only the cosine slot.
    disturbance : list of list of tuple
        Same structure for each disturbance channel.
    """

    def __init__(self, spec, reference, disturbance):
        self.spec = spec
        self.reference = [self._normalize(ch, "reference") for ch in reference]
        self.disturbance = [self._normalize(ch, "disturbance")
                            for ch in disturbance]
        if len(self.reference) != spec.n_outputs:
            raise ValueError("reference must have one channel per output")

    def _normalize(self, terms, kind):
        out = []
        for freq, cos_coeffs, sin_coeffs in terms:
            freq = float(freq)
            matches = [(w, n) for w, n in zip(self.spec.frequencies,
                                              self.spec.orders)
                       if abs(w - freq) <= 1e-12]
            if not matches:
                raise ValueError(
                    "%s term frequency %g is outside the tracked set %s"
                    % (kind, freq, list(self.spec.frequencies)))
            order = matches[0][1]
            cos_coeffs = tuple(float(v) for v in np.atleast_1d(cos_coeffs)) \
                if cos_coeffs is not None else ()
            sin_coeffs = tuple(float(v) for v in np.atleast_1d(sin_coeffs)) \
                if sin_coeffs is not None else ()
            if max(len(cos_coeffs), len(sin_coeffs)) > order:
                raise ValueError(
                    "%s term at frequency %g has polynomial degree %d, the "
                    "signal class allows at most %d"
                    % (kind, freq, max(len(cos_coeffs), len(sin_coeffs)) - 1,
                       order - 1))
            out.append((freq, cos_coeffs, sin_coeffs))
        return out

    @property
    def n_disturbances(self):
        return len(self.disturbance)

    @staticmethod
    def _eval_channel(terms, t):
        total = np.zeros_like(np.asarray(t, dtype=float))
        for freq, cos_coeffs, sin_coeffs in terms:
            if cos_coeffs:
                total = total + npoly.polyval(t, cos_coeffs) * np.cos(freq * np.asarray(t))
            if sin_coeffs:
                total = total + npoly.polyval(t, sin_coeffs) * np.sin(freq * np.asarray(t))
        return total

    def evaluate(self, t):
        """Reference and disturbance at time(s) t, shaped (channels,) for
        scalar t and (channels, len(t)) for arrays."""
        t_arr = np.asarray(t, dtype=float)
        y_ref = np.array([self._eval_channel(ch, t_arr)
                          for ch in self.reference])
        if self.disturbance:
            u_d = np.array([self._eval_channel(ch, t_arr)
                            for ch in self.disturbance])
        else:
            u_d = np.zeros((0,) + t_arr.shape)
        return y_ref, u_d


def evaluate_signals(signals, t):
    """Closed-form evaluation of (y_ref(t), u_d(t))."""
    return signals.evaluate(t)


class ClosedLoopSystem:
    """Descriptor system E_e x' = A_e x + B_e w, y = C_e x, e = C_e x + D_e w
    over the stacked state (plant, controller) and input w = (u_d, y_ref)."""

    def __init__(self, e, a, b, c, d, n_plant, n_controller, system=None,
                 controller=None):
        self.E, self.A, self.B = e, a, b
        self.C, self.D = c, d
        self.n_plant = n_plant
        self.n_controller = n_controller
        self.system = system
        self.controller = controller

    @property
    def dim(self):
        return self.n_plant + self.n_controller


def assemble_closed_loop(system, ctrl):
    """Couple a cascade plant with an error-feedback controller.

    Block layout: the plant keeps its mass matrix and receives B K z; the
    controller integrates G1c z + G2c (C x - y_ref). The exogenous input
    stacks the disturbance over the reference.
    """
    b = system.B
    c = system.C
    b_d = system.B_d
    m = b.shape[1]
    p = c.shape[0]
    if ctrl.n_inputs != m:
        raise ValueError("controller produces %d inputs, plant takes %d"
                         % (ctrl.n_inputs, m))
    if ctrl.n_outputs != p:
        raise ValueError("controller consumes %d outputs, plant emits %d"
                         % (ctrl.n_outputs, p))
    n = system.A.shape[0]
    z = ctrl.dim
    n_d = b_d.shape[1]
    sparse_plant = sp.issparse(system.A) or sp.issparse(system.E)
    if sparse_plant:
        a_e = sp.bmat([[system.A, sp.csr_matrix(_to_dense(b) @ ctrl.k)],
                       [sp.csr_matrix(ctrl.g2 @ _to_dense(c)), sp.csr_matrix(ctrl.g1)]],
                      format="csr")
        e_e = sp.block_diag([system.E, sp.identity(z)], format="csr")
        b_e = sp.bmat([[system.B_d, sp.csr_matrix((n, p))],
                       [sp.csr_matrix((z, n_d)), sp.csr_matrix(-ctrl.g2)]],
                      format="csr")
    else:
        a_e = np.block([[_to_dense(system.A), _to_dense(b) @ ctrl.k],
                        [ctrl.g2 @ _to_dense(c), ctrl.g1]])
        e_e = la.block_diag(_to_dense(system.E), np.eye(z))
        b_e = np.block([[_to_dense(b_d), np.zeros((n, p))],
                        [np.zeros((z, n_d)), -ctrl.g2]])
    c_e = np.hstack([_to_dense(c), np.zeros((p, z))])
    d_e = np.hstack([np.zeros((p, n_d)), -np.eye(p)])
    return ClosedLoopSystem(e_e, a_e, b_e, c_e, d_e, n, z,
                            system=system, controller=ctrl)


def _to_dense(mat):
    return mat.toarray() if sp.issparse(mat) else np.asarray(mat)


class ClosedLoopTrajectory:
    """Sampled closed-loop run: outputs, reference, error, controls."""

    def __init__(self, t, y, y_ref, error, control, boundary_input,
                 snapshots=None, meta=None):
        self.t = t
        self.y = y
        self.y_ref = y_ref
        self.error = error
        self.control = control
        self.boundary_input = boundary_input
        self.snapshots = dict(snapshots or {})
        self.meta = dict(meta or {})


def integrate(closed_loop, signals, x0, t_end, dt, snapshot_times=()):
    """Trapezoidal integration of the closed loop on [0, t_end].

    The shifted operator E - dt/2 A is factored once. Snapshots of the
    plant-state block are stored at the grid points nearest the
    requested times.

    Raises
    ------
    RuntimeError
        If the step operator is singular or the state leaves finite
        range, reporting the step index.
    """
    if dt <= 0:
        raise ValueError("time step must be positive")
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != closed_loop.dim:
        raise ValueError("initial state has dimension %d, closed loop has %d"
                         % (x0.size, closed_loop.dim))
    n_steps = int(round(t_end / dt))
    t = dt * np.arange(n_steps + 1)
    e_mat, a_mat, b_mat = closed_loop.E, closed_loop.A, closed_loop.B
    sparse_path = sp.issparse(a_mat)
    if sparse_path:
        minus = (sp.csc_matrix(e_mat) - 0.5 * dt * sp.csc_matrix(a_mat))
        plus = (sp.csr_matrix(e_mat) + 0.5 * dt * sp.csr_matrix(a_mat))
        try:
            solver = spla.splu(minus)
        except RuntimeError as exc:
            raise RuntimeError("time-step operator is singular: %s" % exc) from exc
        step_solve = solver.solve
        apply_plus = plus.dot
    else:
        minus = np.asarray(e_mat) - 0.5 * dt * np.asarray(a_mat)
        plus = np.asarray(e_mat) + 0.5 * dt * np.asarray(a_mat)
        with warnings.catch_warnings():
            # the explicit diagonal check below covers the singular case
            warnings.simplefilter("ignore", la.LinAlgWarning)
            lu, piv = la.lu_factor(minus, check_finite=False)
        if np.any(np.abs(np.diag(lu)) == 0.0):
            raise RuntimeError("time-step operator is singular")
        # finiteness is checked once per step after the solve instead
        step_solve = lambda rhs: la.lu_solve((lu, piv), rhs,
                                             check_finite=False)
        apply_plus = lambda vec: plus @ vec

    y_ref_all, u_d_all = signals.evaluate(t)
    if u_d_all.shape[0] != b_mat.shape[1] - y_ref_all.shape[0]:
        raise ValueError("disturbance channel count does not match the "
                         "closed-loop input block")
    w_all = np.vstack([u_d_all, y_ref_all])

    snap_index = {}
    for want in snapshot_times:
        idx = int(np.clip(round(want / dt), 0, n_steps))
        snap_index[idx] = float(t[idx])

    c_e, d_e = closed_loop.C, closed_loop.D
    n_out = c_e.shape[0]
    y = np.empty((n_steps + 1, n_out))
    error = np.empty((n_steps + 1, n_out))
    ctrl = closed_loop.controller
    system = closed_loop.system
    k_mat = ctrl.k if ctrl is not None else None
    control = np.empty((n_steps + 1, k_mat.shape[0])) if k_mat is not None else None
    c_a = getattr(getattr(system, "actsens", None), "c_a", None)
    offsets = getattr(system, "offsets", None)
    boundary = np.empty((n_steps + 1, c_a.shape[0])) if c_a is not None else None
    snapshots = {}

    x = x0.copy()
    n_plant = closed_loop.n_plant
    for step in range(n_steps + 1):
        y[step] = c_e @ x
        error[step] = y[step] + d_e @ w_all[:, step]
        if control is not None:
            control[step] = k_mat @ x[n_plant:]
        if boundary is not None:
            lo, hi = offsets["n_b"], offsets["n_b"] + offsets["n_a"]
            boundary[step] = c_a @ x[lo:hi]
        if step in snap_index:
            snapshots[snap_index[step]] = x[:n_plant].copy()
        if step == n_steps:
            break
        rhs = apply_plus(x) + 0.5 * dt * (b_mat @ (w_all[:, step]
                                                   + w_all[:, step + 1]))
        x = step_solve(rhs)
        if not np.all(np.isfinite(x)):
            raise RuntimeError("state lost finiteness at step %d (t=%.4f)"
                               % (step + 1, t[step + 1]))
    return ClosedLoopTrajectory(t, y, y_ref_all.T, error, control, boundary,
                                snapshots=snapshots,
                                meta={"method": "trapezoidal", "dt": dt,
                                      "t_end": float(t[-1])})


def plant_deviation_state(spaces, state, target):
    """Free-dof deviation between two flow states in physical plant layout.

    Returns the stacked (velocity, temperature) free-dof vector of
    state - target, suitable as the plant block of an initial condition
    for the pressure-eliminated model."""
    dv = np.asarray(state.velocity) - np.asarray(target.velocity)
    dth = np.asarray(state.temperature) - np.asarray(target.temperature)
    v_free = np.concatenate([dv[0, spaces.velocity_free],
                             dv[1, spaces.velocity_free]])
    return np.concatenate([v_free, dth[spaces.temperature_free]])


def error_metrics(traj, window):
    """Per-channel sup and RMS of the tracking error over a window."""
    t_a, t_b = window
    mask = (traj.t >= t_a - 1e-12) & (traj.t <= t_b + 1e-12)
    if not np.any(mask):
        raise ValueError("window [%g, %g] contains no samples" % (t_a, t_b))
    err = traj.error[mask]
    sup = np.max(np.abs(err), axis=0)
    rms = np.sqrt(np.mean(err ** 2, axis=0))
    return sup, rms


def envelope_rate(traj, window):
    """Least-squares decay rate of log ||e(t)|| over a window; negative
    values certify exponential-looking convergence."""
    t_a, t_b = window
    mask = (traj.t >= t_a - 1e-12) & (traj.t <= t_b + 1e-12)
    if not np.any(mask):
        raise ValueError("window [%g, %g] contains no samples" % (t_a, t_b))
    norms = np.linalg.norm(traj.error[mask], axis=1)
    log_norm = np.log(np.maximum(norms, 1e-300))
    coeffs = np.polynomial.polynomial.polyfit(traj.t[mask], log_norm, 1)
    return float(coeffs[1])


def write_trajectory(traj, path):
    """Write the sampled run as a flat CSV table.

    Columns: t, outputs, references, errors, controls, boundary inputs;
    one row per time sample, gnuplot-friendly."""
    blocks = [("y", traj.y), ("y_ref", traj.y_ref), ("e", traj.error)]
    if traj.control is not None:
        blocks.append(("u", traj.control))
    if traj.boundary_input is not None:
        blocks.append(("u_b", traj.boundary_input))
    header = ["t"]
    for name, arr in blocks:
        header.extend("%s_%d" % (name, j + 1) for j in range(arr.shape[1]))
    table = np.column_stack([traj.t] + [arr for _, arr in blocks])
    np.savetxt(path, table, delimiter=",", header=",".join(header),
               comments="")
    return path


def write_snapshots(traj, spaces, directory, prefix="state"):
    """Write stored plant-state snapshots as per-field CSV files.

    Each snapshot becomes one file with rows (field, index, value) where
    field is vx, vy, or temperature in free-dof plant layout expanded to
    mesh vertices via the space selectors."""
    import pathlib
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for when, state in sorted(traj.snapshots.items()):
        n_v = spaces.n_velocity
        vel = spaces.expand_velocity(state[:n_v])
        temp = spaces.expand_temperature(state[n_v:n_v + spaces.n_temperature])
        path = directory / ("%s_t%07.3f.csv" % (prefix, when))
        with open(path, "w") as fh:
            fh.write("field,index,value\n")
            for name, values in (("vx", vel[0]), ("vy", vel[1]),
                                 ("temperature", temp)):
                for idx, val in enumerate(values):
                    fh.write("%s,%d,%.16e\n" % (name, idx, val))
        written.append(path)
    return written
