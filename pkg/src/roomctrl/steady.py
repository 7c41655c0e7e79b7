"""Steady states of the nonlinear Boussinesq room model.

Newton's method on the stationary weak form in saddle-point variables
(velocity, pressure, temperature). The Jacobian reuses the linearized
convection blocks of :mod:`roomctrl.fem`, so the iteration is exact-Newton
and converges quadratically near a root. Steady fields are stored on the
full P2 dof set with zeros on the eliminated Dirichlet dofs, which is the
boundary condition they satisfy.

The buoyant regime of the reference room needs a continuation step: the
solve first converges a reduced-amplitude forcing pair from the zero state
and then restarts from that solution with the production forcing. Both
states are returned since the deviation of the intermediate state from the
final one serves as the simulation's initial condition.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem


class NewtonDivergenceError(RuntimeError):
    """Newton failed to reach the tolerance within the iteration budget."""

    def __init__(self, message, history):
        super().__init__(f"{message}; residual history {history}")
        self.history = list(history)


@dataclass(frozen=True)
class ForcingFields:
    """Body force and heat source of the stationary problem.

    Each entry is an Expression or callable of coordinate arrays. The
    optional `initial_*` triple defines the continuation stage solved first
    from the zero state; leave it None to run plain Newton.
    """
    heat_source: object
    body_force_x: object
    body_force_y: object
    initial_heat_source: object = None
    initial_body_force_x: object = None
    initial_body_force_y: object = None

    def has_continuation_stage(self):
        stage = (self.initial_heat_source, self.initial_body_force_x,
                 self.initial_body_force_y)
        if all(f is None for f in stage):
            return False
        if any(f is None for f in stage):
            raise ValueError("continuation forcing must set all three fields")
        return True

    def initial_stage(self):
        return ForcingFields(self.initial_heat_source,
                             self.initial_body_force_x,
                             self.initial_body_force_y)


class SteadyState:
    """Converged stationary fields on the full P2/P1 dof sets."""

    def __init__(self, velocity, pressure, temperature, residual_norm,
                 residual_history):
        self.velocity = np.asarray(velocity)
        self.pressure = np.asarray(pressure)
        self.temperature = np.asarray(temperature)
        self.residual_norm = float(residual_norm)
        self.residual_history = list(residual_history)

    def as_linearization_point(self):
        """(velocity, temperature) pair accepted by assemble_forms."""
        return self.velocity, self.temperature


def _assemble_loads(mesh, spaces, forcing, data):
    fx = fem.assemble_domain_load(mesh, forcing.body_force_x, data)
    fy = fem.assemble_domain_load(mesh, forcing.body_force_y, data)
    ft = fem.assemble_domain_load(mesh, forcing.heat_source, data)
    sv = spaces.select_velocity
    return np.concatenate([sv @ fx, sv @ fy]), spaces.select_temperature @ ft


def _pack(spaces, state):
    sv2, st = spaces.select_velocity2, spaces.select_temperature
    v = sv2 @ np.concatenate([state.velocity[0], state.velocity[1]])
    return np.concatenate([v, state.pressure, st @ state.temperature])


def _unpack(spaces, x):
    nv, npr = spaces.n_velocity, spaces.n_pressure
    vel = spaces.expand_velocity(x[:nv])
    temp = spaces.expand_temperature(x[nv + npr:])
    return vel, x[nv:nv + npr], temp


def nonlinear_residual(mesh, spaces, params, forcing, state, data=None):
    """Weak-form residual of the stationary equations at a SteadyState.

    Block order: momentum, continuity, energy. Zero boundary control; the
    Robin terms sit inside the A_v, A_theta blocks.
    """
    data = data if data is not None else fem.p2_element_data(mesh)
    forms = fem.assemble_forms(mesh, spaces, params,
                               linearization_point=state.as_linearization_point())
    load_v, load_t = _assemble_loads(mesh, spaces, forcing, data)
    return _residual_from_forms(mesh, spaces, forms, load_v, load_t,
                                _pack(spaces, state), data)


def _residual_from_forms(mesh, spaces, forms, load_v, load_t, x, data):
    nv, npr = spaces.n_velocity, spaces.n_pressure
    v, p, t = x[:nv], x[nv:nv + npr], x[nv + npr:]
    vel, temp = _unpack(spaces, x)[0], _unpack(spaces, x)[2]
    transport = fem.assemble_transport(mesh, vel[0], vel[1], data)
    sv2, st = spaces.select_velocity2, spaces.select_temperature
    conv_v = sv2 @ np.concatenate([transport @ vel[0], transport @ vel[1]])
    conv_t = st @ (transport @ temp)
    r_mom = forms.Av @ v + conv_v - forms.D.T @ p - forms.B0 @ t - load_v
    r_div = forms.D @ v
    r_energy = forms.Ath @ t + conv_t - load_t
    return np.concatenate([r_mom, r_div, r_energy])


def newton_solve(mesh, spaces, params, forcing, initial_guess=None, tol=1e-10,
                 max_iter=25):
    """Exact-Newton iteration for one forcing pair.

    Returns a SteadyState whose residual_history holds the residual norm
    before every Newton update plus the final accepted one. Raises
    NewtonDivergenceError when the budget runs out.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    data = fem.p2_element_data(mesh)
    load_v, load_t = _assemble_loads(mesh, spaces, forcing, data)
    nv, npr, nt = spaces.n_velocity, spaces.n_pressure, spaces.n_temperature

    if initial_guess is None:
        x = np.zeros(nv + npr + nt)
    else:
        x = _pack(spaces, initial_guess)

    history = []
    for _ in range(max_iter + 1):
        vel, _, temp = _unpack(spaces, x)
        forms = fem.assemble_forms(mesh, spaces, params,
                                   linearization_point=(vel, temp))
        res = _residual_from_forms(mesh, spaces, forms, load_v, load_t, x, data)
        history.append(float(np.linalg.norm(res)))
        if history[-1] < tol:
            vel, p, temp = _unpack(spaces, x)
            return SteadyState(vel, p, temp, history[-1], history)
        if len(history) > max_iter:
            break
        jac = sp.bmat([
            [forms.Av + forms.Nv, -forms.D.T, -forms.B0],
            [forms.D, None, None],
            [forms.Nthv, None, forms.Ath + forms.Nthth],
        ], format="csc")
        try:
            step = spla.splu(jac).solve(res)
        except RuntimeError as err:
            raise NewtonDivergenceError(
                f"singular Jacobian in Newton step {len(history)}: {err}",
                history) from err
        x = x - step
    raise NewtonDivergenceError(
        f"no convergence to {tol:g} within {max_iter} iterations", history)


def solve_with_continuation(mesh, spaces, params, forcing, tol=1e-10,
                            max_iter=25):
    """Two-stage steady solve.

    Stage one converges the reduced forcing from zero; stage two restarts
    from that state with the production forcing. The iteration budget is
    shared. Returns (intermediate, final); without a continuation stage the
    intermediate is None.
    """
    if not forcing.has_continuation_stage():
        return None, newton_solve(mesh, spaces, params, forcing, None, tol,
                                  max_iter)
    first = newton_solve(mesh, spaces, params, forcing.initial_stage(), None,
                         tol, max_iter)
    used = len(first.residual_history) - 1
    final = newton_solve(mesh, spaces, params, forcing, first, tol,
                         max_iter - used)
    return first, final


def save_steady_state(path, state, mesh):
    """Write the dof vectors to CSV, keyed by the producing mesh's hash."""
    with open(path, "w") as fh:
        fh.write(f"# mesh_hash={mesh.content_hash()}\n")
        fh.write(f"# residual_norm={state.residual_norm:.17g}\n")
        fh.write("field,index,value\n")
        for name, vec in (("vx", state.velocity[0]), ("vy", state.velocity[1]),
                          ("pressure", state.pressure),
                          ("temperature", state.temperature)):
            for i, val in enumerate(vec):
                fh.write(f"{name},{i},{val:.17g}\n")


def load_steady_state(path, mesh):
    """Read a saved steady state; refuses a file from a different mesh."""
    fields = {"vx": {}, "vy": {}, "pressure": {}, "temperature": {}}
    residual_norm = np.nan
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# mesh_hash="):
                stored = line.split("=", 1)[1]
                if stored != mesh.content_hash():
                    raise ValueError("steady state file belongs to a "
                                     "different mesh")
            elif line.startswith("# residual_norm="):
                residual_norm = float(line.split("=", 1)[1])
            elif not line or line.startswith("field,"):
                continue
            else:
                name, idx, val = line.split(",")
                fields[name][int(idx)] = float(val)

    def to_vec(d):
        vec = np.empty(len(d))
        for i, val in d.items():
            vec[i] = val
        return vec

    velocity = np.vstack([to_vec(fields["vx"]), to_vec(fields["vy"])])
    return SteadyState(velocity, to_vec(fields["pressure"]),
                       to_vec(fields["temperature"]), residual_norm,
                       [residual_norm])
