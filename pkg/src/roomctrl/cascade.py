"""Linearized plant assembly and the actuator/sensor cascade.

The linearized room model first appears in saddle-point form (velocity,
pressure, temperature) with a singular mass matrix. Two reductions to a
regular ODE pencil are provided: a penalty relaxation of the continuity
equation (cheap, slightly perturbs the dynamics, used for simulation) and a
divergence-free nullspace restriction (a discrete Leray projection, exact,
used for synthesis). The cascade couples the reduced plant with the
first-order actuator and sensor blocks, so controls enter only through the
actuator and measurements leave only through the sensor.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem


@dataclass(frozen=True)
class ActuatorSensor:
    """First-order actuator and sensor dynamics flanking the plant.

    Shapes: a_a (n_a, n_a), b_a (n_a, m), c_a (m_b, n_a) for the actuator;
    a_s (n_s, n_s), b_s (n_s, p_b), c_s (p, n_s) for the sensor.
    """
    a_a: np.ndarray
    b_a: np.ndarray
    c_a: np.ndarray
    a_s: np.ndarray
    b_s: np.ndarray
    c_s: np.ndarray

    def __post_init__(self):
        for name in ("a_a", "b_a", "c_a", "a_s", "b_s", "c_s"):
            object.__setattr__(self, name, np.atleast_2d(
                np.asarray(getattr(self, name), dtype=float)))
        n_a, n_s = self.a_a.shape[0], self.a_s.shape[0]
        if n_a == 0 or n_s == 0:
            raise ValueError("cascade wiring requires actuator and sensor "
                             "states (n_a, n_s >= 1)")
        if self.a_a.shape != (n_a, n_a) or self.a_s.shape != (n_s, n_s):
            raise ValueError("actuator/sensor state blocks must be square")
        if self.b_a.shape[0] != n_a or self.c_a.shape[1] != n_a:
            raise ValueError("actuator input/output dimensions inconsistent")
        if self.b_s.shape[0] != n_s or self.c_s.shape[1] != n_s:
            raise ValueError("sensor input/output dimensions inconsistent")

    @classmethod
    def unit_lags(cls, m_b, p_b):
        """Unit first-order lags on every channel: A = -I, B = C = I."""
        return cls(-np.eye(m_b), np.eye(m_b), np.eye(m_b),
                   -np.eye(p_b), np.eye(p_b), np.eye(p_b))

    @property
    def n_inputs(self):
        return self.b_a.shape[1]

    @property
    def n_outputs(self):
        return self.c_s.shape[0]


class DiscretePlant:
    """Finite-dimensional room model E x' = A x + B u_b + B_d u_d, y_b = C x.

    `form` is "saddle" while the pressure constraint is retained (singular
    E) and "ode" after elimination (E SPD). `layout` maps block names to
    sizes in state order.
    """

    def __init__(self, form, E, A, B, B_d, C, layout, meta=None):
        self.form = form
        self.E, self.A = E, A
        self.B, self.B_d, self.C = B, B_d, C
        self.layout = dict(layout)
        self.meta = dict(meta or {})

    @property
    def n_b(self):
        return self.A.shape[0]

    def transfer(self, s):
        """Input-to-measurement transfer matrix C (sE - A)^-1 B at s."""
        return transfer_function(self.E, self.A, self.B, self.C, s)


def _pad_pressure_rows(mat, n_velocity, n_pressure):
    """Insert zero pressure rows between velocity and temperature rows."""
    arr = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
    top, bottom = arr[:n_velocity], arr[n_velocity:]
    return np.vstack([top, np.zeros((n_pressure, arr.shape[1])), bottom])


def linearize(mesh, spaces, params, steady_state, shapes, observations):
    """Saddle-point DiscretePlant linearized at a steady state.

    Momentum rows carry -(A_v + N_v) with pressure-gradient and buoyancy
    couplings, the continuity rows hold the divergence constraint, and the
    energy rows carry -(A_th + N_th) with the steady-temperature transport
    coupling back to velocity.
    """
    forms = fem.assemble_forms(mesh, spaces, params,
                               steady_state.as_linearization_point())
    nv, npr, nt = spaces.n_velocity, spaces.n_pressure, spaces.n_temperature
    a = sp.bmat([
        [-(forms.Av + forms.Nv), forms.D.T, forms.B0],
        [forms.D, None, None],
        [-forms.Nthv, None, -(forms.Ath + forms.Nthth)],
    ], format="csr")
    e = sp.block_diag([forms.Mv, sp.csr_matrix((npr, npr)), forms.Mth],
                      format="csr")
    b_b, b_bd = fem.assemble_boundary_inputs(mesh, spaces, shapes)
    c_b = fem.assemble_observations(mesh, spaces, observations)
    b = sp.csr_matrix(_pad_pressure_rows(b_b, nv, npr))
    b_d = sp.csr_matrix(_pad_pressure_rows(b_bd, nv, npr))
    c = sp.csr_matrix(_pad_pressure_rows(c_b.T, nv, npr).T)
    layout = {"velocity": nv, "pressure": npr, "temperature": nt}
    return DiscretePlant("saddle", e, a, b, b_d, c, layout,
                         meta={"forms": forms})


def eliminate_pressure(plant, method="penalty", eps_p=1e-5):
    """Reduce the saddle-point plant to a regular ODE pencil.

    penalty: relaxes continuity to D v + eps_p M_p p = 0 and substitutes
    the pressure, adding the stabilizing term -(1/eps_p) D' M_p^-1 D to the
    velocity block. nullspace: restricts velocity to an orthonormal basis
    of ker(D) (discrete Leray projection) by congruence; exact but dense.
    """
    if plant.form != "saddle":
        raise ValueError("pressure already eliminated")
    nv = plant.layout["velocity"]
    npr = plant.layout["pressure"]
    nt = plant.layout["temperature"]
    forms = plant.meta["forms"]
    a = plant.A.tocsr()
    avv = a[:nv, :nv]
    avt = a[:nv, nv + npr:]
    atv = a[nv + npr:, :nv]
    att = a[nv + npr:, nv + npr:]
    d = forms.D.tocsr()

    def rows(mat, sl):
        return (mat.toarray() if sp.issparse(mat) else np.asarray(mat))[sl]

    b_v, b_t = rows(plant.B, slice(0, nv)), rows(plant.B, slice(nv + npr, None))
    bd_v = rows(plant.B_d, slice(0, nv))
    bd_t = rows(plant.B_d, slice(nv + npr, None))
    c_v = rows(plant.C.T, slice(0, nv)).T
    c_t = rows(plant.C.T, slice(nv + npr, None)).T

    if method == "penalty":
        if eps_p <= 0:
            raise ValueError("penalty parameter must be positive")
        # pressure = -(1/eps_p) Mp^-1 D v; momentum D'p term becomes the
        # dense stabilization block
        mp_solve = spla.splu(forms.Mp.tocsc())
        stab = d.T.toarray() @ mp_solve.solve(d.toarray())
        a_ode = sp.bmat([
            [avv - sp.csr_matrix(stab / eps_p), avt],
            [atv, att]], format="csr")
        e_ode = sp.block_diag([forms.Mv, forms.Mth], format="csr")
        layout = {"velocity": nv, "temperature": nt}
        meta = {"forms": forms, "method": "penalty", "eps_p": eps_p}
        return DiscretePlant("ode", e_ode, a_ode,
                             sp.csr_matrix(np.vstack([b_v, b_t])),
                             sp.csr_matrix(np.vstack([bd_v, bd_t])),
                             sp.csr_matrix(np.hstack([c_v, c_t])),
                             layout, meta)

    if method == "nullspace":
        dd = d.toarray()
        u, svals, vt = np.linalg.svd(dd, full_matrices=True)
        tol = max(dd.shape) * np.finfo(float).eps * svals[0]
        rank = int((svals > tol).sum())
        if rank < dd.shape[0]:
            raise ValueError("divergence block is rank deficient, no "
                             "well-defined pressure elimination")
        w = vt[rank:].T  # orthonormal basis of ker(D)
        nz = w.shape[1]
        a_ode = np.block([
            [w.T @ (avv @ w), w.T @ avt.toarray()],
            [atv.toarray() @ w, att.toarray()]])
        e_ode = np.block([
            [w.T @ (forms.Mv @ w), np.zeros((nz, nt))],
            [np.zeros((nt, nz)), forms.Mth.toarray()]])
        layout = {"velocity": nz, "temperature": nt}
        meta = {"forms": forms, "method": "nullspace", "basis": w}
        return DiscretePlant("ode", e_ode, a_ode,
                             np.vstack([w.T @ b_v, b_t]),
                             np.vstack([w.T @ bd_v, bd_t]),
                             np.hstack([c_v @ w, c_t]),
                             layout, meta)

    raise ValueError(f"unknown pressure elimination method {method!r}")


class CascadeSystem:
    """Plant + actuator + sensor in one generalized state-space model.

    State order (x_b, x_a, x_s); E = diag(E_b, I, I); the control enters
    the actuator block only and the measurement reads the sensor block only.
    """

    def __init__(self, E, A, B, B_d, C, offsets, plant, actsens):
        self.E, self.A = E, A
        self.B, self.B_d, self.C = B, B_d, C
        self.offsets = dict(offsets)
        self.plant = plant
        self.actsens = actsens

    @property
    def dim(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_outputs(self):
        return self.C.shape[0]

    def transfer(self, s):
        return transfer_function(self.E, self.A, self.B, self.C, s)


def couple_cascade(plant, actsens):
    """Wire an ODE-form plant between actuator and sensor blocks."""
    if plant.form != "ode":
        raise ValueError("couple_cascade needs an ODE-form plant; eliminate "
                         "the pressure first")
    n_b = plant.n_b
    n_a, n_s = actsens.a_a.shape[0], actsens.a_s.shape[0]
    b_b = plant.B.toarray() if sp.issparse(plant.B) else plant.B
    b_d = plant.B_d.toarray() if sp.issparse(plant.B_d) else plant.B_d
    c_b = plant.C.toarray() if sp.issparse(plant.C) else plant.C
    if actsens.c_a.shape[0] != b_b.shape[1]:
        raise ValueError("actuator output count does not match the plant "
                         "input count")
    if actsens.b_s.shape[1] != c_b.shape[0]:
        raise ValueError("sensor input count does not match the plant "
                         "output count")

    dense_plant = isinstance(plant.A, np.ndarray)
    if dense_plant:
        a_b, e_b = plant.A, plant.E
        a = np.zeros((n_b + n_a + n_s, n_b + n_a + n_s))
        a[:n_b, :n_b] = a_b
        a[:n_b, n_b:n_b + n_a] = b_b @ actsens.c_a
        a[n_b:n_b + n_a, n_b:n_b + n_a] = actsens.a_a
        a[n_b + n_a:, :n_b] = actsens.b_s @ c_b
        a[n_b + n_a:, n_b + n_a:] = actsens.a_s
        e = np.zeros_like(a)
        e[:n_b, :n_b] = e_b
        e[n_b:, n_b:] = np.eye(n_a + n_s)
    else:
        a = sp.bmat([
            [plant.A, sp.csr_matrix(b_b @ actsens.c_a), None],
            [None, sp.csr_matrix(actsens.a_a), None],
            [sp.csr_matrix(actsens.b_s @ c_b), None,
             sp.csr_matrix(actsens.a_s)],
        ], format="csr")
        e = sp.block_diag([plant.E, sp.identity(n_a + n_s, format="csr")],
                          format="csr")

    m, p_out = actsens.n_inputs, actsens.n_outputs
    b = np.zeros((n_b + n_a + n_s, m))
    b[n_b:n_b + n_a] = actsens.b_a
    bd = np.zeros((n_b + n_a + n_s, b_d.shape[1]))
    bd[:n_b] = b_d
    c = np.zeros((p_out, n_b + n_a + n_s))
    c[:, n_b + n_a:] = actsens.c_s
    offsets = {"plant": 0, "actuator": n_b, "sensor": n_b + n_a,
               "n_b": n_b, "n_a": n_a, "n_s": n_s}
    return CascadeSystem(e, a, b, bd, c, offsets, plant, actsens)


def transfer_function(E, A, B, C, s):
    """Dense evaluation of C (sE - A)^-1 B at one complex point."""
    e = E.toarray() if sp.issparse(E) else np.asarray(E)
    a = A.toarray() if sp.issparse(A) else np.asarray(A)
    b = B.toarray() if sp.issparse(B) else np.asarray(B)
    c = C.toarray() if sp.issparse(C) else np.asarray(C)
    return c @ np.linalg.solve(s * e - a, b)


def static_transfer(a, b, c, s):
    """C (sI - A)^-1 B for an ordinary state-space block."""
    a = np.atleast_2d(a)
    return c @ np.linalg.solve(s * np.eye(a.shape[0]) - a, b)


def export_cascade(system, directory):
    """Write E, A, B, B_d, C as Matrix Market files plus a JSON manifest."""
    import json
    import os

    import scipy.io as sio

    os.makedirs(directory, exist_ok=True)
    names = {"E": system.E, "A": system.A, "B": system.B,
             "B_d": system.B_d, "C": system.C}
    for name, mat in names.items():
        target = os.path.join(directory, f"{name}.mtx")
        sio.mmwrite(target, sp.coo_matrix(mat))
    manifest = {
        "dim": system.dim,
        "n_inputs": system.n_inputs,
        "n_outputs": system.n_outputs,
        "offsets": system.offsets,
        "plant_layout": system.plant.layout,
        "plant_method": system.plant.meta.get("method"),
        "files": {name: f"{name}.mtx" for name in names},
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest
