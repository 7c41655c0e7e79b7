"""Taylor-Hood finite element assembly for the room flow model.

Velocity components and temperature live in continuous piecewise quadratic
(P2) spaces, pressure in piecewise linears (P1) on the same triangulation.
Wall boundary dofs are eliminated from the velocity space (no-slip covers
the heater patch too) and wall-minus-heater dofs from the temperature
space, so every assembled operator acts on free dofs only and the mass
matrices stay symmetric positive definite.

The viscous operator uses the strain-rate (symmetric gradient) form

    a_v(v, psi) = (2/Re) <eps(v), eps(psi)> + alpha_v <v, psi>_inlet

rather than the component Laplacian; the two differ by boundary terms and
only the strain form is compatible with the zero-stress outflow condition.
Velocity coefficient vectors are stored component-stacked: first every free
x-component dof, then every free y-component dof.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .quadrature import edge_rule, triangle_rule


@dataclass(frozen=True)
class PhysicalParams:
    """Nondimensional flow parameters and Robin coefficients."""
    reynolds: float = 100.0
    grashof: float = 100.0 ** 2 / 0.9
    prandtl: float = 0.7
    alpha_v: float = 1.0
    alpha_theta: float = 1.0

    def __post_init__(self):
        if self.reynolds <= 0 or self.prandtl <= 0:
            raise ValueError("Reynolds and Prandtl numbers must be positive")
        if self.alpha_v < 0 or self.alpha_theta < 0:
            raise ValueError("Robin coefficients must be nonnegative")

    @property
    def buoyancy(self):
        """Coefficient Gr/Re^2 multiplying temperature in the momentum row."""
        return self.grashof / self.reynolds ** 2


# ---------------------------------------------------------------------------
# reference element data

def _p2_reference(points):
    """P2 basis values and reference gradients at (nq, 2) points.

    Local dof order: vertices 0,1,2 then midpoints of edges (0,1), (1,2),
    (2,0).
    """
    x, y = points[:, 0], points[:, 1]
    lam = np.stack([1.0 - x - y, x, y])
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    vals = np.stack([
        lam[0] * (2 * lam[0] - 1), lam[1] * (2 * lam[1] - 1),
        lam[2] * (2 * lam[2] - 1),
        4 * lam[0] * lam[1], 4 * lam[1] * lam[2], 4 * lam[2] * lam[0]])
    nq = len(x)
    grads = np.zeros((6, nq, 2))
    for a in range(3):
        grads[a] = (4 * lam[a] - 1)[:, None] * dlam[a]
    for k, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
        grads[3 + k] = 4 * (lam[a][:, None] * dlam[b] + lam[b][:, None] * dlam[a])
    return vals, grads


def _p1_reference(points):
    x, y = points[:, 0], points[:, 1]
    return np.stack([1.0 - x - y, x, y])


def p2_dof_count(mesh):
    return mesh.num_vertices + mesh.num_edges


def p2_local_to_global(mesh):
    """(nt, 6) global dof indices per triangle: 3 vertices, 3 edge midpoints."""
    return np.hstack([mesh.triangles, mesh.num_vertices + mesh.tri_edges])


def p2_dof_coordinates(mesh):
    """Coordinates of every scalar P2 dof (vertices, then edge midpoints)."""
    mids = mesh.vertices[mesh.edges].mean(axis=1)
    return np.vstack([mesh.vertices, mids])


def p2_element_data(mesh):
    """Geometric quantities used by every domain assembly loop.

    Returns
    -------
    l2g : (nt, 6) int
        Local-to-global P2 dof map.
    xq : (nt, nq, 2)
        Physical quadrature point coordinates.
    wdet : (nt, nq)
        Quadrature weight times Jacobian determinant; summing an integrand
        sampled at `xq` against `wdet` integrates over the domain.
    vals : (6, nq)
        P2 basis values at the reference points.
    grads : (nt, 6, nq, 2)
        Physical basis gradients.
    """
    pts, w = triangle_rule()
    vals, gref = _p2_reference(pts)
    p = mesh.vertices[mesh.triangles]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv_t = np.empty_like(jac)  # inverse transpose of the Jacobian
    inv_t[:, 0, 0] = jac[:, 1, 1]
    inv_t[:, 0, 1] = -jac[:, 1, 0]
    inv_t[:, 1, 0] = -jac[:, 0, 1]
    inv_t[:, 1, 1] = jac[:, 0, 0]
    inv_t /= det[:, None, None]
    grads = np.einsum("tab,iqb->tiqa", inv_t, gref)
    xq = np.einsum("tab,qb->tqa", jac, pts) + p[:, None, 0, :]
    wdet = w[None, :] * det[:, None]
    return p2_local_to_global(mesh), xq, wdet, vals, grads


def _scatter(element_mats, row_dofs, col_dofs, shape):
    nt, ni, nj = element_mats.shape
    rows = np.broadcast_to(row_dofs[:, :, None], (nt, ni, nj))
    cols = np.broadcast_to(col_dofs[:, None, :], (nt, ni, nj))
    mat = sp.coo_matrix((element_mats.ravel(), (rows.ravel(), cols.ravel())),
                        shape=shape)
    return mat.tocsr()


def evaluate_p2(mesh, coef, data=None):
    """Values of a P2 coefficient field at the triangle quadrature points."""
    l2g, _, _, vals, _ = data if data is not None else p2_element_data(mesh)
    return np.einsum("ti,iq->tq", np.asarray(coef)[l2g], vals)


def evaluate_p2_gradient(mesh, coef, data=None):
    """(nt, nq, 2) gradient of a P2 field at the quadrature points."""
    l2g, _, _, _, grads = data if data is not None else p2_element_data(mesh)
    return np.einsum("ti,tiqa->tqa", np.asarray(coef)[l2g], grads)


# ---------------------------------------------------------------------------
# dof management

class FemSpaces:
    """Free-dof bookkeeping for the Taylor-Hood velocity/pressure pair plus
    the quadratic temperature space.

    Velocity Dirichlet dofs sit on the closure of the wall (including the
    heater patch, which is a wall segment for the flow); temperature
    Dirichlet dofs sit on the closure of wall minus heater, so dofs strictly
    inside the heater, inlet and outlet stay free.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        self.n_scalar = p2_dof_count(mesh)
        vel_fixed = self._boundary_closure_dofs(mesh, ("wall", "heater"))
        # temperature keeps heater-interior dofs: fix only wall-tagged edges
        temp_fixed = self._boundary_closure_dofs(mesh, ("wall",))
        self.velocity_free = np.flatnonzero(~vel_fixed)
        self.temperature_free = np.flatnonzero(~temp_fixed)
        self.select_velocity = self._selection(self.velocity_free)
        self.select_temperature = self._selection(self.temperature_free)
        # component-stacked vector selection [vx; vy]
        self.select_velocity2 = sp.block_diag(
            [self.select_velocity, self.select_velocity], format="csr")

    def _boundary_closure_dofs(self, mesh, tags):
        fixed = np.zeros(self.n_scalar, dtype=bool)
        for e, tag in zip(mesh.boundary_edges, mesh.boundary_tags):
            if tag in tags:
                v0, v1 = mesh.edges[e]
                fixed[v0] = fixed[v1] = True
                fixed[mesh.num_vertices + e] = True
        return fixed

    def _selection(self, free):
        nfree = len(free)
        return sp.csr_matrix((np.ones(nfree), (np.arange(nfree), free)),
                             shape=(nfree, self.n_scalar))

    @property
    def n_velocity(self):
        return 2 * len(self.velocity_free)

    @property
    def n_temperature(self):
        return len(self.temperature_free)

    @property
    def n_pressure(self):
        return self.mesh.num_vertices

    @property
    def n_plant(self):
        """State dimension of the velocity-temperature plant."""
        return self.n_velocity + self.n_temperature

    def expand_velocity(self, v_free):
        """Free component-stacked velocity -> full (2, n_scalar) with zeros
        on Dirichlet dofs."""
        nf = len(self.velocity_free)
        full = np.zeros((2, self.n_scalar))
        full[0, self.velocity_free] = v_free[:nf]
        full[1, self.velocity_free] = v_free[nf:]
        return full

    def expand_temperature(self, t_free):
        full = np.zeros(self.n_scalar)
        full[self.temperature_free] = t_free
        return full


# ---------------------------------------------------------------------------
# domain assembly

def assemble_scalar_matrices(mesh):
    """Mesh-dependent scalar building blocks on the full P2/P1 dof sets.

    Returns a dict with the P2 mass `M`, the gradient products `Kxx`,
    `Kxy`, `Kyy` (Kab[i, j] = integral of da(phi_i) db(phi_j)), the
    pressure-test divergence couplings `Gx`, `Gy` (P1 row, P2 column), and
    the P1 pressure mass `Mp`.
    """
    l2g, _, wdet, vals, grads = p2_element_data(mesh)
    nsc = p2_dof_count(mesh)
    pts, _ = triangle_rule()
    p1 = _p1_reference(pts)

    me = np.einsum("tq,iq,jq->tij", wdet, vals, vals)
    kxx = np.einsum("tq,tiq,tjq->tij", wdet, grads[..., 0], grads[..., 0])
    kxy = np.einsum("tq,tiq,tjq->tij", wdet, grads[..., 0], grads[..., 1])
    kyy = np.einsum("tq,tiq,tjq->tij", wdet, grads[..., 1], grads[..., 1])
    gx = np.einsum("tq,iq,tjq->tij", wdet, p1, grads[..., 0])
    gy = np.einsum("tq,iq,tjq->tij", wdet, p1, grads[..., 1])
    mp = np.einsum("tq,iq,jq->tij", wdet, p1, p1)

    nv = mesh.num_vertices
    shape = (nsc, nsc)
    return {
        "M": _scatter(me, l2g, l2g, shape),
        "Kxx": _scatter(kxx, l2g, l2g, shape),
        "Kxy": _scatter(kxy, l2g, l2g, shape),
        "Kyy": _scatter(kyy, l2g, l2g, shape),
        "Gx": _scatter(gx, mesh.triangles, l2g, (nv, nsc)),
        "Gy": _scatter(gy, mesh.triangles, l2g, (nv, nsc)),
        "Mp": _scatter(mp, mesh.triangles, mesh.triangles, (nv, nv)),
    }


def assemble_transport(mesh, wx, wy, data=None):
    """Advection matrix C[i, j] = <(w . grad) phi_j, phi_i> on full P2 dofs.

    `wx`, `wy` are P2 coefficient vectors of the advecting field.
    """
    data = data if data is not None else p2_element_data(mesh)
    l2g, _, wdet, vals, grads = data
    wxq = np.einsum("ti,iq->tq", np.asarray(wx)[l2g], vals)
    wyq = np.einsum("ti,iq->tq", np.asarray(wy)[l2g], vals)
    adv = wxq[:, None, :] * grads[..., 0] + wyq[:, None, :] * grads[..., 1]
    ce = np.einsum("tq,iq,tjq->tij", wdet, vals, adv)
    nsc = p2_dof_count(mesh)
    return _scatter(ce, l2g, l2g, (nsc, nsc))


def assemble_weighted_mass(mesh, weight_at_q, data=None):
    """W[i, j] = integral of weight * phi_i * phi_j with a (nt, nq) weight."""
    data = data if data is not None else p2_element_data(mesh)
    l2g, _, wdet, vals, _ = data
    we = np.einsum("tq,iq,jq->tij", wdet * weight_at_q, vals, vals)
    nsc = p2_dof_count(mesh)
    return _scatter(we, l2g, l2g, (nsc, nsc))


def assemble_domain_load(mesh, func, data=None):
    """Load vector <f, phi_i> over full P2 dofs; `func` maps (x, y) arrays
    to values (an Expression works: called with xi1=, xi2=)."""
    data = data if data is not None else p2_element_data(mesh)
    l2g, xq, wdet, vals, _ = data
    fq = _call_field(func, xq[..., 0], xq[..., 1])
    fe = np.einsum("tq,iq->ti", wdet * fq, vals)
    load = np.zeros(p2_dof_count(mesh))
    np.add.at(load, l2g, fe)
    return load


def _call_field(func, x, y):
    from .expressions import Expression
    if isinstance(func, Expression):
        return func(xi1=x, xi2=y)
    return np.asarray(func(x, y), dtype=float)


def integrate_domain(mesh, values_at_q):
    """Integrate a (nt, nq) sampling over the room."""
    _, _, wdet, _, _ = p2_element_data(mesh)
    return float(np.sum(wdet * values_at_q))


# ---------------------------------------------------------------------------
# boundary assembly

def edge_quadrature_data(mesh, edge_ids, npoints=3):
    """Trace-assembly data for the given boundary edges.

    Returns (dofs, xq, wlen, vals): P2 dof triples (v0, v1, midpoint),
    physical quadrature points (nedge, nq, 2), weight-times-length factors
    and the 3 trace basis functions sampled at the rule points.
    """
    s, w = edge_rule(npoints)
    ends = mesh.vertices[mesh.edges[edge_ids]]
    lengths = np.linalg.norm(ends[:, 1] - ends[:, 0], axis=1)
    xq = ends[:, None, 0, :] + s[None, :, None] * (ends[:, 1] - ends[:, 0])[:, None, :]
    vals = np.stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)])
    dofs = np.column_stack([mesh.edges[edge_ids],
                            mesh.num_vertices + np.asarray(edge_ids)])
    return dofs, xq, w[None, :] * lengths[:, None], vals


def assemble_edge_mass(mesh, edge_ids, npoints=3):
    """Boundary mass matrix over the given edges, on full P2 dofs."""
    nsc = p2_dof_count(mesh)
    if len(edge_ids) == 0:
        return sp.csr_matrix((nsc, nsc))
    dofs, _, wlen, vals = edge_quadrature_data(mesh, edge_ids, npoints)
    me = np.einsum("eq,iq,jq->eij", wlen, vals, vals)
    return _scatter(me, dofs, dofs, (nsc, nsc))


def assemble_edge_load(mesh, edge_ids, func, npoints=3):
    """Boundary load <g, phi_i> over the given edges, on full P2 dofs."""
    load = np.zeros(p2_dof_count(mesh))
    if len(edge_ids) == 0:
        return load
    dofs, xq, wlen, vals = edge_quadrature_data(mesh, edge_ids, npoints)
    gq = _call_field(func, xq[..., 0], xq[..., 1])
    fe = np.einsum("eq,iq->ei", wlen * gq, vals)
    np.add.at(load, dofs, fe)
    return load


# ---------------------------------------------------------------------------
# the linearized-model form matrices

class FormMatrices:
    """All matrices of the linearized model on free dofs.

    Attributes
    ----------
    Mv, Mth : velocity / temperature mass matrices.
    Av : strain-rate viscous operator + inlet Robin term (SPD).
    Ath : scaled temperature stiffness + inlet Robin term (SPD).
    D : discrete divergence, pressure rows against velocity columns.
    B0 : buoyancy coupling, temperature into the y-momentum rows.
    Nv : linearized velocity convection at the base flow,
         v -> (w.grad)v + (v.grad)w.
    Nthth, Nthv : linearized temperature transport, theta -> w.grad(theta)
         and v -> v.grad(T).
    Mp : P1 pressure mass (penalty elimination uses it).
    """

    def __init__(self, spaces, params, Mv, Mth, Av, Ath, D, B0, Nv, Nthth,
                 Nthv, Mp):
        self.spaces = spaces
        self.params = params
        self.Mv, self.Mth = Mv, Mth
        self.Av, self.Ath = Av, Ath
        self.D, self.B0 = D, B0
        self.Nv, self.Nthth, self.Nthv = Nv, Nthth, Nthv
        self.Mp = Mp

    @property
    def n_velocity(self):
        return self.spaces.n_velocity

    @property
    def n_temperature(self):
        return self.spaces.n_temperature

    @property
    def n_pressure(self):
        return self.spaces.n_pressure


def assemble_forms(mesh, spaces, params, linearization_point=None):
    """Assemble every FormMatrices block, optionally linearized at a flow.

    Parameters
    ----------
    linearization_point : None or (velocity, temperature)
        Full-dof fields: velocity as (2, n_scalar) P2 coefficients,
        temperature as (n_scalar,). None assembles the Stokes-diffusion
        operator (all convection blocks zero).
    """
    if spaces.mesh is not mesh:
        raise ValueError("spaces were built for a different mesh")
    base = assemble_scalar_matrices(mesh)
    data = p2_element_data(mesh)
    nsc = p2_dof_count(mesh)
    re = params.reynolds

    inlet = mesh.edges_with_tag("inlet")
    robin = assemble_edge_mass(mesh, inlet)

    # strain-rate blocks: 2*eps(v):eps(psi) expanded in components
    a11 = (2.0 * base["Kxx"] + base["Kyy"]) / re + params.alpha_v * robin
    a22 = (base["Kxx"] + 2.0 * base["Kyy"]) / re + params.alpha_v * robin
    a21 = base["Kxy"] / re          # <dx(phi_i) dy(phi_j)> tested with psi_2
    av_full = sp.bmat([[a11, a21.T], [a21, a22]], format="csr")
    ath_full = (base["Kxx"] + base["Kyy"]) / (re * params.prandtl) \
        + params.alpha_theta * robin

    sv, st = spaces.select_velocity, spaces.select_temperature
    sv2 = spaces.select_velocity2

    if linearization_point is None:
        nfv, nft = spaces.n_velocity, spaces.n_temperature
        nv_free = sp.csr_matrix((nfv, nfv))
        nthth_free = sp.csr_matrix((nft, nft))
        nthv_free = sp.csr_matrix((nft, nfv))
    else:
        vel, temp = linearization_point
        vel = np.asarray(vel)
        if vel.shape != (2, nsc) or np.shape(temp) != (nsc,):
            raise ValueError("linearization point does not match the P2 space")
        transport = assemble_transport(mesh, vel[0], vel[1], data)
        dwx = evaluate_p2_gradient(mesh, vel[0], data)
        dwy = evaluate_p2_gradient(mesh, vel[1], data)
        dth = evaluate_p2_gradient(mesh, temp, data)
        gxx = assemble_weighted_mass(mesh, dwx[..., 0], data)
        gxy = assemble_weighted_mass(mesh, dwx[..., 1], data)
        gyx = assemble_weighted_mass(mesh, dwy[..., 0], data)
        gyy = assemble_weighted_mass(mesh, dwy[..., 1], data)
        nv_full = sp.bmat([[transport + gxx, gxy],
                           [gyx, transport + gyy]], format="csr")
        nthv_full = sp.bmat([[assemble_weighted_mass(mesh, dth[..., 0], data),
                              assemble_weighted_mass(mesh, dth[..., 1], data)]],
                            format="csr")
        nv_free = sv2 @ nv_full @ sv2.T
        nthth_free = st @ transport @ st.T
        nthv_free = st @ nthv_full @ sv2.T

    mv_free = sp.block_diag([sv @ base["M"] @ sv.T] * 2, format="csr")
    b0_full = sp.bmat([[sp.csr_matrix((nsc, nsc))], [params.buoyancy * base["M"]]],
                      format="csr")
    return FormMatrices(
        spaces, params,
        Mv=mv_free,
        Mth=st @ base["M"] @ st.T,
        Av=sv2 @ av_full @ sv2.T,
        Ath=st @ ath_full @ st.T,
        D=sp.hstack([base["Gx"] @ sv.T, base["Gy"] @ sv.T], format="csr"),
        B0=sv2 @ b0_full @ st.T,
        Nv=nv_free, Nthth=nthth_free, Nthv=nthv_free,
        Mp=base["Mp"].tocsr(),
    )


# ---------------------------------------------------------------------------
# boundary inputs and observations

@dataclass(frozen=True)
class BoundaryShapes:
    """Control and disturbance shape functions on the boundary segments.

    Each entry is an Expression (or any callable of coordinate arrays).
    `velocity_control` acts on the x-velocity over the inlet,
    `inlet_temp_control` on temperature over the inlet, `heater_temp_control`
    on temperature over the heater, and `velocity_disturbance` on the
    y-velocity over the inlet.
    """
    velocity_control: object
    inlet_temp_control: object
    heater_temp_control: object
    velocity_disturbance: object


def assemble_boundary_inputs(mesh, spaces, shapes, npoints=3):
    """Input matrices of the plant: 3 control columns and 1 disturbance.

    Column order: inlet velocity control, inlet temperature control, heater
    temperature control. Rows span the free (velocity, temperature) state.

    Returns
    -------
    B_b : csr (n_plant, 3)
    B_bd : csr (n_plant, 1)
    """
    inlet = mesh.edges_with_tag("inlet")
    heater = mesh.edges_with_tag("heater")
    nfv = len(spaces.velocity_free)

    def vel_x(load_full):
        return np.concatenate([load_full[spaces.velocity_free],
                               np.zeros(nfv)])

    def vel_y(load_full):
        return np.concatenate([np.zeros(nfv),
                               load_full[spaces.velocity_free]])

    def temp(load_full):
        return load_full[spaces.temperature_free]

    nth = spaces.n_temperature
    cols = [
        np.concatenate([vel_x(assemble_edge_load(mesh, inlet,
                                                 shapes.velocity_control,
                                                 npoints)),
                        np.zeros(nth)]),
        np.concatenate([np.zeros(2 * nfv),
                        temp(assemble_edge_load(mesh, inlet,
                                                shapes.inlet_temp_control,
                                                npoints))]),
        np.concatenate([np.zeros(2 * nfv),
                        temp(assemble_edge_load(mesh, heater,
                                                shapes.heater_temp_control,
                                                npoints))]),
    ]
    dist = np.concatenate([vel_y(assemble_edge_load(mesh, inlet,
                                                    shapes.velocity_disturbance,
                                                    npoints)),
                           np.zeros(nth)])
    b_b = sp.csr_matrix(np.column_stack(cols))
    b_bd = sp.csr_matrix(dist[:, None])
    return b_b, b_bd


@dataclass(frozen=True)
class ObservationSpec:
    """One scalar output: an average of a field component over a region.

    kind: "domain-average" or "boundary-average"; component: "vx", "vy" or
    "theta"; region: a name registered in the geometry (or one of the
    built-ins "inlet", "outlet", "heater" for boundary averages); weight:
    optional Expression replacing the default uniform 1/|region| weight.
    """
    kind: str
    region: str
    component: str
    weight: object = None

    def __post_init__(self):
        if self.kind not in ("domain-average", "boundary-average"):
            raise ValueError(f"unknown observation kind {self.kind!r}")
        if self.component not in ("vx", "vy", "theta"):
            raise ValueError(f"unknown component {self.component!r}")


def assemble_observations(mesh, spaces, specs):
    """Output matrix C_b with one weighted-average row per spec.

    Rows act on the free (velocity, temperature) state vector.
    """
    from .meshing import locate_region
    rows = []
    for spec in specs:
        entities = locate_region(mesh, spec.region)
        if len(entities) == 0:
            raise ValueError(f"observation region {spec.region!r} is empty "
                             "on this mesh")
        if spec.kind == "domain-average":
            row_full = _domain_average_row(mesh, entities, spec.weight)
        else:
            row_full = _boundary_average_row(mesh, entities, spec.weight)
        rows.append(_place_component(spaces, row_full, spec.component))
    return sp.csr_matrix(np.vstack(rows))


def _domain_average_row(mesh, tri_ids, weight):
    l2g, xq, wdet, vals, _ = p2_element_data(mesh)
    l2g, xq, wdet = l2g[tri_ids], xq[tri_ids], wdet[tri_ids]
    if weight is None:
        wq = np.full(xq.shape[:2], 1.0 / wdet.sum())
    else:
        wq = _call_field(weight, xq[..., 0], xq[..., 1])
    fe = np.einsum("tq,iq->ti", wdet * wq, vals)
    row = np.zeros(p2_dof_count(mesh))
    np.add.at(row, l2g, fe)
    return row


def _boundary_average_row(mesh, edge_ids, weight):
    dofs, xq, wlen, vals = edge_quadrature_data(mesh, edge_ids)
    if weight is None:
        wq = np.full(xq.shape[:2], 1.0 / wlen.sum())
    else:
        wq = _call_field(weight, xq[..., 0], xq[..., 1])
    fe = np.einsum("eq,iq->ei", wlen * wq, vals)
    row = np.zeros(p2_dof_count(mesh))
    np.add.at(row, dofs, fe)
    return row


def _place_component(spaces, row_full, component):
    nfv = len(spaces.velocity_free)
    out = np.zeros(spaces.n_plant)
    if component == "vx":
        out[:nfv] = row_full[spaces.velocity_free]
    elif component == "vy":
        out[nfv:2 * nfv] = row_full[spaces.velocity_free]
    else:
        out[2 * nfv:] = row_full[spaces.temperature_free]
    return out
