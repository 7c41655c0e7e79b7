"""Internal-model controller synthesis.

Builds the three ingredients of the observer-based low-order controller:
the internal model that replicates the reference/disturbance signal
dynamics, stabilizing output-injection and state-feedback gains from two
algebraic Riccati equations, and a balanced-truncation reduction of the
stabilized observer. The assembled controller is a finite-dimensional ODE
system (G1c, G2c, Kc) driven by the tracking error.

All Riccati and Lyapunov work happens in mass-whitened coordinates where
the discrete L2 inner product is Euclidean, so standard dense solvers
apply. Gains acting on the plant state stay in whitened coordinates; the
controller realization itself is coordinate-free.
"""

import json
import pathlib
import warnings

import numpy as np
import scipy.linalg as la
import scipy.io
import scipy.sparse as sp


class SignalSpec:
    """Frequency content of the reference and disturbance signals.

    Parameters
    ----------
    frequencies : sequence of float
        Angular frequencies, nonnegative and strictly increasing. A
        leading zero requests the polynomial (non-oscillatory) block.
    orders : sequence of int
        Per-frequency order; order k allows polynomial coefficients up
        to degree k - 1 on that frequency's sinusoids. All >= 1.
    n_outputs : int
        Number of tracked output channels.
    """

    def __init__(self, frequencies, orders, n_outputs):
        frequencies = tuple(float(w) for w in frequencies)
        orders = tuple(int(n) for n in orders)
        if len(frequencies) == 0:
            raise ValueError("signal spec needs at least one frequency")
        if len(frequencies) != len(orders):
            raise ValueError("frequencies and orders must pair up")
        if any(w < 0.0 for w in frequencies):
            raise ValueError("frequencies must be nonnegative")
        if any(b <= a for a, b in zip(frequencies[:-1], frequencies[1:])):
            raise ValueError("frequencies must be strictly increasing")
        if any(n < 1 for n in orders):
            raise ValueError("every frequency order must be >= 1")
        if n_outputs < 1:
            raise ValueError("output dimension must be >= 1")
        self.frequencies = frequencies
        self.orders = orders
        self.n_outputs = int(n_outputs)

    @property
    def dim_internal_model(self):
        """Total internal-model dimension: p*n_0 for the zero frequency
        plus 2*p*n_k for each oscillatory frequency."""
        p = self.n_outputs
        dim = 0
        for w, n in zip(self.frequencies, self.orders):
            dim += p * n if w == 0.0 else 2 * p * n
        return dim

    def __eq__(self, other):
        return (isinstance(other, SignalSpec)
                and self.frequencies == other.frequencies
                and self.orders == other.orders
                and self.n_outputs == other.n_outputs)


class InternalModel:
    """Block-diagonal signal generator copy embedded in the controller.

    Attributes
    ----------
    g1 : ndarray
        Square block-diagonal matrix whose spectrum is {0} for the
        polynomial block and {+-i w_k} for each oscillatory block.
    g2 : ndarray
        Error-injection matrix, one identity block per frequency placed
        in that frequency's last Jordan level.
    spec : SignalSpec
        The generating specification.
    """

    def __init__(self, g1, g2, spec):
        self.g1 = g1
        self.g2 = g2
        self.spec = spec

    @property
    def dim(self):
        return self.g1.shape[0]

    @property
    def n_outputs(self):
        return self.g2.shape[1]


def build_internal_model(spec):
    """Construct the internal model matrices for a signal class.

    The zero frequency contributes a nilpotent Jordan-like block of size
    p*n_0 with identity superdiagonal and injection into the last level.
    Each oscillatory frequency w contributes a block-Jordan matrix of
    size 2p*n with the planar rotation generator [[0, w I], [-w I, 0]]
    on the diagonal, identity superdiagonal, and injection into the
    first half of the last level.

    Returns
    -------
    InternalModel
    """
    p = spec.n_outputs
    blocks = []
    inject = []
    eye_p = np.eye(p)
    for w, n in zip(spec.frequencies, spec.orders):
        if w == 0.0:
            size = p * n
            j = np.zeros((size, size))
            for level in range(n - 1):
                j[level * p:(level + 1) * p, (level + 1) * p:(level + 2) * p] = eye_p
            g = np.zeros((size, p))
            g[(n - 1) * p:, :] = eye_p
        else:
            cell = 2 * p
            size = cell * n
            omega = np.zeros((cell, cell))
            omega[:p, p:] = w * eye_p
            omega[p:, :p] = -w * eye_p
            j = np.zeros((size, size))
            for level in range(n):
                j[level * cell:(level + 1) * cell, level * cell:(level + 1) * cell] = omega
            for level in range(n - 1):
                j[level * cell:(level + 1) * cell, (level + 1) * cell:(level + 2) * cell] = np.eye(cell)
            g = np.zeros((size, p))
            g[(n - 1) * cell:(n - 1) * cell + p, :] = eye_p
        blocks.append(j)
        inject.append(g)
    g1 = la.block_diag(*blocks)
    g2 = np.vstack(inject)
    return InternalModel(g1, g2, spec)


def _matrix_sign_care(a, gram, qtq, tol=None, max_iter=100):
    """Stabilizing solution of A'X + XA - X G X + Q = 0 via the matrix
    sign function of the Hamiltonian, with determinant scaling.

    `gram` is B R^-1 B' and `qtq` is Q'Q, both symmetric PSD. Scaling is
    switched off once the iteration is close to its fixed point; the
    final solution comes from a least-squares fit of the stable-subspace
    relation, which also averages the two redundant block equations.
    """
    n = a.shape[0]
    h = np.block([[a, -gram], [-qtq, -a.T]])
    if tol is None:
        tol = 2 * n * np.finfo(float).eps
    scaling = True
    converged = False
    for _ in range(max_iter):
        with warnings.catch_warnings():
            # the explicit diagonal check below covers the singular case
            warnings.simplefilter("ignore", la.LinAlgWarning)
            lu, piv = la.lu_factor(h)
        diag = np.abs(np.diag(lu))
        if not np.all(diag > 0.0) or not np.all(np.isfinite(diag)):
            raise ValueError(
                "Hamiltonian matrix is singular: eigenvalues on the "
                "imaginary axis, stabilizability or detectability fails")
        hinv = la.lu_solve((lu, piv), np.eye(2 * n))
        if scaling:
            # |det H|^(-1/2n) scaling accelerates the initial phase.
            c = np.exp(-np.sum(np.log(diag)) / (2 * n))
        else:
            c = 1.0
        h_new = 0.5 * (c * h + hinv / c)
        delta = np.linalg.norm(h_new - h, "fro")
        scale = np.linalg.norm(h_new, "fro")
        h = h_new
        if not np.isfinite(scale):
            raise ValueError("sign iteration diverged; no stabilizing solution")
        if delta <= 1e-2 * scale:
            scaling = False
        if delta <= tol * scale:
            converged = True
            break
    if not converged:
        raise ValueError("sign iteration did not converge; the Hamiltonian "
                         "is too close to the imaginary axis")
    s11 = h[:n, :n]
    s12 = h[:n, n:]
    s21 = h[n:, :n]
    s22 = h[n:, n:]
    lhs = np.vstack([s12, s22 + np.eye(n)])
    rhs = -np.vstack([s11 + np.eye(n), s21])
    x, _, rank, _ = la.lstsq(lhs, rhs)
    if rank < n:
        raise ValueError("stable invariant subspace is rank deficient; "
                         "no stabilizing solution")
    return 0.5 * (x + x.T)


def _whiten_pair(a, b, c, e):
    """Congruence transform to coordinates where the mass matrix is the
    identity: a -> L^-1 a L^-T, b -> L^-1 b, c -> c L^-T with e = L L'."""
    factor = la.cholesky(e, lower=True)
    w = la.solve_triangular(factor, a, lower=True)
    a_w = la.solve_triangular(factor, w.T, lower=True).T
    b_w = la.solve_triangular(factor, b, lower=True)
    c_w = la.solve_triangular(factor, c.T, lower=True).T
    return a_w, b_w, c_w, factor


def solve_care(a, b, q, r, shift=0.0, e=None, method="auto", residual_tol=1e-8):
    """Stabilizing solution of the (generalized) control Riccati equation

        (A + a E)' X E + E' X (A + a E) - E' X B R^-1 B' X E + Q'Q = 0

    with E = I when no mass matrix is given.

    Parameters
    ----------
    a, b : ndarray
        System and input matrices.
    q : ndarray
        State weight factor; the equation uses Q'Q.
    r : ndarray
        SPD input weight.
    shift : float
        Stability margin a >= 0; the closed loop is Hurwitz with
        abscissa below -shift.
    e : ndarray, optional
        SPD mass matrix; reduced internally by Cholesky congruence.
    method : {"auto", "sign", "schur"}
        Dense engine. "schur" delegates to the Schur-decomposition
        solver, practical only at small sizes; "sign" is the scaled
        Newton sign iteration; "auto" picks by problem size.
    residual_tol : float
        Upper bound demanded of the relative algebraic residual.

    Returns
    -------
    ndarray
        Symmetric stabilizing solution in the original coordinates.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    r = np.atleast_2d(np.asarray(r, dtype=float))
    n = a.shape[0]
    if e is None:
        a_eff = a + shift * np.eye(n)
        b_eff = b
        q_eff = q
        factor = None
    else:
        e = np.asarray(e, dtype=float)
        a_eff, b_eff, q_t, factor = _whiten_pair(a + shift * e, b, q, e)
        q_eff = q_t
    if method == "auto":
        method = "schur" if n <= 600 else "sign"
    qtq = q_eff.T @ q_eff
    gram = b_eff @ la.solve(r, b_eff.T, assume_a="pos")
    gram = 0.5 * (gram + gram.T)
    if method == "schur":
        # Degenerate zero weights break the sign of the Schur solver's
        # deflating-subspace selection; handle the trivial case directly.
        if np.linalg.norm(qtq) == 0.0 and float(np.max(la.eigvals(a_eff).real)) < 0.0:
            x = np.zeros_like(a_eff)
        else:
            try:
                x = la.solve_continuous_are(a_eff, b_eff, qtq, r)
            except la.LinAlgError as exc:
                raise ValueError(
                    "Riccati Schur solver failed (%s): the pair is likely "
                    "not stabilizable and detectable at this shift"
                    % exc) from exc
    elif method == "sign":
        x = _matrix_sign_care(a_eff, gram, qtq)
    else:
        raise ValueError("unknown Riccati method %r" % (method,))
    # defect correction: one Newton step through a Lyapunov solve squares
    # the algebraic residual, so a couple of sweeps reach solver-floor
    # accuracy even on badly scaled problems
    for _ in range(3):
        resid_mat = a_eff.T @ x + x @ a_eff - x @ gram @ x + qtq
        denom = max(float(np.linalg.norm(x, "fro")), np.finfo(float).tiny)
        if np.linalg.norm(resid_mat, "fro") <= 0.1 * residual_tol * denom:
            break
        a_cl = a_eff - gram @ x
        try:
            delta = la.solve_continuous_lyapunov(a_cl.T, -resid_mat)
        except (la.LinAlgError, ValueError):
            break
        x = x + 0.5 * (delta + delta.T)
    if factor is not None:
        # Undo the congruence: X = L^-T Xhat L^-1.
        x = la.solve_triangular(factor, x.T, lower=True, trans="T")
        x = la.solve_triangular(factor, x.T, lower=True, trans="T")
        x = 0.5 * (x + x.T)
    residual = care_residual(a, b, q, r, x, shift=shift, e=e)
    if not residual <= residual_tol:
        raise ValueError("Riccati solution rejected: relative residual "
                         "%.3e, the pair is likely not stabilizable and "
                         "detectable at this shift" % residual)
    return x


def care_residual(a, b, q, r, x, shift=0.0, e=None):
    """Relative algebraic residual of a Riccati solution, normalized by
    the Frobenius norm of the solution."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    ee = np.eye(n) if e is None else np.asarray(e, dtype=float)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    a_eff = a + shift * ee
    gram = b @ la.solve(np.atleast_2d(r), b.T, assume_a="pos")
    res = (a_eff.T @ x @ ee + ee.T @ x @ a_eff
           - ee.T @ x @ gram @ x @ ee + q.T @ q)
    denom = np.linalg.norm(x, "fro")
    if denom == 0.0:
        denom = 1.0
    return float(np.linalg.norm(res, "fro") / denom)


def spectral_abscissa(a):
    """Largest real part of the (dense) spectrum."""
    return float(np.max(la.eigvals(a).real))


class MassWhitenedModel:
    """Cascade state-space model in coordinates with Euclidean inner
    product, obtained from the mass Cholesky factor."""

    def __init__(self, a, b, c, factor):
        self.a = a
        self.b = b
        self.c = c
        self.factor = factor

    @property
    def dim(self):
        return self.a.shape[0]


def whiten_cascade(system):
    """Transform a cascade system with SPD mass matrix into standard
    state-space form.

    Parameters
    ----------
    system : CascadeSystem
        Must carry a dense or sparse SPD mass matrix; the pressure
        saddle point must already be eliminated.

    Returns
    -------
    MassWhitenedModel
    """
    e = system.E
    a = system.A
    if sp.issparse(e):
        e = e.toarray()
    if sp.issparse(a):
        a = a.toarray()
    b = np.asarray(system.B.toarray() if sp.issparse(system.B) else system.B)
    c = np.asarray(system.C.toarray() if sp.issparse(system.C) else system.C)
    a_w, b_w, c_w, factor = _whiten_pair(np.asarray(a, dtype=float), b, c, np.asarray(e, dtype=float))
    return MassWhitenedModel(a_w, b_w, c_w, factor)


class SynthesisParams:
    """Design weights and orders for the Riccati synthesis.

    Parameters
    ----------
    alpha1, alpha2 : float
        Stability-margin shifts for the observer and regulator Riccati
        equations.
    reduced_order : int
        Target order r of the balanced-truncation observer reduction.
    r1, r2 : ndarray, optional
        SPD weights on the output injection and the control effort;
        identity when omitted.
    q0 : ndarray, optional
        Internal-model state weight factor; identity when omitted keeps
        (Q0, G1) trivially observable.
    q1, q2 : ndarray, optional
        Noise and state weight factors on the whitened plant state for
        the filter and regulator equations. Omitted means identity,
        which is the mass-weighted identity on the physical state.
    residual_tol : float
        Acceptance threshold on the relative Riccati residuals.
    care_method : str
        Engine passed through to `solve_care`.
    """

    def __init__(self, alpha1=0.3, alpha2=0.2, reduced_order=20,
                 r1=None, r2=None, q0=None, q1=None, q2=None,
                 residual_tol=1e-8, care_method="auto"):
        if alpha1 < 0 or alpha2 < 0:
            raise ValueError("margin shifts must be >= 0")
        if reduced_order < 0:
            raise ValueError("reduction order must be >= 0")
        self.alpha1 = float(alpha1)
        self.alpha2 = float(alpha2)
        self.reduced_order = int(reduced_order)
        self.r1 = r1
        self.r2 = r2
        self.q0 = q0
        self.q1 = q1
        self.q2 = q2
        self.residual_tol = float(residual_tol)
        self.care_method = care_method


class GainSet:
    """Observer and regulator gains with their certification data.

    All plant-state blocks live in whitened coordinates. `l` maps output
    residuals into the observer state, `k1` acts on the internal model,
    `k2` on the observer copy of the plant.
    """

    def __init__(self, l, k1, k2, filter_residual, regulator_residual,
                 observer_abscissa, regulator_abscissa):
        self.l = l
        self.k1 = k1
        self.k2 = k2
        self.filter_residual = filter_residual
        self.regulator_residual = regulator_residual
        self.observer_abscissa = observer_abscissa
        self.regulator_abscissa = regulator_abscissa


def compute_gains(model, im, params):
    """Solve the filter and regulator Riccati equations and certify the
    resulting closed-loop abscissas.

    The filter equation runs on the whitened plant shifted by alpha1
    with unit noise weight, giving the output injection L. The regulator
    equation runs on the internal model stacked over the plant shifted
    by alpha2, giving K = [K1, K2].

    Raises
    ------
    RuntimeError
        If either equation misses the residual tolerance or the
        certified abscissa, naming the offending equation.
    """
    a, b, c = model.a, model.b, model.c
    n = a.shape[0]
    p, m = c.shape[0], b.shape[1]
    r1 = np.eye(p) if params.r1 is None else np.atleast_2d(np.asarray(params.r1, dtype=float))
    r2 = np.eye(m) if params.r2 is None else np.atleast_2d(np.asarray(params.r2, dtype=float))

    # Filter Riccati, solved through duality on the transposed plant; the
    # noise factor Q1 (equation constant Q1 Q1') transposes into the
    # state-weight slot of the dual equation.
    q1 = np.eye(n) if params.q1 is None else \
        np.atleast_2d(np.asarray(params.q1, dtype=float)).T
    try:
        sigma = solve_care(a.T, c.T, q1, r1, shift=params.alpha1,
                           method=params.care_method,
                           residual_tol=params.residual_tol)
    except ValueError as exc:
        raise RuntimeError("filter Riccati equation failed: %s" % exc) from exc
    l_gain = -sigma @ c.T @ la.inv(r1)
    filter_residual = care_residual(a.T, c.T, q1, r1, sigma, shift=params.alpha1)
    observer_abscissa = spectral_abscissa(a + l_gain @ c)
    if observer_abscissa > -params.alpha1 + 1e-8:
        raise RuntimeError("filter Riccati equation failed: observer "
                           "abscissa %.6f above %.6f"
                           % (observer_abscissa, -params.alpha1))

    # Regulator Riccati on the internal model stacked over the plant.
    # Without an internal model the equation degenerates to plain state
    # feedback on the plant alone.
    z = 0 if im is None else im.dim
    a_c = np.zeros((z + n, z + n))
    if z:
        a_c[:z, :z] = im.g1
        a_c[:z, z:] = im.g2 @ c
    a_c[z:, z:] = a
    b_c = np.vstack([np.zeros((z, m)), b])
    if im is None:
        q0 = np.eye(0)
    elif params.q0 is None:
        q0 = np.eye(z)
    else:
        q0 = np.atleast_2d(np.asarray(params.q0, dtype=float))
    q2 = np.eye(n) if params.q2 is None else np.atleast_2d(np.asarray(params.q2, dtype=float))
    q_c = la.block_diag(q0, q2)
    try:
        pi = solve_care(a_c, b_c, q_c, r2, shift=params.alpha2,
                        method=params.care_method,
                        residual_tol=params.residual_tol)
    except ValueError as exc:
        raise RuntimeError("regulator Riccati equation failed: %s" % exc) from exc
    k = -la.solve(r2, b_c.T @ pi, assume_a="pos")
    regulator_residual = care_residual(a_c, b_c, q_c, r2, pi, shift=params.alpha2)
    regulator_abscissa = spectral_abscissa(a_c + b_c @ k)
    if regulator_abscissa > -params.alpha2 + 1e-8:
        raise RuntimeError("regulator Riccati equation failed: design "
                           "abscissa %.6f above %.6f"
                           % (regulator_abscissa, -params.alpha2))
    return GainSet(l_gain, k[:, :z], k[:, z:], filter_residual,
                   regulator_residual, observer_abscissa, regulator_abscissa)


class ReducedModel:
    """Balanced-truncation result with its a priori error bound."""

    def __init__(self, a, b, c, hankel_values, order, error_bound):
        self.a = a
        self.b = b
        self.c = c
        self.hankel_values = hankel_values
        self.order = order
        self.error_bound = error_bound


def _psd_factor(mat, tol):
    """Symmetric square-root factor of a PSD matrix via eigendecomposition,
    rejecting matrices with significantly negative eigenvalues."""
    vals, vecs = la.eigh(0.5 * (mat + mat.T))
    floor = tol * max(vals[-1], 0.0)
    if vals[0] < -floor:
        raise ValueError("Lyapunov solution is indefinite; the system "
                         "to reduce is not stable")
    clipped = np.sqrt(np.clip(vals, 0.0, None))
    return vecs * clipped[np.newaxis, :]


def balanced_truncate(a, b, c, order, tie_tol=1e-7):
    """Balanced truncation of a stable standard state-space system.

    Solves the controllability and observability Lyapunov equations,
    balances via the square-root algorithm, and keeps the `order`
    largest Hankel singular values. A cut that would separate two
    near-equal singular values is moved past the tied group so that
    rotations within the pair (complex-conjugate modes) are never split.

    Returns
    -------
    ReducedModel
        The error bound is twice the discarded Hankel value tail; the
        realized order may exceed the request by tie resolution.
    """
    n = a.shape[0]
    if order > n:
        raise ValueError("reduction order exceeds system order")
    p_gram = la.solve_continuous_lyapunov(a, -b @ b.T)
    q_gram = la.solve_continuous_lyapunov(a.T, -c.T @ c)
    s_p = _psd_factor(p_gram, 1e-10)
    s_q = _psd_factor(q_gram, 1e-10)
    u, hsv, vt = la.svd(s_q.T @ s_p)
    if order < n:
        # Do not cut inside a group of relatively tied values.
        r_eff = order
        while 0 < r_eff < n and hsv[r_eff - 1] - hsv[r_eff] <= tie_tol * hsv[0]:
            r_eff += 1
    else:
        r_eff = order
    bound = 2.0 * float(np.sum(hsv[r_eff:]))
    if r_eff == 0:
        return ReducedModel(np.zeros((0, 0)), np.zeros((0, b.shape[1])),
                            np.zeros((c.shape[0], 0)), hsv, 0, bound)
    if hsv[r_eff - 1] <= n * np.finfo(float).eps * hsv[0]:
        raise ValueError("requested order exceeds the numerical rank "
                         "of the Hankel operator")
    scale = 1.0 / np.sqrt(hsv[:r_eff])
    t_right = (s_p @ vt[:r_eff].T) * scale[np.newaxis, :]
    t_left = (s_q @ u[:, :r_eff]) * scale[np.newaxis, :]
    a_r = t_left.T @ a @ t_right
    b_r = t_left.T @ b
    c_r = c @ t_right
    return ReducedModel(a_r, b_r, c_r, hsv, r_eff, bound)


class ControllerRealization:
    """Assembled error-feedback controller.

    The dynamics are z' = G1c z + G2c e with output u = Kc z, where e is
    the tracking error. The constituent blocks are retained so the
    internal-model structure stays inspectable after serialization.
    """

    def __init__(self, internal_g1, internal_g2, k1, observer_a,
                 observer_b, observer_l, k2, spec=None, diagnostics=None):
        z = internal_g1.shape[0]
        r = observer_a.shape[0]
        m = k1.shape[0]
        p = internal_g2.shape[1]
        if observer_b.shape != (r, m):
            raise ValueError("observer input block has wrong shape")
        if observer_l.shape != (r, p):
            raise ValueError("observer injection block has wrong shape")
        if k2.shape != (m, r):
            raise ValueError("reduced feedback block has wrong shape")
        self.internal_g1 = internal_g1
        self.internal_g2 = internal_g2
        self.k1 = k1
        self.observer_a = observer_a
        self.observer_b = observer_b
        self.observer_l = observer_l
        self.k2 = k2
        self.spec = spec
        self.diagnostics = dict(diagnostics or {})
        self.g1 = np.zeros((z + r, z + r))
        self.g1[:z, :z] = internal_g1
        self.g1[z:, :z] = observer_b @ k1
        self.g1[z:, z:] = observer_a + observer_b @ k2
        self.g2 = np.vstack([internal_g2, -observer_l])
        self.k = np.hstack([k1, k2])

    @property
    def dim(self):
        return self.g1.shape[0]

    @property
    def dim_internal_model(self):
        return self.internal_g1.shape[0]

    @property
    def reduced_order(self):
        return self.observer_a.shape[0]

    @property
    def n_inputs(self):
        return self.k.shape[0]

    @property
    def n_outputs(self):
        return self.g2.shape[1]


def assemble_controller(im, gains, reduced, n_inputs, diagnostics=None):
    """Assemble the controller realization from the synthesis pieces.

    The reduced observer's input block carries the plant inputs first
    and the injection columns last; it is split by `n_inputs`.
    """
    if reduced.b.shape[1] != n_inputs + im.n_outputs:
        raise ValueError("reduced observer must carry plant-input and "
                         "injection columns")
    observer_b = reduced.b[:, :n_inputs]
    observer_l = reduced.b[:, n_inputs:]
    return ControllerRealization(im.g1, im.g2, gains.k1, reduced.a,
                                 observer_b, observer_l, reduced.c,
                                 spec=im.spec, diagnostics=diagnostics)


def synthesize_controller(system, spec, params, details=False):
    """Run the full synthesis chain on a cascade system.

    Whitens the mass matrix, builds the internal model, solves both
    Riccati equations, reduces the stabilized observer by balanced
    truncation, and assembles the controller. Certification data
    (residuals, abscissas, Hankel tail bound) lands in the controller's
    diagnostics.

    Parameters
    ----------
    system : CascadeSystem
        Design plant in ODE form.
    spec : SignalSpec or InternalModel
        Signal class to regulate against.
    params : SynthesisParams
    details : bool, optional
        When true, also return the synthesis intermediates (whitened
        model, gain set, internal model, stabilized observer realization
        and its reduction) so callers can audit the reduction step
        without repeating the Riccati solves.

    Returns
    -------
    ControllerRealization
        When ``details`` is true, a ``(controller, intermediates)`` pair
        where ``intermediates`` is a dict.
    """
    im = spec if isinstance(spec, InternalModel) else build_internal_model(spec)
    if im.n_outputs != system.n_outputs:
        raise ValueError("internal model output dimension does not match "
                         "the plant")
    model = whiten_cascade(system)
    gains = compute_gains(model, im, params)
    stabilized = model.a + gains.l @ model.c
    inputs = np.hstack([model.b, gains.l])
    reduced = balanced_truncate(stabilized, inputs, gains.k2,
                                params.reduced_order)
    diagnostics = {
        "design_order": model.dim,
        "reduced_order": reduced.order,
        "filter_residual": gains.filter_residual,
        "regulator_residual": gains.regulator_residual,
        "observer_abscissa": gains.observer_abscissa,
        "regulator_abscissa": gains.regulator_abscissa,
        "truncation_bound": reduced.error_bound,
        "hankel_values": [float(s) for s in reduced.hankel_values],
    }
    ctrl = assemble_controller(im, gains, reduced, system.n_inputs,
                               diagnostics=diagnostics)
    if details:
        return ctrl, {
            "internal_model": im,
            "model": model,
            "gains": gains,
            "observer_a": stabilized,
            "observer_b": inputs,
            "observer_c": gains.k2,
            "reduced": reduced,
        }
    return ctrl


def transfer_on_grid(a, b, c, omegas):
    """Frequency response C (iw I - A)^-1 B on a grid of angular
    frequencies, one dense LU per point.

    Returns
    -------
    ndarray
        Complex array of shape (len(omegas), outputs, inputs).
    """
    n = a.shape[0]
    out = np.empty((len(omegas), c.shape[0], b.shape[1]), dtype=complex)
    for idx, w in enumerate(omegas):
        shifted = 1j * w * np.eye(n) - a
        out[idx] = c @ la.lu_solve(la.lu_factor(shifted), b.astype(complex))
    return out


_CONTROLLER_BLOCKS = ("internal_g1", "internal_g2", "k1", "observer_a",
                      "observer_b", "observer_l", "k2")


def save_controller(ctrl, directory):
    """Serialize a controller as Matrix Market blocks plus a manifest.

    The constituent blocks are stored rather than the assembled
    matrices, so reloading reproduces the exact block structure.
    """
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in _CONTROLLER_BLOCKS:
        fname = name + ".mtx"
        scipy.io.mmwrite(str(directory / fname), np.atleast_2d(getattr(ctrl, name)))
        files[name] = fname
    manifest = {
        "format": "roomctrl-controller",
        "dim": ctrl.dim,
        "dim_internal_model": ctrl.dim_internal_model,
        "reduced_order": ctrl.reduced_order,
        "n_inputs": ctrl.n_inputs,
        "n_outputs": ctrl.n_outputs,
        "files": files,
        "diagnostics": ctrl.diagnostics,
    }
    if ctrl.spec is not None:
        manifest["signal_spec"] = {
            "frequencies": list(ctrl.spec.frequencies),
            "orders": list(ctrl.spec.orders),
            "n_outputs": ctrl.spec.n_outputs,
        }
    with open(directory / "controller.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return directory / "controller.json"


def load_controller(directory):
    """Reload a controller serialized by `save_controller`."""
    directory = pathlib.Path(directory)
    manifest_path = directory / "controller.json"
    if not manifest_path.exists():
        raise FileNotFoundError("controller artifact missing: no manifest "
                                "at %s" % manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    blocks = {}
    for name in _CONTROLLER_BLOCKS:
        mat = scipy.io.mmread(str(directory / manifest["files"][name]))
        blocks[name] = np.asarray(mat.todense() if sp.issparse(mat) else mat, dtype=float)
    spec = None
    if "signal_spec" in manifest:
        info = manifest["signal_spec"]
        spec = SignalSpec(info["frequencies"], info["orders"], info["n_outputs"])
    return ControllerRealization(spec=spec, diagnostics=manifest.get("diagnostics"),
                                 **blocks)
