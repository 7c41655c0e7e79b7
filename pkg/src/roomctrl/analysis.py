"""Spectral analysis and numerical verification of the design assumptions.

The synthesis path relies on a short list of checkable facts: the plant
pencil has only finitely many unstable eigenvalues, those eigenvalues are
detectable through the sensor chain and stabilizable through the actuator
chain, and none of the three subsystems has a transmission zero at the
tracked frequencies. Everything here is advisory instrumentation: verdicts
carry smallest singular values and thresholds so a near-failure on a coarse
mesh is visible instead of fatal.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cascade import static_transfer, transfer_function


def _as_pencil(system):
    if hasattr(system, "A") and hasattr(system, "E"):
        return system.A, system.E
    a, e = system
    return a, e


def _dense(mat):
    return mat.toarray() if sp.issparse(mat) else np.asarray(mat)


def _matvec(mat, x):
    return mat @ x


def _shift_solver(a, e, sigma):
    """Factor (A - sigma E) once; returns a solve callable."""
    if sp.issparse(a) and sp.issparse(e):
        lu = spla.splu((a - sigma * e).tocsc().astype(complex))
        return lu.solve
    shifted = _dense(a).astype(complex) - sigma * _dense(e).astype(complex)
    lu, piv = la.lu_factor(shifted)
    return lambda rhs: la.lu_solve((lu, piv), rhs)


class SpectralReport:
    """Certified right-half-plane eigenvalues of a generalized pencil."""

    def __init__(self, eigenvalues, eigenvectors, residuals, margin, method,
                 block_counts=None):
        self.eigenvalues = np.asarray(eigenvalues)
        self.eigenvectors = eigenvectors
        self.residuals = np.asarray(residuals)
        self.margin = float(margin)
        self.method = method
        self.block_counts = block_counts

    def __len__(self):
        return len(self.eigenvalues)

    def to_text(self):
        lines = [f"unstable spectrum (margin {self.margin:g}, "
                 f"method {self.method}): {len(self)} eigenvalue(s)"]
        for lam, res in zip(self.eigenvalues, self.residuals):
            lines.append(f"  {lam.real:+.6e} {lam.imag:+.6e}i   "
                         f"residual {res:.2e}")
        if self.block_counts:
            parts = ", ".join(f"{k}: {v}" for k, v in self.block_counts.items())
            lines.append(f"  dominant blocks: {parts}")
        return "\n".join(lines)

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write("real,imag,residual\n")
            for lam, res in zip(self.eigenvalues, self.residuals):
                fh.write(f"{lam.real:.16e},{lam.imag:.16e},{res:.3e}\n")


def _pencil_residuals(a, e, lams, vecs):
    res = np.empty(len(lams))
    for j, lam in enumerate(lams):
        v = vecs[:, j]
        res[j] = np.linalg.norm(_matvec(a, v) - lam * _matvec(e, v)) \
            / np.linalg.norm(v)
    return res


def unstable_spectrum(system, margin=0.0,
                      shifts=(0.0, 0.5j, -0.5j, 1.0j, -1.0j),
                      dense_cutoff=2000, k_each=12, residual_tol=1e-8):
    """All pencil eigenvalues with Re > -margin, residual-certified.

    Below `dense_cutoff` states a dense generalized eigensolve is used;
    above it, shift-invert Arnoldi around the given imaginary-axis shifts.
    """
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    a, e = _as_pencil(system)
    n = a.shape[0]

    if n <= dense_cutoff:
        lam_all, vec_all = la.eig(_dense(a), _dense(e))
        keep = np.isfinite(lam_all) & (lam_all.real > -margin)
        lams, vecs = lam_all[keep], vec_all[:, keep]
        method = "dense"
    else:
        found_l, found_v = [], []
        k = min(k_each, n - 2)
        # fixed start vector keeps reruns bit-identical
        v0 = np.cos(1.0 + np.arange(n))
        for sigma in shifts:
            solve = _shift_solver(a, e, sigma)
            op = spla.LinearOperator((n, n), matvec=solve, dtype=complex)
            try:
                w, v = spla.eigs(a, k=k, M=e, sigma=sigma, OPinv=op,
                                 which="LM", v0=v0)
            except spla.ArpackNoConvergence as err:
                raise RuntimeError(
                    f"shift-invert eigensolver stalled at shift {sigma}: "
                    f"{len(err.eigenvalues)} of {k} converged") from err
            found_l.append(w)
            found_v.append(v)
        lam_all = np.concatenate(found_l)
        vec_all = np.hstack(found_v)
        order = np.argsort(-lam_all.real)
        lams, vecs = [], []
        for idx in order:
            lam = lam_all[idx]
            if not np.isfinite(lam) or lam.real <= -margin:
                continue
            if any(abs(lam - seen) <= 1e-6 * max(1.0, abs(seen))
                   for seen in lams):
                continue
            lams.append(lam)
            vecs.append(vec_all[:, idx])
        lams = np.asarray(lams)
        vecs = (np.column_stack(vecs) if len(lams)
                else np.zeros((n, 0), dtype=complex))
        method = f"shift-invert {list(shifts)}"

    order = np.argsort(-lams.real) if len(lams) else np.array([], dtype=int)
    lams, vecs = lams[order], vecs[:, order]
    residuals = _pencil_residuals(a, e, lams, vecs)
    bad = residuals > residual_tol
    if np.any(bad):
        raise RuntimeError("eigensolver returned uncertified eigenpairs: "
                           + ", ".join(f"{l:.4e} (res {r:.1e})"
                                       for l, r in zip(lams[bad],
                                                       residuals[bad])))
    counts = _block_counts(system, vecs)
    return SpectralReport(lams, vecs, residuals, margin, method, counts)


def _block_counts(system, vecs):
    offsets = getattr(system, "offsets", None)
    if offsets is None or vecs.shape[1] == 0:
        return None
    n_b, n_a = offsets["n_b"], offsets["n_a"]
    counts = {"plant": 0, "actuator": 0, "sensor": 0}
    for j in range(vecs.shape[1]):
        v = np.abs(vecs[:, j]) ** 2
        shares = {"plant": v[:n_b].sum(), "actuator": v[n_b:n_b + n_a].sum(),
                  "sensor": v[n_b + n_a:].sum()}
        counts[max(shares, key=shares.get)] += 1
    return counts


def eigenspace(a, e, lam, dense_cutoff=2000, cluster_tol=1e-7, k=6):
    """Orthonormal basis of the right eigenspace of (A, E) near lam."""
    a_d, n = a, a.shape[0]
    if n <= dense_cutoff:
        shifted = _dense(a_d).astype(complex) - lam * _dense(e).astype(complex)
        svals = la.svdvals(shifted)
        scale = svals[0]
        dim = int((svals <= 1e-10 * scale).sum())
        dim = max(dim, 1)
        _, _, vh = la.svd(shifted)
        return vh[-dim:].conj().T
    solve = _shift_solver(a, e, lam * (1 + 1e-10) + 1e-12)
    op = spla.LinearOperator((n, n), matvec=solve, dtype=complex)
    w, v = spla.eigs(a, k=min(k, n - 2), M=e,
                     sigma=lam * (1 + 1e-10) + 1e-12, OPinv=op, which="LM",
                     v0=np.cos(1.0 + np.arange(n)))
    near = np.abs(w - lam) <= cluster_tol * max(1.0, abs(lam))
    if not np.any(near):
        raise RuntimeError(f"no eigenvalue found near {lam}")
    basis, _ = np.linalg.qr(v[:, near])
    return basis


def _subspace_sigma(prod, dim):
    """Smallest singular value of `prod` seen as a map on a dim-dimensional
    subspace; zero when the row count cannot cover the subspace."""
    if dim == 0:
        return np.inf
    if prod.shape[0] < dim:
        return 0.0
    return float(la.svdvals(prod)[dim - 1])


def hautus_check(a, e, test_matrix, side, candidates, threshold=None,
                 dense_cutoff=2000):
    """Eigenvector-level PBH test at the candidate eigenvalues.

    side "detectability": smallest singular value of C V over the right
    eigenspace V; side "stabilizability": smallest singular value of B^H W
    over the adjoint eigenspace W. PASS when sigma exceeds the threshold
    (default 1e-8 times the test matrix norm).
    """
    if side not in ("detectability", "stabilizability"):
        raise ValueError(f"unknown side {side!r}")
    m = _dense(test_matrix)
    if threshold is None:
        threshold = 1e-8 * (la.svdvals(m)[0] if m.size else 0.0)
    records = []
    candidates = np.atleast_1d(np.asarray(candidates, dtype=complex))
    for lam in candidates:
        if side == "detectability":
            basis = eigenspace(a, e, lam, dense_cutoff)
            prod = m @ basis
        else:
            at = a.T.conj() if sp.issparse(a) else _dense(a).conj().T
            et = e.T.conj() if sp.issparse(e) else _dense(e).conj().T
            basis = eigenspace(at, et, np.conj(lam), dense_cutoff)
            prod = m.conj().T @ basis
        multiplicity = int((np.abs(candidates - lam)
                            <= 1e-7 * max(1.0, abs(lam))).sum())
        if basis.shape[1] < multiplicity:
            warnings.warn(f"eigenvalue {lam:.4e} appears defective "
                          f"(geometric {basis.shape[1]} < listed "
                          f"{multiplicity}); using the computed subspace")
        sigma = _subspace_sigma(prod, basis.shape[1]) if prod.size else 0.0
        records.append({"eigenvalue": lam, "sigma_min": float(sigma),
                        "threshold": float(threshold),
                        "verdict": "PASS" if sigma > threshold else "FAIL",
                        "side": side, "subspace_dim": basis.shape[1]})
    return records


@dataclass
class AssumptionItem:
    assumption: str
    item: str
    subject: complex
    sigma_min: float
    threshold: float
    verdict: str
    note: str = ""


@dataclass
class AssumptionReport:
    items: list = field(default_factory=list)
    plant_spectrum: SpectralReport = None

    @property
    def passed(self):
        return all(i.verdict == "PASS" for i in self.items)

    def to_text(self):
        lines = ["cascade assumption report"]
        if self.plant_spectrum is not None:
            lines.append(self.plant_spectrum.to_text())
        for i in self.items:
            tail = f"  ({i.note})" if i.note else ""
            lines.append(f"  [{i.verdict}] {i.assumption} {i.item}: "
                         f"subject {i.subject:.4g}, sigma_min "
                         f"{i.sigma_min:.3e} vs {i.threshold:.1e}{tail}")
        return "\n".join(lines)

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write("assumption,item,subject_real,subject_imag,"
                     "sigma_min,threshold,verdict,note\n")
            for i in self.items:
                s = complex(i.subject)
                fh.write(f"{i.assumption},{i.item},{s.real:.10e},"
                         f"{s.imag:.10e},{i.sigma_min:.6e},"
                         f"{i.threshold:.3e},{i.verdict},{i.note}\n")


def _unstable_of(mat, margin):
    lam = la.eigvals(np.atleast_2d(mat))
    return lam[lam.real > -margin]


def _guarded_transfer(fn, *args):
    """Transfer evaluation that reports a singular resolvent as None."""
    try:
        mat = fn(*args)
    except (np.linalg.LinAlgError, RuntimeError):
        return None
    if not np.all(np.isfinite(mat)):
        return None
    return mat


def cascade_assumption_check(plant, actsens, frequencies, margin=0.0,
                             dense_cutoff=2000):
    """Numerical verification of the detectability/stabilizability chain
    assumptions and the no-transmission-zero condition.

    `plant` is an ODE-form DiscretePlant; `frequencies` the tracked set
    including 0. Only unstable block eigenvalues can violate the kernel
    conditions, so the checks enumerate those.
    """
    report = AssumptionReport()
    a_b, e_b = plant.A, plant.E
    b_b, c_b = _dense(plant.B), _dense(plant.C)

    plant_spec = unstable_spectrum(plant, margin=margin,
                                   dense_cutoff=dense_cutoff)
    report.plant_spectrum = plant_spec
    lam_b = plant_spec.eigenvalues
    lam_a = _unstable_of(actsens.a_a, margin)
    lam_s = _unstable_of(actsens.a_s, margin)

    # pairwise disjointness of unstable spectra (detectability chain (i);
    # the adjoint spectra coincide, so this covers both assumptions)
    gap = np.inf
    for one, two in ((lam_b, lam_a), (lam_b, lam_s), (lam_a, lam_s)):
        for x in one:
            for y in two:
                gap = min(gap, abs(x - y))
    report.items.append(AssumptionItem(
        "detectability-chain", "spectra-disjoint", 0.0,
        float(gap if np.isfinite(gap) else np.inf), 1e-8,
        "PASS" if gap > 1e-8 else "FAIL",
        "vacuous" if not np.isfinite(gap) else ""))

    # sensor detectability and actuator stabilizability (items (ii))
    for name, mat_a, mat_m, side, lams in (
            ("detectability-chain", actsens.a_s, actsens.c_s,
             "detectability", lam_s),
            ("stabilizability-chain", actsens.a_a, actsens.b_a,
             "stabilizability", lam_a)):
        if len(lams) == 0:
            report.items.append(AssumptionItem(
                name, f"block-{side}", 0.0, np.inf, 0.0, "PASS",
                "vacuous: block has no unstable eigenvalues"))
        else:
            eye = np.eye(np.atleast_2d(mat_a).shape[0])
            for rec in hautus_check(np.atleast_2d(mat_a), eye, mat_m, side,
                                    lams):
                report.items.append(AssumptionItem(
                    name, f"block-{side}", rec["eigenvalue"],
                    rec["sigma_min"], rec["threshold"], rec["verdict"]))

    # kernel conditions (iii)-(iv) at the plant's unstable eigenvalues
    for lam in lam_b:
        v = eigenspace(a_b, e_b, lam, dense_cutoff)
        thr = 1e-8 * la.svdvals(c_b)[0]
        p_s = _guarded_transfer(static_transfer, actsens.a_s, actsens.b_s,
                                actsens.c_s, lam)
        if p_s is None:
            report.items.append(AssumptionItem(
                "detectability-chain", "sensor-sees-plant-mode", lam,
                0.0, thr, "FAIL",
                "sensor resolvent singular: spectra overlap"))
        else:
            prod = p_s @ (c_b @ v)
            sigma = _subspace_sigma(prod, v.shape[1])
            report.items.append(AssumptionItem(
                "detectability-chain", "sensor-sees-plant-mode", lam,
                float(sigma), thr, "PASS" if sigma > thr else "FAIL"))

        at = a_b.T.conj() if sp.issparse(a_b) else _dense(a_b).conj().T
        et = e_b.T.conj() if sp.issparse(e_b) else _dense(e_b).conj().T
        w = eigenspace(at, et, np.conj(lam), dense_cutoff)
        thr = 1e-8 * la.svdvals(b_b)[0]
        p_a = _guarded_transfer(static_transfer, actsens.a_a, actsens.b_a,
                                actsens.c_a, np.conj(lam))
        if p_a is None:
            report.items.append(AssumptionItem(
                "stabilizability-chain", "actuator-reaches-plant-mode", lam,
                0.0, thr, "FAIL",
                "actuator resolvent singular: spectra overlap"))
        else:
            prod = p_a.conj().T @ (b_b.conj().T @ w)
            sigma = _subspace_sigma(prod, w.shape[1])
            report.items.append(AssumptionItem(
                "stabilizability-chain", "actuator-reaches-plant-mode", lam,
                float(sigma), thr, "PASS" if sigma > thr else "FAIL"))

    # kernel conditions at unstable actuator/sensor eigenvalues (vacuous
    # for stable blocks)
    for lam in lam_a:
        v_a = eigenspace(np.atleast_2d(actsens.a_a),
                         np.eye(np.atleast_2d(actsens.a_a).shape[0]), lam)
        thr = 1e-8 * la.svdvals(actsens.c_a)[0]
        p_s = _guarded_transfer(static_transfer, actsens.a_s, actsens.b_s,
                                actsens.c_s, lam)
        p_b = _guarded_transfer(transfer_function, e_b, a_b, b_b, c_b, lam)
        if p_s is None or p_b is None:
            report.items.append(AssumptionItem(
                "detectability-chain", "chain-sees-actuator-mode", lam,
                0.0, thr, "FAIL",
                "plant or sensor resolvent singular: spectra overlap"))
            continue
        prod = p_s @ p_b @ (actsens.c_a @ v_a)
        sigma = _subspace_sigma(prod, v_a.shape[1])
        report.items.append(AssumptionItem(
            "detectability-chain", "chain-sees-actuator-mode", lam,
            float(sigma), thr, "PASS" if sigma > thr else "FAIL"))
    for lam in lam_s:
        w_s = eigenspace(np.atleast_2d(actsens.a_s).conj().T,
                         np.eye(np.atleast_2d(actsens.a_s).shape[0]),
                         np.conj(lam))
        thr = 1e-8 * la.svdvals(actsens.b_s)[0]
        p_a = _guarded_transfer(static_transfer, actsens.a_a, actsens.b_a,
                                actsens.c_a, np.conj(lam))
        p_b = _guarded_transfer(transfer_function, e_b, a_b, b_b, c_b,
                                np.conj(lam))
        if p_a is None or p_b is None:
            report.items.append(AssumptionItem(
                "stabilizability-chain", "chain-reaches-sensor-mode", lam,
                0.0, thr, "FAIL",
                "plant or actuator resolvent singular: spectra overlap"))
            continue
        prod = p_a.conj().T @ p_b.conj().T @ (actsens.b_s.conj().T @ w_s)
        sigma = _subspace_sigma(prod, w_s.shape[1])
        report.items.append(AssumptionItem(
            "stabilizability-chain", "chain-reaches-sensor-mode", lam,
            float(sigma), thr, "PASS" if sigma > thr else "FAIL"))

    # no transmission zeros at the tracked frequencies
    all_lams = np.concatenate([lam_b, lam_a, lam_s]) if len(lam_b) else \
        np.concatenate([lam_a, lam_s]) if len(lam_a) or len(lam_s) else \
        np.array([], dtype=complex)
    for omega in frequencies:
        s = 1j * float(omega)
        dist = np.abs(all_lams - s).min() if len(all_lams) else np.inf
        if dist <= 1e-8:
            report.items.append(AssumptionItem(
                "no-transmission-zeros", "resolvent", s, 0.0, 1e-8, "FAIL",
                "frequency coincides with a pencil eigenvalue"))
            continue
        p_a = _guarded_transfer(static_transfer, actsens.a_a, actsens.b_a,
                                actsens.c_a, s)
        p_s = _guarded_transfer(static_transfer, actsens.a_s, actsens.b_s,
                                actsens.c_s, s)
        p_b = _guarded_transfer(transfer_function, e_b, a_b, b_b, c_b, s)
        if p_a is None or p_s is None or p_b is None:
            report.items.append(AssumptionItem(
                "no-transmission-zeros", "resolvent", s, 0.0, 1e-8, "FAIL",
                "frequency coincides with a pencil eigenvalue"))
            continue
        for name, mat in (("plant", p_b), ("actuator", p_a), ("sensor", p_s),
                          ("cascade", p_s @ p_b @ p_a)):
            svals = la.svdvals(mat)
            sigma, thr = svals[-1], 1e-8 * svals[0]
            report.items.append(AssumptionItem(
                "no-transmission-zeros", f"{name}-surjective", s,
                float(sigma), float(thr),
                "PASS" if sigma > thr else "FAIL"))
    return report
