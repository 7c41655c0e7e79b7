import numpy as np
import pytest
import scipy.sparse as sp

from roomctrl.cascade import ActuatorSensor, DiscretePlant, couple_cascade
from roomctrl.simulate import (ClosedLoopTrajectory, ExogenousSignals,
                               assemble_closed_loop, envelope_rate,
                               error_metrics, evaluate_signals, integrate,
                               plant_deviation_state, write_snapshots,
                               write_trajectory)
from roomctrl.synthesis import (ControllerRealization, SignalSpec,
                                SynthesisParams, synthesize_controller)


def tracked_spec(p=3):
    return SignalSpec([0.0, 0.5, 1.0, 2.0], [1, 1, 1, 1], p)


def room_style_signals(spec):
    """Sinusoid mix with offsets in the tracked frequency class."""
    return ExogenousSignals(
        spec,
        reference=[
            [(0.0, [-1.0], None), (1.0, None, [1.0]), (2.0, [0.3], None)],
            [(0.5, [0.5], None)],
            [(0.0, [1.0], None), (2.0, None, [0.5])],
        ],
        disturbance=[[(0.5, None, [2.0])]],
    )


def zero_controller(m, p):
    """Trivial realization: no observer states, zero gains everywhere."""
    return ControllerRealization(
        internal_g1=np.zeros((1, 1)), internal_g2=np.zeros((1, p)),
        k1=np.zeros((m, 1)), observer_a=np.zeros((0, 0)),
        observer_b=np.zeros((0, m)), observer_l=np.zeros((0, p)),
        k2=np.zeros((m, 0)))


def scalar_plant(a=-1.0, e=1.0):
    return DiscretePlant("ode", np.array([[e]]), np.array([[a]]),
                         np.array([[1.0]]), np.array([[1.0]]),
                         np.array([[1.0]]), {"all": 1})


def zero_signals(n_outputs=1, n_dist=1):
    spec = SignalSpec([0.0], [1], n_outputs)
    ref = [[(0.0, [0.0], None)] for _ in range(n_outputs)]
    dist = [[(0.0, [0.0], None)] for _ in range(n_dist)]
    return ExogenousSignals(spec, ref, dist)


def small_cascade(seed=7, n=18, m=3, p=3):
    """Mildly unstable random plant behind unit actuator/sensor lags."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) / np.sqrt(n) - 1.2 * np.eye(n)
    a[:2, :2] = [[0.25, 0.9], [-0.9, 0.25]]
    a[:2, 2:] = 0.0
    a[2:, :2] = 0.0
    b = rng.standard_normal((n, m))
    b_d = rng.standard_normal((n, 1))
    c = rng.standard_normal((p, n))
    e = np.diag(rng.uniform(0.8, 1.6, size=n))
    plant = DiscretePlant("ode", e, a, b, b_d, c, {"all": n})
    return couple_cascade(plant, ActuatorSensor.unit_lags(m, p))


@pytest.fixture(scope="module")
def tracking_loop():
    """Closed loop around a full-order controller, plus its trajectory."""
    system = small_cascade()
    spec = tracked_spec()
    # full-order observer so closed-loop stability is structural, not a
    # property of this particular random system's Hankel decay
    ctrl = synthesize_controller(system, spec,
                                 SynthesisParams(reduced_order=system.dim))
    signals = room_style_signals(spec)
    loop = assemble_closed_loop(system, ctrl)
    rng = np.random.default_rng(3)
    x0 = np.zeros(loop.dim)
    x0[:18] = rng.standard_normal(18)
    traj = integrate(loop, signals, x0, 60.0, 0.02)
    return system, ctrl, signals, loop, x0, traj


# ---------------------------------------------------------------------------
# exogenous signals


def test_reference_values_at_pinned_times():
    signals = room_style_signals(tracked_spec())
    y_ref, u_d = evaluate_signals(signals, 0.0)
    # -1 + sin 0 + 0.3 cos 0 = -0.7
    assert y_ref[0] == pytest.approx(-0.7, abs=1e-14)
    assert y_ref[1] == pytest.approx(0.5, abs=1e-14)
    assert y_ref[2] == pytest.approx(1.0, abs=1e-14)
    _, u_d_pi = evaluate_signals(signals, np.pi)
    # 2 sin(pi/2) = 2
    assert u_d_pi[0] == pytest.approx(2.0, abs=1e-14)


def test_signal_evaluation_matches_closed_form_on_grid():
    signals = room_style_signals(tracked_spec())
    t = np.linspace(0.0, 20.0, 401)
    y_ref, u_d = signals.evaluate(t)
    assert y_ref.shape == (3, 401)
    assert u_d.shape == (1, 401)
    np.testing.assert_allclose(
        y_ref[0], -1.0 + np.sin(t) + 0.3 * np.cos(2 * t), atol=1e-13)
    np.testing.assert_allclose(y_ref[1], 0.5 * np.cos(0.5 * t), atol=1e-13)
    np.testing.assert_allclose(u_d[0], 2.0 * np.sin(0.5 * t), atol=1e-13)


def test_zero_coefficients_evaluate_to_zero():
    signals = zero_signals(n_outputs=2, n_dist=1)
    y_ref, u_d = signals.evaluate(np.linspace(0, 5, 11))
    assert not y_ref.any()
    assert not u_d.any()


def test_untracked_frequency_is_rejected():
    spec = tracked_spec()
    with pytest.raises(ValueError, match="outside the tracked set"):
        ExogenousSignals(spec, [[(0.3, [1.0], None)], [], []], [])


def test_overlong_polynomial_is_rejected():
    spec = SignalSpec([1.0], [2], 1)
    ExogenousSignals(spec, [[(1.0, [1.0, 2.0], None)]], [])
    with pytest.raises(ValueError, match="polynomial degree"):
        ExogenousSignals(spec, [[(1.0, [1.0, 2.0, 3.0], None)]], [])


def test_polynomial_coefficients_multiply_the_carrier():
    spec = SignalSpec([0.0, 1.0], [3, 2], 1)
    signals = ExogenousSignals(
        spec, [[(0.0, [1.0, 0.0, 2.0], None), (1.0, None, [0.0, 1.0])]], [])
    t = np.linspace(0.0, 3.0, 7)
    y_ref, _ = signals.evaluate(t)
    np.testing.assert_allclose(y_ref[0], 1 + 2 * t ** 2 + t * np.sin(t),
                               atol=1e-13)


def test_reference_channel_count_must_match_spec():
    with pytest.raises(ValueError, match="one channel per output"):
        ExogenousSignals(tracked_spec(), [[], []], [])


# ---------------------------------------------------------------------------
# closed-loop assembly


def test_closed_loop_block_pattern(tracking_loop):
    system, ctrl, _, loop, _, _ = tracking_loop
    n, z = system.dim, ctrl.dim
    a_e = loop.A.toarray() if sp.issparse(loop.A) else loop.A
    e_e = loop.E.toarray() if sp.issparse(loop.E) else loop.E
    b_e = loop.B.toarray() if sp.issparse(loop.B) else loop.B
    a_sys = system.A.toarray() if sp.issparse(system.A) else system.A
    e_sys = system.E.toarray() if sp.issparse(system.E) else system.E
    np.testing.assert_allclose(a_e[:n, :n], a_sys, atol=1e-14)
    np.testing.assert_allclose(a_e[:n, n:], system.B @ ctrl.k, atol=1e-14)
    np.testing.assert_allclose(a_e[n:, :n], ctrl.g2 @ system.C, atol=1e-14)
    np.testing.assert_allclose(a_e[n:, n:], ctrl.g1, atol=1e-14)
    np.testing.assert_allclose(e_e[:n, :n], e_sys, atol=1e-14)
    np.testing.assert_allclose(e_e[n:, n:], np.eye(z), atol=1e-14)
    n_d = system.B_d.shape[1]
    np.testing.assert_allclose(b_e[:n, :n_d], system.B_d, atol=1e-14)
    np.testing.assert_allclose(b_e[n:, n_d:], -ctrl.g2, atol=1e-14)
    assert not b_e[:n, n_d:].any() and not b_e[n:, :n_d].any()
    np.testing.assert_allclose(loop.C[:, :n], system.C, atol=1e-14)
    assert not loop.C[:, n:].any()
    np.testing.assert_allclose(loop.D[:, n_d:], -np.eye(3), atol=1e-14)
    assert not loop.D[:, :n_d].any()


def test_output_map_vanishes_on_zero_plant_state(tracking_loop):
    system, _, _, loop, _, _ = tracking_loop
    x_e = np.zeros(loop.dim)
    x_e[system.dim:] = 1.0
    assert not (loop.C @ x_e).any()


def test_io_dimension_mismatch_is_rejected():
    plant = DiscretePlant("ode", np.eye(2), -np.eye(2), np.ones((2, 1)),
                          np.ones((2, 1)), np.ones((2, 2)), {"all": 2})
    with pytest.raises(ValueError, match="consumes 1 outputs"):
        assemble_closed_loop(plant, zero_controller(1, 1))
    with pytest.raises(ValueError, match="produces 1 inputs, plant takes 2"):
        assemble_closed_loop(
            DiscretePlant("ode", np.eye(2), -np.eye(2), np.ones((2, 2)),
                          np.ones((2, 1)), np.ones((1, 2)), {"all": 2}),
            zero_controller(1, 1))


# ---------------------------------------------------------------------------
# integration


def test_zero_state_and_zero_signals_stay_zero():
    loop = assemble_closed_loop(scalar_plant(), zero_controller(1, 1))
    traj = integrate(loop, zero_signals(), np.zeros(2), 1.0, 0.01)
    assert not traj.y.any() and not traj.error.any()
    assert not traj.control.any()


def test_trapezoidal_matches_scalar_decay():
    # uncontrolled x' = -x from 1: exact e^{-t}
    loop = assemble_closed_loop(scalar_plant(), zero_controller(1, 1))
    traj = integrate(loop, zero_signals(), np.array([1.0, 0.0]), 10.0, 1e-3,
                     snapshot_times=[0.0, 0.5])
    assert np.max(np.abs(traj.y[:, 0] - np.exp(-traj.t))) < 1e-6
    assert traj.meta["method"] == "trapezoidal"
    assert traj.meta["dt"] == 1e-3
    np.testing.assert_allclose(traj.snapshots[0.0], [1.0], atol=0)
    assert traj.snapshots[0.5][0] == pytest.approx(np.exp(-0.5), abs=1e-6)


def test_mass_matrix_scaling_is_honoured():
    # 2 x' = -x decays at rate 1/2
    loop = assemble_closed_loop(scalar_plant(a=-1.0, e=2.0),
                                zero_controller(1, 1))
    traj = integrate(loop, zero_signals(), np.array([1.0, 0.0]), 8.0, 1e-3)
    assert np.max(np.abs(traj.y[:, 0] - np.exp(-0.5 * traj.t))) < 1e-6


def test_singular_step_operator_is_reported():
    plant = DiscretePlant("ode", np.array([[0.0]]), np.array([[0.0]]),
                          np.array([[1.0]]), np.array([[1.0]]),
                          np.array([[1.0]]), {"all": 1})
    loop = assemble_closed_loop(plant, zero_controller(1, 1))
    with pytest.raises(RuntimeError, match="singular"):
        integrate(loop, zero_signals(), np.zeros(2), 1.0, 0.01)


@pytest.mark.filterwarnings("ignore:overflow")
def test_state_blowup_reports_step_index():
    loop = assemble_closed_loop(scalar_plant(a=1e10), zero_controller(1, 1))
    with pytest.raises(RuntimeError, match="step 1"):
        integrate(loop, zero_signals(), np.array([1e308, 0.0]), 1.0, 0.01)


def test_initial_state_dimension_checked(tracking_loop):
    _, _, signals, loop, _, _ = tracking_loop
    with pytest.raises(ValueError, match="dimension"):
        integrate(loop, signals, np.zeros(loop.dim - 1), 1.0, 0.01)


def test_sparse_and_dense_paths_agree():
    system = small_cascade(seed=11)
    spec = tracked_spec()
    ctrl = synthesize_controller(system, spec,
                                 SynthesisParams(reduced_order=system.dim))
    signals = room_style_signals(spec)
    sparse_plant = DiscretePlant("ode", sp.csr_matrix(system.plant.E),
                                 sp.csr_matrix(system.plant.A),
                                 system.plant.B, system.plant.B_d,
                                 system.plant.C, system.plant.layout)
    sparse_sys = couple_cascade(sparse_plant, system.actsens)
    rng = np.random.default_rng(0)
    x0 = np.concatenate([rng.standard_normal(18), np.zeros(6 + ctrl.dim)])
    dense = integrate(assemble_closed_loop(system, ctrl), signals, x0,
                      2.0, 0.01)
    sparse = integrate(assemble_closed_loop(sparse_sys, ctrl), signals, x0,
                       2.0, 0.01)
    assert sp.issparse(assemble_closed_loop(sparse_sys, ctrl).A)
    np.testing.assert_allclose(sparse.y, dense.y, atol=1e-10)
    np.testing.assert_allclose(sparse.control, dense.control, atol=1e-10)


# ---------------------------------------------------------------------------
# tracking behaviour


def test_tracking_error_decays(tracking_loop):
    _, _, _, _, _, traj = tracking_loop
    sup_ref = np.max(np.abs(traj.y_ref), axis=0)
    sup_late, _ = error_metrics(traj, (50.0, 60.0))
    assert np.all(sup_late <= 0.02 * sup_ref)
    assert envelope_rate(traj, (5.0, 45.0)) < -0.05


def test_boundary_input_column_tracks_actuator(tracking_loop):
    system, _, _, _, _, traj = tracking_loop
    assert traj.boundary_input.shape == (len(traj.t), 3)
    assert traj.boundary_input.any()
    # unit lags: u_b = x_a, which obeys x_a' = -x_a + u; check the residual
    # of that ODE by central differences once the fast transient is gone
    dt = traj.meta["dt"]
    deriv = (traj.boundary_input[2:] - traj.boundary_input[:-2]) / (2 * dt)
    resid = deriv + traj.boundary_input[1:-1] - traj.control[1:-1]
    tail = traj.t[1:-1] >= 10.0
    assert np.max(np.abs(resid[tail])) < 5e-3


def test_halving_dt_barely_moves_windowed_metrics(tracking_loop):
    _, _, signals, loop, x0, traj = tracking_loop
    fine = integrate(loop, signals, x0, 20.0, 0.01)
    sup_a, rms_a = error_metrics(traj, (5.0, 15.0))
    sup_b, rms_b = error_metrics(fine, (5.0, 15.0))
    assert np.all(np.abs(sup_a - sup_b) <= 0.1 * sup_b)
    assert np.all(np.abs(rms_a - rms_b) <= 0.1 * rms_b)


# ---------------------------------------------------------------------------
# metrics and output files


def test_error_metrics_on_known_samples():
    t = np.array([0.0, 1.0, 2.0])
    err = np.array([[1.0], [-2.0], [3.0]])
    traj = ClosedLoopTrajectory(t, err, np.zeros_like(err), err, None, None)
    sup, rms = error_metrics(traj, (0.0, 2.0))
    assert sup[0] == pytest.approx(3.0)
    assert rms[0] == pytest.approx(np.sqrt(14.0 / 3.0))
    with pytest.raises(ValueError, match="no samples"):
        error_metrics(traj, (5.0, 6.0))


def test_envelope_rate_recovers_exact_exponent():
    t = np.linspace(0.0, 10.0, 201)
    err = np.exp(-0.5 * t)[:, None]
    traj = ClosedLoopTrajectory(t, err, np.zeros_like(err), err, None, None)
    assert envelope_rate(traj, (0.0, 10.0)) == pytest.approx(-0.5, abs=1e-10)
    with pytest.raises(ValueError, match="no samples"):
        envelope_rate(traj, (11.0, 12.0))


def test_trajectory_csv_round_trip(tracking_loop, tmp_path):
    _, _, _, _, _, traj = tracking_loop
    path = write_trajectory(traj, tmp_path / "run.csv")
    table = np.genfromtxt(path, delimiter=",", names=True)
    assert table.dtype.names[:4] == ("t", "y_1", "y_2", "y_3")
    assert "u_b_2" in table.dtype.names
    np.testing.assert_allclose(table["e_2"], traj.error[:, 1], atol=1e-12)
    np.testing.assert_allclose(table["y_ref_1"], traj.y_ref[:, 0],
                               atol=1e-12)
    assert len(table) == len(traj.t)


def test_snapshot_files_cover_all_fields(room8, tmp_path):
    spaces = room8.spaces
    n_state = spaces.n_velocity + spaces.n_temperature
    state = np.arange(1.0, n_state + 1.0)
    traj = ClosedLoopTrajectory(np.array([0.0]), np.zeros((1, 3)),
                                np.zeros((1, 3)), np.zeros((1, 3)),
                                None, None, snapshots={2.5: state})
    files = write_snapshots(traj, spaces, tmp_path)
    assert len(files) == 1 and files[0].name.startswith("state_t")
    rows = np.genfromtxt(files[0], delimiter=",", names=True,
                         dtype=["U16", int, float])
    fields = set(rows["field"])
    assert fields == {"vx", "vy", "temperature"}
    # expansion puts the free dofs back at mesh indices
    vx = rows[rows["field"] == "vx"]["value"]
    np.testing.assert_allclose(vx[spaces.velocity_free],
                               state[:spaces.n_velocity // 2], atol=0)


def test_plant_deviation_state_layout(room8):
    import types
    spaces = room8.spaces
    dev = plant_deviation_state(spaces, room8.intermediate, room8.steady)
    assert dev.shape == (spaces.n_velocity + spaces.n_temperature,)
    assert np.linalg.norm(dev) > 0
    zero = plant_deviation_state(spaces, room8.steady, room8.steady)
    assert not zero.any()
    shifted = types.SimpleNamespace(
        velocity=room8.steady.velocity + 2.0,
        temperature=room8.steady.temperature + 3.0)
    offset = plant_deviation_state(spaces, shifted, room8.steady)
    np.testing.assert_allclose(offset[:spaces.n_velocity], 2.0, atol=1e-12)
    np.testing.assert_allclose(offset[spaces.n_velocity:], 3.0, atol=1e-12)
