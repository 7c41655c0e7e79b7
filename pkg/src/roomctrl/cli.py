"""Command-line pipeline driver.

Commands chain the stages steady -> analyze -> synthesize -> simulate
over one scenario file; `full` runs all of them. Heavy intermediates
(steady states, the controller) are cached in the output directory,
keyed by a content hash of the scenario sections that produce them, so
reruns and downstream stages reuse earlier work.
"""

import argparse
import copy
import json
import pathlib
import sys
import time

import numpy as np

from . import analysis, cascade, simulate, steady, synthesis
from .fem import FemSpaces
from .meshing import build_mesh
from .scenario import (ScenarioError, bundled_scenario_path, parse_scenario,
                       scenario_from_dict)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="roomctrl",
        description="Robust output tracking for a ventilated room: steady "
                    "flow, stability analysis, controller synthesis, and "
                    "closed-loop simulation.")
    parser.add_argument("command",
                        choices=["steady", "analyze", "synthesize",
                                 "simulate", "full"])
    parser.add_argument("--scenario", required=True,
                        help="scenario file path, or the name of a bundled "
                             "scenario such as 'room'")
    parser.add_argument("--out", default="roomctrl-out",
                        help="output directory (default: %(default)s)")
    parser.add_argument("--mesh-override", type=int, default=None,
                        help="cells per unit side for both meshes")
    parser.add_argument("--dt", type=float, default=None,
                        help="time step override")
    parser.add_argument("--t-end", type=float, default=None,
                        help="horizon override")
    return parser


def _load_scenario(arg, mesh_override=None, dt=None, t_end=None):
    path = pathlib.Path(arg)
    if path.is_file():
        sc = parse_scenario(path)
    else:
        sc = parse_scenario(bundled_scenario_path(arg))
    if mesh_override is None and dt is None and t_end is None:
        return sc
    # overrides flow through the normalized dict so cache keys see them
    norm = copy.deepcopy(sc.normalized)
    if mesh_override is not None:
        norm["mesh"]["synthesis"] = mesh_override
        norm["mesh"]["simulation"] = mesh_override
    if dt is not None:
        norm["time"]["dt"] = float(dt)
    if t_end is not None:
        norm["time"]["t_end"] = float(t_end)
    return scenario_from_dict(norm)


class PipelineRunner:
    """Executes pipeline stages for one scenario into one directory."""

    def __init__(self, scenario, out_dir):
        self.sc = scenario
        self.out = pathlib.Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cache = self.out / "cache"
        self.cache.mkdir(exist_ok=True)
        self._setups = {}
        self._stage_info = {}

    # -- shared builders ----------------------------------------------

    def steady_key(self, n):
        return "n%d-%s" % (n, self.sc.section_hash("geometry", "physics",
                                                   "forcing"))

    def controller_key(self):
        base = self.steady_key(self.sc.mesh_synthesis)
        rest = self.sc.section_hash("shapes", "observations", "actuator",
                                    "sensor", "synthesis")
        sig = self.sc.section_hash("signals")
        return "-".join([base, rest, sig])

    def setup(self, n):
        """Mesh, spaces, and both steady states at resolution n, cached."""
        if n in self._setups:
            return self._setups[n]
        mesh = build_mesh(self.sc.geometry, n)
        spaces = FemSpaces(mesh)
        key = self.steady_key(n)
        final_file = self.cache / ("steady-final-%s.csv" % key)
        inter_file = self.cache / ("steady-intermediate-%s.csv" % key)
        has_stage = self.sc.forcing.has_continuation_stage()
        intermediate = final = None
        if final_file.is_file() and (inter_file.is_file() or not has_stage):
            final = steady.load_steady_state(final_file, mesh)
            if has_stage:
                intermediate = steady.load_steady_state(inter_file, mesh)
            cached = True
        else:
            intermediate, final = steady.solve_with_continuation(
                mesh, spaces, self.sc.params, self.sc.forcing)
            steady.save_steady_state(final_file, final, mesh)
            if intermediate is not None:
                steady.save_steady_state(inter_file, intermediate, mesh)
            cached = False
        result = {"mesh": mesh, "spaces": spaces,
                  "intermediate": intermediate, "final": final,
                  "cached": cached}
        self._setups[n] = result
        return result

    def saddle_plant(self, n):
        box = self.setup(n)
        if "saddle" not in box:
            box["saddle"] = cascade.linearize(
                box["mesh"], box["spaces"], self.sc.params, box["final"],
                self.sc.shapes, self.sc.observations)
        return box["saddle"]

    def penalty_plant(self, n):
        box = self.setup(n)
        if "penalty" not in box:
            box["penalty"] = cascade.eliminate_pressure(
                self.saddle_plant(n), method="penalty",
                eps_p=self.sc.penalty)
        return box["penalty"]

    # -- stages --------------------------------------------------------

    def stage_steady(self):
        n = self.sc.mesh_synthesis
        box = self.setup(n)
        final_out = self.out / "steady_final.csv"
        steady.save_steady_state(final_out, box["final"], box["mesh"])
        written = [final_out]
        if box["intermediate"] is not None:
            inter_out = self.out / "steady_intermediate.csv"
            steady.save_steady_state(inter_out, box["intermediate"],
                                     box["mesh"])
            written.append(inter_out)
        info = {"mesh": n, "residual_norm": box["final"].residual_norm,
                "newton_iterations": len(box["final"].residual_history) - 1,
                "cached": box["cached"],
                "files": [str(p) for p in written]}
        self._stage_info["steady"] = info
        print("stage steady: residual %.3e after %d Newton steps (n=%d%s)"
              % (info["residual_norm"], info["newton_iterations"], n,
                 ", cached" if box["cached"] else ""))

    def stage_analyze(self):
        n = self.sc.mesh_synthesis
        plant = self.penalty_plant(n)
        report = analysis.unstable_spectrum((plant.A, plant.E))
        report.save_csv(self.out / "spectral_report.csv")
        (self.out / "spectral_report.txt").write_text(report.to_text() + "\n")
        assumptions = analysis.cascade_assumption_check(
            plant, self.sc.actsens, self.sc.signal_spec.frequencies)
        assumptions.save_csv(self.out / "assumption_report.csv")
        (self.out / "assumption_report.txt").write_text(
            assumptions.to_text() + "\n")
        info = {"mesh": n, "unstable_count": len(report),
                "eigenvalues": [[lam.real, lam.imag]
                                for lam in report.eigenvalues],
                "assumptions_passed": bool(assumptions.passed)}
        self._stage_info["analyze"] = info
        print("stage analyze: %d unstable eigenvalue(s), assumption checks "
              "%s" % (len(report),
                      "passed" if assumptions.passed else "FAILED"))

    def stage_synthesize(self):
        key = self.controller_key()
        ctrl_dir = self.out / "controller"
        key_file = self.cache / "controller.key"
        if (ctrl_dir / "controller.json").is_file() and key_file.is_file() \
                and key_file.read_text().strip() == key:
            ctrl = synthesis.load_controller(ctrl_dir)
            cached = True
        else:
            n = self.sc.mesh_synthesis
            design = cascade.eliminate_pressure(self.saddle_plant(n),
                                                method="nullspace")
            system = cascade.couple_cascade(design, self.sc.actsens)
            ctrl = synthesis.synthesize_controller(
                system, self.sc.signal_spec, self.sc.synthesis)
            synthesis.save_controller(ctrl, ctrl_dir)
            key_file.write_text(key + "\n")
            cached = False
        info = {"dim": ctrl.dim,
                "dim_internal_model": ctrl.dim_internal_model,
                "reduced_order": ctrl.reduced_order, "cached": cached,
                "directory": str(ctrl_dir)}
        if ctrl.diagnostics:
            info["diagnostics"] = {
                k: (int(v) if isinstance(v, (int, np.integer)) else float(v))
                for k, v in ctrl.diagnostics.items()
                if isinstance(v, (int, float, np.integer, np.floating))}
        self._stage_info["synthesize"] = info
        print("stage synthesize: controller dimension %d (internal model "
              "%d + observer %d%s)"
              % (ctrl.dim, ctrl.dim_internal_model, ctrl.reduced_order,
                 ", cached" if cached else ""))

    def stage_simulate(self):
        ctrl = synthesis.load_controller(self.out / "controller")
        if ctrl.spec is not None and ctrl.spec != self.sc.signal_spec:
            raise RuntimeError(
                "controller artifact tracks different frequencies than the "
                "scenario; rerun synthesize")
        n = self.sc.mesh_simulation
        box = self.setup(n)
        plant = self.penalty_plant(n)
        system = cascade.couple_cascade(plant, self.sc.actsens)
        loop = simulate.assemble_closed_loop(system, ctrl)
        if box["intermediate"] is not None:
            dev = simulate.plant_deviation_state(
                box["spaces"], box["intermediate"], box["final"])
        else:
            dev = np.zeros(plant.n_b)
        x0 = np.zeros(loop.dim)
        x0[:dev.size] = dev
        t_end, dt = self.sc.t_end, self.sc.dt
        traj = simulate.integrate(loop, self.sc.signals, x0, t_end, dt,
                                  snapshot_times=[t_end])
        simulate.write_trajectory(traj, self.out / "trajectory.csv")
        simulate.write_snapshots(traj, box["spaces"],
                                 self.out / "snapshots")
        window = (0.8 * t_end, t_end)
        sup, rms = simulate.error_metrics(traj, window)
        rate_window = (min(5.0, 0.1 * t_end), max(t_end - 5.0,
                                                  0.9 * t_end))
        rate = simulate.envelope_rate(traj, rate_window)
        sup_ref = np.max(np.abs(traj.y_ref), axis=0)
        lines = ["window = [%.6g, %.6g]" % window,
                 "envelope_window = [%.6g, %.6g]" % rate_window,
                 "envelope_rate = %.12e" % rate]
        for i in range(len(sup)):
            lines.append(
                "channel_%d: sup_error = %.12e, rms_error = %.12e, "
                "sup_reference = %.12e" % (i + 1, sup[i], rms[i],
                                           sup_ref[i]))
        (self.out / "metrics.txt").write_text("\n".join(lines) + "\n")
        info = {"mesh": n, "t_end": t_end, "dt": dt,
                "sup_error": sup.tolist(), "rms_error": rms.tolist(),
                "sup_reference": sup_ref.tolist(),
                "envelope_rate": rate}
        self._stage_info["simulate"] = info
        print("stage simulate: sup tracking error %s over [%g, %g], "
              "envelope rate %.3f"
              % (np.array2string(sup, precision=3), window[0], window[1],
                 rate))

    def write_manifest(self):
        manifest = {
            "scenario": self.sc.name,
            "mesh": dict(self.sc.normalized["mesh"]),
            "time": dict(self.sc.normalized["time"]),
            "stages": self._stage_info,
        }
        if "synthesize" in self._stage_info:
            manifest["controller"] = {
                "dim": self._stage_info["synthesize"]["dim"],
                "directory": self._stage_info["synthesize"]["directory"],
            }
        path = self.out / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True)
                        + "\n")
        return path


_PLAN = {
    "steady": ("steady",),
    "analyze": ("steady", "analyze"),
    "synthesize": ("steady", "synthesize"),
    "simulate": ("simulate",),
    "full": ("steady", "analyze", "synthesize", "simulate"),
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        scenario = _load_scenario(args.scenario, args.mesh_override,
                                  args.dt, args.t_end)
    except (OSError, ScenarioError) as exc:
        print("error in stage 'parse': %s" % exc, file=sys.stderr)
        return 1
    runner = PipelineRunner(scenario, args.out)
    for stage in _PLAN[args.command]:
        began = time.perf_counter()
        try:
            getattr(runner, "stage_" + stage)()
        except Exception as exc:
            print("error in stage '%s': %s" % (stage, exc), file=sys.stderr)
            return 1
        runner._stage_info.setdefault(stage, {})["seconds"] = round(
            time.perf_counter() - began, 3)
    runner.write_manifest()
    return 0


if __name__ == "__main__":
    sys.exit(main())
