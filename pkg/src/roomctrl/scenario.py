"""Scenario files: parsing, validation, and normalized dumps.

A scenario is one TOML document whose sections mirror the pipeline
inputs: geometry, physics, boundary shapes, forcing, observations,
actuator and sensor dynamics, tracked signals, synthesis parameters,
meshes, and the time grid. Shape and forcing entries are expression
strings in a small arithmetic grammar (operators + - * / ^, functions
sin, cos, exp, constant pi) evaluated on quadrature points at assembly
time; plain numeric fields also accept such strings.

Parsing is strict: unknown keys, missing required fields, and invariant
violations raise ScenarioError naming the offending field path. The
normalized dump fills every default explicitly and re-parses to an
equal scenario.
"""

import json

import numpy as np
import tomli

from . import fem, steady
from .cascade import ActuatorSensor
from .expressions import ExpressionError, compile_expression
from .meshing import BoundaryInterval, DomainRegion, RoomGeometry
from .simulate import ExogenousSignals
from .synthesis import SignalSpec, SynthesisParams


class ScenarioError(ValueError):
    """Schema or invariant violation in a scenario file."""


_REQUIRED = object()

_GEOMETRY_DEFAULTS = {
    "width": 1.0,
    "height": 1.0,
    "inlet": {"edge": "left", "start": 0.625, "end": 0.875},
    "outlet": {"edge": "right", "start": 0.125, "end": 0.5},
    "heater": {"edge": "bottom", "start": 0.375, "end": 0.625},
}

_PHYSICS_DEFAULTS = {
    "reynolds": 100.0,
    "grashof": 100.0 ** 2 / 0.9,
    "prandtl": 0.7,
    "alpha_v": 1.0,
    "alpha_theta": 1.0,
}

_SYNTHESIS_DEFAULTS = {
    "alpha1": 0.3,
    "alpha2": 0.2,
    "reduced_order": 20,
    "residual_tol": 1e-8,
    "care_method": "auto",
}

_MESH_DEFAULTS = {"synthesis": 16, "simulation": 16, "penalty": 1e-5}

_TIME_DEFAULTS = {"t_end": 50.0, "dt": 0.01}

_SECTION_ORDER = ("geometry", "physics", "shapes", "forcing", "observations",
                  "actuator", "sensor", "signals", "synthesis", "mesh",
                  "time")


def _check_keys(table, path, allowed):
    for key in table:
        if key not in allowed:
            raise ScenarioError("unknown key %s.%s (allowed: %s)"
                                % (path, key, ", ".join(sorted(allowed))))


def _get(table, key, path, default=_REQUIRED):
    if key in table:
        return table[key]
    if default is _REQUIRED:
        raise ScenarioError("%s.%s is missing" % (path, key))
    return default


def _number(value, path):
    """Numeric field; strings go through the expression grammar."""
    if isinstance(value, bool):
        raise ScenarioError("%s must be a number" % path)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(compile_expression(value, variables=())())
        except ExpressionError as exc:
            raise ScenarioError("%s: %s" % (path, exc)) from None
    raise ScenarioError("%s must be a number or expression string" % path)


def _integer(value, path):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError("%s must be an integer" % path)
    return value


def _string(value, path):
    if not isinstance(value, str):
        raise ScenarioError("%s must be a string" % path)
    return value


def _expression(value, path):
    text = _string(value, path)
    try:
        compile_expression(text)
    except ExpressionError as exc:
        raise ScenarioError("%s: %s" % (path, exc)) from None
    return text


def _matrix(value, path):
    if (not isinstance(value, list) or not value
            or not all(isinstance(row, list) for row in value)):
        raise ScenarioError("%s must be a list of rows" % path)
    width = len(value[0])
    if any(len(row) != width for row in value):
        raise ScenarioError("%s rows have unequal lengths" % path)
    return [[_number(v, "%s[%d][%d]" % (path, i, j))
             for j, v in enumerate(row)] for i, row in enumerate(value)]


def _interval_table(value, path):
    if not isinstance(value, dict):
        raise ScenarioError("%s must be a table" % path)
    _check_keys(value, path, {"edge", "start", "end"})
    return {"edge": _string(_get(value, "edge", path), path + ".edge"),
            "start": _number(_get(value, "start", path), path + ".start"),
            "end": _number(_get(value, "end", path), path + ".end")}


def _region_table(value, path):
    if not isinstance(value, dict):
        raise ScenarioError("%s must be a table" % path)
    if {"x0", "x1", "y0", "y1"} <= set(value):
        _check_keys(value, path, {"x0", "x1", "y0", "y1"})
        return {k: _number(value[k], "%s.%s" % (path, k))
                for k in ("x0", "x1", "y0", "y1")}
    if {"edge", "start", "end"} <= set(value):
        return _interval_table(value, path)
    raise ScenarioError("%s needs either x0/x1/y0/y1 or edge/start/end"
                        % path)


def _signal_terms(value, path):
    if not isinstance(value, list):
        raise ScenarioError("%s must be a list of terms" % path)
    norm = []
    for i, term in enumerate(value):
        tpath = "%s[%d]" % (path, i)
        if not isinstance(term, dict):
            raise ScenarioError("%s must be a table" % tpath)
        _check_keys(term, tpath, {"frequency", "cos", "sin"})
        freq = _number(_get(term, "frequency", tpath), tpath + ".frequency")
        cos = [_number(v, tpath + ".cos") for v in term.get("cos", [])]
        sin = [_number(v, tpath + ".sin") for v in term.get("sin", [])]
        norm.append({"frequency": freq, "cos": cos, "sin": sin})
    return norm


class RoomScenario:
    """Validated pipeline configuration plus the objects it describes.

    Construct through `parse_scenario`; the `normalized` dict carries
    every field with defaults filled and is what `dumps` emits.
    """

    def __init__(self, normalized):
        self.normalized = normalized
        geo = normalized["geometry"]
        self.geometry = RoomGeometry(
            width=geo["width"], height=geo["height"],
            inlet=BoundaryInterval(**geo["inlet"]),
            outlet=BoundaryInterval(**geo["outlet"]),
            heater=BoundaryInterval(**geo["heater"]),
            observation_regions={
                name: (DomainRegion(**entry) if "x0" in entry
                       else BoundaryInterval(**entry))
                for name, entry in geo["observation_regions"].items()})
        phys = normalized["physics"]
        self.params = fem.PhysicalParams(
            reynolds=phys["reynolds"], grashof=phys["grashof"],
            prandtl=phys["prandtl"], alpha_v=phys["alpha_v"],
            alpha_theta=phys["alpha_theta"])
        shp = normalized["shapes"]
        self.shapes = fem.BoundaryShapes(
            velocity_control=compile_expression(shp["velocity_control"]),
            inlet_temp_control=compile_expression(shp["inlet_temp_control"]),
            heater_temp_control=compile_expression(
                shp["heater_temp_control"]),
            velocity_disturbance=compile_expression(
                shp["velocity_disturbance"]))
        frc = normalized["forcing"]
        self.forcing = steady.ForcingFields(
            heat_source=compile_expression(frc["heat_source"]),
            body_force_x=compile_expression(frc["body_force_x"]),
            body_force_y=compile_expression(frc["body_force_y"]),
            initial_heat_source=self._opt_expr(frc, "initial_heat_source"),
            initial_body_force_x=self._opt_expr(frc, "initial_body_force_x"),
            initial_body_force_y=self._opt_expr(frc, "initial_body_force_y"))
        self.observations = [
            fem.ObservationSpec(entry["kind"], entry["region"],
                                entry["component"])
            for entry in normalized["observations"]]
        act, sen = normalized["actuator"], normalized["sensor"]
        self.actsens = ActuatorSensor(
            np.array(act["a"]), np.array(act["b"]), np.array(act["c"]),
            np.array(sen["a"]), np.array(sen["b"]), np.array(sen["c"]))
        sig = normalized["signals"]
        self.signal_spec = SignalSpec(sig["frequencies"], sig["orders"],
                                      len(self.observations))
        self.signals = ExogenousSignals(
            self.signal_spec,
            [[(t["frequency"], t["cos"], t["sin"]) for t in ch["terms"]]
             for ch in sig["reference"]],
            [[(t["frequency"], t["cos"], t["sin"]) for t in ch["terms"]]
             for ch in sig["disturbance"]])
        syn = normalized["synthesis"]
        self.synthesis = SynthesisParams(
            alpha1=syn["alpha1"], alpha2=syn["alpha2"],
            reduced_order=syn["reduced_order"],
            residual_tol=syn["residual_tol"],
            care_method=syn["care_method"])
        self.mesh_synthesis = normalized["mesh"]["synthesis"]
        self.mesh_simulation = normalized["mesh"]["simulation"]
        self.penalty = normalized["mesh"]["penalty"]
        self.t_end = normalized["time"]["t_end"]
        self.dt = normalized["time"]["dt"]

    @staticmethod
    def _opt_expr(table, key):
        return compile_expression(table[key]) if key in table else None

    @property
    def name(self):
        return self.normalized["name"]

    def __eq__(self, other):
        return (isinstance(other, RoomScenario)
                and self.normalized == other.normalized)

    def section_hash(self, *sections):
        """Content hash over named normalized sections, for caching."""
        import hashlib
        payload = {s: self.normalized[s] for s in sections}
        text = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def dumps(self):
        out = ["name = %s" % _fmt(self.normalized["name"])]
        for section in _SECTION_ORDER:
            value = self.normalized[section]
            if section == "observations":
                for entry in value:
                    out.append("")
                    out.append("[[observations]]")
                    out.extend("%s = %s" % (key, _fmt(val))
                               for key, val in entry.items())
                continue
            out.append("")
            out.append("[%s]" % section)
            out.extend("%s = %s" % (key, _fmt(val))
                       for key, val in value.items())
        return "\n".join(out) + "\n"

    def dump(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())
        return path


def _fmt(value):
    """One TOML value; floats via repr so the round trip is exact."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        text = repr(value)
        # TOML requires a decimal point or exponent in floats
        return text if any(c in text for c in ".eE") else text + ".0"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        inner = ", ".join("%s = %s" % (k, _fmt(v)) for k, v in value.items())
        return "{ %s }" % inner
    if isinstance(value, (list, tuple)):
        return "[%s]" % ", ".join(_fmt(v) for v in value)
    raise TypeError("cannot format %r" % (value,))


def parse_scenario(path):
    """Load, validate, and normalize a scenario file."""
    with open(path, "rb") as fh:
        try:
            raw = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ScenarioError("cannot parse %s: %s" % (path, exc)) from None
    return scenario_from_dict(raw)


def scenario_from_dict(raw):
    """Validate and normalize an already-decoded configuration tree."""
    _check_keys(raw, "scenario", {"name"} | set(_SECTION_ORDER))
    norm = {"name": _string(raw.get("name", "unnamed"), "name")}

    geo = _get(raw, "geometry", "scenario", {})
    _check_keys(geo, "geometry", {"width", "height", "inlet", "outlet",
                                  "heater", "observation_regions"})
    norm_geo = {
        "width": _number(geo.get("width", _GEOMETRY_DEFAULTS["width"]),
                         "geometry.width"),
        "height": _number(geo.get("height", _GEOMETRY_DEFAULTS["height"]),
                          "geometry.height"),
    }
    for seg in ("inlet", "outlet", "heater"):
        norm_geo[seg] = _interval_table(
            geo.get(seg, _GEOMETRY_DEFAULTS[seg]), "geometry." + seg)
    regions = geo.get("observation_regions", {})
    if not isinstance(regions, dict):
        raise ScenarioError("geometry.observation_regions must be a table")
    norm_geo["observation_regions"] = {
        name: _region_table(entry, "geometry.observation_regions." + name)
        for name, entry in regions.items()}
    norm["geometry"] = norm_geo

    phys = _get(raw, "physics", "scenario", {})
    _check_keys(phys, "physics", set(_PHYSICS_DEFAULTS))
    norm["physics"] = {k: _number(phys.get(k, v), "physics." + k)
                       for k, v in _PHYSICS_DEFAULTS.items()}

    shp = _get(raw, "shapes", "scenario")
    shape_keys = ("velocity_control", "inlet_temp_control",
                  "heater_temp_control", "velocity_disturbance")
    _check_keys(shp, "shapes", set(shape_keys))
    norm["shapes"] = {k: _expression(_get(shp, k, "shapes"), "shapes." + k)
                      for k in shape_keys}

    frc = _get(raw, "forcing", "scenario")
    base_keys = ("heat_source", "body_force_x", "body_force_y")
    init_keys = ("initial_heat_source", "initial_body_force_x",
                 "initial_body_force_y")
    _check_keys(frc, "forcing", set(base_keys) | set(init_keys))
    norm_frc = {k: _expression(_get(frc, k, "forcing"), "forcing." + k)
                for k in base_keys}
    present = [k for k in init_keys if k in frc]
    if present and len(present) != 3:
        raise ScenarioError("forcing: give all three initial_* entries or "
                            "none")
    for k in present:
        norm_frc[k] = _expression(frc[k], "forcing." + k)
    norm["forcing"] = norm_frc

    obs = _get(raw, "observations", "scenario")
    if not isinstance(obs, list) or not obs:
        raise ScenarioError("observations must be a non-empty list")
    norm_obs = []
    builtin_regions = {"inlet", "outlet", "heater"}
    for i, entry in enumerate(obs):
        path = "observations[%d]" % i
        if not isinstance(entry, dict):
            raise ScenarioError("%s must be a table" % path)
        _check_keys(entry, path, {"kind", "region", "component"})
        kind = _string(_get(entry, "kind", path), path + ".kind")
        region = _string(_get(entry, "region", path), path + ".region")
        component = _string(_get(entry, "component", path),
                            path + ".component")
        if kind not in ("domain-average", "boundary-average"):
            raise ScenarioError("%s.kind must be domain-average or "
                                "boundary-average" % path)
        if component not in ("vx", "vy", "theta"):
            raise ScenarioError("%s.component must be vx, vy, or theta"
                                % path)
        known = set(norm_geo["observation_regions"]) | builtin_regions
        if region not in known:
            raise ScenarioError(
                "%s.region %r is not defined in "
                "geometry.observation_regions" % (path, region))
        norm_obs.append({"kind": kind, "region": region,
                         "component": component})
    norm["observations"] = norm_obs
    p = len(norm_obs)

    norm["actuator"] = _actsens_section(raw.get("actuator", {}), "actuator",
                                        n_outputs=3, n_inputs_default=3)
    norm["sensor"] = _actsens_section(raw.get("sensor", {}), "sensor",
                                      n_outputs=p, n_inputs_default=p)
    if np.shape(norm["actuator"]["c"])[0] != 3:
        raise ScenarioError("actuator.c must have 3 rows: the room model "
                            "has 3 boundary controls")
    if np.shape(norm["sensor"]["b"])[1] != p:
        raise ScenarioError("sensor.b must have %d columns, one per "
                            "observation" % p)
    m = np.shape(norm["actuator"]["b"])[1]
    p_out = np.shape(norm["sensor"]["c"])[0]
    if m < p_out:
        raise ScenarioError("inputs must at least match outputs "
                            "(m=%d < p=%d)" % (m, p_out))

    sig = _get(raw, "signals", "scenario")
    _check_keys(sig, "signals", {"frequencies", "orders", "reference",
                                 "disturbance"})
    freqs = _get(sig, "frequencies", "signals")
    if not isinstance(freqs, list) or not freqs:
        raise ScenarioError("signals.frequencies must be a non-empty list")
    freqs = [_number(v, "signals.frequencies") for v in freqs]
    orders = sig.get("orders", [1] * len(freqs))
    if not isinstance(orders, list) or len(orders) != len(freqs):
        raise ScenarioError("signals.orders must list one order per "
                            "frequency")
    orders = [_integer(v, "signals.orders") for v in orders]
    reference = _get(sig, "reference", "signals")
    if not isinstance(reference, list) or len(reference) != p:
        raise ScenarioError("signals.reference must list %d channels, one "
                            "per observation" % p)
    disturbance = _get(sig, "disturbance", "signals")
    if not isinstance(disturbance, list) or len(disturbance) != 1:
        raise ScenarioError("signals.disturbance must list exactly 1 "
                            "channel: the room model has one disturbance "
                            "input")
    norm_sig = {"frequencies": freqs, "orders": orders}
    for key, channels in (("reference", reference),
                          ("disturbance", disturbance)):
        norm_ch = []
        for i, ch in enumerate(channels):
            path = "signals.%s[%d]" % (key, i)
            if not isinstance(ch, dict):
                raise ScenarioError("%s must be a table" % path)
            _check_keys(ch, path, {"terms"})
            norm_ch.append({"terms": _signal_terms(_get(ch, "terms", path),
                                                   path + ".terms")})
        norm_sig[key] = norm_ch
    norm["signals"] = norm_sig

    syn = raw.get("synthesis", {})
    _check_keys(syn, "synthesis", set(_SYNTHESIS_DEFAULTS))
    norm["synthesis"] = {
        "alpha1": _number(syn.get("alpha1", _SYNTHESIS_DEFAULTS["alpha1"]),
                          "synthesis.alpha1"),
        "alpha2": _number(syn.get("alpha2", _SYNTHESIS_DEFAULTS["alpha2"]),
                          "synthesis.alpha2"),
        "reduced_order": _integer(
            syn.get("reduced_order", _SYNTHESIS_DEFAULTS["reduced_order"]),
            "synthesis.reduced_order"),
        "residual_tol": _number(
            syn.get("residual_tol", _SYNTHESIS_DEFAULTS["residual_tol"]),
            "synthesis.residual_tol"),
        "care_method": _string(
            syn.get("care_method", _SYNTHESIS_DEFAULTS["care_method"]),
            "synthesis.care_method"),
    }
    if norm["synthesis"]["care_method"] not in ("auto", "schur", "sign"):
        raise ScenarioError("synthesis.care_method must be auto, schur, "
                            "or sign")

    mesh = raw.get("mesh", {})
    _check_keys(mesh, "mesh", set(_MESH_DEFAULTS))
    norm["mesh"] = {
        "synthesis": _integer(mesh.get("synthesis",
                                       _MESH_DEFAULTS["synthesis"]),
                              "mesh.synthesis"),
        "simulation": _integer(mesh.get("simulation",
                                        _MESH_DEFAULTS["simulation"]),
                               "mesh.simulation"),
        "penalty": _number(mesh.get("penalty", _MESH_DEFAULTS["penalty"]),
                           "mesh.penalty"),
    }
    for key in ("synthesis", "simulation"):
        if norm["mesh"][key] < 1:
            raise ScenarioError("mesh.%s must be a positive cell count"
                                % key)
    if norm["mesh"]["penalty"] <= 0:
        raise ScenarioError("mesh.penalty must be positive")

    time = raw.get("time", {})
    _check_keys(time, "time", set(_TIME_DEFAULTS))
    norm["time"] = {k: _number(time.get(k, v), "time." + k)
                    for k, v in _TIME_DEFAULTS.items()}
    if norm["time"]["t_end"] <= 0 or norm["time"]["dt"] <= 0:
        raise ScenarioError("time.t_end and time.dt must be positive")

    try:
        return RoomScenario(norm)
    except ScenarioError:
        raise
    except ValueError as exc:
        # constructor-level invariant violations from the domain classes
        raise ScenarioError(str(exc)) from None


def _actsens_section(table, path, n_outputs, n_inputs_default):
    """Actuator or sensor block; defaults are unit first-order lags."""
    if not isinstance(table, dict):
        raise ScenarioError("%s must be a table" % path)
    _check_keys(table, path, {"a", "b", "c"})
    if not table:
        eye = np.eye(n_inputs_default).tolist()
        return {"a": (-np.eye(n_inputs_default)).tolist(), "b": eye,
                "c": eye}
    out = {}
    for key in ("a", "b", "c"):
        out[key] = _matrix(_get(table, key, path), "%s.%s" % (path, key))
    return out


def bundled_scenario_path(name):
    """Filesystem path of a scenario shipped with the package."""
    import importlib.resources
    root = importlib.resources.files("roomctrl") / "scenarios"
    path = root / (name + ".toml")
    if not path.is_file():
        available = sorted(p.stem for p in root.iterdir()
                           if p.name.endswith(".toml"))
        raise ScenarioError("no bundled scenario %r (available: %s)"
                            % (name, ", ".join(available)))
    return str(path)
