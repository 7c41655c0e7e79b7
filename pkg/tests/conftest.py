import numpy as np
import pytest

from roomctrl import cascade, fem, steady
from roomctrl.expressions import compile_expression
from roomctrl.meshing import BoundaryInterval, DomainRegion, RoomGeometry, build_mesh


def room_geometry():
    return RoomGeometry(observation_regions={
        "avg_theta": DomainRegion(1 / 8, 2 / 8, 5 / 8, 6 / 8),
        "outlet_theta": BoundaryInterval("right", 1 / 8, 1 / 2),
        "avg_vx": DomainRegion(3 / 8, 4 / 8, 2 / 8, 3 / 8),
    })


def room_shapes():
    return fem.BoundaryShapes(
        velocity_control=compile_expression(
            "exp(-0.00004 / ((0.625 - xi2)*(0.875 - xi2))^2)"),
        inlet_temp_control=compile_expression(
            "exp(-0.00002 / ((0.625 - xi2)*(0.875 - xi2))^2)"),
        heater_temp_control=compile_expression(
            "exp(-0.00001 / ((0.375 - xi1)*(0.625 - xi1))^2)"),
        velocity_disturbance=compile_expression(
            "exp(-0.0003 / ((0.625 - xi2)*(0.875 - xi2))^2)"),
    )


def room_observations():
    return [
        fem.ObservationSpec("domain-average", "avg_theta", "theta"),
        fem.ObservationSpec("boundary-average", "outlet_theta", "theta"),
        fem.ObservationSpec("domain-average", "avg_vx", "vx"),
    ]


def room_forcing():
    return steady.ForcingFields(
        heat_source=compile_expression("5*sin(2*pi*xi1)*cos(2*pi*xi2)"),
        body_force_x=compile_expression("4*sin(2*pi*xi1)*cos(2*pi*xi2)"),
        body_force_y=compile_expression("-4*cos(2*pi*xi1)*sin(2*pi*xi2)"),
        initial_heat_source=compile_expression("4*sin(2*pi*xi1)*cos(2*pi*xi2)"),
        initial_body_force_x=compile_expression("2*sin(2*pi*xi1)*cos(2*pi*xi2)"),
        initial_body_force_y=compile_expression("-2*cos(2*pi*xi1)*sin(2*pi*xi2)"),
    )


class RoomSetup:
    """Mesh, spaces, steady states and the saddle plant for one resolution."""

    def __init__(self, n):
        self.mesh = build_mesh(room_geometry(), n)
        self.spaces = fem.FemSpaces(self.mesh)
        self.params = fem.PhysicalParams()
        self.intermediate, self.steady = steady.solve_with_continuation(
            self.mesh, self.spaces, self.params, room_forcing())
        self.saddle = cascade.linearize(self.mesh, self.spaces, self.params,
                                        self.steady, room_shapes(),
                                        room_observations())


@pytest.fixture(scope="session")
def room8():
    return RoomSetup(8)
