"""roomctrl: boundary feedback control of room airflow and temperature.

The package discretizes the linearized Boussinesq model of a ventilated
rectangular room with Taylor-Hood finite elements, computes the nonlinear
steady state it is linearized around, wires the PDE model in cascade with
actuator and sensor ODEs, synthesizes a finite-dimensional internal-model
output-tracking controller through Riccati equations and balanced
truncation, and simulates the closed loop.

Subpackages of interest:

- `meshing`, `fem`: geometry, triangulation, finite element assembly
- `steady`: Newton solver for the nonlinear steady state
- `cascade`: linearized plant, pressure elimination, cascade coupling
- `analysis`: spectra, stabilizability/detectability checks
- `synthesis`: internal model, Riccati gains, balanced truncation
- `simulate`: closed-loop assembly and time integration
- `scenario`, `cli`: experiment description files and the pipeline driver
"""

__version__ = "0.1.0"
