"""2-D Lagrangian free-boundary incompressible elastodynamics with surface
tension: kinematic identity audits, a variable-coefficient pressure solver,
constructive initial-data smoothing, explicit time integration with a
traction ghost closure, and energy monitors for the vanishing-viscosity
experiments."""

__version__ = "0.1.0"
