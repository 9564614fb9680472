"""Desk-scale laboratory for stochastic evolution equations.

Subpackages follow the problem structure: deterministic operator layer
(`operators`), Brownian machinery and linear mild solutions (`stochastic`),
perturbed generators and boundary systems (`perturbation`), delay systems
(`delay`), semilinear observability (`semilinear`), and the scenario
harness (`harness`).
"""

__version__ = "0.1.0"
