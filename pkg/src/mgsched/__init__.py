"""Frequency-secure microgrid scheduling toolkit.

Co-optimizes unit commitment, storage dispatch and inverter virtual
inertia/damping under analytic post-islanding frequency constraints,
with an embedded MISOCP solver and a numerical swing-equation oracle
for validating the resulting schedules.
"""

__version__ = "0.1.0"
