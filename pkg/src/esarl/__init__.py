"""Simulated darbepoetin dosing for renal anemia.

Subpackages cover the hemoglobin response model (`simcore`), the decision
problem built on top of it (`mdp`), synthetic patient cohorts (`cohort`),
the function approximator (`extratrees`), two batch learners (`fqi`,
`qlearning`), the clinical titration protocol (`protocol`), and the
experiment harness plus command line interface (`harness`, `cli`).
"""

__version__ = "0.1.0"
