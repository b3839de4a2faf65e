import numpy as np
import pytest

from vicscore import synth, tabular
from vicscore.tabular import CATEGORICAL, CONTINUOUS, Cohort, VariableSchema


def make_cohort(columns: dict, outcome, kinds: dict | None = None, partition=None) -> Cohort:
    """Cohort from plain python columns; categorical columns given as label lists."""
    kinds = kinds or {}
    schema, values = [], {}
    for name, col in columns.items():
        cats = kinds.get(name)
        if cats:
            schema.append(VariableSchema(name, CATEGORICAL, tuple(cats)))
            values[name] = np.array([cats.index(c) for c in col])
        else:
            schema.append(VariableSchema(name, CONTINUOUS))
            values[name] = np.array(col, dtype=float)
    return Cohort(tuple(schema), values, np.asarray(outcome), "y", partition)


def small_spec(n=4000, seed=0, betas=(0.8, -0.6, 0.0, 0.4), intercept=-0.5):
    """Four independent standard-normal predictors with the given coefficients."""
    vs = tuple(
        synth.VariableSpec(f"v{i + 1}", CONTINUOUS, 0.0, 1.0, betas=(b,) if b else ())
        for i, b in enumerate(betas)
    )
    return synth.GeneratorSpec(n, vs, intercept, (), seed)


@pytest.fixture
def split_cohort():
    c = synth.generate(small_spec())
    return tabular.split(c, (0.7, 0.1, 0.2), 3)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdicts at the end of the run, one line per criterion."""
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
