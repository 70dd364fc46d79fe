import os

import pytest
from hypothesis import HealthCheck, settings

from qgforge.synth import build_world, generate_dataset, world_store

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.register_profile("thorough", max_examples=400, deadline=None, suppress_health_check=list(HealthCheck))
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# Count of actors who played Darth Vader in the earliest film where Frank McCary played him.
RUNNING_EXAMPLE = """SELECT (COUNT(?x) AS ?c) WHERE {
  <m.0f2y0> <portrayed_in_films> ?y . ?y <film> ?f . ?y <actor> ?x .
  { SELECT ?f1 WHERE {
      <m.0f2y0> <portrayed_in_films> ?y1 . ?y1 <film> ?f1 . ?y1 <actor> <m.010gnrn8> .
      ?f1 <release_date> ?d
    } ORDER BY ASC(?d) LIMIT 1 }
  FILTER(?f = ?f1)
}"""

RUNNING_EXAMPLE_KG = """\
<m.0f2y0> <portrayed_in_films> <p1> .
<m.0f2y0> <portrayed_in_films> <p2> .
<m.0f2y0> <portrayed_in_films> <p3> .
<m.0f2y0> <portrayed_in_films> <p4> .
<p1> <film> <episode_iv> .
<p2> <film> <episode_iv> .
<p3> <film> <episode_v> .
<p4> <film> <episode_v> .
<p1> <actor> <m.010gnrn8> .
<p2> <actor> <david_prowse> .
<p3> <actor> <m.010gnrn8> .
<p4> <actor> <james_earl_jones> .
<episode_iv> <release_date> "1977-05-25"^^date .
<episode_v> <release_date> "1980-05-21"^^date .
"""


@pytest.fixture(scope="session")
def world():
    return build_world(0)


@pytest.fixture(scope="session")
def store(world):
    return world_store(world)


@pytest.fixture(scope="session")
def corpus(world, store):
    """Every template, answers guaranteed nonempty."""
    return generate_dataset(world, store, 240, seed=1)


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
