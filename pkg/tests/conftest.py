import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mobseq.events import AppEvent


@pytest.fixture
def make_event():
    def _make(user="u1", category="SNS", start=0, end=1000):
        return AppEvent(user_id=user, category=category, start=start, end=end)

    return _make


@pytest.fixture(scope="session")
def warm_numba():
    """Compile the distance kernel once so timed tests measure steady state."""
    from mobseq.spells import CostModel, SpellSequence, distance_matrix

    distance_matrix(
        [SpellSequence((("SNS", 60.0),)), SpellSequence((("Games", 30.0),))], CostModel()
    )
    return True
