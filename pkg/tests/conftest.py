import pytest

from .helpers import MOTIVATING


@pytest.fixture
def motivating():
    from ofprepair.expr import parse

    return parse(MOTIVATING)
