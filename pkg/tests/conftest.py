import pytest

from tests.helpers import make_panel


@pytest.fixture
def panel():
    return make_panel()
