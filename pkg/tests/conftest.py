from importlib import resources

import pytest

from immunomimd.layout import parse_layout

FIXTURES = ("empty", "single_wire", "cross", "inverter", "nand4")

CROSS = "LAYOUT 8 8\nRECT DIFF 0 3 7 4\nRECT POLY 3 0 4 7\n"


def fixture_text(name: str) -> str:
    return resources.files("immunomimd.fixtures").joinpath(f"{name}.lay").read_text()


def load_fixture(name: str):
    return parse_layout(fixture_text(name))


@pytest.fixture(params=FIXTURES)
def fixture_name(request):
    return request.param
