"""Bundled layout fixtures."""

from importlib import resources

from ..layout import LayoutGrid, parse_layout

NAMES = ("empty", "single_wire", "cross", "inverter", "nand4")


def fixture_text(name: str) -> str:
    return resources.files(__name__).joinpath(f"{name}.lay").read_text()


def load_fixture(name: str) -> LayoutGrid:
    return parse_layout(fixture_text(name))
