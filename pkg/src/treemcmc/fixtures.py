"""Bundled example networks and prior configurations."""

from importlib import resources

from .formats import read_bn_spec, read_prior_config

ASIA8_ORDER = ("A", "S", "T", "L", "B", "E", "X", "D")


def fixture_path(name: str):
    """Filesystem path of a bundled file such as ``"asia8.bn"``."""
    return resources.files("treemcmc") / "data" / name


def asia3():
    """Three-node network L <- S -> B over variables (B, L, S)."""
    return read_bn_spec(fixture_path("asia3.bn"))


def asia8():
    """The eight-node 'Asia' network."""
    return read_bn_spec(fixture_path("asia8.bn"))


def prior_config(name: str):
    return read_prior_config(fixture_path(name))
