"""Closed-loop simulation of unsupervised and error-driven BMI decoder adaptation."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0+unknown"
