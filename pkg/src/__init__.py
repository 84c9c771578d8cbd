# This file makes 'src' a Python package.
# Keep in sync with pyproject.toml; artifact manifests record it.
__version__ = "0.3.0"
