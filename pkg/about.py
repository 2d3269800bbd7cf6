from importlib import metadata
from typing import Dict

TOOL_NAME = "kacsim"
__version__ = "1.0.0"

# Paquets affichés par la sous-commande version
STACK = ("numpy", "scipy", "pandas", "POT", "plotly")


def stack_versions() -> Dict[str, str]:
    """Installed version of every package of the numerical stack."""
    versions = {}
    for package in STACK:
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "not installed"
    return versions


def about_text() -> str:
    """
    Text of the version subcommand: tool name, version and stack
    """
    lines = [
        f"{TOOL_NAME} {__version__}",
        "Kac/Boltzmann particle simulator, probability metrics and propagation-of-chaos experiments",
        "",
        "Stack:",
    ]
    lines += [f"  - {name}: {version}" for name, version in stack_versions().items()]
    lines += [
        "",
        "Experiments: simulate, lln, chaos, contraction, mehler, battery",
        "Outputs: CSV with one-line header, JSON sidecars, manifest.json per run",
    ]
    return "\n".join(lines)
