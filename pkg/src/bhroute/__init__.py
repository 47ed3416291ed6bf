"""Queue-network travel-time model and Bottleneck Hunting route-split optimizer."""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def bundled_topology(name: str) -> Path:
    """Filesystem path of a topology shipped with the package (``fig2`` or ``fig2.topo``)."""
    if not name.endswith(".topo"):
        name += ".topo"
    path = Path(str(resources.files(__package__).joinpath("data", name)))
    if not path.is_file():
        raise FileNotFoundError(f"no bundled topology named {name!r}")
    return path


def bundled_names() -> list[str]:
    return sorted(p.name[:-5] for p in Path(str(resources.files(__package__).joinpath("data"))).glob("*.topo"))
