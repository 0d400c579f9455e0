from __future__ import annotations

import logging
from io import BytesIO
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

LOGGER = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
SVG_RC = {"svg.hashsalt": "jmnpde", "svg.fonttype": "none", "path.simplify": False}


def configure_logging(level: int = logging.INFO) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def ensure_directory(path: str | Path) -> Path:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def figure_to_png_bytes(fig: Figure, dpi: int = 200) -> BytesIO:
    buffer = BytesIO()
    fig.savefig(buffer, format="PNG", dpi=dpi, bbox_inches="tight")
    buffer.seek(0)
    return buffer


def figure_to_svg_bytes(fig: Figure) -> bytes:
    """Serialise a figure to SVG; identical figures give identical bytes."""

    buffer = BytesIO()
    with matplotlib.rc_context(SVG_RC):
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buffer.getvalue()
