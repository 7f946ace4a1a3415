"""
Markdown run reports for sample and benchmark commands.
"""

from __future__ import annotations
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

from jinja2 import Environment, PackageLoader

from . import __version__

env = Environment(
    loader=PackageLoader("pds_sampler", "template"),
    autoescape=False,
    trim_blocks=True,
    lstrip_blocks=True,
)


def format_metric(value: Optional[float]) -> str:
    """Four significant digits, or n/a for metrics that do not apply."""
    if value is None:
        return "n/a"
    return f"{value:.4g}"


def format_seconds(value: float) -> str:
    if value >= 60:
        return f"{int(value // 60)}m {value % 60:.1f}s"
    if value >= 1:
        return f"{value:.2f}s"
    return f"{value * 1000:.0f}ms"


def format_speedup(value: Optional[float]) -> str:
    if value is None:
        return "n/a"
    return f"{value:.2f}×"


env.filters["format_metric"] = format_metric
env.filters["format_seconds"] = format_seconds
env.filters["format_speedup"] = format_speedup


def render_report(
    context: Dict[str, Any],
    output_path: Path,
    config: Optional[Dict[str, Any]] = None,
) -> None:
    """Render ``run_report.md`` for a finished command into ``output_path``."""
    enhanced_context = {
        **context,
        "config": config or {},
        "version": __version__,
        "generated_at": datetime.now().isoformat(timespec="seconds"),
    }

    template = env.get_template("run_report.md")
    output_path.write_text(template.render(**enhanced_context), encoding="utf-8")
