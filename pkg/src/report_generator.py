"""
Report Generator for nbv-grasp-sim

Renders benchmark metrics into a Markdown summary (jinja2 template) and its HTML twin.
"""

import os
from typing import Any, List, Sequence, Tuple
import logging

import markdown
import pandas as pd
from jinja2 import Template

from .policy import PolicyConfig
from .utils.file_io import write_text_file

logger = logging.getLogger(__name__)

TEMPLATE_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "templates", "report_template.md")

REQUIRED_COLUMNS = ["policy", "sr", "fr", "ar", "views_mean", "views_std", "search_s_mean", "search_s_std",
                    "total_s_mean", "total_s_std", "n"]


def validate_metrics(rows: Sequence[Any], tolerance: float = 1e-9) -> None:
    """
    Check that every metrics row is complete and its rates partition the trials.

    Raises:
        ValueError: If a field is missing or the rates do not sum to 1
    """
    for row in rows:
        missing = [name for name in REQUIRED_COLUMNS if not hasattr(row, name)]
        if missing:
            raise ValueError(f"Missing required metrics fields: {', '.join(missing)}")
        if abs(row.sr + row.fr + row.ar - 1.0) > tolerance:
            raise ValueError(f"Rates for {row.policy} do not sum to 1")


def generate_executive_summary(rows: Sequence[Any], seeds: Sequence[int]) -> str:
    """
    One paragraph naming the most successful policy and the fastest policy by views.
    """
    best = max(rows, key=lambda r: (r.sr, -r.views_mean))
    fastest = min(rows, key=lambda r: (r.views_mean, -r.sr))
    total = sum(r.n for r in rows)
    over = f" over {len(seeds)} seeds" if seeds else ""
    return (
        f"{total} trials{over} were run with {len(rows)} policies. "
        f"{best.policy} reached the highest success rate ({best.sr:.0%}), "
        f"and {fastest.policy} needed the fewest views on average ({fastest.views_mean:.1f})."
    )


def format_parameters(policy_config: Any) -> List[Tuple[str, Any]]:
    return [
        ("Policy rate [Hz]", policy_config.tick_rate),
        ("Max views T_max", policy_config.max_views),
        ("Minimum gain G_min", policy_config.gain_min),
        ("Stability window T", policy_config.window),
        ("Stability threshold", policy_config.epsilon_mu),
        ("Linear velocity [m/s]", policy_config.linear_velocity),
        ("View candidates", policy_config.n_views),
        ("Map side [m] / resolution", f"{policy_config.tsdf.side_length} / {policy_config.tsdf.resolution}"),
    ]


def _seed_label(seeds: Sequence[int]) -> str:
    seeds = list(seeds)
    if seeds and seeds == list(range(seeds[0], seeds[0] + len(seeds))):
        return f"{seeds[0]}..{seeds[-1]}"
    return ", ".join(str(s) for s in seeds)


def generate_report_content(rows: Sequence[Any], policy_config: Any, seeds: Sequence[int]) -> str:
    """
    Render the full Markdown report.

    Returns:
        str: Complete report content in markdown format
    """
    if not rows:
        return ("# NBV Grasp Benchmark Summary Report\n\n## Warning\n"
                "No trials completed. Please check the seeds and scene generation settings.\n")
    with open(TEMPLATE_PATH, encoding="utf-8") as f:
        template = Template(f.read())
    return template.render(
        executive_summary=generate_executive_summary(rows, seeds),
        rows=rows,
        parameters=format_parameters(policy_config),
        seeds=_seed_label(seeds),
    )


def write_bench_report(rows: Sequence[Any], policy_config: Any, seeds: Sequence[int], output_dir: str) -> str:
    """
    Write summary.md and summary.html into `output_dir`.

    Returns:
        str: Path of the Markdown report
    """
    validate_metrics(rows)
    if not rows:
        logger.warning("No trials completed; writing a warning report")
    content = generate_report_content(rows, policy_config, seeds)
    markdown_path = os.path.join(output_dir, "summary.md")
    write_text_file(markdown_path, content)
    html = markdown.markdown(content, extensions=["tables"])
    write_text_file(os.path.join(output_dir, "summary.html"), f"<!DOCTYPE html>\n<html><body>\n{html}\n</body></html>\n")
    logger.info(f"Report written to {markdown_path}")
    return markdown_path


def generate_report(summary_csv: str, output_file: str, policy_config: Any = None) -> None:
    """
    Regenerate the Markdown report from an existing summary.csv.

    Raises:
        FileNotFoundError: If the summary file doesn't exist
        ValueError: If required columns are missing
    """
    logger.info(f"Starting report generation from {summary_csv}")
    if not os.path.exists(summary_csv):
        raise FileNotFoundError(f"Input file not found: {summary_csv}")

    frame = pd.read_csv(summary_csv)
    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"Missing required metrics fields: {', '.join(missing)}")

    rows = list(frame.itertuples(index=False))
    # Rates in the CSV carry six decimals
    validate_metrics(rows, tolerance=1e-5)
    policy_config = policy_config or PolicyConfig()
    write_text_file(output_file, generate_report_content(rows, policy_config, []))
    logger.info(f"Report successfully generated at {output_file}")
