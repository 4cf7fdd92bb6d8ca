import logging
from pathlib import Path

from jinja2 import Environment, FileSystemLoader
from jinja2.exceptions import TemplateNotFound

log = logging.getLogger(__name__)

ROOT = Path(__file__)
TEMPLATE_DIR = ROOT.parent.joinpath("templates/")
REPORT_TEMPLATE = "report.html"

# Create Jinja2 environment for templates
env = Environment(loader=FileSystemLoader(TEMPLATE_DIR), autoescape=True, keep_trailing_newline=True)


def _fmt(value):
    """Compact cell text for report tables"""
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


env.filters["fmt"] = _fmt


def render_report(manifest, tables, max_rows=50):
    """Render the run report to an HTML string

    Args:
        manifest (dict): RunManifest.to_dict() of the run
        tables (dict): {title: [row dicts]}; each table shows its first
            ``max_rows`` rows
        max_rows (int): row limit per table

    Raises:
        TemplateNotFound: the report template is missing
    """
    template = env.get_template(REPORT_TEMPLATE)
    shown = []
    for title in sorted(tables):
        rows = tables[title]
        columns = list(rows[0]) if rows else []
        shown.append({"title": title, "columns": columns, "rows": rows[:max_rows], "total": len(rows)})
    return template.render(manifest=manifest, tables=shown)


def write_report(folder, manifest, tables, fname="report.html"):
    """Renders the report template into ``folder/fname``

    Returns:
        Path: the written file, or None when the template is missing
    """
    try:
        html = render_report(manifest, tables)
    except TemplateNotFound:
        log.error("Template not found: %s", REPORT_TEMPLATE)
        return None

    path = Path(folder).joinpath(fname)
    with open(path, "w", encoding="utf-8", newline="\n") as fout:
        fout.write(html)
        log.debug("Wrote report: %s", path)
    return path
