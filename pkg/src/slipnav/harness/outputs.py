"""CSV and SVG artifacts for episodes and sweeps."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Sequence

from ..errors import OutputError
from .config import EnvironmentConfig
from .episode import RunLog
from .experiment import SweepResult

TRAJECTORY_FIELDS = ("hop", "start_x", "start_y", "end_x", "end_y", "product_state", "mode", "branch",
                     "requested_action", "action", "backup", "reward")
METRIC_FIELDS = ("run", "seed", "outcome", "satisfied", "steps", "total_reward", "switch_step",
                 "backups")
SWEEP_FIELDS = ("p", "eps", "mean_reward", "mean_steps", "satisfied", "runs")

PIXELS_PER_METER = 40
LABEL_COLORS = (("hazard", "#d9534f"), ("weak_hazard", "#f0ad4e"), ("reward_b", "#5bc0de"),
                ("reward_a", "#f7dc6f"), ("goal", "#5cb85c"))


def _csv_text(fields: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    writer.writerows(rows)
    return buf.getvalue()


def trajectory_csv(log: RunLog) -> str:
    rows = [(h.index, h.start[0], h.start[1], h.end[0], h.end[1], h.product_state, h.mode, h.branch,
             h.requested_action, h.action, int(h.backup), h.reward) for h in log.hops]
    return _csv_text(TRAJECTORY_FIELDS, rows)


def metrics_csv(logs: Sequence[RunLog]) -> str:
    rows = [(i, log.seed, log.outcome, int(log.satisfied), log.steps, log.total_reward,
             "" if log.switch_step is None else log.switch_step, sum(h.backup for h in log.hops))
            for i, log in enumerate(logs)]
    return _csv_text(METRIC_FIELDS, rows)


def sweep_csv(result: SweepResult) -> str:
    rows = [(c.p, c.eps, c.mean_reward, c.mean_steps, c.satisfied, c.runs) for c in result.cells]
    return _csv_text(SWEEP_FIELDS, rows)


def render_svg(log: RunLog) -> str:
    """Workspace grid with labeled cells and the hop polyline (one point per position)."""
    env = EnvironmentConfig.from_dict(log.env)
    scale = PIXELS_PER_METER
    width, height = env.width * scale, env.height * scale

    def px(x: float, y: float) -> str:
        return f"{x * scale:.3f},{height - y * scale:.3f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:g}" height="{height:g}" '
             f'viewBox="0 0 {width:g} {height:g}">',
             f'<rect x="0" y="0" width="{width:g}" height="{height:g}" fill="#ffffff"/>']
    for name, color in LABEL_COLORS:
        for i, j in sorted(env.cells(name)):
            x0, y0 = i * env.cell * scale, height - (j + 1) * env.cell * scale
            size = env.cell * scale
            parts.append(f'<rect class="{name}" x="{x0:g}" y="{y0:g}" width="{size:g}" '
                         f'height="{size:g}" fill="{color}"/>')
    for i in range(env.nx + 1):
        x = i * env.cell * scale
        parts.append(f'<line x1="{x:g}" y1="0" x2="{x:g}" y2="{height:g}" stroke="#cccccc"/>')
    for j in range(env.ny + 1):
        y = j * env.cell * scale
        parts.append(f'<line x1="0" y1="{y:g}" x2="{width:g}" y2="{y:g}" stroke="#cccccc"/>')
    points = " ".join(px(x, y) for x, y in log.positions() if math.isfinite(x) and math.isfinite(y))
    parts.append(f'<polyline points="{points}" fill="none" stroke="#222222" stroke-width="2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_text(path: Path, text: str) -> Path:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror}") from None
    return path


def _directory(directory) -> Path:
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {out}: {exc.strerror}") from None
    return out


def emit_logs(logs: Sequence[RunLog], directory) -> list:
    """Per-run JSON log, trajectory CSV and SVG, plus one metrics CSV."""
    out = _directory(directory)
    written = []
    for i, log in enumerate(logs):
        stem = f"run_{i:03d}"
        written.append(write_text(out / f"{stem}.json", log.to_json() + "\n"))
        written.append(write_text(out / f"{stem}_trajectory.csv", trajectory_csv(log)))
        written.append(write_text(out / f"{stem}_trajectory.svg", render_svg(log)))
    written.append(write_text(out / "metrics.csv", metrics_csv(logs)))
    return written


def emit_sweep(result: SweepResult, directory) -> list:
    out = _directory(directory)
    logs = [log for cell in result.cells for log in result.logs.get((cell.p, cell.eps), [])]
    return [write_text(out / "sweep.csv", sweep_csv(result)), write_text(out / "metrics.csv", metrics_csv(logs))]


def emit_outputs(source, directory) -> list:
    """Write the artifacts for a sweep result, a single log or a sequence of logs."""
    if isinstance(source, SweepResult):
        return emit_sweep(source, directory)
    if isinstance(source, RunLog):
        source = [source]
    return emit_logs(list(source), directory)


def load_log(path) -> RunLog:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return RunLog.from_dict(json.loads(text))
    except (ValueError, TypeError) as exc:
        raise OutputError(f"{path} is not a run log: {exc}") from None
