'''
Files written and read by the ddereach commands

Floats are written with 17 significant digits ('.17g') in both JSON and CSV.
'''

import csv
import json
import logging
import math
import re
from pathlib import Path

import numpy as np

from ddereach.core.interval import Box
from ddereach.engine.reach import ReachResult
from ddereach.exceptions import ReachOutputError

logger = logging.getLogger(__name__)

BOUNDS_FILE = 'bounds.json'
REACH_FILE = 'reach.json'
REPORT_FILE = 'report.json'
TRAJECTORIES_FILE = 'trajectories.csv'
SAFETY_FILE = 'safety.json'

_UNSAFE_LABEL_CHARS = re.compile(r'[^A-Za-z0-9_.-]')


def _json_text(value, level: int = 0) -> str:
    '''json.dumps with indent=2, except that finite floats keep 17 significant digits.'''
    inner, outer = '  ' * (level + 1), '  ' * level
    if isinstance(value, dict):
        if not value:
            return '{}'
        items = [f"{inner}{json.dumps(str(key))}: {_json_text(item, level + 1)}" for key, item in value.items()]
        return "{\n" + ",\n".join(items) + f"\n{outer}}}"
    if isinstance(value, (list, tuple)):
        if not value:
            return '[]'
        items = [f"{inner}{_json_text(item, level + 1)}" for item in value]
        return "[\n" + ",\n".join(items) + f"\n{outer}]"
    if isinstance(value, float) and math.isfinite(value):
        text = format_float(value)
        return text if any(c in text for c in '.e') else text + '.0'
    return json.dumps(value)


def json_dump(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_json_text(payload) + "\n", encoding="utf-8")


def format_float(value) -> str:
    return format(float(value), '.17g')


def format_time(t: float) -> str:
    '''Checkpoint time as used in file names, e.g. 10 or 0.8.'''
    return format(t, '.10g')


def flowpipe_path(out_dir: Path, label: str) -> Path:
    return out_dir / f"flowpipe_{_UNSAFE_LABEL_CHARS.sub('_', label)}.csv"


def plot_path(out_dir: Path, t: float) -> Path:
    return out_dir / f"plot_t{format_time(t)}.csv"


def write_bounds(out_dir: Path, certificate) -> Path:
    path = out_dir / BOUNDS_FILE
    json_dump(path, certificate.to_dict())
    return path


def write_reach(out_dir: Path, result: ReachResult, spec) -> list:
    '''
    Write reach.json, one flowpipe CSV per face and one plot CSV per checkpoint

    Returns:
        (list of Path): every file written
    '''
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = result.to_dict()
    payload['n'] = spec.n
    payload['tau'] = spec.tau
    payload['K'] = spec.K
    written = [out_dir / REACH_FILE]
    json_dump(written[0], payload)
    for label, pipe in result.face_pipes.items():
        path = flowpipe_path(out_dir, label)
        with path.open('w', encoding='utf-8', newline='') as stream:
            pipe.to_csv(stream)
        written.append(path)
    for checkpoint in result.checkpoints:
        written.append(write_plot_data(out_dir, checkpoint))
    logger.info("wrote %d reach files to %s", len(written), out_dir)
    return written


def _box_row(kind, label, box: Box):
    row = [kind, label]
    for d in box:
        row += [format_float(d.lo), format_float(d.hi)]
    return row


def write_plot_data(out_dir: Path, checkpoint) -> Path:
    '''Boxes of one checkpoint: every face image, O, U (if nonempty) and the witness.'''
    path = plot_path(out_dir, checkpoint.t)
    n = len(checkpoint.over)
    with path.open('w', encoding='utf-8', newline='') as stream:
        writer = csv.writer(stream, lineterminator='\n')
        writer.writerow(['kind', 'label'] + [f"x{i + 1}_{side}" for i in range(n) for side in ('lo', 'hi')])
        for label, box in checkpoint.boundary.items():
            writer.writerow(_box_row('face', label, box))
        writer.writerow(_box_row('over', 'O', checkpoint.over))
        if not checkpoint.under.is_empty:
            writer.writerow(_box_row('under', 'U', checkpoint.under))
        writer.writerow(_box_row('witness', 'witness', checkpoint.witness))
    return path


def read_plot_data(path: Path) -> list:
    '''Rows of a plot CSV as (kind, label, Box).'''
    rows = []
    with Path(path).open(encoding='utf-8', newline='') as stream:
        reader = csv.reader(stream)
        next(reader)
        for row in reader:
            values = [float(v) for v in row[2:]]
            rows.append((row[0], row[1], Box.from_pairs(list(zip(values[::2], values[1::2])))))
    return rows


def read_reach(out_dir: Path, spec=None) -> ReachResult:
    '''
    Load reach.json back

    Args:
        out_dir (Path): directory written by the reach command
        spec (ModelSpec): when given, the output must belong to this model

    Raises:
        ReachOutputError: missing, unreadable, or written for another model
    '''
    path = Path(out_dir) / REACH_FILE
    if not path.is_file():
        raise ReachOutputError(f"no reach output at {path}; run 'ddereach reach' first")
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
        result = ReachResult.from_dict(data)
    except (ValueError, KeyError, TypeError) as exc:
        raise ReachOutputError(f"corrupt reach output {path}: {exc}") from exc
    if spec is not None:
        if data.get('n') != spec.n or data.get('model') != spec.name:
            raise ReachOutputError(
                f"{path} was written for model {data.get('model')!r} (n={data.get('n')}), "
                f"not {spec.name!r} (n={spec.n})")
        if abs(float(data.get('tau', spec.tau)) - spec.tau) > 1e-12 * max(1.0, spec.tau):
            raise ReachOutputError(f"{path} was written for tau={data.get('tau')!r}, model has tau={spec.tau!r}")
    return result


def write_report(out_dir: Path, reports, extra=None) -> Path:
    payload = {'passed': all(r.passed for r in reports), 'checks': [r.to_dict() for r in reports]}
    if extra:
        payload.update(extra)
    path = out_dir / REPORT_FILE
    json_dump(path, payload)
    return path


def write_trajectories(out_dir: Path, endpoints: dict) -> Path:
    '''Sampled states per checkpoint: one row per (t, sample).'''
    path = out_dir / TRAJECTORIES_FILE
    with path.open('w', encoding='utf-8', newline='') as stream:
        writer = csv.writer(stream, lineterminator='\n')
        header_written = False
        for t in sorted(endpoints):
            states = np.asarray(endpoints[t])
            if not header_written:
                writer.writerow(['t', 'sample'] + [f"x{i + 1}" for i in range(states.shape[1])])
                header_written = True
            for s, state in enumerate(states):
                writer.writerow([format_float(t), s] + [format_float(v) for v in state])
    return path


def read_trajectory_states(out_dir: Path, t: float):
    '''Sampled states at time t from trajectories.csv, or None when there is none.'''
    path = Path(out_dir) / TRAJECTORIES_FILE
    if not path.is_file():
        return None
    rows = []
    with path.open(encoding='utf-8', newline='') as stream:
        reader = csv.reader(stream)
        next(reader, None)
        for row in reader:
            if abs(float(row[0]) - t) <= 1e-9 * max(1.0, abs(t)):
                rows.append([float(v) for v in row[2:]])
    return np.array(rows) if rows else None


def render_png(path: Path, checkpoint, dims, samples=None, title=''):
    '''
    Draw the boxes of one checkpoint projected on two dimensions

    Args:
        path (Path): PNG file to write
        checkpoint (Checkpoint): boxes to draw
        dims (tuple of int): 0-based dimensions for the axes
        samples (numpy.array): optional sampled states, shape (S, n)
    '''
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt
    from matplotlib.patches import Rectangle

    i, j = dims

    def rectangle(box, **style):
        return Rectangle((box[i].lo, box[j].lo), box[i].hi - box[i].lo, box[j].hi - box[j].lo, **style)

    fig, ax = plt.subplots(figsize=(6, 6))
    for label, box in checkpoint.boundary.items():
        ax.add_patch(rectangle(box, facecolor='none', edgecolor='tab:red', linewidth=0.8, alpha=0.6))
    ax.add_patch(rectangle(checkpoint.over, facecolor='none', edgecolor='tab:blue', linewidth=2, label='O'))
    if not checkpoint.under.is_empty:
        ax.add_patch(rectangle(checkpoint.under, facecolor='none', edgecolor='black', linewidth=2, label='U'))
    if samples is not None:
        ax.scatter(samples[:, i], samples[:, j], s=2, color='tab:green', alpha=0.5, label='samples')
    box = checkpoint.over
    pad_i = 0.05 * max(box[i].hi - box[i].lo, 1e-12)
    pad_j = 0.05 * max(box[j].hi - box[j].lo, 1e-12)
    ax.set_xlim(box[i].lo - pad_i, box[i].hi + pad_i)
    ax.set_ylim(box[j].lo - pad_j, box[j].hi + pad_j)
    ax.set_xlabel(f"x{i + 1}")
    ax.set_ylabel(f"x{j + 1}")
    ax.set_title(f"{title} t = {format_time(checkpoint.t)}".strip())
    ax.grid(True, alpha=0.3)
    ax.legend(loc='upper right')
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches='tight')
    plt.close(fig)
    return path
