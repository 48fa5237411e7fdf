"""Adapters: metrics sinks and report emitters (optional matplotlib for SVG)."""
import json
import math
import logging
from pathlib import Path
from typing import List, Optional, Sequence, TextIO, Union

import pandas as pd

from superinfo.runtime.trainer import LOSS_FIELDS, MetricsRecord

logger = logging.getLogger(__name__)

# ── optional dependency: matplotlib ─────────────────────────────────────────
try:
    import matplotlib
    matplotlib.use('Agg')
    from matplotlib.figure import Figure
    HAS_MATPLOTLIB = True
except Exception:
    HAS_MATPLOTLIB = False

REPORT_COLUMNS = ['run_id', 'epoch', 'steps'] + list(LOSS_FIELDS) + ['grad_norm', 'wall_ms']
DEFAULT_SERIES = ('l_total', 'l_cl')


class ReportError(Exception):
    """Raised for unreadable or empty metrics, or a missing plotting backend."""
    pass


# ── metrics sinks ────────────────────────────────────────────────────────────

class JsonlSink:
    """One MetricsRecord per line."""

    def __init__(self, target: Union[str, Path, TextIO]):
        if isinstance(target, (str, Path)):
            self._stream = open(target, 'w', encoding='utf-8', newline='\n')
            self._owned = True
        else:
            self._stream = target
            self._owned = False

    def write(self, record: MetricsRecord) -> None:
        self._stream.write(record.model_dump_json() + '\n')

    def flush(self) -> None:
        self._stream.flush()

    def close(self) -> None:
        if self._owned and not self._stream.closed:
            self._stream.close()

    def __enter__(self) -> 'JsonlSink':
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class MemorySink:
    def __init__(self):
        self.records: List[MetricsRecord] = []

    def write(self, record: MetricsRecord) -> None:
        self.records.append(record)

    def flush(self) -> None:
        pass

    def __len__(self):
        return len(self.records)


# ── reports ──────────────────────────────────────────────────────────────────

def read_metrics(path) -> pd.DataFrame:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except FileNotFoundError:
        raise ReportError(f'metrics file not found: {path}') from None
    if not text.strip():
        raise ReportError(f'metrics file is empty: {path}')
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            # non-finite values are serialized as null
            row = {k: math.nan if v is None else v for k, v in json.loads(line).items()}
            records.append(MetricsRecord.model_validate(row))
        except (ValueError, AttributeError) as e:
            raise ReportError(f'{path}:{lineno}: unparseable metrics record: {e}') from None
    return pd.DataFrame([r.model_dump() for r in records])


def epoch_table(metrics: pd.DataFrame) -> pd.DataFrame:
    """Per-epoch means over step records; epochs with only a summary use it.

    Columns: run_id, epoch, steps, l_cl, l_kl_1, l_kl_2, l_re_1, l_re_2,
    l_total, grad_norm, wall_ms.
    """
    if metrics.empty:
        raise ReportError('no metrics records')
    rows = []
    value_cols = list(LOSS_FIELDS) + ['grad_norm', 'wall_ms']
    for (run_id, epoch), group in metrics.groupby(['run_id', 'epoch'], sort=False):
        steps = group[group['step'] >= 0]
        source = steps if len(steps) else group
        row = {'run_id': run_id, 'epoch': int(epoch), 'steps': int(len(steps))}
        row.update({c: float(source[c].mean()) for c in value_cols})
        rows.append(row)
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def write_csv_report(metrics: pd.DataFrame, out) -> None:
    epoch_table(metrics).to_csv(out, index=False, lineterminator='\n')


def write_svg_report(metrics: pd.DataFrame, out, series: Optional[Sequence[str]] = None) -> None:
    """Line chart of per-epoch means, one line per (run, series)."""
    if not HAS_MATPLOTLIB:
        raise ReportError('matplotlib not installed. Install with: pip install matplotlib')
    series = list(series or DEFAULT_SERIES)
    unknown = [s for s in series if s not in REPORT_COLUMNS[3:]]
    if unknown:
        raise ReportError(f'unknown series {unknown}; choose from {REPORT_COLUMNS[3:]}')
    table = epoch_table(metrics)
    matplotlib.rcParams['svg.hashsalt'] = 'superinfo'
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.add_subplot(1, 1, 1)
    for run_id, group in table.groupby('run_id', sort=False):
        for name in series:
            ax.plot(group['epoch'], group[name], marker='o', label=f'{name} ({run_id})')
    ax.set_xlabel('epoch')
    ax.set_ylabel('loss')
    ax.legend(loc='best', fontsize='small')
    fig.tight_layout()
    fig.savefig(out, format='svg', metadata={'Date': None})
