"""Parser for the flat ``key = value`` run-config text and ablation grids."""
import math
import re
from typing import Dict, List, Tuple


class ParseError(Exception):
    """Raised when config or grid text cannot be parsed"""
    pass


_KEY_RE = re.compile(r'^([a-zA-Z_][a-zA-Z0-9_]*(?:\.[a-zA-Z_][a-zA-Z0-9_]*)*)\s*=\s*(.*)$', re.S)


def split_lines(text: str) -> List[Tuple[int, str]]:
    """Split config text into (line_number, content) pairs.

    ``#`` starts a comment unless it sits inside quotes; blank and
    comment-only lines are dropped.
    """
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        cur = []
        in_q = False
        qchar = None
        for i, c in enumerate(line):
            if c in ('"', "'"):
                if not in_q:
                    in_q = True
                    qchar = c
                elif qchar == c and (i == 0 or line[i - 1] != '\\'):
                    in_q = False
                    qchar = None
            elif c == '#' and not in_q:
                break
            cur.append(c)
        if in_q:
            raise ParseError(f'line {lineno}: unterminated quote')
        content = ''.join(cur).strip()
        if content:
            out.append((lineno, content))
    return out


def parse_assignment(text: str) -> Tuple[str, str]:
    """Parse ``dotted.key = value``; surrounding quotes on the value are removed."""
    m = _KEY_RE.match(text.strip())
    if not m:
        raise ParseError(f'invalid assignment: {text}')
    key, value = m.group(1), m.group(2).strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in ('"', "'"):
        value = value[1:-1]
    return key, value


def parse_config(text: str) -> Dict[str, str]:
    """Flat mapping of dotted keys to raw string values, in file order."""
    flat: Dict[str, str] = {}
    for lineno, line in split_lines(text):
        try:
            key, value = parse_assignment(line)
        except ParseError as e:
            raise ParseError(f'line {lineno}: {e}') from None
        if key in flat:
            raise ParseError(f'line {lineno}: duplicate key {key!r}')
        flat[key] = value
    return flat


def nest(flat: Dict[str, str]) -> Dict[str, object]:
    """``{'train.epochs': '3'}`` → ``{'train': {'epochs': '3'}}``."""
    tree: Dict[str, object] = {}
    for key, value in flat.items():
        parts = key.split('.')
        node = tree
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ParseError(f'key {key!r} conflicts with scalar {part!r}')
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ParseError(f'key {key!r} conflicts with section {key!r}')
        node[parts[-1]] = value
    return tree


def split_list(s: str) -> List[str]:
    """Split a comma-separated value on commas outside quotes."""
    parts = []
    cur: List[str] = []
    in_q = False
    qchar = None
    for i, c in enumerate(s):
        if c in ('"', "'"):
            if not in_q:
                in_q = True
                qchar = c
            elif qchar == c and (i == 0 or s[i - 1] != '\\'):
                in_q = False
                qchar = None
        elif not in_q and c == ',':
            item = ''.join(cur).strip()
            if item:
                parts.append(item)
            cur = []
            continue
        cur.append(c)
    item = ''.join(cur).strip()
    if item:
        parts.append(item)
    return parts


def parse_grid(text: str) -> List[Tuple[float, float, float, float]]:
    """Parse ``"l1,l2,l3,l4;l1,l2,l3,l4"`` into λ-tuples.

    Each tuple needs exactly four finite, non-negative numbers.
    """
    tuples = []
    for chunk in text.split(';'):
        chunk = chunk.strip()
        if not chunk:
            continue
        items = split_list(chunk)
        if len(items) != 4:
            raise ParseError(f'grid point {chunk!r} needs 4 values, got {len(items)}')
        try:
            values = tuple(float(v) for v in items)
        except ValueError:
            raise ParseError(f'grid point {chunk!r} is not numeric') from None
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise ParseError(f'grid point {chunk!r} must be finite and non-negative')
        tuples.append(values)
    if not tuples:
        raise ParseError('grid is empty')
    return tuples


def format_config(flat: Dict[str, str]) -> str:
    """Canonical text: one ``key = value`` per line, keys sorted."""
    return ''.join(f'{k} = {flat[k]}\n' for k in sorted(flat))
