"""
On-disk formats: trajectory CSV, field dumps and checkpoints.

All three are documented byte for byte in ``docs/formats.rst``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from typing import TYPE_CHECKING, Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from .errors import InputError, ParseError
from .networks import NetworkSpec

if TYPE_CHECKING:
    from typing_extensions import TypeAlias

    from ._types import FloatArray


__all__ = (
    'TrajectoryRow',
    'TRAJECTORY_COLUMNS',
    'write_trajectory',
    'read_trajectory',
    'write_field',
    'read_field',
    'NetworkParams',
    'Checkpoint',
    'save_checkpoint',
    'load_checkpoint',
    'write_summary',
)

_log = logging.getLogger(__name__)

PathLike: TypeAlias = Union[str, 'os.PathLike[str]']

CHECKPOINT_MAGIC = 'bilevel-obstacle-checkpoint'
CHECKPOINT_VERSION = 1


def _format_float(value: float) -> str:
    # shortest repr that round-trips, never more than 17 significant digits
    return repr(float(value))


# trajectory CSV


@dataclasses.dataclass(frozen=True)
class TrajectoryRow:
    iter: int
    upper_loss: float
    lower_loss: float
    alpha: float
    beta: float
    eta: float
    c_k: float
    wall_ms: float


TRAJECTORY_COLUMNS = tuple(field.name for field in dataclasses.fields(TrajectoryRow))


def write_trajectory(path: PathLike, rows: Sequence[TrajectoryRow]) -> None:
    """
    Write rows as CSV with a header line.

    Raises
    ------
    InputError
        A value is not finite or the iteration counter does not strictly increase.
    """
    previous = None
    for row in rows:
        if previous is not None and row.iter <= previous:
            raise InputError(f'Trajectory iterations must strictly increase, got {row.iter} after {previous}')
        previous = row.iter
        values = dataclasses.astuple(row)[1:]
        if not np.all(np.isfinite(values)):
            raise InputError(f'Trajectory row {row.iter} holds a non-finite value: {row}')

    with open(path, 'w', newline='', encoding='utf-8') as fp:
        writer = csv.writer(fp, lineterminator='\n')
        writer.writerow(TRAJECTORY_COLUMNS)
        for row in rows:
            cells = (_format_float(value) for value in dataclasses.astuple(row)[1:])
            writer.writerow([str(row.iter), *cells])


def read_trajectory(path: PathLike) -> List[TrajectoryRow]:
    """
    Read a trajectory CSV.

    Raises
    ------
    ParseError
        Wrong header, wrong number of fields, a non-numeric or non-finite value, or
        non-increasing iterations; reported with line and column.
    """
    path = os.fspath(path)
    rows: List[TrajectoryRow] = []
    with open(path, newline='', encoding='utf-8') as fp:
        reader = csv.reader(fp)
        for line, record in enumerate(reader, start=1):
            if line == 1:
                if tuple(record) != TRAJECTORY_COLUMNS:
                    raise ParseError(
                        f'Expected header {",".join(TRAJECTORY_COLUMNS)}', path=path, line=1, column=1
                    )
                continue
            if len(record) != len(TRAJECTORY_COLUMNS):
                raise ParseError(
                    f'Expected {len(TRAJECTORY_COLUMNS)} fields, got {len(record)}',
                    path=path,
                    line=line,
                    column=1,
                )

            values: List[Any] = []
            for column, (name, text) in enumerate(zip(TRAJECTORY_COLUMNS, record), start=1):
                try:
                    value: Any = int(text) if name == 'iter' else float(text)
                except ValueError:
                    raise ParseError(
                        f'{name}: {text!r} is not a number', path=path, line=line, column=column
                    ) from None
                if name != 'iter' and not np.isfinite(value):
                    raise ParseError(
                        f'{name}: non-finite value {text!r}', path=path, line=line, column=column
                    )
                values.append(value)

            row = TrajectoryRow(*values)
            if rows and row.iter <= rows[-1].iter:
                raise ParseError(f'iter {row.iter} does not increase', path=path, line=line, column=1)
            rows.append(row)
    return rows


# field dumps


def write_field(path: PathLike, points: FloatArray, values: FloatArray, name: str) -> None:
    """Plain-text field dump: a ``# x1 x2 <name>`` header, then one node per line."""
    points = np.asarray(points, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or values.shape != (points.shape[0],):
        raise InputError(f'Expected points (n, 2) and values (n,), got {points.shape} and {values.shape}')
    if not name or any(ch.isspace() for ch in name):
        raise InputError(f'Field name must be a single non-empty word, got {name!r}')
    if not np.all(np.isfinite(values)):
        raise InputError(f'Field {name!r} holds non-finite values')

    np.savetxt(path, np.column_stack([points, values]), fmt='%.17g', header=f'x1 x2 {name}', comments='# ')


def read_field(path: PathLike) -> Tuple[FloatArray, FloatArray, str]:
    """
    Read a field dump back as ``(points, values, name)``.

    Raises
    ------
    ParseError
        Missing header, wrong column count, or a value that is not a number.
    """
    path = os.fspath(path)
    with open(path, encoding='utf-8') as fp:
        lines = fp.read().splitlines()

    if not lines:
        raise ParseError('Empty field dump', path=path, line=1, column=1)
    header = lines[0].split()
    if len(header) != 4 or header[:3] != ['#', 'x1', 'x2']:
        raise ParseError("Expected header '# x1 x2 <name>'", path=path, line=1, column=1)

    rows = []
    for line, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        fields = text.split()
        if len(fields) != 3:
            raise ParseError(f'Expected 3 columns, got {len(fields)}', path=path, line=line, column=1)
        row = []
        for field in fields:
            try:
                row.append(float(field))
            except ValueError:
                column = text.index(field) + 1
                raise ParseError(f'{field!r} is not a number', path=path, line=line, column=column) from None
        rows.append(row)

    data = np.array(rows, dtype=np.float64).reshape(-1, 3)
    return data[:, :2], data[:, 2], header[3]


# checkpoints


@dataclasses.dataclass(frozen=True)
class NetworkParams:
    name: str
    spec: NetworkSpec
    params: FloatArray

    def __post_init__(self) -> None:
        if np.shape(self.params) != (self.spec.num_params,):
            raise InputError(
                f'Network {self.name!r} expects {self.spec.num_params} parameters, '
                f'got shape {np.shape(self.params)}'
            )


@dataclasses.dataclass(frozen=True)
class Checkpoint:
    """
    An immutable snapshot of trained networks.

    Attributes
    ----------
    problem: :class:`str`
        Catalog id the networks were trained on.
    seed: :class:`int`
        Run seed.
    iteration: :class:`int`
        Iterations performed by the stage that wrote it.
    stage: :class:`str`
        ``stage1``, ``stage2`` or ``single_level``.
    networks: Tuple[:class:`NetworkParams`, ...]
        In payload order.
    """

    problem: str
    seed: int
    iteration: int
    stage: str
    networks: Tuple[NetworkParams, ...]

    def network(self, name: str) -> NetworkParams:
        for entry in self.networks:
            if entry.name == name:
                return entry
        names = [entry.name for entry in self.networks]
        raise InputError(f'Checkpoint has no network {name!r}; it has {names}')


def save_checkpoint(path: PathLike, checkpoint: Checkpoint) -> None:
    """
    Write a one-line ASCII header followed by every parameter vector as little-endian float64.

    The header is ``bilevel-obstacle-checkpoint 1 <json>`` where the JSON object lists the
    problem, seed, iteration, stage and, per network, its name, spec and length.
    """
    header = {
        'problem': checkpoint.problem,
        'seed': checkpoint.seed,
        'iteration': checkpoint.iteration,
        'stage': checkpoint.stage,
        'networks': [
            {'name': entry.name, 'spec': entry.spec.to_dict(), 'length': int(entry.params.shape[0])}
            for entry in checkpoint.networks
        ],
    }
    encoded = json.dumps(header, sort_keys=True, separators=(',', ':'))
    line = f'{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {encoded}\n'
    with open(path, 'wb') as fp:
        fp.write(line.encode('ascii'))
        for entry in checkpoint.networks:
            fp.write(np.ascontiguousarray(entry.params, dtype='<f8').tobytes())


def load_checkpoint(path: PathLike) -> Checkpoint:
    """
    Read a checkpoint written by :func:`save_checkpoint`; the round trip is bitwise exact.

    Raises
    ------
    ParseError
        Bad magic, version or header JSON, or a payload of the wrong size.
    """
    path = os.fspath(path)
    with open(path, 'rb') as fp:
        data = fp.read()

    end = data.find(b'\n')
    if end < 0:
        raise ParseError('Missing checkpoint header line', path=path, line=1, column=1)
    try:
        line = data[:end].decode('ascii')
    except UnicodeDecodeError as exc:
        raise ParseError('Checkpoint header is not ASCII', path=path, line=1, column=exc.start + 1) from None

    parts = line.split(' ', 2)
    if len(parts) != 3 or parts[0] != CHECKPOINT_MAGIC:
        raise ParseError(f'Not a checkpoint: expected {CHECKPOINT_MAGIC!r}', path=path, line=1, column=1)
    if parts[1] != str(CHECKPOINT_VERSION):
        raise ParseError(
            f'Unsupported checkpoint version {parts[1]!r}', path=path, line=1, column=len(parts[0]) + 2
        )

    offset = len(parts[0]) + len(parts[1]) + 2
    try:
        header: Dict[str, Any] = json.loads(parts[2])
        entries = header['networks']
        specs = [
            (entry['name'], NetworkSpec.from_dict(entry['spec']), int(entry['length'])) for entry in entries
        ]
        meta = (str(header['problem']), int(header['seed']), int(header['iteration']), str(header['stage']))
    except json.JSONDecodeError as exc:
        raise ParseError(
            f'Bad header JSON: {exc.msg}', path=path, line=1, column=offset + exc.colno
        ) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(
            f'Incomplete checkpoint header: {exc}', path=path, line=1, column=offset + 1
        ) from None

    payload = data[end + 1 :]
    expected = 8 * sum(length for _, _, length in specs)
    if len(payload) != expected:
        raise ParseError(
            f'Payload holds {len(payload)} bytes, expected {expected}', path=path, line=2, column=1
        )

    flat = np.frombuffer(payload, dtype='<f8').astype(np.float64)
    networks = []
    start = 0
    for name, spec, length in specs:
        try:
            networks.append(NetworkParams(name=name, spec=spec, params=flat[start : start + length].copy()))
        except InputError as exc:
            raise ParseError(
                f'Header does not match its payload: {exc}', path=path, line=1, column=offset + 1
            ) from None
        start += length

    _log.debug('loaded checkpoint %s with %d networks', path, len(networks))
    problem, seed, iteration, stage = meta
    return Checkpoint(problem=problem, seed=seed, iteration=iteration, stage=stage, networks=tuple(networks))


def write_summary(path: PathLike, summary: Dict[str, Any]) -> None:
    """Write a run summary as indented JSON. Missing references are written as ``null``."""
    with open(path, 'w', encoding='utf-8') as fp:
        json.dump(summary, fp, indent=2, sort_keys=True, allow_nan=False)
        fp.write('\n')
