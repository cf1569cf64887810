"""
Run configuration files.

A config is TOML with five flat sections:

.. code:: toml

    [problem]
    example = "example1"

    [network]
    blocks = 3
    width = 16

    [optimizer]
    iterations = 3000

    [stage2]
    iterations = 5000

    [output]
    dir = "runs/example1"

Every key is optional except ``problem.example``. Optimizer keys left out take the
example's recommended values, everything else takes the dataclass defaults. Unknown
sections and keys are errors.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import re
import sys
from typing import TYPE_CHECKING, Any, Dict, Optional, Tuple, Type, Union

import tomli_w

from .adam import AdamParams
from .errors import InputError, ParseError
from .networks import ACTIVATIONS
from .optimizer import HyperParams
from .problems import EXAMPLES, ProblemSpec, catalog

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

if TYPE_CHECKING:
    from typing_extensions import Self, TypeAlias


__all__ = (
    'ProblemConfig',
    'NetworkConfig',
    'OutputConfig',
    'RunConfig',
    'load_config',
    'loads_config',
    'dump_config',
    'dumps_config',
    'RESOLVED_CONFIG_NAME',
)

_log = logging.getLogger(__name__)

PathLike: TypeAlias = Union[str, 'os.PathLike[str]']

RESOLVED_CONFIG_NAME = 'config.resolved.toml'


@dataclasses.dataclass(frozen=True)
class ProblemConfig:
    example: str
    tau: Optional[float] = None

    def __post_init__(self) -> None:
        if self.example not in EXAMPLES:
            raise InputError(f'Unknown example {self.example!r}, expected one of {sorted(EXAMPLES)}')
        if self.tau is not None and self.example != 'example5':
            raise InputError(f'tau only applies to example5, not {self.example}')

    def build(self) -> ProblemSpec:
        options = {} if self.tau is None else {'tau': self.tau}
        return catalog(self.example, **options)


@dataclasses.dataclass(frozen=True)
class NetworkConfig:
    """Architecture shared by the state and the control network; embeddings come from the problem."""

    blocks: int = 3
    width: int = 16
    activation: str = 'swish'

    def __post_init__(self) -> None:
        if self.blocks < 0 or self.width < 1:
            raise InputError(f'Invalid network size: blocks={self.blocks}, width={self.width}')
        if self.activation not in ACTIVATIONS:
            raise InputError(f'Unknown activation {self.activation!r}, expected one of {ACTIVATIONS}')


@dataclasses.dataclass(frozen=True)
class OutputConfig:
    dir: str = 'runs'
    grid: int = 128
    resolutions: Tuple[int, ...] = (32, 64, 128, 256)
    dump_fields: bool = True

    def __post_init__(self) -> None:
        if self.grid < 1 or any(N < 1 for N in self.resolutions):
            raise InputError(
                f'Grid resolutions must be positive, got grid={self.grid}, resolutions={self.resolutions}'
            )


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """
    A fully resolved run: every value is explicit, none depends on defaults any more.

    Attributes
    ----------
    problem: :class:`ProblemConfig`
        Which example to solve.
    network: :class:`NetworkConfig`
        Architecture of both networks.
    optimizer: :class:`HyperParams`
        Stage-1 settings; the single-level baseline uses them too.
    stage2: :class:`AdamParams`
        Stage-2 settings.
    output: :class:`OutputConfig`
        Where and at which resolutions results are written.
    """

    problem: ProblemConfig
    network: NetworkConfig
    optimizer: HyperParams
    stage2: AdamParams
    output: OutputConfig

    def with_seed(self, seed: int) -> Self:
        """The same run with every random stream rooted at ``seed``."""
        return dataclasses.replace(
            self,
            optimizer=dataclasses.replace(self.optimizer, seed=seed),
            stage2=dataclasses.replace(self.stage2, seed=seed),
        )

    def with_output_dir(self, path: str) -> Self:
        return dataclasses.replace(self, output=dataclasses.replace(self.output, dir=path))

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        sections: Dict[str, Dict[str, Any]] = {}
        for name in _SECTIONS:
            values = dataclasses.asdict(getattr(self, name))
            sections[name] = {
                key: list(value) if isinstance(value, tuple) else value
                for key, value in values.items()
                if value is not None
            }
        return sections


_SECTIONS: Dict[str, Type[Any]] = {
    'problem': ProblemConfig,
    'network': NetworkConfig,
    'optimizer': HyperParams,
    'stage2': AdamParams,
    'output': OutputConfig,
}

# annotation strings of the config dataclasses, mapped to what a TOML value may be
_SCALARS: Dict[str, Tuple[type, ...]] = {
    'int': (int,),
    'float': (int, float),
    'str': (str,),
    'bool': (bool,),
    'Optional[float]': (int, float),
}


def _locate(
    text: str, section: Optional[str], key: Optional[str] = None
) -> Tuple[Optional[int], Optional[int]]:
    lines = text.splitlines()
    start = 0
    if section is not None:
        header = re.compile(rf'^\s*\[\s*{re.escape(section)}\s*\]')
        for number, line in enumerate(lines):
            if header.match(line):
                start = number
                break
        else:
            return None, None
        if key is None:
            return start + 1, lines[start].index('[') + 1

    pattern = re.compile(rf'^(\s*)["\']?{re.escape(key or "")}["\']?\s*=')
    for number in range(start, len(lines)):
        if number > start and lines[number].lstrip().startswith('['):
            break
        match = pattern.match(lines[number])
        if match:
            return number + 1, len(match.group(1)) + 1
    return None, None


def _check_value(annotation: str, value: Any) -> bool:
    if annotation == 'Tuple[int, ...]':
        return isinstance(value, list) and all(type(item) is int for item in value)
    allowed = _SCALARS.get(annotation)
    if allowed is None:
        return False
    if isinstance(value, bool) and bool not in allowed:
        return False
    return isinstance(value, allowed)


def _section_values(name: str, raw: Any, text: str, path: Optional[str]) -> Dict[str, Any]:
    if not isinstance(raw, dict):
        line, column = _locate(text, None, name)
        raise ParseError(f'{name!r} must be a table', path=path, line=line, column=column)

    fields = {field.name: field for field in dataclasses.fields(_SECTIONS[name])}
    values: Dict[str, Any] = {}
    for key, value in raw.items():
        line, column = _locate(text, name, key)
        field = fields.get(key)
        if field is None:
            raise ParseError(f'Unknown key {key!r} in [{name}]', path=path, line=line, column=column)
        annotation = str(field.type)
        if not _check_value(annotation, value):
            raise ParseError(
                f'[{name}] {key} must be of type {annotation}, got {type(value).__name__!r}',
                path=path,
                line=line,
                column=column,
            )
        if annotation in ('float', 'Optional[float]'):
            value = float(value)
        elif annotation == 'Tuple[int, ...]':
            value = tuple(value)
        values[key] = value
    return values


def loads_config(text: str, *, path: Optional[str] = None) -> RunConfig:
    """
    Parse and resolve a config from TOML text.

    Raises
    ------
    ParseError
        Invalid TOML, an unknown section or key, a value of the wrong type or a missing
        ``problem.example``; reported with line and column where possible.
    InputError
        A value is out of range, e.g. ``gamma <= 0``.
    """
    try:
        document = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, 'lineno', None)
        column = getattr(exc, 'colno', None)
        if line is None:
            found = re.search(r'line (\d+), column (\d+)', str(exc))
            if found:
                line, column = int(found.group(1)), int(found.group(2))
        raise ParseError(f'Invalid TOML: {exc}', path=path, line=line, column=column) from None

    sections: Dict[str, Dict[str, Any]] = {}
    for name, raw in document.items():
        if name not in _SECTIONS:
            line, column = _locate(text, name)
            raise ParseError(f'Unknown section [{name}]', path=path, line=line, column=column)
        sections[name] = _section_values(name, raw, text, path)

    if 'example' not in sections.get('problem', {}):
        raise ParseError('Missing required key problem.example', path=path, line=1, column=1)

    problem = ProblemConfig(**sections['problem'])
    defaults = problem.build().defaults
    optimizer = {
        'gamma': defaults.gamma,
        'c0': defaults.c0,
        'c_exp': defaults.c_exp,
        'iterations': defaults.iterations,
        'alpha0': defaults.learning_rate,
        'beta0': defaults.learning_rate,
        'eta0': defaults.learning_rate,
        **sections.get('optimizer', {}),
    }
    hp = HyperParams(**optimizer)

    stage2 = {'batch_size': hp.batch_size, 'seed': hp.seed, **sections.get('stage2', {})}
    config = RunConfig(
        problem=problem,
        network=NetworkConfig(**sections.get('network', {})),
        optimizer=hp,
        stage2=AdamParams(**stage2),
        output=OutputConfig(**sections.get('output', {})),
    )
    _log.debug('resolved config for %s: %s', problem.example, config)
    return config


def load_config(path: PathLike) -> RunConfig:
    """Read and resolve a config file, see :func:`loads_config`."""
    path = os.fspath(path)
    with open(path, encoding='utf-8') as fp:
        text = fp.read()
    return loads_config(text, path=path)


def dumps_config(config: RunConfig) -> str:
    return tomli_w.dumps(config.to_dict())


def dump_config(config: RunConfig, path: PathLike) -> None:
    """Write a resolved config; reading it back gives an equal :class:`RunConfig`."""
    with open(path, 'wb') as fp:
        tomli_w.dump(config.to_dict(), fp)
