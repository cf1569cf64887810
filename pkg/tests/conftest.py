from __future__ import annotations

from typing import Any, Callable, Dict

import numpy as np
import pytest
import tomli_w

from bilevel_obstacle import (
    Checkpoint,
    NetworkParams,
    NetworkSpec,
    NeuralObjective,
    catalog,
    quadratic_fixture,
)


TINY_NET = NetworkSpec(blocks=1, width=4)


@pytest.fixture
def fixture():
    return quadratic_fixture()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_objective() -> Callable[[str], NeuralObjective]:
    """Objective of a catalog example with one-block, width-4 networks."""

    def build(example: str, **options: Any) -> NeuralObjective:
        return NeuralObjective(catalog(example, **options), TINY_NET, TINY_NET)

    return build


@pytest.fixture
def tiny_checkpoint(tiny_objective) -> Callable[..., Checkpoint]:
    """An untrained checkpoint of a catalog example, seeded like a run."""

    def build(example: str, seed: int = 0) -> Checkpoint:
        objective = tiny_objective(example)
        theta_y, theta_u = objective.initial_params(seed)
        return Checkpoint(
            problem=example,
            seed=seed,
            iteration=0,
            stage='stage1',
            networks=(
                NetworkParams('state', objective.state_net, theta_y),
                NetworkParams('control', objective.control_net, theta_u),
            ),
        )

    return build


@pytest.fixture
def small_config(tmp_path) -> Callable[..., str]:
    """Write a config for a run that finishes in seconds and return its path."""

    def write(example: str = 'example1', name: str = 'config.toml', **overrides: Dict[str, Any]) -> str:
        sections: Dict[str, Dict[str, Any]] = {
            'problem': {'example': example},
            'network': {'blocks': 1, 'width': 4},
            'optimizer': {'iterations': 3, 'batch_size': 16, 'log_every': 1},
            'stage2': {'iterations': 2, 'log_every': 1},
            'output': {'dir': str(tmp_path / 'run'), 'grid': 8, 'resolutions': [4, 8]},
        }
        for section, values in overrides.items():
            sections.setdefault(section, {}).update(values)

        path = tmp_path / name
        path.write_text(tomli_w.dumps(sections), encoding='utf-8')
        return str(path)

    return write
