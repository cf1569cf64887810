"""Full training runs; deselected by default, run with ``pytest -m slow``."""

import pathlib

import numpy as np
import pytest

from bilevel_obstacle import (
    compare_methods,
    evaluate_resolutions,
    load_checkpoint,
    load_config,
    read_trajectory,
    run_experiment,
    state_consistency,
)

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / 'configs'

pytestmark = pytest.mark.slow

# iterations per block of the smoothed Stage-1 losses
LOSS_WINDOW = 1000


@pytest.fixture(scope='module')
def smoke_run(tmp_path_factory):
    config = load_config(CONFIGS / 'example1_smoke.toml')
    config = config.with_output_dir(str(tmp_path_factory.mktemp('smoke')))
    summary = run_experiment(config)
    return config, summary


@pytest.fixture(scope='module')
def trained(tmp_path_factory):
    """Run an example's shipped config once per module and return the run config."""
    runs = {}

    def train(example):
        if example not in runs:
            config = load_config(CONFIGS / f'{example}.toml')
            config = config.with_output_dir(str(tmp_path_factory.mktemp(example)))
            run_experiment(config)
            runs[example] = config
        return runs[example]

    return train


def smoothed(values, window):
    """Means over consecutive, non-overlapping blocks of ``window`` values."""
    blocks = len(values) // window
    return np.asarray(values[: blocks * window]).reshape(blocks, window).mean(axis=1)


def test_smoke_profile_reaches_its_error_bands(smoke_run):
    _, summary = smoke_run
    assert summary['stage2']['state_error'] <= 1e-1
    assert summary['stage2']['control_error'] <= 2e-1


def test_errors_do_not_depend_on_the_evaluation_grid(smoke_run):
    config, _ = smoke_run
    problem = config.problem.build()
    checkpoint = load_checkpoint(pathlib.Path(config.output.dir) / 'stage2.ckpt')

    evaluations = evaluate_resolutions(checkpoint, problem, [16, 32, 64, 128, 256, 512, 1024])
    for key in ('state_error', 'control_error'):
        errors = np.array([evaluation.errors(problem)[key] for evaluation in evaluations])
        assert (errors.max() - errors.min()) / errors.mean() < 0.1


def test_single_level_training_misses_the_control(smoke_run):
    config, _ = smoke_run
    checkpoint = load_checkpoint(pathlib.Path(config.output.dir) / 'stage2.ckpt')

    bilevel, single = compare_methods(config, [1.0], checkpoint=checkpoint)
    assert single['control_error'] >= 0.5
    assert bilevel['control_error'] <= 0.1 * single['control_error']


@pytest.mark.parametrize('example', ['example1', 'example2', 'example4', 'example5'])
def test_trained_state_matches_the_grid_state_of_its_control(trained, example):
    config = trained(example)
    checkpoint = load_checkpoint(pathlib.Path(config.output.dir) / 'stage2.ckpt')

    assert state_consistency(checkpoint, config.problem.build(), 100) <= 5e-2


@pytest.mark.parametrize('example', ['example2', 'example4'])
def test_smoothed_stage1_losses_do_not_increase(trained, example):
    config = trained(example)
    rows = read_trajectory(pathlib.Path(config.output.dir) / 'trajectory.csv')
    assert len(rows) == config.optimizer.iterations

    for column in ('upper_loss', 'lower_loss'):
        series = smoothed([getattr(row, column) for row in rows], LOSS_WINDOW)
        # first block is burn-in
        steps = np.diff(series[1:])
        slack = 1e-3 * np.abs(series[1:]).max()
        assert np.all(steps <= slack), (column, series)
