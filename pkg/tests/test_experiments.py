import numpy as np
import pytest

from bilevel_obstacle import (
    COMPARISON_COLUMNS,
    InputError,
    build_objective,
    catalog,
    checkpoint_report,
    compare_methods,
    load_config,
    read_field,
    refine_checkpoint,
    run_experiment,
    write_comparison,
)


def test_compare_against_a_given_checkpoint(small_config, tiny_checkpoint):
    config = load_config(small_config())
    rows = compare_methods(config, [], checkpoint=tiny_checkpoint('example1'))

    assert len(rows) == 1
    row = rows[0]
    assert set(row) == set(COMPARISON_COLUMNS)
    assert (row['method'], row['weight'], row['wall_ms']) == ('bilevel', None, None)
    assert np.isfinite(row['recovered_objective'])
    assert row['recovered_objective'] >= 0.0


def test_compare_rejects_non_positive_weights(small_config, tiny_checkpoint):
    config = load_config(small_config())
    with pytest.raises(InputError):
        compare_methods(config, [1.0, -2.0], checkpoint=tiny_checkpoint('example1'))


def test_star_domain_reports_are_empty(tiny_checkpoint):
    report = checkpoint_report(tiny_checkpoint('example3'), catalog('example3'), 8)
    assert report == {'grid': None, 'state_error': None, 'control_error': None, 'network_energy': None}


def test_write_comparison_leaves_missing_values_blank(tmp_path):
    path = tmp_path / 'comparison.csv'
    row = dict.fromkeys(COMPARISON_COLUMNS)
    row.update(method='single_level', weight=5.0, network_energy=-0.25)
    write_comparison(str(path), [row])

    lines = path.read_text(encoding='utf-8').splitlines()
    assert lines[0] == ','.join(COMPARISON_COLUMNS)
    assert lines[1] == 'single_level,5.0,,,,,-0.25,'


def test_refine_needs_a_matching_checkpoint(small_config, tiny_checkpoint):
    config = load_config(small_config())
    with pytest.raises(InputError):
        refine_checkpoint(config, tiny_checkpoint('example2'))


def test_refine_reports_the_new_losses(small_config, tiny_checkpoint, tmp_path):
    config = load_config(small_config())
    report = refine_checkpoint(config, tiny_checkpoint('example1'))
    assert report['example'] == 'example1'
    assert report['grid'] == 8
    assert np.isfinite(report['lower_loss'])
    assert (tmp_path / 'run' / 'stage2.ckpt').is_file()


def test_star_domain_run_dumps_scattered_fields(small_config, tmp_path):
    config = load_config(small_config('example3'))
    summary = run_experiment(config)

    assert summary['stage2']['state_error'] is None
    points, state, _ = read_field(tmp_path / 'run' / 'state.txt')
    _, obstacle, _ = read_field(tmp_path / 'run' / 'obstacle.txt')
    assert points.shape == (4096, 2)
    assert np.all(catalog('example3').domain.contains(points))
    assert np.all(state >= obstacle)


def test_objective_follows_the_config(small_config):
    objective = build_objective(load_config(small_config('example4')))
    assert objective.state_net.embedding == 'state_below_obstacle'
    assert objective.control_net.embedding == 'obstacle_raw'
    assert objective.state_net.width == 4
