import json
import os

import pytest

from bilevel_obstacle import __version__, load_checkpoint, load_config, read_field, read_trajectory
from bilevel_obstacle.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(['--version'])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_fixture_check(capsys):
    code, out = run_cli(capsys, 'fixture-check', '--json')
    report = json.loads(out)
    assert code == 0
    assert report['passed'] is True
    names = [check['name'] for check in report['checks']]
    assert names == ['envelope_gradient', 'contraction', 'merit_descent']


def test_dry_run_writes_nothing(capsys, small_config, tmp_path):
    code, out = run_cli(capsys, 'run', '--config', small_config(), '--dry-run')
    assert code == 0
    assert 'example = "example1"' in out
    assert 'gamma = 20.0' in out
    assert not (tmp_path / 'run').exists()


@pytest.mark.parametrize(
    'overrides',
    [
        {'optimizer': {'gamma': 0.0}},
        {'network': {'depth': 3}},
        {'problem': {'example': 'example6'}},
    ],
)
def test_bad_configs_exit_with_2(capsys, small_config, overrides):
    code, _ = run_cli(capsys, 'run', '--config', small_config(**overrides))
    assert code == 2


def test_missing_config_exits_with_2(capsys, tmp_path):
    code, _ = run_cli(capsys, 'run', '--config', str(tmp_path / 'missing.toml'))
    assert code == 2


def test_divergence_exits_with_3(capsys, small_config):
    code, _ = run_cli(capsys, 'run', '--config', small_config(optimizer={'divergence_bound': 1e-3}))
    assert code == 3


def test_run_then_every_follow_up_command(capsys, small_config, tmp_path):
    config = small_config()
    out_dir = tmp_path / 'run'

    code, out = run_cli(capsys, 'run', '--config', config, '--json')
    assert code == 0
    summary = json.loads(out)
    assert summary['example'] == 'example1'
    assert summary['stage1']['iterations'] == 3
    assert summary['stage2']['grid'] == 8

    expected = [
        'config.resolved.toml',
        'trajectory.csv',
        'stage2_trajectory.csv',
        'stage1.ckpt',
        'stage2.ckpt',
        'summary.json',
        'state.txt',
        'control.txt',
        'obstacle.txt',
    ]
    for name in expected:
        assert (out_dir / name).is_file(), name
    assert [row.iter for row in read_trajectory(out_dir / 'trajectory.csv')] == [0, 1, 2]
    assert len(read_trajectory(out_dir / 'stage2_trajectory.csv')) == 2
    points, _, name = read_field(out_dir / 'state.txt')
    assert (points.shape, name) == ((49, 2), 'state')

    stage1 = str(out_dir / 'stage1.ckpt')
    stage2 = str(out_dir / 'stage2.ckpt')

    code, out = run_cli(
        capsys,
        'evaluate',
        '--config',
        config,
        '--checkpoint',
        stage2,
        '--grid',
        '4',
        '8',
        '--out',
        str(tmp_path / 'eval'),
        '--json',
    )
    assert code == 0
    assert [row['N'] for row in json.loads(out)] == [4, 8]
    assert os.path.isfile(tmp_path / 'eval' / 'evaluation.json')
    resolved = load_config(tmp_path / 'eval' / 'config.resolved.toml')
    assert resolved.output.dir == str(tmp_path / 'eval')

    code, out = run_cli(
        capsys,
        'oracle',
        '--config',
        config,
        '--checkpoint',
        stage2,
        '--grid',
        '8',
        '--out',
        str(tmp_path / 'oracle'),
        '--json',
    )
    assert code == 0
    assert json.loads(out)['sweeps'] >= 1
    assert read_field(tmp_path / 'oracle' / 'oracle_state.txt')[0].shape == (49, 2)
    assert (tmp_path / 'oracle' / 'config.resolved.toml').is_file()

    code, _ = run_cli(capsys, 'oracle', '--config', config, '--grid', '8')
    assert code == 0

    code, out = run_cli(
        capsys,
        'stage2',
        '--config',
        config,
        '--checkpoint',
        stage1,
        '--out',
        str(tmp_path / 'refined'),
        '--json',
    )
    assert code == 0
    assert load_checkpoint(tmp_path / 'refined' / 'stage2.ckpt').stage == 'stage2'

    compare_dir = tmp_path / 'compare'
    code, out = run_cli(
        capsys,
        'compare',
        '--config',
        config,
        '--checkpoint',
        stage2,
        '--weights',
        '1',
        '10',
        '--out',
        str(compare_dir),
        '--json',
    )
    assert code == 0
    rows = json.loads(out)
    assert [row['method'] for row in rows] == ['bilevel', 'single_level', 'single_level']
    assert rows[0]['wall_ms'] is None
    lines = (compare_dir / 'comparison.csv').read_text(encoding='utf-8').splitlines()
    assert len(lines) == 4


def test_compare_without_a_checkpoint_trains_first(capsys, small_config, tmp_path):
    code, out = run_cli(capsys, 'compare', '--config', small_config(), '--json')
    assert code == 0
    rows = json.loads(out)
    assert len(rows) == 1
    assert rows[0]['wall_ms'] > 0.0
    assert (tmp_path / 'run' / 'stage2.ckpt').is_file()


def test_runs_are_reproducible(capsys, small_config, tmp_path):
    config = small_config()
    for name in ('first', 'second'):
        code, _ = run_cli(capsys, 'run', '--config', config, '--seed', '5', '--out', str(tmp_path / name))
        assert code == 0

    for checkpoint in ('stage1.ckpt', 'stage2.ckpt'):
        first = (tmp_path / 'first' / checkpoint).read_bytes()
        assert first == (tmp_path / 'second' / checkpoint).read_bytes()
    assert load_checkpoint(tmp_path / 'first' / 'stage2.ckpt').seed == 5
