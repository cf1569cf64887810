import pytest

from bilevel_obstacle import (
    InputError,
    ParseError,
    dump_config,
    dumps_config,
    load_config,
    loads_config,
)


def test_optimizer_defaults_come_from_the_example():
    config = loads_config('[problem]\nexample = "example2"\n')
    assert config.optimizer.gamma == 500.0
    assert config.optimizer.c0 == 5.0
    assert config.optimizer.iterations == 20000
    assert config.network.width == 16
    assert config.output.resolutions == (32, 64, 128, 256)

    config = loads_config('[problem]\nexample = "example5"\n')
    assert config.optimizer.alpha0 == 2e-4
    assert config.optimizer.gamma == 200000.0


def test_explicit_values_override_defaults():
    text = (
        '[problem]\nexample = "example1"\n\n'
        '[optimizer]\ngamma = 7\nbatch_size = 64\n\n'
        '[stage2]\nlr = 0.01\n'
    )
    config = loads_config(text)
    assert config.optimizer.gamma == 7.0
    assert isinstance(config.optimizer.gamma, float)
    assert config.optimizer.batch_size == 64
    assert config.stage2.batch_size == 64
    assert config.stage2.lr == 0.01


@pytest.mark.parametrize(
    ('text', 'line', 'column'),
    [
        ('[problem]\nexample = "example1"\n\n[optimizer]\n  gama = 20.0\n', 5, 3),
        ('[problem]\nexample = "example1"\n\n[plotting]\ndpi = 300\n', 4, 1),
        ('[problem]\nexample = "example1"\n[network]\nwidth = "wide"\n', 4, 1),
        ('[problem]\nexample = "example1"\n[network]\nblocks = 1.5\n', 4, 1),
        ('[output]\ngrid = true\n', None, None),
    ],
)
def test_parse_errors_carry_a_location(text, line, column):
    with pytest.raises(ParseError) as info:
        loads_config(text, path='run.toml')
    assert info.value.path == 'run.toml'
    if line is not None:
        assert (info.value.line, info.value.column) == (line, column)


def test_missing_example():
    with pytest.raises(ParseError) as info:
        loads_config('[network]\nwidth = 8\n')
    assert 'problem.example' in str(info.value)


def test_invalid_toml():
    with pytest.raises(ParseError) as info:
        loads_config('[problem]\nexample = \n')
    assert info.value.line == 2


def test_out_of_range_values():
    with pytest.raises(InputError):
        loads_config('[problem]\nexample = "example1"\n[optimizer]\ngamma = 0.0\n')
    with pytest.raises(InputError):
        loads_config('[problem]\nexample = "example7"\n')
    with pytest.raises(InputError):
        loads_config('[problem]\nexample = "example1"\n[network]\nactivation = "gelu"\n')


def test_tau_only_applies_to_example5():
    config = loads_config('[problem]\nexample = "example5"\ntau = 0.02\n')
    assert config.problem.build().lower_loss.tau == 0.02

    with pytest.raises(InputError):
        loads_config('[problem]\nexample = "example1"\ntau = 0.02\n')


def test_resolved_config_round_trip(tmp_path):
    config = loads_config('[problem]\nexample = "example5"\ntau = 0.02\n[output]\nresolutions = [8, 16]\n')
    path = tmp_path / 'config.resolved.toml'
    dump_config(config, path)

    assert load_config(path) == config
    assert loads_config(dumps_config(config)) == config


def test_seed_override(small_config):
    config = load_config(small_config()).with_seed(9)
    assert config.optimizer.seed == 9
    assert config.stage2.seed == 9
    assert config.with_output_dir('elsewhere').output.dir == 'elsewhere'


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_config(tmp_path / 'nope.toml')
