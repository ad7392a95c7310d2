import pytest

from nser.config import ConfigError, RunConfig, dump_config, load_config, parse_config


def test_defaults():
    cfg = RunConfig()
    assert cfg.layout.budget == 15 and cfg.layout.caps is None
    assert cfg.train.lam == 10.0 and cfg.train.dim == 32
    assert cfg.eval.ratio == 0.7 and cfg.eval.topn == 10


def test_parse_sections_and_types():
    cfg = parse_config(
        """
        # comment
        seed = 7
        synth.users = 50
        train.lambda = 2.5     # alias for train.lam
        train.chained = false
        layout.caps = 3
        layout.strategy = prior
        experiment.lambdas = 0, 10
        experiment.seeds = 0, 1, 2
        experiment.baselines = teacher, random
        """
    )
    assert cfg.seed == 7 and cfg.train.seed == 7 and cfg.teacher.seed == 7
    assert cfg.synth.users == 50
    assert cfg.train.lam == 2.5 and cfg.train.chained is False
    assert cfg.layout.caps == 3 and cfg.layout.strategy == "prior"
    assert cfg.experiment.lambdas == [0.0, 10.0]
    assert cfg.experiment.seeds == [0, 1, 2]
    assert cfg.experiment.baselines == ["teacher", "random"]


@pytest.mark.parametrize(
    "text, line",
    [
        ("seed = 1\nbogus line\n", 2),
        ("train.nope = 3\n", 1),
        ("nosection = 3\n", 1),
        ("train.epochs = many\n", 1),
        ("\nlayout.strategy = random\n", 2),
        ("train.lambda = -1\n", 1),
        ("experiment.baselines = oracle\n", 1),
    ],
)
def test_parse_errors_name_line(text, line):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "run.cfg")
    assert exc.value.line == line
    assert f"run.cfg:{line}:" in str(exc.value)


def test_dump_round_trip(tmp_path):
    cfg = parse_config("seed = 3\nlayout.caps = 4\nexperiment.axis = lambda\n")
    p = tmp_path / "c.cfg"
    p.write_text(dump_config(cfg))
    back = load_config(p)
    assert back == cfg


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")
    assert load_config(None) == RunConfig()
