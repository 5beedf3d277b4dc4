import pytest

from marigold.config import parse_config, parse_config_text
from marigold.errors import ConfigError

MINIMAL = """
[problem]
kind = quadratic

[run]
balancer = marigold
seeds = 0
"""


def test_minimal_config_fills_defaults():
    cfg = parse_config_text(MINIMAL)
    assert cfg.marigold.beta == 1.0 and cfg.marigold.r == 1e-3
    assert cfg.marigold.upper_lr_u == 1e-4 and cfg.marigold.upper_lr_v == 1e-4
    assert cfg.marigold.perturb_mode == "logit" and cfg.marigold.batch_policy == "reuse"
    assert cfg.marigold.update_schedule == "simultaneous"
    assert cfg.run.seeds == (0,) and cfg.methods == ("marigold",) and cfg.baseline == "marigold"
    assert cfg.optimizer.kind == "sgd" and cfg.run.iterations >= 1


def test_lists_and_booleans():
    cfg = parse_config_text(MINIMAL.replace("balancer = marigold", "balancer = marigold, mgda , ls")
                            .replace("seeds = 0", "seeds = 3,1, 2") + "\n[marigold]\nantithetic = yes\n")
    assert cfg.methods == ("marigold", "mgda", "ls") and cfg.run.seeds == (3, 1, 2)
    assert cfg.baseline == "ls" and cfg.marigold.antithetic is True


def line_of(msg):
    return int(msg.split(":")[1])


def test_negative_r_names_key_and_line():
    text = MINIMAL + "\n[marigold]\nbeta = 2\nr = -0.1\n"
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text, "exp.ini")
    msg = str(exc.value)
    assert "marigold.r" in msg and line_of(msg) == text.splitlines().index("r = -0.1") + 1


def test_duplicate_key():
    text = MINIMAL + "seeds = 1\n"
    with pytest.raises(ConfigError, match="duplicate key 'seeds'") as exc:
        parse_config_text(text, "exp.ini")
    assert line_of(str(exc.value)) == len(text.splitlines())


def test_unknown_key_and_section():
    text = MINIMAL + "\n[optimizer]\nmomentum = 0.9\n"
    with pytest.raises(ConfigError, match="unknown key 'momentum'") as exc:
        parse_config_text(text, "exp.ini")
    assert line_of(str(exc.value)) == len(text.splitlines())
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config_text(MINIMAL + "\n[plots]\nx = 1\n")


def with_key(section, line):
    """MINIMAL plus one ``key = value`` line in ``section``."""
    if section in ("problem", "run"):
        return MINIMAL.replace(f"[{section}]\n", f"[{section}]\n{line}\n")
    return MINIMAL + f"\n[{section}]\n{line}\n"


@pytest.mark.parametrize("section, line, needle", [
    ("run", "iterations = 0", "run.iterations"),
    ("optimizer", "lr = abc", "optimizer.lr"),
    ("optimizer", "lr = nan", "optimizer.lr"),
    ("optimizer", "kind = rmsprop", "optimizer.kind"),
    ("marigold", "perturb_mode = sideways", "marigold.perturb_mode"),
    ("marigold", "antithetic = maybe", "marigold.antithetic"),
    ("problem", "correlation = 3", "problem.correlation"),
    ("problem", "m = 1", "problem.m"),
])
def test_invalid_values(section, line, needle):
    text = with_key(section, line)
    with pytest.raises(ConfigError, match=needle.replace(".", r"\.")) as exc:
        parse_config_text(text, "exp.ini")
    assert line_of(str(exc.value)) == text.splitlines().index(line) + 1


@pytest.mark.parametrize("text, needle", [
    ("[problem]\nkind = quadratic\n[run]\nseeds = 0\n", "run.balancer"),
    ("[problem]\nkind = quadratic\n[run]\nbalancer = ls\n", "run.seeds"),
    ("[run]\nbalancer = ls\nseeds = 0\n", "problem.kind"),
    (MINIMAL.replace("balancer = marigold", "balancer = famo"), "unknown method"),
    (MINIMAL.replace("balancer = marigold", "balancer = ls, ls"), "repeat"),
    (MINIMAL.replace("seeds = 0", "seeds = 1, 1"), "distinct"),
    (MINIMAL + "baseline = mgda\n", "run.baseline"),
    (MINIMAL.replace("kind = quadratic", "kind = aux").replace("balancer = marigold", "balancer = mgda"),
     "auxiliary"),
    (MINIMAL + "\n[problem]\n", "duplicate section"),
])
def test_cross_field_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.ini")


def test_parse_file(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(MINIMAL)
    assert parse_config(path).source == str(path)
