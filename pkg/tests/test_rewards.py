import numpy
import pytest

from taxon.errors import ConfigError
from taxon.modelio import parse_tagged
from taxon.rewards import accuracy_reward, format_reward, total_reward

options = [("A", "Rosaceae"), ("B", "Fagaceae"), ("C", "Pinaceae"), ("D", "Asteraceae")]


def test_format_reward():
    "Test format reward"
    assert format_reward("<think>x</think><answer>A</answer>") == 1
    assert format_reward("answer: A") == 0
    assert format_reward("<answer>A</answer>") == 0


def test_format_reward_agrees_with_parser():
    "Test format reward against parser on fuzzed strings"
    pieces = ["<think>", "</think>", "<answer>", "</answer>", "A", " "]
    rng = numpy.random.default_rng(0)
    for _ in range(1000):
        text = "".join(pieces[i] for i in rng.integers(0, len(pieces), size=rng.integers(0, 8)))
        assert format_reward(text) == int(parse_tagged(text).well_formed)


def test_accuracy_stage1():
    "Test exact name match at stage 1"
    parsed = parse_tagged("<think></think><answer>Heteromeles arbutifolia</answer>")
    assert accuracy_reward(parsed, "Heteromeles arbutifolia", 1) == 1
    parsed = parse_tagged("<think></think><answer>Heteromeles</answer>")
    assert accuracy_reward(parsed, "Heteromeles arbutifolia", 1) == 0


def test_accuracy_stage2():
    "Test option letter match at stage 2"
    parsed = parse_tagged("<think></think><answer>C</answer>")
    assert accuracy_reward(parsed, "B", 2, options) == 0
    assert accuracy_reward(parsed, "C", 2, options) == 1
    assert accuracy_reward(parsed, "Pinaceae", 2, options) == 1
    with pytest.raises(ConfigError):
        accuracy_reward(parsed, "C", 2)
    with pytest.raises(ConfigError):
        accuracy_reward(parsed, "C", 3, options)


def test_total_reward():
    "Test total reward values 0, 1 and 2"
    assert total_reward("<think>x</think><answer>B</answer>", "B", 2, options) == 2
    assert total_reward("<think>x</think><answer>A</answer>", "B", 2, options) == 1
    assert total_reward("<answer>B</answer>", "B", 2, options) == 1
    assert total_reward("<answer>A</answer>", "B", 2, options) == 0
