import numpy as np
import pytest

from emskv.analysis import head_redundancy_rate
from emskv.errors import InvalidArgumentError
from emskv.reference import dense_attention_rows
from emskv.synth import gen_synthetic, needle_position
from emskv.trace import trace_to_bytes


@pytest.mark.parametrize("kind", ["random", "redundant", "needle"])
def test_same_seed_same_bytes(kind):
    a = gen_synthetic(kind, 9, 64, heads=2, dim=16)
    b = gen_synthetic(kind, 9, 64, heads=2, dim=16)
    c = gen_synthetic(kind, 10, 64, heads=2, dim=16)
    assert trace_to_bytes(a) == trace_to_bytes(b) != trace_to_bytes(c)


@pytest.mark.parametrize("level", [0.6, 0.8, 0.9])
def test_redundant_meets_level(level):
    t = gen_synthetic("redundant", 3, 256, heads=2, dim=16, level=level)
    for h in range(2):
        assert head_redundancy_rate(*t.head_prompt(h)[1:], tau=0.6) >= level


def test_random_has_no_redundancy():
    t = gen_synthetic("random", 3, 128, dim=32)
    assert head_redundancy_rate(*t.head_prompt(0)[1:], tau=0.6) == 0.0


@pytest.mark.parametrize("depth", [0.0, 0.5, 1.0])
def test_needle_wins_full_attention(depth):
    n = 1024
    t = gen_synthetic("needle", 1, n, heads=2, dim=64, depth=depth, decode_steps=4)
    p = needle_position(n, depth, 16)
    for h in range(2):
        q, k, v = t.head_all_tokens(h)
        _, weights = dense_attention_rows(q, k, v, range(n, n + 4))
        assert all(int(np.argmax(w)) == p for w in weights)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="needle", depth=1.5),
        dict(kind="needle", depth=-0.1),
        dict(kind="needle", tokens=10),
        dict(kind="needle", dim=4),
        dict(kind="redundant", level=1.0),
        dict(kind="random", tokens=0),
        dict(kind="random", dim=7),
        dict(kind="haystack"),
    ],
)
def test_invalid_parameters(kwargs):
    args = dict(kind="random", seed=0, tokens=64, dim=16)
    args.update(kwargs)
    with pytest.raises(InvalidArgumentError):
        gen_synthetic(**args)
