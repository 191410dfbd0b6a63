import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arls.instance import (
    BestKnownRegistry,
    Instance,
    InstanceError,
    ParseError,
    generate_instance,
    parse_instance,
    write_instance,
)

from .conftest import TINY_TEXT


def assert_valid(inst: Instance) -> None:
    J, M = inst.num_jobs, inst.num_machines
    assert len(inst.ops) == J * M
    for n, op in enumerate(inst.ops):
        assert (op.job, op.order) == divmod(n, M)
        assert 0 <= op.machine < M
        assert op.ptime >= 1
    for j in range(J):
        assert sorted(inst.machine_matrix[j]) == list(range(M))


def test_generate_6x6():
    inst = generate_instance(6, 6, 1, 15, seed=3)
    assert len(inst.ops) == 36
    assert all(1 <= op.ptime <= 15 for op in inst.ops)
    assert_valid(inst)


def test_generate_degenerate_bounds():
    inst = generate_instance(1, 1, 5, 5, seed=0)
    assert inst.ops == (inst.ops[0],)
    assert inst.ops[0].ptime == 5 and inst.ops[0].machine == 0


def test_generate_is_seed_deterministic():
    assert generate_instance(3, 3, 1, 15, 42) == generate_instance(3, 3, 1, 15, 42)
    assert generate_instance(3, 3, 1, 15, 42) != generate_instance(3, 3, 1, 15, 43)


@pytest.mark.parametrize("args", [(0, 3, 1, 5), (3, 0, 1, 5), (3, 3, 0, 5), (3, 3, 6, 5)])
def test_generate_rejects_bad_parameters(args):
    with pytest.raises(InstanceError):
        generate_instance(*args, seed=0)


@settings(max_examples=60, deadline=None)
@given(
    jobs=st.integers(1, 8),
    machines=st.integers(1, 8),
    pmin=st.integers(1, 20),
    span=st.integers(0, 30),
    seed=st.integers(0, 2**32 - 1),
)
def test_generated_instances_are_valid(jobs, machines, pmin, span, seed):
    inst = generate_instance(jobs, machines, pmin, pmin + span, seed)
    assert_valid(inst)
    assert all(pmin <= op.ptime <= pmin + span for op in inst.ops)


def test_ptime_distribution_is_uniform():
    rng = np.random.default_rng(11)
    counts = np.zeros(16, dtype=np.int64)
    for _ in range(10_000):
        inst = generate_instance(6, 6, 1, 15, rng)
        counts += np.bincount(inst.ptime_matrix.ravel(), minlength=16)
    freq = counts[1:] / counts.sum()
    assert counts[0] == 0
    assert np.all(np.abs(freq - 1 / 15) < 0.01)


def test_parse_tiny():
    inst = parse_instance(TINY_TEXT)
    assert [(op.machine, op.ptime) for op in inst.ops] == [(0, 3), (1, 2), (1, 4), (0, 1)]
    assert inst.num_jobs == 2 and inst.num_machines == 2


def test_parse_single_job_lower_bound():
    inst = parse_instance("1 2\n0 7 1 9\n")
    assert inst.lower_bound() == 16


def test_parse_skips_comments_and_blank_lines():
    text = "# header comment\n\n2 2\n# job 0\n0 3 1 2\n1 4 0 1\n"
    assert parse_instance(text) == parse_instance(TINY_TEXT)


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("2 2\n0 3 0 2\n1 4 0 1\n", 2, "repeated"),
        ("2 2\n0 3 1 2\n1 4 0\n", 3, "tokens"),
        ("2 2\n0 3 2 2\n1 4 0 1\n", 2, "out of range"),
        ("2 2\n0 3 1 0\n1 4 0 1\n", 2, "non-positive"),
        ("2 2\n0 3 1 -2\n1 4 0 1\n", 2, "non-positive"),
        ("2 2 2\n", 1, "header"),
        ("2 2\n0 3 1 2\n", 1, "job lines"),
        ("2 2\n0 x 1 2\n1 4 0 1\n", 2, "integer"),
    ],
)
def test_parse_errors_name_the_line(text, line, fragment):
    with pytest.raises(ParseError) as exc:
        parse_instance(text)
    assert exc.value.line == line
    assert fragment in str(exc.value)


def test_write_is_canonical_for_tiny():
    assert write_instance(parse_instance(TINY_TEXT)) == TINY_TEXT


@pytest.mark.parametrize("size, seed", [(6, 0), (15, 1), (1, 2), (4, 3)])
def test_round_trip(size, seed):
    inst = generate_instance(size, size, 1, 99, seed)
    assert parse_instance(write_instance(inst)) == inst


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 10_000))
def test_round_trip_property(jobs, machines, seed):
    inst = generate_instance(jobs, machines, 1, 200, seed)
    assert parse_instance(io.StringIO(write_instance(inst))) == inst


def test_instance_rejects_non_permutation_jobs():
    with pytest.raises(InstanceError):
        Instance.from_matrices([[0, 0], [1, 0]], [[1, 1], [1, 1]])


def test_registry_csv_round_trip(tmp_path):
    reg = BestKnownRegistry.read_csv(io.StringIO("name,makespan\nft06,55\nla01,666\n"))
    assert reg == {"ft06": 55, "la01": 666}
    path = tmp_path / "bk.csv"
    path.write_text(reg.to_csv())
    assert BestKnownRegistry.read_csv(path) == reg


@pytest.mark.parametrize("body", ["name,makespan\nx,0\n", "name,makespan\nx,2.5\n", "a,b\nx,1\n"])
def test_registry_rejects_bad_rows(body):
    with pytest.raises(InstanceError):
        BestKnownRegistry.read_csv(io.StringIO(body))
