import pytest

from app.services.codes import ErrorCode
from app.services.generator import DEFAULT_WEIGHTS, benign_codes, covered_ops, generate
from app.services.script import CORE_CALLS, parse_script, render_script


class TestGenerate:
    def test_same_seed_same_script(self):
        assert render_script(generate(11, 80)) == render_script(generate(11, 80))

    def test_different_seeds_differ(self):
        assert render_script(generate(11, 80)) != render_script(generate(12, 80))

    def test_length_is_a_lower_bound(self):
        assert len(generate(3, 40, invalid_fraction=0.0)) >= 40

    def test_rendered_script_parses(self):
        text = render_script(generate(5, 120), header="seed=5 length=120")
        assert len(parse_script(text)) == len(generate(5, 120))

    def test_valid_moves_all_succeed(self):
        for seed in range(10):
            codes = benign_codes(generate(seed, 60, invalid_fraction=0.0))
            assert set(codes) == {ErrorCode.SUCC}, seed

    def test_invalid_moves_hit_error_paths(self):
        codes = benign_codes(generate(9, 200, invalid_fraction=0.5))
        assert any(code is not ErrorCode.SUCC for code in codes)

    def test_weights_restrict_the_mix(self):
        script = generate(2, 50, op_weights={"create": 1.0, "readdir": 1.0}, invalid_fraction=0.0)
        assert covered_ops(script) <= {"create", "readdir"}

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            generate(0, 0)
        with pytest.raises(ValueError):
            generate(0, 10, op_weights={"rename": 1.0})


def test_corpus_covers_the_core_calls():
    ops = set()
    for seed in range(20):
        ops |= covered_ops(generate(seed, 100))
    core = ops & CORE_CALLS
    assert len(core) >= 0.9 * len(CORE_CALLS)
    assert set(DEFAULT_WEIGHTS) - {"remount", "mem_read"} <= ops


@pytest.mark.acceptance
def test_full_size_corpus_coverage():
    ops = set()
    for seed in range(1000):
        ops |= covered_ops(generate(seed, 50))
    assert len(ops & CORE_CALLS) >= 0.9 * len(CORE_CALLS)
