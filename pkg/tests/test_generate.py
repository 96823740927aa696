import pytest

from zswapsim.analysis import mean_similarity, trace_locality
from zswapsim.errors import SpecificationError
from zswapsim.generate import GeneratorSpec, default_footprints, generate, order_with_locality, payload_corpus
from zswapsim.trace import Kind, check_windows, trace_bytes

import numpy as np


def test_same_spec_gives_identical_bytes():
    spec = GeneratorSpec(apps=2, pages_per_app=128, relaunches=3, seed=9)
    assert trace_bytes(generate(spec)) == trace_bytes(generate(spec))


def test_seed_changes_trace():
    a = generate(GeneratorSpec(apps=2, pages_per_app=128, relaunches=3, seed=1))
    b = generate(GeneratorSpec(apps=2, pages_per_app=128, relaunches=3, seed=2))
    assert trace_bytes(a) != trace_bytes(b)


def test_identical_relaunches_for_full_similarity():
    events = generate(GeneratorSpec(apps=2, pages_per_app=512, relaunches=5, seed=1,
                                    hot_similarity=1.0, reuse=1.0))
    assert mean_similarity(events) == (1.0, 1.0)


@pytest.mark.parametrize("seed", [1, 17])
def test_targets_within_tolerance(seed):
    events = generate(GeneratorSpec(apps=3, pages_per_app=512, relaunches=5, seed=seed))
    sim, reuse = mean_similarity(events)
    assert abs(sim - 0.7) <= 0.05
    assert abs(reuse - 0.98) <= 0.02
    assert abs(trace_locality(events, 2) - 0.8) <= 0.05


def test_windows_and_first_touch_payloads():
    events = generate(GeneratorSpec(apps=2, pages_per_app=64, relaunches=2, seed=5))
    assert check_windows(events) == []
    seen = set()
    for ev in events:
        if ev.kind == Kind.TOUCH:
            assert (ev.payload is not None) == (ev.page not in seen)
            seen.add(ev.page)
    assert len(seen) == 128


def test_infeasible_reuse_below_similarity():
    with pytest.raises(SpecificationError, match="reuse"):
        generate(GeneratorSpec(hot_similarity=0.9, reuse=0.5))


def test_fraction_out_of_range():
    with pytest.raises(SpecificationError):
        generate(GeneratorSpec(consecutive_p2=1.5))


def test_from_dict_aliases_and_unknown():
    spec = GeneratorSpec.from_dict({"app_count": 3, "similarity": 0.6, "rng_seed": 4})
    assert (spec.apps, spec.hot_similarity, spec.seed) == (3, 0.6, 4)
    with pytest.raises(SpecificationError):
        GeneratorSpec.from_dict({"nonsense": 1})


def test_desk_scaled_footprints():
    # 821 MB at 1/64 scale
    assert default_footprints(5)[4] == 821 * 256 // 64


def test_locality_ordering_hits_target():
    rng = np.random.default_rng(0)
    pages = list(range(2000))
    order = order_with_locality(pages, 0.8, rng)
    assert sorted(order) == pages
    assert abs(sum(b == a + 1 for a, b in zip(order, order[1:])) / (len(order) - 1) - 0.8) <= 0.05


@pytest.mark.parametrize("model", ["random", "zero-runs", "templated"])
def test_payload_corpus_models(model):
    data = payload_corpus(model, 10_000, 1)
    assert len(data) == 10_000
    assert data == payload_corpus(model, 10_000, 1)
