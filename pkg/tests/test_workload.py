import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import ndtri

from planner import (
    Archetype, ArchetypeClass, ArchetypeParams, ContextCdf, DomainError, InfeasibleArchetype,
    TraceIngestionError, archetype_guidance, classify_archetype, ingest_trace, read_trace,
    split_at, synth_archetype,
)


def make_cdf(lengths, masses, mean_output_len=256.0):
    cum = np.cumsum(masses) / np.sum(masses)
    cum[-1] = 1.0
    return ContextCdf(tuple(zip(lengths, cum.tolist())), mean_output_len)


@st.composite
def cdfs(draw):
    lengths = draw(st.lists(st.integers(min_value=1, max_value=200_000), min_size=1, max_size=30, unique=True))
    masses = draw(st.lists(st.floats(min_value=0.01, max_value=100.0), min_size=len(lengths), max_size=len(lengths)))
    return make_cdf(sorted(lengths), masses)


# ContextCdf

def test_cdf_validation():
    with pytest.raises(DomainError):
        ContextCdf((), 256)
    with pytest.raises(DomainError):
        ContextCdf(((100, 0.5), (50, 1.0)), 256)
    with pytest.raises(DomainError):
        ContextCdf(((100, 0.6), (200, 0.5), (300, 1.0)), 256)
    with pytest.raises(DomainError):
        ContextCdf(((100, 0.5), (200, 0.9)), 256)


def test_cdf_queries():
    cdf = ContextCdf(((1000, 0.25), (2000, 0.75), (4000, 1.0)), 256)
    assert cdf.prob_at_most(999) == 0.0
    assert cdf.prob_at_most(2000) == 0.75
    assert cdf.prob_at_most(3999) == 0.75
    assert cdf.quantile(0.5) == 2000
    assert cdf.quantile(0.75) == 2000
    assert cdf.quantile(1.0) == 4000
    assert cdf.mean_length == pytest.approx(0.25 * 1000 + 0.5 * 2000 + 0.25 * 4000)
    assert (cdf.min_length, cdf.max_length) == (1000, 4000)


def test_cdf_dict_round_trip_keeps_points_verbatim():
    cdf = ContextCdf(((1000, 1 / 3), (3000, 1.0)), 300.0, "t", (100.0, 700.0))
    assert ContextCdf.from_dict(json.loads(json.dumps(cdf.to_dict()))) == cdf


def test_malformed_cdf_document():
    with pytest.raises(DomainError):
        ContextCdf.from_dict({"points": [[1000, 1.0]]})


# Trace ingestion

def test_ingest_counts_lengths():
    records = [{"prompt_tokens": 900, "output_tokens": 100},
               {"prompt_tokens": 1000, "output_tokens": 0},
               {"prompt_tokens": 2500, "output_tokens": 500}]
    cdf = ingest_trace(records)
    assert cdf.points == ((1000, pytest.approx(2 / 3)), (3000, 1.0))
    assert cdf.mean_output_len == pytest.approx(200.0)
    assert cdf.output_means == (50.0, 500.0)


def test_single_record_is_degenerate():
    cdf = ingest_trace([{"prompt_tokens": 512, "output_tokens": 128}])
    assert cdf.points == ((640, 1.0),)


def test_prompt_only_records_use_default_output():
    cdf = ingest_trace([{"prompt_tokens": 1000}], default_output_len=256)
    assert cdf.points == ((1256, 1.0),)
    assert cdf.mean_output_len == 256


def test_empty_trace_rejected():
    with pytest.raises(TraceIngestionError):
        ingest_trace([])


@pytest.mark.parametrize("record", [
    {"prompt_tokens": "abc"},
    {"prompt_tokens": 10.5},
    {"prompt_tokens": -4},
    {"output_tokens": 10},
    "not a record",
])
def test_malformed_record_reports_line(record):
    with pytest.raises(TraceIngestionError) as excinfo:
        ingest_trace([{"prompt_tokens": 10}, record])
    assert excinfo.value.line_number == 2
    assert str(excinfo.value).startswith("line 2: ")


def test_read_jsonl(tmp_path):
    path = tmp_path / "trace.jsonl"
    path.write_text('{"prompt_tokens": 100, "output_tokens": 20}\n\n{"prompt_tokens": 300, "extra": 1}\n')
    records = list(read_trace(str(path)))
    assert [r["_line"] for r in records] == [1, 3]
    cdf = ingest_trace(records, default_output_len=100)
    assert cdf.points == ((120, 0.5), (400, 1.0))


def test_read_jsonl_invalid_line(tmp_path):
    path = tmp_path / "trace.jsonl"
    path.write_text('{"prompt_tokens": 100}\n{"prompt_tokens": 200}\n{oops\n')
    with pytest.raises(TraceIngestionError, match="line 3"):
        ingest_trace(read_trace(str(path)))


def test_read_csv_with_azure_columns(tmp_path):
    path = tmp_path / "azure.csv"
    path.write_text("TIMESTAMP,ContextTokens,GeneratedTokens\n0,1000,24\n1,2000,48\n2,x,1\n")
    with pytest.raises(TraceIngestionError, match="line 4"):
        ingest_trace(read_trace(str(path)))
    path.write_text("TIMESTAMP,ContextTokens,GeneratedTokens\n0,1000,24\n1,2000,48\n")
    cdf = ingest_trace(read_trace(str(path)))
    assert cdf.points == ((1024, 0.5), (2048, 1.0))
    assert cdf.mean_output_len == 36.0


def test_missing_trace_file(tmp_path):
    with pytest.raises(TraceIngestionError):
        list(read_trace(str(tmp_path / "missing.jsonl")))


def test_ingested_lognormal_matches_generator_quantiles():
    rng = np.random.default_rng(7)
    lengths = np.maximum(1, np.rint(rng.lognormal(mean=math.log(2000), sigma=0.8, size=200_000)))
    cdf = ingest_trace({"prompt_tokens": int(x), "output_tokens": 0} for x in lengths)
    for q in (0.1, 0.5, 0.9):
        expected = 2000 * math.exp(0.8 * float(ndtri(q)))
        assert cdf.quantile(q) == pytest.approx(expected, rel=0.02)


def test_ingesting_own_samples_converges(short_dominant):
    draws = short_dominant.sample(200_000, np.random.default_rng(11))
    cdf = ingest_trace({"prompt_tokens": int(x), "output_tokens": 0} for x in draws)
    distance = max(abs(cdf.prob_at_most(length) - prob) for length, prob in short_dominant.points)
    assert distance < 0.01


# Archetypes

def test_short_dominant_anchor(short_dominant):
    assert short_dominant.prob_at_most(4096) == pytest.approx(0.89, abs=0.005)
    assert short_dominant.label == "short-dominant"
    assert len(short_dominant.output_means) == len(short_dominant.points)


def test_long_dominant_anchor_and_tail():
    cdf = synth_archetype("long-dominant")
    assert cdf.prob_at_most(8192) == pytest.approx(0.74, abs=0.005)
    assert 28 * 1024 <= cdf.quantile(0.99) <= 36 * 1024


def test_mixed_anchor():
    assert synth_archetype(Archetype.MIXED).prob_at_most(8192) == pytest.approx(0.65, abs=0.005)


def test_point_mass_archetype():
    cdf = synth_archetype("short-dominant", point_mass=65536)
    assert cdf.points == ((65536, 1.0),)


def test_synthesis_is_cached():
    assert synth_archetype("mixed") is synth_archetype("mixed")


def test_unreachable_anchor_is_infeasible():
    with pytest.raises(InfeasibleArchetype):
        synth_archetype("short-dominant", anchor_prob=0.999)
    with pytest.raises(InfeasibleArchetype):
        synth_archetype("short-dominant", params=ArchetypeParams(anchor_len=8, min_len=16))


def test_unknown_archetype_parameter():
    with pytest.raises(DomainError):
        synth_archetype("mixed", burstiness=2.0)
    with pytest.raises(ValueError):
        synth_archetype("bursty")


# Splits

def test_split_short_dominant_at_4k(short_dominant):
    split = split_at(short_dominant, 4096)
    assert split.alpha == pytest.approx(0.89, abs=1e-9)
    assert split.short_cdf.max_length <= 4096
    assert split.long_cdf.min_length > 4096
    assert split.short_cdf.mean_output_len < short_dominant.mean_output_len < split.long_cdf.mean_output_len


def test_split_beyond_support(short_dominant):
    split = split_at(short_dominant, math.inf)
    assert split.alpha == 1.0
    assert split.long_cdf is None
    assert split.short_cdf.lengths.tolist() == short_dominant.lengths.tolist()
    assert split.short_cdf.cum.tolist() == pytest.approx(short_dominant.cum.tolist())


def test_split_below_support(short_dominant):
    split = split_at(short_dominant, 8)
    assert split.alpha == 0.0
    assert split.short_cdf is None


def test_split_uniform():
    cdf = make_cdf(list(range(1000, 10001, 1000)), [1.0] * 10)
    split = split_at(cdf, 5000)
    assert split.alpha == pytest.approx(0.5)
    assert [p for _, p in split.short_cdf.points] == pytest.approx([0.2, 0.4, 0.6, 0.8, 1.0])
    assert split.long_cdf.min_length == 6000


def test_prompt_lengths_come_from_output_means():
    cdf = ingest_trace([{"prompt_tokens": 4000, "output_tokens": 500},
                        {"prompt_tokens": 100, "output_tokens": 100}])
    assert cdf.prompt_lengths.tolist() == [100.0, 4000.0]
    assert cdf.prob_at_most(4096) == 0.5
    assert cdf.prompt_prob_at_most(4096) == 1.0


def test_prompt_lengths_fall_back_to_mean_output():
    cdf = ContextCdf(((200, 0.5), (4500, 1.0)), 300.0)
    assert cdf.prompt_lengths.tolist() == [0.0, 4200.0]


def test_split_routes_prompts_that_fit_the_window_short():
    cdf = ingest_trace([{"prompt_tokens": 4000, "output_tokens": 500},
                        {"prompt_tokens": 100, "output_tokens": 100}])
    headroom = split_at(cdf, 4096, window=8192)
    assert headroom.alpha == 1.0
    assert headroom.long_cdf is None
    assert headroom.short_cdf.max_length == 4500
    assert headroom.window == 8192

    tight = split_at(cdf, 4096)
    assert tight.alpha == pytest.approx(0.5)
    assert tight.short_cdf.points == ((200, 1.0),)
    assert tight.long_cdf.points == ((4500, 1.0),)
    assert tight.long_cdf.mean_output_len == 500.0


def test_long_prompts_stay_long_whatever_the_window():
    cdf = ingest_trace([{"prompt_tokens": 5000, "output_tokens": 10},
                        {"prompt_tokens": 100, "output_tokens": 100}])
    split = split_at(cdf, 4096, window=65536)
    assert split.alpha == pytest.approx(0.5)
    assert split.long_cdf.points == ((5010, 1.0),)


def test_split_window_below_boundary(short_dominant):
    with pytest.raises(DomainError):
        split_at(short_dominant, 8192, window=4096)


@given(cdfs(), st.integers(min_value=1, max_value=100_000), st.integers(min_value=0, max_value=100_000))
def test_windowed_split_respects_both_limits(cdf, boundary, headroom):
    split = split_at(cdf, boundary, window=boundary + headroom)
    if split.short_cdf is not None:
        assert split.short_cdf.max_length <= boundary + headroom
        assert split.short_cdf.prompt_lengths.max() <= boundary
    assert split.alpha == pytest.approx(
        sum(m for m, p, n in zip(cdf.masses, cdf.prompt_lengths, cdf.lengths) if p <= boundary and n <= boundary + headroom),
        abs=1e-9,
    )
    short = split.short_cdf.mean_length if split.short_cdf else 0.0
    long = split.long_cdf.mean_length if split.long_cdf else 0.0
    assert split.alpha * short + (1 - split.alpha) * long == pytest.approx(cdf.mean_length, rel=1e-9)


def test_split_rejects_nonpositive_boundary(short_dominant):
    with pytest.raises(DomainError):
        split_at(short_dominant, 0)


@given(cdfs(), st.integers(min_value=1, max_value=250_000))
def test_split_conserves_mean_length(cdf, boundary):
    split = split_at(cdf, boundary)
    short = split.short_cdf.mean_length if split.short_cdf else 0.0
    long = split.long_cdf.mean_length if split.long_cdf else 0.0
    assert split.alpha * short + (1 - split.alpha) * long == pytest.approx(cdf.mean_length, rel=1e-9)


# Classification

@pytest.mark.parametrize("share, expected", [
    (0.95, ArchetypeClass.I_SHORT_DOMINANT),
    (0.8, ArchetypeClass.I_SHORT_DOMINANT),
    (0.74, ArchetypeClass.II_MIXED),
    (0.5, ArchetypeClass.II_MIXED),
    (0.30, ArchetypeClass.III_LONG_DOMINANT),
])
def test_classification_thresholds(share, expected):
    cdf = ContextCdf(((8192, share), (65536, 1.0)), 256)
    assert classify_archetype(cdf) == expected


def test_archetypes_classify():
    assert classify_archetype(synth_archetype("short-dominant")) == ArchetypeClass.I_SHORT_DOMINANT
    assert classify_archetype(synth_archetype("mixed")) == ArchetypeClass.II_MIXED
    assert classify_archetype(synth_archetype("long-dominant")) == ArchetypeClass.II_MIXED


@given(cdfs())
def test_classification_is_total_and_deterministic(cdf):
    first = classify_archetype(cdf)
    assert first in set(ArchetypeClass)
    assert classify_archetype(cdf) == first


def test_guidance_per_class():
    for archetype in ArchetypeClass:
        guidance = archetype_guidance(archetype)
        assert set(guidance) == {"workload", "topology", "gpu"}
    assert "Homogeneous" in archetype_guidance("III")["topology"]
