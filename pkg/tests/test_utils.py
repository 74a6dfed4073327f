import json
import math
import os
from unittest import mock

import pytest
import requests
import yaml

import config
from planner import ConfigError, ContextCdf, TraceIngestionError
from utils import (
    Catalog, Report, ReportSaver, RunConfig, TraceDownloader, load_cdf, load_run_config, save_cdf,
)
from utils.helpers import deep_merge, format_tokens, is_url, parse_tokens, sanitize_filename


# Helpers

@pytest.mark.parametrize("value, expected", [
    (8192, 8192), ("8192", 8192), ("8K", 8192), ("64k", 65536), ("1M", 1048576), ("0.5K", 512), (4096.0, 4096),
])
def test_parse_tokens(value, expected):
    assert parse_tokens(value) == expected


@pytest.mark.parametrize("value", [True, "eight", "1.3K", 10.5, "8G"])
def test_parse_tokens_rejects(value):
    with pytest.raises(ValueError):
        parse_tokens(value)


def test_format_tokens():
    assert format_tokens(65536) == "64K"
    assert format_tokens(1000) == "1000"
    assert format_tokens(None) == "-"


def test_deep_merge_keeps_base_untouched():
    base = {"slo": {"percentile": 0.99, "bound_ms": 500}, "lam": 10}
    merged = deep_merge(base, {"slo": {"bound_ms": 250}})
    assert merged == {"slo": {"percentile": 0.99, "bound_ms": 250}, "lam": 10}
    assert base["slo"]["bound_ms"] == 500


def test_url_and_filename_helpers():
    assert is_url("https://example.org/trace.jsonl")
    assert not is_url("traces/trace.jsonl")
    assert sanitize_filename('a:b?c.csv') == "a_b_c.csv"


# Reports

def sample_report():
    report = Report(title="Sample", meta={"profile": "h100"}, run_config={"lam": 1.0})
    table = report.table("Rows", [("context", "Context", ""), ("tok_per_watt", "tok/W", ".2f")])
    table.add_row(context="8K", tok_per_watt=8.6091)
    table.add_row(context="16K", tok_per_watt=math.nan)
    return report


def test_json_report():
    data = json.loads(ReportSaver("json").render(sample_report()))
    assert data["title"] == "Sample"
    assert data["config"] == {"lam": 1.0}
    assert data["tables"][0]["rows"][1] == {"context": "16K", "tok_per_watt": None}


def test_yaml_report():
    data = yaml.safe_load(ReportSaver("yaml").render(sample_report()))
    assert data["tables"][0]["rows"][0]["tok_per_watt"] == 8.6091


def test_csv_report():
    text = ReportSaver("csv").render(sample_report())
    assert text.splitlines()[:3] == ["# Rows", "context,tok_per_watt", "8K,8.6091"]


def test_markdown_report():
    text = ReportSaver("table").render(sample_report())
    assert "- profile: h100" in text
    assert "| Context | tok/W |" in text
    assert "| 8K | 8.61 |" in text
    assert "| 16K | n/a |" in text


def test_unknown_report_format():
    with pytest.raises(ConfigError):
        ReportSaver("xml")


def test_report_save_creates_directories(tmp_path):
    path = tmp_path / "reports" / "sample.json"
    ReportSaver("json").save(sample_report(), str(path))
    assert json.loads(path.read_text())["title"] == "Sample"


@pytest.mark.parametrize("suffix", ["json", "yaml"])
def test_cdf_export_is_verbatim(tmp_path, suffix):
    cdf = ContextCdf(((1000, 1 / 3), (3000, 1.0)), 300.0, "conv", (100.0, 700.0))
    path = save_cdf(cdf, str(tmp_path / f"conv.cdf.{suffix}"))
    assert load_cdf(path) == cdf


def test_invalid_cdf_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"points": [[100, 0.4]], "mean_output_len": 1}')
    with pytest.raises(ConfigError):
        load_cdf(str(path))


# Run configuration

def test_default_run_config_is_valid():
    run_config = RunConfig()
    assert run_config.profile == "h100-llama70b"
    assert run_config.topology == {"kind": "fleetopt", "boundary": 4096, "gamma": 2.0, "long_window": 65536}


def test_run_config_normalizes_token_counts():
    run_config = RunConfig.from_dict({"windows": ["2K", "4K"], "boundary_grid": ["8K"],
                                      "topology": {"kind": "two-pool", "boundary": "4K"}})
    assert run_config.windows == [2048, 4096]
    assert run_config.boundary_grid == [8192]
    assert run_config.topology["gamma"] == 1.0


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"workload": {"archetype": "mixed", "trace": "t.jsonl"}},
    {"workload": {}},
    {"workload": {"archetype": "bursty"}},
    {"format": "xml"},
    {"rho": 1.5},
    {"lam": -1},
    {"windows": ["eight"]},
    {"slo": {"percentile": 1.0}},
    {"kv_sharding": "striped"},
    {"topology": {"kind": "ring"}},
])
def test_invalid_run_config(data):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(data)


def test_flags_override_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("lam: 50\nslo:\n  bound_ms: 200\nworkload:\n  archetype: mixed\n")
    run_config = load_run_config(str(path), {"lam": 75, "workload": {"trace": "t.jsonl"}})
    assert run_config.lam == 75.0
    assert run_config.slo == {"percentile": 0.99, "bound_ms": 200.0}
    assert run_config.workload == {"trace": "t.jsonl"}


def test_config_from_environment(tmp_path, monkeypatch):
    path = tmp_path / "env.yaml"
    path.write_text("profile: b200-llama70b\n")
    monkeypatch.setenv(config.CONFIG_ENV_VAR, str(path))
    assert load_run_config().profile == "b200-llama70b"


def test_config_from_report(tmp_path):
    path = tmp_path / "report.json"
    path.write_text(json.dumps({"title": "x", "config": RunConfig(lam=12.0).to_dict()}))
    assert load_run_config(str(path)) == RunConfig(lam=12.0)


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "missing.yaml"))
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_run_config(str(path))


# Catalog

def test_unknown_catalog_names(catalog):
    with pytest.raises(ConfigError):
        catalog.gpu("A100")
    with pytest.raises(ConfigError):
        catalog.model("Llama-2-7B")
    with pytest.raises(ConfigError):
        catalog.profile("nope")


def test_catalog_overrides_merge_by_name():
    catalog = Catalog.load(gpu_overrides={"H100-SXM5": {"vram_gb": 94}},
                           model_overrides={"Tiny": {"total_params": 1e9, "layers": 4, "kv_heads": 2,
                                                     "head_dim": 64}})
    assert catalog.gpu("H100-SXM5").vram_gb == 94.0
    assert catalog.gpu("H100-SXM5").power_curve.x0 == 4.2
    assert catalog.model("Tiny").tp == 1


def test_circular_profile_scaling():
    catalog = Catalog.load(profile_overrides={
        "a": {"gpu": "H100-SXM5", "model": "Llama-3.1-70B", "w_ms": 6.7, "h0_ms": 0.1,
              "scale_from": "b", "vram_ratio": 1.0},
        "b": {"gpu": "H100-SXM5", "model": "Llama-3.1-70B", "w_ms": 6.7, "h0_ms": 0.1,
              "scale_from": "a", "vram_ratio": 1.0},
    })
    with pytest.raises(ConfigError, match="circular"):
        catalog.profile("a")


def test_profile_missing_field():
    catalog = Catalog.load(profile_overrides={"half": {"gpu": "H100-SXM5", "model": "Llama-3.1-70B"}})
    with pytest.raises(ConfigError, match="missing field"):
        catalog.profile("half")


# Trace downloads

def fake_session(chunks):
    response = mock.Mock()
    response.iter_content.return_value = chunks
    session = mock.Mock()
    session.get.return_value = response
    return session


def test_download_is_cached(tmp_path):
    session = fake_session([b'{"prompt_tokens": 10}\n', b'{"prompt_tokens": 20}\n'])
    downloader = TraceDownloader(session, str(tmp_path))
    url = "https://example.org/data/conv.jsonl"
    path = downloader.resolve(url)
    assert path.endswith("-conv.jsonl")
    with open(path, encoding="utf-8") as f:
        assert f.read().count("prompt_tokens") == 2
    assert downloader.fetch(url) == path
    assert session.get.call_count == 1
    downloader.fetch(url, refresh=True)
    assert session.get.call_count == 2


def test_download_closes_the_stream(tmp_path):
    session = fake_session([b'{"prompt_tokens": 10}\n'])
    TraceDownloader(session, str(tmp_path)).fetch("https://example.org/conv.jsonl")
    session.get.return_value.close.assert_called_once()


def test_interrupted_download_closes_the_stream_and_drops_the_partial(tmp_path):
    session = fake_session([])
    response = session.get.return_value
    response.iter_content.side_effect = requests.exceptions.ChunkedEncodingError("reset")
    downloader = TraceDownloader(session, str(tmp_path))
    with pytest.raises(TraceIngestionError):
        downloader.fetch("https://example.org/conv.jsonl")
    response.close.assert_called_once()
    assert os.listdir(tmp_path) == []


def test_local_sources_pass_through(tmp_path):
    assert TraceDownloader(mock.Mock(), str(tmp_path)).resolve("traces/local.csv") == "traces/local.csv"


def test_failed_download(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "REQUEST_DELAY", 0)
    session = mock.Mock()
    session.get.side_effect = requests.exceptions.ConnectionError("offline")
    with pytest.raises(TraceIngestionError):
        TraceDownloader(session, str(tmp_path)).fetch("https://example.org/conv.jsonl")
    assert session.get.call_count == config.MAX_RETRIES
