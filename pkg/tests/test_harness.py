"""Config parsing, manifests, SVG output and the analytic cost model."""

import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from quad import costs, plots
from quad.config import ConfigError, ExperimentConfig, apply_overrides, load_config, parse_config
from quad.manifest import RunManifest, read_manifests, verify


# config -------------------------------------------------------------------------------

def test_parse_config_reads_typed_values():
    cfg = parse_config("""
        schema_version = 1   # required
        dims = 4, 8
        sigmas = 0, 2.5
        variants = full, wo-lgp
        k = 4
        lr = 0.001
        use_gain = false
    """)
    assert cfg.dims == (4, 8)
    assert cfg.sigmas == (0.0, 2.5)
    assert cfg.variants == ("full", "wo-lgp")
    assert cfg.train.k == 4 and cfg.train.lr == 1e-3 and cfg.train.use_gain is False


def test_config_requires_schema_version():
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config("k = 2\n")


@pytest.mark.parametrize("text, match", [
    ("schema_version = 1\nbogus = 3\n", "unknown config key"),
    ("schema_version = 1\nk = 2\nk = 3\n", "duplicate"),
    ("schema_version = 1\nk\n", "key = value"),
    ("schema_version = 1\nk = two\n", "bad value"),
])
def test_config_rejects_malformed_text(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_validate_flags_bad_values():
    for over in ({"schema_version": 2}, {"noise_mode": "sometimes"}, {"noise_fraction": 1.5},
                 {"variants": "full,shallow"}, {"k": 0}, {"sigmas": "-1"}):
        with pytest.raises(ConfigError):
            apply_overrides(ExperimentConfig(), over).validate()


def test_to_text_round_trips(tmp_path):
    cfg = apply_overrides(ExperimentConfig(), {"dims": "3,5", "hdim": 12, "noise_mode": "both", "header": True})
    path = tmp_path / "c.cfg"
    path.write_text(cfg.to_text())
    assert load_config(path) == cfg


def test_missing_config_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")


def test_seed_override_reaches_training_config():
    assert apply_overrides(ExperimentConfig(), {"seed": "7"}).seed == 7


# manifest -----------------------------------------------------------------------------

def test_manifest_is_append_only_and_checksummed(tmp_path):
    (tmp_path / "a.csv").write_text("x\n1\n")
    for _ in range(2):
        m = RunManifest("sweep-noise", {"k": 2}, {"seed": 0}, "abc", str(tmp_path))
        m.add(tmp_path / "a.csv")
        m.append()
    entries = read_manifests(tmp_path)
    assert len(entries) == 2 and entries[0] == entries[1]
    assert set(entries[0]["artifacts"]) == {"a.csv"}
    assert verify(entries[0]) == []
    (tmp_path / "a.csv").write_text("x\n2\n")
    assert verify(entries[0]) == ["a.csv"]


def test_manifest_json_is_key_sorted():
    m = RunManifest("flops", {"b": 1, "a": 2}, {}, "f", "/tmp")
    text = m.to_json()
    assert text == json.dumps(json.loads(text), sort_keys=True)


# plots --------------------------------------------------------------------------------

def test_line_plot_is_valid_svg_with_one_point(tmp_path):
    path = plots.line_plot(tmp_path / "p.svg", {"full": [(0.0, 0.9)]}, "t", "x", "y")
    root = ET.parse(path).getroot()
    circles = root.findall("{http://www.w3.org/2000/svg}circle")
    assert len(circles) == 1


def test_plots_skip_nan_values(tmp_path):
    path = plots.line_plot(tmp_path / "p.svg", {"a": [(0, 1.0), (1, float("nan")), (2, 0.5)]}, "t", "x", "y")
    assert len(ET.parse(path).getroot().findall("{http://www.w3.org/2000/svg}circle")) == 2
    plots.bar_plot(tmp_path / "b.svg", ["s0", "s1"], {"a": [0.5, float("nan")]}, "t", "x", "y")
    ET.parse(tmp_path / "b.svg")


def test_histogram_is_deterministic(tmp_path):
    vals = {"a": [0.1, 0.2, 0.95], "b": [0.5]}
    p1 = plots.histogram(tmp_path / "h1.svg", vals, 10, 0.0, 1.0, "t", "x").read_bytes()
    p2 = plots.histogram(tmp_path / "h2.svg", vals, 10, 0.0, 1.0, "t", "x").read_bytes()
    assert p1 == p2


# costs --------------------------------------------------------------------------------

def test_block_cost_hand_count():
    # 2*16 multiply-adds for the 4x4 affine, plus 4*4 for bias, sigmoid and gating
    assert costs.block_flops(4) == 48


def test_component_costs():
    assert costs.lstm_flops(8, 4) == 8 * 4 * 12 + 9 * 4
    assert costs.decoder_flops(4, 8) == 2 * 8 * 4 * 5
    assert costs.classifier_flops(3, (4, 6)) == 60


def test_sample_cost_composition():
    dims, h, c = (4, 6), 8, 3
    got = costs.sample_flops((2, 1), dims, h, c)
    want = (2 * (costs.block_flops(4) + costs.decoder_flops(4, h)) + costs.block_flops(6)
            + costs.decoder_flops(6, h) + 2 * costs.lstm_flops(10, h) + costs.classifier_flops(c, dims))
    assert got == want
    assert costs.sample_flops((2, 1), dims, h, c, hypernetwork=False) == (
        2 * costs.block_flops(4) + costs.block_flops(6) + costs.classifier_flops(c, dims))


def test_fixed_depth_single_modality_cost_is_constant():
    rep = costs.cost_report(np.ones((20, 1), dtype=int), (5,), 8, 3, 100)
    assert rep.min_flops == rep.max_flops == rep.mean_flops


def test_cost_is_monotone_in_depth():
    dims = (4, 4, 4)
    shallow = costs.cost_report(np.ones((10, 3), dtype=int), dims, 8, 4, 0).mean_flops
    deep = costs.cost_report(np.full((10, 3), 2), dims, 8, 4, 0).mean_flops
    assert deep > shallow
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = rng.integers(1, 4, size=3)
        bumped = d.copy()
        bumped[rng.integers(3)] += 1
        assert costs.sample_flops(bumped, dims, 8, 4) > costs.sample_flops(d, dims, 8, 4)
