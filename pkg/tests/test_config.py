"""Test manifest parsing, presets and typed configs."""

from pathlib import Path

import pytest

from necklab.config import (
    PRESET_NAMES,
    PRESETS,
    TRICK_ROWS,
    build_manifest,
    load_manifest,
    manifest_hash,
    parse_assignment,
    parse_manifest_text,
    render_options,
    resolve_options,
)
from necklab.exceptions import ConfigError
from necklab.model import NeckVariant

MANIFEST = """
# tiny run
run.id = demo
seed = 4   # trailing comment

trick.warmup = true
schedule.decay_epochs = 2, 3
eval.metrics = cosine
"""


def test_parse_manifest_text() -> None:
    """Test comments and blank lines are ignored and values stripped."""
    assert parse_manifest_text(MANIFEST) == {
        "run.id": "demo",
        "seed": "4",
        "trick.warmup": "true",
        "schedule.decay_epochs": "2, 3",
        "eval.metrics": "cosine",
    }


@pytest.mark.parametrize("text", ["seed 4", "= 4", "seed = 1\nseed = 2"])
def test_parse_manifest_text_errors(text: str) -> None:
    """Test malformed and duplicate lines are refused."""
    with pytest.raises(ConfigError):
        parse_manifest_text(text)


def test_parse_assignment() -> None:
    """Test command-line overrides split at the first equals sign."""
    assert parse_assignment(" run.id = a=b ") == ("run.id", "a=b")
    with pytest.raises(ConfigError):
        parse_assignment("seed")


def test_defaults_and_coercion() -> None:
    """Test string values are coerced and defaults filled."""
    options = resolve_options(parse_manifest_text(MANIFEST))

    assert options["seed"] == 4
    assert options["trick.warmup"] is True
    assert options["schedule.decay_epochs"] == (2.0, 3.0)
    assert options["eval.metrics"] == ("cosine",)
    assert options["trick.neck"] == "neck3"
    assert options["loss.beta"] == 0.0005


def test_unknown_key_is_named() -> None:
    """Test the error names an unknown key."""
    with pytest.raises(ConfigError) as err:
        resolve_options({"trick.bogus": "1"})

    assert err.value.key == "trick.bogus"
    assert err.value.exit_code == 2


@pytest.mark.parametrize(
    ("key", "value"),
    [
        ("sampler.p", "1"),
        ("trick.neck", "neck9"),
        ("eval.features", "f_x"),
        ("data.split.train_fraction", "1.5"),
        ("schedule.base_lr", "fast"),
        ("trick.warmup", "maybe"),
    ],
)
def test_invalid_value_is_named(key: str, value: str) -> None:
    """Test invalid values raise a config error naming their key."""
    with pytest.raises(ConfigError) as err:
        resolve_options({key: value})

    assert err.value.key == key


def test_cumulative_presets() -> None:
    """Test every trick row adds one trick to the previous row."""
    assert TRICK_ROWS == PRESET_NAMES[:7]
    assert PRESETS["baseline-s"]["trick.warmup"] is False
    plus_bnneck = PRESETS["+bnneck"]
    assert all(plus_bnneck[key] for key in ("trick.warmup", "trick.rea", "trick.last_stride_1"))
    assert plus_bnneck["trick.neck"] == NeckVariant.BNNECK.value
    assert plus_bnneck["trick.center_loss"] is False
    assert PRESETS["+center"]["trick.center_loss"] is True
    assert PRESETS["full"] == PRESETS["+center"]


def test_baseline_presets() -> None:
    """Test the three neck baselines share the other tricks."""
    assert PRESETS["baseline1"]["trick.neck"] == "bnneck1"
    assert PRESETS["baseline2"]["trick.center_loss"] is False
    assert PRESETS["baseline3"]["trick.center_loss"] is True
    assert all(PRESETS[name]["trick.rea"] for name in ("baseline1", "baseline2", "baseline3"))


def test_layering_order() -> None:
    """Test preset, then file keys, then overrides."""
    file_options = {"trick.warmup": "false"}

    assert resolve_options(file_options, "+warmup")["trick.warmup"] is False
    layered = resolve_options(file_options, "+warmup", [("trick.warmup", "true")])
    assert layered["trick.warmup"] is True
    assert layered["run.preset"] == "+warmup"


def test_preset_from_file_and_unknown_preset() -> None:
    """Test the file may name the preset and unknown presets are refused."""
    assert resolve_options({"run.preset": "+rea"})["trick.rea"] is True

    with pytest.raises(ConfigError) as err:
        resolve_options(preset="+everything")
    assert err.value.key == "run.preset"


def test_manifest_hash() -> None:
    """Test the hash is 12 hex digits and depends on values only."""
    first = resolve_options({"seed": "3", "run.id": "a"})
    second = resolve_options({"run.id": "a", "seed": 3})
    other = resolve_options({"seed": "4", "run.id": "a"})

    assert manifest_hash(first) == manifest_hash(second)
    assert manifest_hash(first) != manifest_hash(other)
    assert len(manifest_hash(first)) == 12
    int(manifest_hash(first), 16)


def test_render_options_is_sorted() -> None:
    """Test the canonical rendering lists keys alphabetically."""
    text = render_options({"b": True, "a": (1.0, 2.0), "c": "x"})

    assert text == "a = 1.0, 2.0\nb = true\nc = x\n"


def test_rendered_manifest_reparses_to_same_hash() -> None:
    """Test rendering and re-reading resolved options keeps the hash."""
    options = resolve_options(parse_manifest_text(MANIFEST), "+bnneck")

    reparsed = resolve_options(parse_manifest_text(render_options(options)))

    assert manifest_hash(reparsed) == manifest_hash(options)


def test_build_manifest(tiny_options: dict[str, str]) -> None:
    """Test typed configs are built from the options."""
    manifest = build_manifest(resolve_options(tiny_options))

    assert manifest.run_dir == Path(tiny_options["run.output_dir"]) / "tiny"
    assert manifest.train.blocks == (8, 16)
    assert manifest.train.iters_per_epoch == 2
    assert manifest.train.sampler.batch_size == 4
    assert manifest.train_data.blobs.seed == 3
    assert not manifest.cross_domain
    assert len(list(manifest.eval.combinations())) == 4


def test_iterations_zero_means_automatic() -> None:
    """Test iters_per_epoch 0 leaves the count to the trainer."""
    assert build_manifest(resolve_options()).train.iters_per_epoch is None


def test_cross_domain_manifest(tiny_options: dict[str, str]) -> None:
    """Test a test-data kind makes the manifest cross-domain."""
    manifest = build_manifest(resolve_options({**tiny_options, "data.test.kind": "blobs"}))

    assert manifest.cross_domain
    assert manifest.test_data.blobs.seed == manifest.train_data.blobs.seed + 1


def test_test_path_without_kind(tiny_options: dict[str, str]) -> None:
    """Test test-data paths alone are refused."""
    with pytest.raises(ConfigError) as err:
        build_manifest(resolve_options({**tiny_options, "data.test.path": "/data/test"}))

    assert err.value.key == "data.test.kind"


def test_eval_combinations() -> None:
    """Test two features, two metrics and both re-ranking modes give eight reports."""
    manifest = build_manifest(resolve_options({"eval.rerank": "both"}))

    combinations = list(manifest.eval.combinations())

    assert len(combinations) == 8
    assert combinations[:2] == [("f_t", "euclidean", False), ("f_t", "euclidean", True)]


def test_load_manifest(tmp_path: Path) -> None:
    """Test reading a manifest file with a preset and overrides."""
    path = tmp_path / "run.conf"
    path.write_text(MANIFEST)

    manifest = load_manifest(path, "+rea", [("seed", "9")])

    assert manifest.run_id == "demo"
    assert manifest.train.seed == 9
    assert manifest.train.rea and manifest.train.warmup
    assert manifest.train.schedule.decay_epochs == (2.0, 3.0)


def test_load_manifest_missing_file(tmp_path: Path) -> None:
    """Test an unreadable manifest is a config error."""
    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "missing.conf")
