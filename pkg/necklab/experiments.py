"""Experiment commands: train, evaluate, sweep, ablate and export."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np

from .config import (
    PRESETS,
    TRICK_ROWS,
    DataSource,
    ExperimentManifest,
    build_manifest,
    render_options,
    validate_options,
)
from .const import (
    CONF_BETA,
    CONF_CENTER_LOSS,
    CONF_NECK,
    CONF_RUN_ID,
    CONF_TEST_LABELS,
    CONF_TEST_PATH,
    CONF_TRAIN_LABELS,
    CONF_TRAIN_PATH,
    DATA_KIND_BLOBS,
    DATA_KIND_FOLDER,
    DATA_KIND_IDX,
    FEATURE_I,
    FEATURE_T,
    FILE_ABLATION,
    FILE_CHECKPOINT,
    FILE_MANIFEST,
    FILE_SCATTER,
    FILE_SWEEP,
    FILE_TRAINING_LOG,
    JUNK_LABEL,
    SPLIT_GALLERY,
    SPLIT_QUERY,
)
from .data import IdentityDataset, load_idx, load_image_folder, make_blobs, split
from .evaluation import (
    EvalReport,
    LabeledEmbeddingSet,
    RerankParams,
    cluster_ratio,
    embedding_set,
    evaluate,
    norm_stats,
)
from .exceptions import ConfigError, DataError, EvaluationError
from .model import NECK_DESCRIPTIONS, NeckVariant
from .rerank import rerank_embeddings
from .storage import (
    Checkpoint,
    export_embedding_scatter,
    load_checkpoint,
    save_checkpoint,
    write_embeddings,
    write_report,
    write_table,
    write_training_log,
)
from .training import TrainingResult, train

_LOGGER = logging.getLogger(__name__)

GRID_TRICKS = "tricks"
GRID_NECKS = "necks"
GRIDS = (GRID_TRICKS, GRID_NECKS)

SWEEP_COLUMNS = ("feature", "beta", "rank1", "mAP", "R")
ABLATION_COLUMNS = ("row", "feature", "metric", "rank1", "mAP", "R")
SUMMARY_COLUMNS = (
    "feature",
    "metric",
    "rerank",
    "rank1",
    "rank5",
    "rank10",
    "mAP",
    "R",
    "norm_cv",
)
FILE_EVAL_SUMMARY = "eval.csv"


@dataclass(frozen=True, eq=False)
class EvalSplit:
    """Query and gallery sets of one evaluation."""

    query: IdentityDataset
    gallery: IdentityDataset

    @property
    def pooled(self) -> IdentityDataset:
        """Return query followed by gallery as one dataset."""
        cameras = None
        if self.query.has_cameras and self.gallery.has_cameras:
            cameras = np.concatenate([self.query.cameras, self.gallery.cameras])
        return IdentityDataset(
            np.concatenate([self.query.images, self.gallery.images]),
            np.concatenate([self.query.labels, self.gallery.labels]),
            cameras,
        )


# Data


def load_source(source: DataSource, path_key: str, labels_key: str) -> IdentityDataset:
    """Load the dataset a manifest points at."""
    if source.kind == DATA_KIND_BLOBS:
        dataset = make_blobs(source.blobs)
    elif not source.path:
        raise ConfigError(f"a {source.kind} dataset needs a path", path_key)
    elif source.kind == DATA_KIND_IDX:
        if not source.labels:
            raise ConfigError("an idx dataset needs a label file", labels_key)
        dataset = load_idx(source.path, source.labels)
    elif source.kind == DATA_KIND_FOLDER:
        dataset = load_image_folder(source.path)
    else:
        raise ConfigError(f"unknown dataset kind {source.kind!r}")
    if source.limit and source.limit < len(dataset):
        dataset = dataset.subset(np.arange(source.limit))
    _LOGGER.info(
        "Loaded %s dataset: %d samples, %d identities, images %s",
        source.kind,
        len(dataset),
        len(dataset.identities),
        dataset.image_shape,
    )
    return dataset


def prepare_data(manifest: ExperimentManifest) -> tuple[IdentityDataset, EvalSplit]:
    """Return the training set and the query/gallery split of a manifest.

    Cross-domain manifests train on the whole train dataset and split only
    the test dataset into query and gallery.
    """
    source = load_source(manifest.train_data, CONF_TRAIN_PATH, CONF_TRAIN_LABELS)
    cfg = manifest.split
    if manifest.test_data is None:
        train_set, query, gallery = split(
            source, cfg.policy, cfg.train_fraction, cfg.query_fraction, manifest.train.seed
        )
        return train_set, EvalSplit(query, gallery)
    target = load_source(manifest.test_data, CONF_TEST_PATH, CONF_TEST_LABELS)
    _, query, gallery = split(target, cfg.policy, 0.0, cfg.query_fraction, manifest.train.seed)
    return source, EvalSplit(query, gallery)


# Run directories


def prepare_run_dir(manifest: ExperimentManifest) -> Path:
    """Create the run directory and record the resolved manifest in it."""
    run_dir = manifest.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / FILE_MANIFEST).write_text(
        f"# manifest {manifest.hash}\n{render_options(manifest.options)}"
    )
    return run_dir


def derive_manifest(
    manifest: ExperimentManifest, run_id: str, **changes: Any
) -> ExperimentManifest:
    """Return a sibling manifest with some options replaced."""
    options = {**manifest.options, **changes, CONF_RUN_ID: run_id}
    return build_manifest(validate_options(options))


def checkpoint_of(result: TrainingResult, manifest: ExperimentManifest) -> Checkpoint:
    """Wrap a fresh training result the way a saved checkpoint loads."""
    return Checkpoint(
        result.model,
        result.label_map,
        result.norm_mean,
        result.norm_std,
        manifest.hash,
        manifest.options,
        result.centers,
    )


# Evaluation


def extract_set(
    checkpoint: Checkpoint, dataset: IdentityDataset, feature: str, role: str
) -> LabeledEmbeddingSet:
    """Embed a dataset with the checkpoint's model and normalization."""
    expected = checkpoint.model.config.input_shape
    if tuple(dataset.image_shape) != tuple(expected):
        raise DataError(
            f"checkpoint expects images {expected}, dataset has {dataset.image_shape}"
        )
    embeddings = checkpoint.model.extract(checkpoint.normalize(dataset.images), feature)
    return embedding_set(embeddings, dataset.labels, dataset.cameras, role)


def evaluate_checkpoint(
    checkpoint: Checkpoint,
    test: EvalSplit,
    manifest: ExperimentManifest,
    features: Sequence[str] | None = None,
) -> list[EvalReport]:
    """Score every (feature, metric, rerank) combination requested."""
    request = manifest.eval
    if features is not None:
        request = replace(request, features=tuple(features))
    camera_filter = request.camera_filter
    if camera_filter and not (test.query.has_cameras and test.gallery.has_cameras):
        _LOGGER.warning("Camera labels missing, camera filtering disabled")
        camera_filter = False

    embedded: dict[str, tuple[LabeledEmbeddingSet, LabeledEmbeddingSet]] = {}
    reports = []
    for feature, metric, reranked in request.combinations():
        if feature not in embedded:
            embedded[feature] = (
                extract_set(checkpoint, test.query, feature, SPLIT_QUERY),
                extract_set(checkpoint, test.gallery, feature, SPLIT_GALLERY),
            )
        query, gallery = embedded[feature]
        params = distances = None
        if reranked:
            params = RerankParams(request.k1, request.k2, request.lam)
            distances = rerank_embeddings(query, gallery, metric, params.k1, params.k2, params.lam)
        report = evaluate(
            query,
            gallery,
            metric,
            request.max_rank,
            camera_filter,
            distances=distances,
            feature=feature,
            rerank=params,
        )
        pooled = np.concatenate([query.embeddings, gallery.embeddings])
        labels = np.concatenate([query.labels, gallery.labels])
        known = labels != JUNK_LABEL
        try:
            cluster = cluster_ratio(pooled[known], labels[known], metric)
        except EvaluationError as err:
            _LOGGER.warning("No cluster statistics for %s/%s: %s", feature, metric, err)
            cluster = None
        reports.append(replace(report, cluster=cluster, norms=norm_stats(pooled)))
        _LOGGER.info(
            "%s/%s%s: rank-1 %.4f mAP %.4f",
            feature,
            metric,
            " +rerank" if reranked else "",
            report.rank(1),
            report.mAP,
        )
    if request.export_embeddings:
        for feature, sets in embedded.items():
            for embedding in sets:
                write_embeddings(
                    manifest.run_dir / f"embeddings_{embedding.role}_{feature}.bin",
                    embedding.embeddings,
                    embedding.labels,
                    embedding.cameras,
                )
    return reports


def report_name(report: EvalReport) -> str:
    """Return the file name of a report."""
    suffix = "_rerank" if report.rerank is not None else ""
    return f"report_{report.feature}_{report.metric}{suffix}.csv"


def ratio_cell(report: EvalReport) -> float | str:
    """Return R for a table cell; empty when it is undefined."""
    if report.cluster is None or report.cluster.ratio is None:
        return ""
    return report.cluster.ratio


def summary_row(report: EvalReport) -> tuple[Any, ...]:
    """Return one row of the evaluation summary table."""
    return (
        report.feature,
        report.metric,
        report.rerank is not None,
        report.rank(1),
        report.rank(5),
        report.rank(10),
        report.mAP,
        ratio_cell(report),
        "" if report.norms is None or report.norms.cv is None else report.norms.cv,
    )


# Commands


def cmd_train(
    manifest: ExperimentManifest, data: tuple[IdentityDataset, EvalSplit] | None = None
) -> TrainingResult:
    """Train one model and write its checkpoint and training log."""
    run_dir = prepare_run_dir(manifest)
    train_set, _ = data or prepare_data(manifest)
    result = train(train_set, manifest.train)
    save_checkpoint(run_dir / FILE_CHECKPOINT, result, manifest.hash, manifest.options)
    write_training_log(run_dir / FILE_TRAINING_LOG, result.log, manifest.hash)
    _LOGGER.info(
        "Run %s finished: %d iterations, L_ID/L_Tri inconsistency %.3f",
        manifest.run_id,
        len(result.log),
        result.log.inconsistency_rate(),
    )
    return result


def cmd_eval(
    manifest: ExperimentManifest, checkpoint_path: str | Path | None = None
) -> list[EvalReport]:
    """Evaluate a checkpoint on the manifest's test data and write the reports."""
    run_dir = prepare_run_dir(manifest)
    checkpoint = load_checkpoint(checkpoint_path or run_dir / FILE_CHECKPOINT)
    if checkpoint.manifest_hash and checkpoint.manifest_hash != manifest.hash:
        _LOGGER.info(
            "Checkpoint was trained under manifest %s, evaluating under %s",
            checkpoint.manifest_hash,
            manifest.hash,
        )
    _, test = prepare_data(manifest)
    reports = evaluate_checkpoint(checkpoint, test, manifest)
    for report in reports:
        write_report(run_dir / report_name(report), report, manifest.hash)
    write_table(
        run_dir / FILE_EVAL_SUMMARY,
        SUMMARY_COLUMNS,
        (summary_row(report) for report in reports),
        manifest.hash,
    )
    return reports


def _train_and_evaluate(
    manifest: ExperimentManifest, features: Sequence[str] | None = None
) -> list[EvalReport]:
    data = prepare_data(manifest)
    result = cmd_train(manifest, data)
    test = data[1]
    return evaluate_checkpoint(checkpoint_of(result, manifest), test, manifest, features)


def cmd_sweep_beta(manifest: ExperimentManifest, betas: Iterable[float]) -> list[tuple]:
    """Train once per center-loss weight and tabulate rank-1, mAP and R per feature.

    ``beta = 0`` trains without center loss. Scores use the first requested
    metric without re-ranking.
    """
    betas = [float(beta) for beta in betas]
    if not betas:
        raise ConfigError("at least one beta is required", CONF_BETA)
    if any(beta < 0 for beta in betas):
        raise ConfigError(f"beta values must be non-negative, got {betas}", CONF_BETA)
    metric = manifest.eval.metrics[0]
    by_feature: dict[str, list[tuple]] = {feature: [] for feature in manifest.eval.features}
    for beta in betas:
        run = derive_manifest(
            manifest,
            f"{manifest.run_id}-beta-{beta:g}",
            **{CONF_BETA: beta, CONF_CENTER_LOSS: beta > 0},
        )
        for report in _train_and_evaluate(run):
            if report.metric != metric or report.rerank is not None:
                continue
            by_feature[report.feature].append(
                (report.feature, beta, report.rank(1), report.mAP, ratio_cell(report))
            )
    rows = [row for feature in manifest.eval.features for row in by_feature[feature]]
    run_dir = prepare_run_dir(manifest)
    write_table(run_dir / FILE_SWEEP, SWEEP_COLUMNS, rows, manifest.hash)
    _LOGGER.info("Wrote %d sweep rows to %s", len(rows), run_dir / FILE_SWEEP)
    return rows


def _ablation_rows(grid: str) -> list[tuple[str, dict[str, Any], tuple[str, ...]]]:
    """Return ``(row name, option changes, features to report)`` per grid row."""
    if grid == GRID_TRICKS:
        rows = []
        for name in TRICK_ROWS:
            description = NECK_DESCRIPTIONS[NeckVariant(PRESETS[name][CONF_NECK])]
            rows.append((name, PRESETS[name], description.inference_features[-1:]))
        return rows
    if grid == GRID_NECKS:
        return [
            (variant.value, {CONF_NECK: variant.value}, description.inference_features)
            for variant, description in NECK_DESCRIPTIONS.items()
        ]
    raise ConfigError(f"unknown ablation grid {grid!r}, expected one of {GRIDS}")


def cmd_ablate(manifest: ExperimentManifest, grid: str = GRID_TRICKS) -> list[tuple]:
    """Train every row of an ablation grid and tabulate its scores.

    The tricks grid reports one feature per row (f_i once a BN neck is in);
    the necks grid reports each variant's inference features.
    """
    table = []
    for name, changes, features in _ablation_rows(grid):
        slug = name.lstrip("+")
        run = derive_manifest(manifest, f"{manifest.run_id}-{slug}", **changes)
        for report in _train_and_evaluate(run, features):
            if report.rerank is not None:
                continue
            table.append(
                (
                    name,
                    report.feature,
                    report.metric,
                    report.rank(1),
                    report.mAP,
                    ratio_cell(report),
                )
            )
    run_dir = prepare_run_dir(manifest)
    write_table(run_dir / FILE_ABLATION, ABLATION_COLUMNS, table, manifest.hash)
    _LOGGER.info("Wrote %d ablation rows to %s", len(table), run_dir / FILE_ABLATION)
    return table


def project_2d(embeddings: np.ndarray) -> np.ndarray:
    """Project onto the first two principal components; 2-D input is returned as is."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.shape[1] == 2:
        return embeddings
    centered = embeddings - embeddings.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2]
    if len(components) < 2:
        components = np.vstack([components, np.zeros((2 - len(components), vt.shape[1]))])
    return centered @ components.T


def cmd_export_scatter(
    manifest: ExperimentManifest,
    checkpoint_path: str | Path | None = None,
    feature: str = FEATURE_T,
) -> Path:
    """Write ``x,y,label`` rows of the pooled test embeddings.

    Features wider than two dimensions are projected with PCA.
    """
    if feature not in (FEATURE_T, FEATURE_I):
        raise ConfigError(f"unknown feature {feature!r}")
    run_dir = prepare_run_dir(manifest)
    checkpoint = load_checkpoint(checkpoint_path or run_dir / FILE_CHECKPOINT)
    _, test = prepare_data(manifest)
    embedded = extract_set(checkpoint, test.pooled, feature, SPLIT_GALLERY)
    if embedded.dim != 2:
        _LOGGER.info("Projecting %d-D %s features onto two principal axes", embedded.dim, feature)
    path = run_dir / FILE_SCATTER
    export_embedding_scatter(project_2d(embedded.embeddings), embedded.labels, path, manifest.hash)
    _LOGGER.info("Wrote %d scatter points to %s", len(embedded), path)
    return path

