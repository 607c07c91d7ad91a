"""Constants for the necklab toolkit."""

from typing import Final

# Package domain
DOMAIN: Final = "necklab"

# Tensor core
BN_EPS: Final = 1e-5
BN_MOMENTUM: Final = 0.1
GRADCHECK_STEP: Final = 1e-5
GRADCHECK_TOLERANCE: Final = 1e-4

# Backbone
DEFAULT_BLOCKS: Final = (16, 32, 64)
DEFAULT_LAST_STRIDE: Final = 2
DEFAULT_EXTRACT_BATCH: Final = 256

# Inference features
FEATURE_T: Final = "f_t"
FEATURE_I: Final = "f_i"
FEATURES: Final = (FEATURE_T, FEATURE_I)

# Distance metrics
METRIC_EUCLIDEAN: Final = "euclidean"
METRIC_COSINE: Final = "cosine"
METRICS: Final = (METRIC_EUCLIDEAN, METRIC_COSINE)

# Losses
DEFAULT_EPSILON: Final = 0.1
DEFAULT_MARGIN: Final = 0.3
DEFAULT_BETA: Final = 0.0005
DEFAULT_CENTER_LR: Final = 0.5
CENTER_MODE_RULE: Final = "rule"
CENTER_MODE_OPTIMIZER: Final = "optimizer"

# Schedule
DEFAULT_BASE_LR: Final = 3.5e-4
DEFAULT_WARMUP_EPOCHS: Final = 10
DEFAULT_DECAY_EPOCHS: Final = (40, 70)
DEFAULT_DECAY_FACTORS: Final = (0.1, 0.1)
DEFAULT_TOTAL_EPOCHS: Final = 120
DEFAULT_TIME_SCALE: Final = 1.0

# PK sampling
DEFAULT_P: Final = 8
DEFAULT_K: Final = 4

# Random erasing
DEFAULT_REA_P: Final = 0.5
DEFAULT_REA_SL: Final = 0.02
DEFAULT_REA_SH: Final = 0.4
DEFAULT_REA_R1: Final = 0.3
REA_MAX_ATTEMPTS: Final = 100
REA_FILL_MEAN: Final = "mean"
REA_FILL_RANDOM: Final = "random"

# Optimizer
DEFAULT_WEIGHT_DECAY: Final = 5e-4
DEFAULT_ADAM_BETA1: Final = 0.9
DEFAULT_ADAM_BETA2: Final = 0.999
DEFAULT_ADAM_EPS: Final = 1e-8

# RNG streams, indexed together with (seed, iteration)
STREAM_SAMPLER: Final = 1
STREAM_ERASING: Final = 2
STREAM_INIT: Final = 3

# Retrieval
JUNK_LABEL: Final = -1
DEFAULT_MAX_RANK: Final = 50
DEFAULT_K1: Final = 20
DEFAULT_K2: Final = 6
DEFAULT_LAMBDA: Final = 0.3

# Data
IDX_IMAGE_MAGIC: Final = 0x00000803
IDX_LABEL_MAGIC: Final = 0x00000801
BENCHMARK_NAME_PATTERN: Final = r"^(-?\d+)_c(\d+)"
SPLIT_TRAIN: Final = "train"
SPLIT_QUERY: Final = "query"
SPLIT_GALLERY: Final = "gallery"
POLICY_IDENTITY_DISJOINT: Final = "identity-disjoint"
POLICY_CLASS_SHARED: Final = "class-shared"
DEFAULT_TRAIN_FRACTION: Final = 0.7
DEFAULT_QUERY_FRACTION: Final = 0.2

# File formats
CHECKPOINT_FORMAT: Final = "necklab-checkpoint"
CHECKPOINT_VERSION: Final = 1
EMBEDDING_MAGIC: Final = b"NLEMB"
EMBEDDING_TEXT_MAGIC: Final = "NLEMB-TEXT"
EMBEDDING_VERSION: Final = 1
EMBEDDING_FLAG_IDENTITY: Final = 0x1
EMBEDDING_FLAG_CAMERA: Final = 0x2
TRAINING_LOG_COLUMNS: Final = ("iteration", "epoch", "lr", "L_ID", "L_Tri", "L_C", "total")

# Exit codes
EXIT_OK: Final = 0
EXIT_ERROR: Final = 1
EXIT_CONFIG: Final = 2
EXIT_DATA: Final = 3
EXIT_DIVERGENCE: Final = 4

# Manifest keys
CONF_RUN_ID: Final = "run.id"
CONF_OUTPUT_DIR: Final = "run.output_dir"
CONF_PRESET: Final = "run.preset"
CONF_SEED: Final = "seed"

CONF_WARMUP: Final = "trick.warmup"
CONF_REA: Final = "trick.rea"
CONF_LABEL_SMOOTH: Final = "trick.label_smooth"
CONF_LAST_STRIDE_1: Final = "trick.last_stride_1"
CONF_NECK: Final = "trick.neck"
CONF_CENTER_LOSS: Final = "trick.center_loss"

CONF_REA_P: Final = "trick.rea.p"
CONF_REA_SL: Final = "trick.rea.sl"
CONF_REA_SH: Final = "trick.rea.sh"
CONF_REA_R1: Final = "trick.rea.r1"
CONF_REA_FILL: Final = "trick.rea.fill"

CONF_EPSILON: Final = "loss.epsilon"
CONF_MARGIN: Final = "loss.margin"
CONF_BETA: Final = "loss.beta"
CONF_CENTER_LR: Final = "loss.center_lr"
CONF_CENTER_MODE: Final = "loss.center_mode"

CONF_BASE_LR: Final = "schedule.base_lr"
CONF_WARMUP_EPOCHS: Final = "schedule.warmup_epochs"
CONF_DECAY_EPOCHS: Final = "schedule.decay_epochs"
CONF_DECAY_FACTORS: Final = "schedule.decay_factors"
CONF_TOTAL_EPOCHS: Final = "schedule.total_epochs"
CONF_TIME_SCALE: Final = "schedule.time_scale"
CONF_ITERS_PER_EPOCH: Final = "schedule.iters_per_epoch"

CONF_P: Final = "sampler.p"
CONF_K: Final = "sampler.k"

CONF_WEIGHT_DECAY: Final = "optim.weight_decay"

CONF_BLOCKS: Final = "model.blocks"
CONF_CLASSIFIER_BIAS: Final = "model.classifier_bias"
CONF_BN_BIAS_TRAINABLE: Final = "model.bn_bias_trainable"

CONF_TRAIN_KIND: Final = "data.train.kind"
CONF_TRAIN_PATH: Final = "data.train.path"
CONF_TRAIN_LABELS: Final = "data.train.labels"
CONF_TEST_KIND: Final = "data.test.kind"
CONF_TEST_PATH: Final = "data.test.path"
CONF_TEST_LABELS: Final = "data.test.labels"
CONF_BLOBS_IDENTITIES: Final = "data.blobs.identities"
CONF_BLOBS_SAMPLES: Final = "data.blobs.samples"
CONF_BLOBS_SIZE: Final = "data.blobs.size"
CONF_BLOBS_NOISE: Final = "data.blobs.noise"
CONF_BLOBS_CAMERAS: Final = "data.blobs.cameras"
CONF_LIMIT: Final = "data.limit"
CONF_SPLIT_POLICY: Final = "data.split.policy"
CONF_TRAIN_FRACTION: Final = "data.split.train_fraction"
CONF_QUERY_FRACTION: Final = "data.split.query_fraction"

CONF_EVAL_FEATURES: Final = "eval.features"
CONF_EVAL_METRICS: Final = "eval.metrics"
CONF_EVAL_RERANK: Final = "eval.rerank"
CONF_EVAL_K1: Final = "eval.k1"
CONF_EVAL_K2: Final = "eval.k2"
CONF_EVAL_LAMBDA: Final = "eval.lambda"
CONF_EVAL_MAX_RANK: Final = "eval.max_rank"
CONF_EVAL_CAMERA_FILTER: Final = "eval.camera_filter"
CONF_EVAL_EXPORT_EMBEDDINGS: Final = "eval.export_embeddings"

# Dataset kinds
DATA_KIND_IDX: Final = "idx"
DATA_KIND_FOLDER: Final = "folder"
DATA_KIND_BLOBS: Final = "blobs"

# Re-ranking request modes
RERANK_OFF: Final = "off"
RERANK_ON: Final = "on"
RERANK_BOTH: Final = "both"

# Default run values
DEFAULT_RUN_ID: Final = "run"
DEFAULT_OUTPUT_DIR: Final = "runs"
DEFAULT_SEED: Final = 0
DEFAULT_BLOBS_IDENTITIES: Final = 10
DEFAULT_BLOBS_SAMPLES: Final = 12
DEFAULT_BLOBS_SIZE: Final = 16
DEFAULT_BLOBS_NOISE: Final = 0.1
DEFAULT_BLOBS_CAMERAS: Final = 2

# Output file names
FILE_CHECKPOINT: Final = "checkpoint.npz"
FILE_TRAINING_LOG: Final = "training_log.csv"
FILE_MANIFEST: Final = "manifest.txt"
FILE_SWEEP: Final = "sweep_beta.csv"
FILE_ABLATION: Final = "ablation.csv"
FILE_SCATTER: Final = "scatter.csv"
