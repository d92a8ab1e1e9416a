"""Convex-combination over-sampling with S3VM labeling of the synthetic data."""

from .dataset import (
    Dataset,
    DatasetError,
    GeneratorSpec,
    generate_gaussian_task,
    load_csv,
    remove_mcar,
    save_csv,
    standardize,
    stratified_kfold,
)
from .harness import ExperimentConfig, MethodSpec, RunRecord, run_cell, run_experiment, summarize
from .oversampler import ConvexOverSampler, OversamplePlan, SyntheticBatch, convex_oversample, shrinkage_report
from .s3vm import S3VMClassifier, S3vmConfig, S3vmResult, SyntheticS3VMClassifier, train_ensemble, train_s3vm
from .stats import MetricsReport, f_ppf, friedman_test, mean_ranks, metrics
from .svm import KernelSpec, KernelSVC, SvmModel, train_svm

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DatasetError",
    "GeneratorSpec",
    "generate_gaussian_task",
    "load_csv",
    "save_csv",
    "remove_mcar",
    "standardize",
    "stratified_kfold",
    "OversamplePlan",
    "SyntheticBatch",
    "convex_oversample",
    "shrinkage_report",
    "ConvexOverSampler",
    "KernelSpec",
    "SvmModel",
    "train_svm",
    "KernelSVC",
    "S3vmConfig",
    "S3vmResult",
    "train_s3vm",
    "train_ensemble",
    "S3VMClassifier",
    "SyntheticS3VMClassifier",
    "MetricsReport",
    "metrics",
    "mean_ranks",
    "friedman_test",
    "f_ppf",
    "ExperimentConfig",
    "MethodSpec",
    "RunRecord",
    "run_cell",
    "run_experiment",
    "summarize",
]
