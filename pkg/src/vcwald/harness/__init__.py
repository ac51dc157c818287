"""Experiment orchestration, CSV ingestion and output for the command line."""

from .data import CsvSchema, crs_transform, load_csv, make_crs_fixture, save_csv
from .emit import emit, render, table_rows
from .experiment import ExperimentPlan, GridPoint, RejectionTable, run_size_power

__all__ = ["CsvSchema", "ExperimentPlan", "GridPoint", "RejectionTable", "crs_transform",
           "emit", "load_csv", "make_crs_fixture", "render", "run_size_power", "save_csv",
           "table_rows"]
