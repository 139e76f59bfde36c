"""Experiment harness: fold plans, grid search, nested CV, metrics and reports."""
