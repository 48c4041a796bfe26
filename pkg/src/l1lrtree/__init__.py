"""Sparse logistic regression, regression trees and their combination for binary cohorts."""

__version__ = "0.1.0"
