"""Morse and Maslov indices of doubly asymptotic n-body solutions."""

__version__ = "0.1.0"
