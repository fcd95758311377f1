"""
Location: tests/__init__.py

Description: Test Suite Initialization for Pathformer.
This file serves as the entry point for all test modules in the `tests` package.
"""
