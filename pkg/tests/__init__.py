"""
Test suite for blf-py
"""
