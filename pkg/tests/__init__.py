"""Test suite for slpca"""
