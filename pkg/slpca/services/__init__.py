"""Core services for slpca"""
