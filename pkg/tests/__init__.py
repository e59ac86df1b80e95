"""
disentlab - Test Suite
Version: 1.0
"""
