"""
Scripts for end-to-end runs.
"""
