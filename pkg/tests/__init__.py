"""
Tests Package
Contains all test scripts for the AI Response Caching application
"""
