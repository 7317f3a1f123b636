"""Test suite for Attribute Painter."""
