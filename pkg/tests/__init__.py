"""Tests for hytemp."""
