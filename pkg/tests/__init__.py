"""Tests for necklab."""
