"""Tests for the apwdg package."""
