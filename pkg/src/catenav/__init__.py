"""Concurrent-allocation task execution for multi-robot navigation."""
