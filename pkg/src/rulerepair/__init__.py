"""Trajectory repair against STL traffic rules."""
