"""
Main entry point for the BesFS integrity monitor.
Deployment platforms start the FastAPI server from this module; the
command-line driver lives in app/cli.py (`python -m app`).
"""
from app.main import app

__all__ = ["app"]
