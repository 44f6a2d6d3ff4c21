"""Commands module for the METR CLI."""
