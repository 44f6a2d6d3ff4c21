"""Configuration defaults for the METR toolkit."""
