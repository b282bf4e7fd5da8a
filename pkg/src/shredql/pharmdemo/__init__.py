"""Miniature curated pharmacology site: schema, data generator, pages, server."""
