"""Control constructions for the wave maps equation."""
