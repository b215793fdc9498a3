"""Knowledge-graph store, configuration, persistence, logging and errors."""
