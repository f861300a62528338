"""Edge-reinforced random walk laboratory."""
