"""Core modules for jmnpde: joint PSA/TTE model evaluation with npd and npde."""
