"""Decision trees, forests and boosted ensembles translated into MLPs, and
MLP training that starts from those translations."""
