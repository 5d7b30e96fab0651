"""core — branching Markov processes with absorption: motions, engine, estimators, experiments."""
