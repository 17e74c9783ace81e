"""Meta-learning for simple regret minimisation in Gaussian and Bernoulli bandits."""
