"""Off-policy evaluation with marginalized importance sampling and state abstraction."""
