"""Config-driven experiment runner, reports and plots."""
