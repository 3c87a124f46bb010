"""Training, evaluation, studies, persistence and configuration."""
