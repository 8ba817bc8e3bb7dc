"""Graph-augmented HAR models for realized-volatility forecasting."""
