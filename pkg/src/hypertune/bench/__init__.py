"""Tunable benchmark pipelines: text classification, image features, RMSProp, ALS."""
