"""Camera, housing and stereo calibration pipelines."""
