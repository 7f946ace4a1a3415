# Test package for pds-sampler
