# Test package for factorAug
