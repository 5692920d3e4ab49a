"""Spectral-reconstruction deepfake detection pipeline.

Modules:
    datamodel       dataset manifests, frame/cube I/O, synthetic corpus
    reconstruction  RGB -> 31-band spectral transformer with flexi attention
    spectral        band attention, 31 -> 3 channel mixing, weight export
    classifier      recalibrated conv classifier and logistic loss
    training        Adam + cosine decay loop with deterministic checkpoints
    evaluation      accuracy / ROC / AUC / EER metrics and reporting
    cli             operator command line
"""

__version__ = "0.1.0"
