"""Restoration and translation of historical Hanja records, desk scale.

The package splits along the pipeline: `tensor` (autodiff core), `corpus`
and `subword` (data), `model` (the multi-task Transformer), `training`
(losses, optimizer, schedules, checkpoints), `inference` (restoration
candidates and beam search), `metrics`, `topics` (NMF over term-date
counts), `service` (review HTTP API), `synth` (offline toy corpora), and
`cli` (the `hanmt` entry point).
"""

__version__ = "0.1.0"
