"""Triplet-based transformer for sparse, irregularly sampled time-series.

Modules:
  data       - triplet data model, CSV ingestion, windows, splits
  synthetic  - synthetic cohort generation and the benchmark presets
  autodiff   - reverse-mode differentiation over a fixed op vocabulary
  optim      - parameter store, Adam, gradient checking
  model      - forward computation (standard and interpretable variants)
  training   - losses, pretrain/finetune loops, early stopping
  experiment - labeled-fraction sweeps and the pretraining ablation
  metrics    - ROC-AUC, PR-AUC, min(recall, precision)
  checkpoint - binary checkpoint serialization
  cli        - command-line entry points
"""

__version__ = "0.1.0"
