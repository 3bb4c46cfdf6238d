"""Layout-aware language-model pre-training on OCR cell documents.

The package bundles a numpy-backed autodiff engine, the cell-level layout
encoder with its two self-supervised objectives, three fine-tuning tasks
with their metrics, a synthetic form corpus, and a CLI that runs the whole
pipeline deterministically.
"""

__version__ = "0.1.0"
