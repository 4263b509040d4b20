"""Anchor-based functional representations with KAN-augmented transformers.

Subpackages mirror the pipeline: :mod:`volume` (data and phantoms),
:mod:`anchors`, :mod:`sampling`, :mod:`kan`, :mod:`model`,
:mod:`evaluation` and the ``abfr`` command line in :mod:`cli`.
"""

__version__ = "0.1.0"
