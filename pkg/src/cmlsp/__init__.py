"""Cross-modal shortest-path local alignment and BN global enhancement for re-identification."""

__version__ = "0.1.0"
