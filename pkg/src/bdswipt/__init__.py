"""Cell-free massive MIMO SWIPT with a beyond-diagonal RIS: models, closed forms and allocators."""

__version__ = "0.1.0"
