"""Few-shot class-incremental audio classification engine."""

try:
    from ._fcac import *  # noqa: F401,F403  (installed package layout)
except ImportError:
    from _fcac import *  # noqa: F401,F403  (in-build layout: module dir on sys.path)
