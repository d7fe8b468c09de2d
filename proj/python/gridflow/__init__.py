from ._gridflow import *  # noqa: F401,F403
from ._gridflow import __doc__, __version__  # noqa: F401
