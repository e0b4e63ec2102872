from ._aedet import *  # noqa: F401,F403
from ._aedet import __doc__  # noqa: F401
