from ._intermix import *  # noqa: F401,F403
from ._intermix import __doc__  # noqa: F401
