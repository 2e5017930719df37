from handdiff._handdiff import *  # noqa: F401,F403
from handdiff._handdiff import __doc__  # noqa: F401
