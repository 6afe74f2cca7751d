from .simulator import *  # noqa: F401, F403
from .tokens import *  # noqa: F401, F403
from .ledger import *  # noqa: F401, F403
from .metrics import *  # noqa: F401, F403

from .version import __version__  # noqa: F401
