from capmeter.graph.distributions import *  # noqa: F403
from capmeter.graph.trends import *  # noqa: F403
