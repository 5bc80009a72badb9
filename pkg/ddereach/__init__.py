import ddereach.core
import ddereach.engine
import ddereach.validation

from ddereach.core.interval import Box, Interval
from ddereach.core.model import ModelSpec, check_model, load_model, load_model_file
from ddereach.engine.reach import ReachAnalyzer, ReachResult

__version__ = '0.1.0'
