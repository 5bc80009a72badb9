from ddereach.core.interval import Box, Interval, IntervalMatrix
from ddereach.core.expr import VectorField, parse, to_text
from ddereach.core.model import ModelSpec, load_model, load_model_file
