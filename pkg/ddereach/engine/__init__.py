from ddereach.engine.flow import Flowpipe, FlowParams, flow_segment
from ddereach.engine.reach import ReachAnalyzer, ReachResult, propagate
