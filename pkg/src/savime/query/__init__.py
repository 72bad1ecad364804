from .ast import to_text
from .ddl import execute_ddl
from .parser import parse_script, parse_text
from .plan import QueryPlan, PlanNode, build_plan, infer_output_schema, is_ddl, optimize, parse, pretty

__all__ = [
    "QueryPlan",
    "PlanNode",
    "build_plan",
    "execute_ddl",
    "infer_output_schema",
    "is_ddl",
    "optimize",
    "parse",
    "parse_script",
    "parse_text",
    "pretty",
    "to_text",
]
