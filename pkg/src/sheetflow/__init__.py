"""On-line temporal planner/scheduler for modular flow-shop print machines."""

from .graph import CostTable, HeuristicConfig, LookupTableSet, PlanningGraph
from .ledger import Allocation, Ledger
from .logic import LogicState, applicable, regress, unifies_with_initial
from .manager import ManagerConfig, PlanManager, PlanRecord, Status
from .model import GroundAction, MachineModel, compile_model, load_bundled, load_model
from .requests import RequestParser, SheetRequest, serialize_request
from .scenario import Scenario, format_scenario, parse_scenario
from .search import (
    Interrupted,
    NoPlan,
    Objective,
    PlanContext,
    PlanResult,
    plan_sheet,
)
from .sim import Fault, MachineSim, ScheduleViolation
from .stn import DiffConstraint, Stn, Verdict, idpc_oracle

__all__ = [
    "Allocation",
    "CostTable",
    "DiffConstraint",
    "Fault",
    "GroundAction",
    "HeuristicConfig",
    "Interrupted",
    "Ledger",
    "LogicState",
    "LookupTableSet",
    "MachineModel",
    "MachineSim",
    "ManagerConfig",
    "NoPlan",
    "Objective",
    "PlanContext",
    "PlanManager",
    "PlanRecord",
    "PlanResult",
    "PlanningGraph",
    "RequestParser",
    "Scenario",
    "ScheduleViolation",
    "SheetRequest",
    "Status",
    "Stn",
    "Verdict",
    "applicable",
    "compile_model",
    "format_scenario",
    "idpc_oracle",
    "load_bundled",
    "load_model",
    "parse_scenario",
    "plan_sheet",
    "regress",
    "serialize_request",
    "unifies_with_initial",
]
