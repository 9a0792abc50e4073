"""Dataflow-aware serving manager for LLM applications.

Core pieces: semantic variables and prompt templates (prompting), per-session
request DAGs with objective deduction (dag), a deterministic tokenizer and
prefix hash chain (tokenizer, prefix), a simulated paged-KV engine (engine),
the capacity-aware scheduler (scheduler), the orchestrating manager
(manager), the HTTP surface (api), and the workload/experiment harness
(workloads, experiments).
"""

from .config import Config
from .dag import RequestDag, SamplingParams, SchedulingLabel
from .errors import SemflowError
from .experiments import compare_reports, run_experiment
from .manager import SemanticManager
from .prompting import (
    Criterion,
    PromptTemplate,
    SemanticVariable,
    parse_prompt_template,
)
from .tokenizer import ReferenceTokenizer
from .workloads import Workload, generate_workload

__version__ = "0.1.0"

__all__ = [
    "Config",
    "Criterion",
    "PromptTemplate",
    "ReferenceTokenizer",
    "RequestDag",
    "SamplingParams",
    "SchedulingLabel",
    "SemanticManager",
    "SemanticVariable",
    "SemflowError",
    "Workload",
    "compare_reports",
    "generate_workload",
    "parse_prompt_template",
    "run_experiment",
]
