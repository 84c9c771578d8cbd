# predinvent/src/config_models.py
import math
import os
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class StrictModel(BaseModel):
    # Unknown keys in a run config are user errors, not silently ignored
    model_config = ConfigDict(extra="forbid")


class TrainConfig(StrictModel):
    epochs: int = Field(default=100, ge=1, description="Training epochs per candidate classifier.")
    learning_rate: float = Field(default=1e-3, gt=0.0, description="Adam step size.")
    hidden_sizes: Tuple[int, ...] = Field(default=(128, 128), description="Widths of the ReLU hidden layers.")
    validation_fraction: float = Field(default=0.2, ge=0.0, lt=1.0,
                                       description="Share of demonstrations held out, split by trajectory.")
    clamp_eps: float = Field(default=1e-7, gt=0.0, lt=0.5, description="Probability clamp for log terms.")
    consistency_threshold: float = Field(default=0.005, gt=0.0,
                                         description="Validation loss below which a candidate counts as consistent.")
    seed: int = Field(default=0, description="Seeds initialization, the split and minibatch order.")

    @field_validator("hidden_sizes")
    @classmethod
    def _positive_widths(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v or any(w < 1 for w in v):
            raise ValueError("hidden_sizes needs at least one positive width")
        return v


class LoopConfig(StrictModel):
    max_iterations: int = Field(default=10, ge=0,
                                description="Refinement rounds per focus predicate; 0 keeps only the completion's seeds.")
    pool_target: Optional[int] = Field(default=None, ge=1,
                                       description="Consistent pool size that ends refinement. Default: 2 x controllers.")
    proposals_per_round: int = Field(default=4, ge=1, description="Batch size requested from enumerating backends.")
    completion_retries: int = Field(default=3, ge=1, description="Attempts at an unparsable domain completion.")
    transport_retries: int = Field(default=3, ge=0, description="Extra attempts after a proposer transport failure.")
    digest_demos: int = Field(default=3, ge=0, description="Demonstrations summarized in the completion prompt.")
    loss_feedback: bool = Field(default=True, description="Include losses and scores in the refinement prompt.")
    seed_from_completion: bool = Field(default=True,
                                       description="Ask the proposer to complete the partial domain first.")
    redact_names: bool = Field(default=False,
                               description="Replace controller and known-predicate names with opaque symbols.")
    workers: int = Field(default=1, ge=1, description="Parallel candidate fits within one round.")

    def target_for(self, num_controllers: int) -> int:
        return self.pool_target if self.pool_target is not None else 2 * num_controllers


class DerivedMode(str, Enum):
    AWARE = "aware"            # derived forms added after each accepted basic predicate, never in effects
    DISABLED = "disabled"      # no derived forms at all
    INDISTINCT = "indistinct"  # derived forms in the pool up front, learned like basic effect predicates


class SelectionConfig(StrictModel):
    mismatch_weight: float = Field(default=1e5, gt=0.0, description="Penalty per unreproduced demonstration.")
    search_budget: int = Field(default=10_000, ge=1, description="Node pops allowed per skeleton search.")
    epsilon: float = Field(default=0.0, ge=0.0, description="Hill climbing stops once J* < epsilon.")
    derived_mode: DerivedMode = Field(default=DerivedMode.AWARE)
    evaluate_suffixes: bool = Field(default=False,
                                    description="Also score every demonstration suffix as its own task.")
    workers: int = Field(default=1, ge=1, description="Parallel candidate evaluations within one round.")


class PlannerBudgets(StrictModel):
    samples_per_step: int = Field(default=10, ge=1)
    max_skeletons: int = Field(default=3, ge=1, description="Skeletons tried per (re)plan.")
    max_replans: int = Field(default=5, ge=0)
    search_budget: int = Field(default=10_000, ge=1)
    timeout_s: float = Field(default=30.0, gt=0.0)


class ProposerBackend(str, Enum):
    SCRIPTED = "scripted"
    ENUMERATE = "enumerate"
    HTTP = "http"
    GEMINI = "gemini"


class ProposerConfig(StrictModel):
    backend: ProposerBackend = Field(default=ProposerBackend.SCRIPTED)
    replay_file: Optional[str] = Field(default=None, description="Replay file for the scripted backend.",
                                       examples=["prompts/replay/blocks.replay"])
    endpoint: Optional[str] = Field(default=None, description="Chat-completions URL for the http backend.",
                                    examples=["https://api.example.com/v1/chat/completions"])
    model: Optional[str] = Field(default=None, examples=["gpt-4o", "gemini-1.5-flash-latest"])
    api_key_env: str = Field(default="PREDINVENT_API_KEY",
                             description="Environment variable holding the API key.")
    temperature: float = Field(default=0.2, ge=0.0, le=2.0)
    timeout_s: float = Field(default=120.0, gt=0.0)

    @model_validator(mode="after")
    def _backend_requirements(self) -> "ProposerConfig":
        if self.backend == ProposerBackend.SCRIPTED:
            if not self.replay_file:
                raise ValueError("the scripted backend needs replay_file")
            if not os.path.isfile(self.replay_file):
                raise ValueError(f"replay_file not found: {self.replay_file}")
        if self.backend == ProposerBackend.HTTP and not self.endpoint:
            raise ValueError("the http backend needs endpoint")
        return self


class RunConfig(StrictModel):
    """Everything a pipeline stage reads besides its input artifacts."""
    domain: Literal["blocks", "satellites", "tableclean"] = "blocks"
    seed: int = 0
    num_demos: int = Field(default=50, ge=1)
    proposer: Optional[ProposerConfig] = None
    train: TrainConfig = Field(default_factory=TrainConfig)
    loop: LoopConfig = Field(default_factory=LoopConfig)
    selection: SelectionConfig = Field(default_factory=SelectionConfig)
    planner: PlannerBudgets = Field(default_factory=PlannerBudgets)


class TaskOutcome(StrictModel):
    task_seed: int
    split: Literal["train", "test"]
    success: bool
    failure_reason: Optional[str] = None
    plan_length: Optional[int] = None
    replans: int = 0
    skeletons_tried: int = 0


class TimingBreakdown(StrictModel):
    """Learning time split into its stages; tau_total is their sum."""
    tau_predinv: float = Field(default=0.0, ge=0.0, description="Seconds spent inventing predicates.")
    tau_predsel: float = Field(default=0.0, ge=0.0, description="Seconds spent selecting predicates.")
    tau_skill: float = Field(default=0.0, ge=0.0, description="Seconds spent fitting operators and samplers.")
    tau_total: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def _total_is_sum(self) -> "TimingBreakdown":
        parts = self.tau_predinv + self.tau_predsel + self.tau_skill
        if self.tau_total == 0.0 and parts > 0.0:
            self.tau_total = parts
        elif not math.isclose(self.tau_total, parts, rel_tol=1e-6, abs_tol=1e-9):
            raise ValueError(f"tau_total {self.tau_total} != sum of components {parts}")
        return self


class MetricsReport(StrictModel):
    domain: str
    split: Literal["train", "test"]
    num_tasks: int = Field(..., ge=0)
    num_solved: int = Field(..., ge=0)
    success_rate: float = Field(..., ge=0.0, le=1.0)
    failure_reasons: Dict[str, int] = Field(default_factory=dict)
    outcomes: List[TaskOutcome] = Field(default_factory=list)
    timing: TimingBreakdown = Field(default_factory=TimingBreakdown)
    classifier_fits: Optional[int] = Field(default=None, ge=0, description="Classifiers trained while building the pool.")
    selection_steps: List[Dict[str, Any]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _consistent_counts(self) -> "MetricsReport":
        if self.num_solved > self.num_tasks:
            raise ValueError("num_solved exceeds num_tasks")
        if self.outcomes and len(self.outcomes) != self.num_tasks:
            raise ValueError("outcomes must list every task")
        return self
