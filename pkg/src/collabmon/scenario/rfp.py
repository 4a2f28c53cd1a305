"""Built-in request-for-proposal case for a plastics subcontractor.

Three mechanistic sub-processes run on shared objects:

1. ``rfp-technical-design``: design of the technical characteristics of the
   product (control group, never monitored).
2. ``rfp-internal-requests``: management of internal requests for proposal.
3. ``rfp-final-response``: treatment of the supplier responses and
   construction of the final response.

The technical specification produced by (1) is the input of (2); the
supplier quotes produced by (2) are the input of (3). Actor counts,
durations and arrival times are illustrative defaults, not measured data.
"""
from __future__ import annotations

from collabmon.indicators import IndicatorKind, Metric, WeightFunction
from collabmon.metamodel import (
    AccessRight,
    Activity,
    ActivityKind,
    Actor,
    BusinessObject,
    Category,
    Direction,
    Indicator,
    Permission,
    ProcessDefinition,
    Regulator,
    RegulatorKind,
    Role,
    Rule,
    Structuring,
    Threshold,
    Transition,
    Variability,
)
from collabmon.observation import MODIFICATIONS, MULTI_ACTOR_ACCESSES, OUTPUT_FLOWS
from collabmon.regulation import (
    AcceptanceKind,
    AcceptancePolicy,
    AddNotification,
    MergeActivities,
    RemoveValidationStep,
)
from collabmon.scenario.config import Arrival, ScenarioConfig

DESIGN = "rfp-technical-design"
REQUESTS = "rfp-internal-requests"
RESPONSE = "rfp-final-response"

CUSTOMER_REQUEST = "CustomerRequest"
TECH_SPEC = "TechnicalSpec"
CAD_MODEL = "CADModel"
RFP = "RequestForProposal"
QUOTE = "InternalResponse"
FINAL = "FinalResponse"

OBJECT_CLASSES = [CUSTOMER_REQUEST, TECH_SPEC, CAD_MODEL, RFP, QUOTE, FINAL]

R, W, V = Permission.READ, Permission.WRITE, Permission.VALIDATE


def _rights(*pairs: tuple[str, Permission]) -> frozenset[AccessRight]:
    return frozenset(AccessRight(cls, perm) for cls, perm in pairs)


def _chain(*ids: str) -> list[Transition]:
    return [Transition(a, b) for a, b in zip(ids, ids[1:])]


def rfp_roles() -> list[Role]:
    return [
        Role("engineer", "Design engineer", _rights(
            (CUSTOMER_REQUEST, R), (TECH_SPEC, R), (TECH_SPEC, W), (CAD_MODEL, R), (CAD_MODEL, W))),
        Role("design-manager", "Design office manager", _rights(
            (TECH_SPEC, R), (TECH_SPEC, W), (TECH_SPEC, V), (CAD_MODEL, R), (CAD_MODEL, W), (CAD_MODEL, V))),
        Role("sales", "Sales administrator", _rights(
            (CUSTOMER_REQUEST, R), (TECH_SPEC, R), (RFP, R), (RFP, W), (QUOTE, R), (FINAL, R), (FINAL, W))),
        Role("quality", "Quality manager", _rights(
            (TECH_SPEC, R), (TECH_SPEC, V), (RFP, R), (RFP, V), (FINAL, R), (FINAL, V))),
        Role("director", "Managing director", _rights((RFP, R), (RFP, V), (FINAL, R), (FINAL, V))),
        Role("supplier", "External supplier", _rights((RFP, R), (QUOTE, R), (QUOTE, W))),
    ]


def rfp_actors() -> list[Actor]:
    return [
        Actor("eng-1", "Design engineer 1", frozenset({"engineer"})),
        Actor("eng-2", "Design engineer 2", frozenset({"engineer"})),
        Actor("dm-1", "Design office manager", frozenset({"design-manager", "engineer"})),
        Actor("sales-1", "Sales administrator", frozenset({"sales"})),
        Actor("qm-1", "Quality manager", frozenset({"quality"})),
        Actor("dir-1", "Managing director", frozenset({"director", "quality"})),
        Actor("sup-1", "Mould maker", frozenset({"supplier"}), external=True),
        Actor("sup-2", "Resin supplier", frozenset({"supplier"}), external=True),
    ]


def rfp_processes() -> list[ProcessDefinition]:
    A, K = Activity, ActivityKind
    design = ProcessDefinition(
        id=DESIGN,
        name="Design of the technical characteristics of the product",
        structuring=Structuring.MECHANISTIC,
        category=Category.PRODUCTION,
        variability=Variability.VARYING,
        activities=(
            A("td-analyse", "Analyse customer requirements", K.INFORMATION_SEARCH, "engineer",
              inputs={CUSTOMER_REQUEST}, expected_duration=4),
            A("td-draft", "Draft technical specification", K.TASK, "engineer",
              outputs={TECH_SPEC}, expected_duration=8),
            A("td-cad", "Model the part", K.TASK, "engineer",
              inputs={TECH_SPEC}, outputs={CAD_MODEL}, expected_duration=10),
            A("td-validate", "Validate technical file", K.VALIDATION, "design-manager",
              outputs={TECH_SPEC, CAD_MODEL}, expected_duration=3),
        ),
        transitions=_chain("td-analyse", "td-draft", "td-cad", "td-validate"),
    )
    requests = ProcessDefinition(
        id=REQUESTS,
        name="Management of internal requests for proposal",
        structuring=Structuring.MECHANISTIC,
        category=Category.ADMINISTRATIVE,
        variability=Variability.PERMANENT,
        activities=(
            A("ir-prepare", "Prepare internal request", K.TASK, "sales",
              inputs={TECH_SPEC}, outputs={RFP}, expected_duration=5),
            A("ir-quality-check", "Quality check of the request", K.VALIDATION, "quality",
              outputs={RFP}, expected_duration=3),
            A("ir-director-approval", "Director approval of the request", K.VALIDATION, "director",
              outputs={RFP}, expected_duration=3),
            A("ir-send", "Send request to suppliers", K.EXCHANGE, "sales",
              inputs={RFP}, expected_duration=1, channel="email"),
            A("ir-quote", "Supplier quotation", K.TASK, "supplier",
              inputs={RFP}, outputs={QUOTE}, expected_duration=8),
        ),
        transitions=_chain("ir-prepare", "ir-quality-check", "ir-director-approval", "ir-send", "ir-quote"),
    )
    response = ProcessDefinition(
        id=RESPONSE,
        name="Treatment of responses and construction of the final response",
        structuring=Structuring.MECHANISTIC,
        category=Category.ADMINISTRATIVE,
        variability=Variability.PERMANENT,
        activities=(
            A("fr-collect", "Collect supplier quotes", K.INFORMATION_SEARCH, "sales",
              inputs={QUOTE}, expected_duration=3),
            A("fr-clarify", "Ask supplier for a revised quote", K.CHANGE_REQUEST, "supplier",
              outputs={QUOTE}, expected_duration=4),
            A("fr-build", "Build the final response", K.TASK, "sales",
              inputs={QUOTE, TECH_SPEC}, outputs={FINAL}, expected_duration=6),
            A("fr-quality-check", "Quality check of the response", K.VALIDATION, "quality",
              outputs={FINAL}, expected_duration=2),
            A("fr-director-approval", "Director approval of the response", K.VALIDATION, "director",
              outputs={FINAL}, expected_duration=2),
            A("fr-submit", "Submit response to customer", K.EXCHANGE, "sales",
              inputs={FINAL}, expected_duration=1, channel="portal"),
        ),
        transitions=_chain("fr-collect", "fr-clarify", "fr-build", "fr-quality-check",
                           "fr-director-approval", "fr-submit"),
    )
    return [design, requests, response]


def rfp_indicators() -> list[Indicator]:
    def ind(id_, objective, metric, scope, value, direction, window=None):
        return Indicator(id_, objective, IndicatorKind(metric, scope), Threshold(value, direction), window)

    M, D = Metric, Direction
    return [
        ind("val-internal-rfp", "Keep validation loops on the internal request short",
            M.VALIDATION_REQUESTS_PER_OBJECT, "internal-rfp", 4, D.AT_LEAST, window=240),
        ind("val-final-response", "Keep validation loops on the final response short",
            M.VALIDATION_REQUESTS_PER_OBJECT, "final-response", 4, D.AT_LEAST, window=240),
        ind("change-quotes", "Watch renegotiation of supplier quotes",
            M.CHANGE_REQUESTS_PER_OBJECT, "supplier-quotes", 50, D.AT_LEAST),
        ind("deadline-misses", "Count tasks finished late",
            M.MISSED_DEADLINE_COUNT, None, 1000, D.AT_LEAST),
        ind("search-quotes", "Reactivity when searching supplier quotes",
            M.INFO_SEARCH_TIME, "supplier-quotes", 500, D.AT_LEAST),
        ind("time-build", "Time spent building the final response",
            M.TIME_ON_TASK, "fr-build", 500, D.AT_LEAST),
        ind("modifications-requests", "Stability of the internal request process",
            M.PROCESS_MODIFICATION_COUNT, REQUESTS, 10, D.AT_LEAST),
        ind("exchange-types", "Exchange channels in use",
            M.EXCHANGE_TYPE_PROFILE, None, 0, D.AT_LEAST),
        ind("users", "Number of system users", M.USER_COUNT, None, 1, D.AT_MOST),
        ind("exploitation", "Ability to exploit the system", M.EXPLOITATION_ABILITY, None, 0.05, D.AT_MOST),
        ind("stability", "Degree of use stability", M.USE_STABILITY, None, 0.0, D.AT_MOST),
    ]


def rfp_rules() -> list[Rule]:
    return [
        Rule("drop-director-rfp", "val-internal-rfp",
             RemoveValidationStep(REQUESTS, "ir-director-approval"), priority=1),
        Rule("merge-rfp-checks", "val-internal-rfp",
             MergeActivities(REQUESTS, "ir-quality-check", "ir-director-approval"), priority=2),
        Rule("drop-director-final", "val-final-response",
             RemoveValidationStep(RESPONSE, "fr-director-approval"), priority=1),
        Rule("notify-director-final", "val-final-response",
             AddNotification(RESPONSE, "fr-quality-check", ("dir-1",)), priority=2),
    ]


def rfp_workload(rounds: int = 4, period: int = 150) -> list[Arrival]:
    design = {CUSTOMER_REQUEST: "customer-request", TECH_SPEC: "tech-spec", CAD_MODEL: "cad-model"}
    requests = {TECH_SPEC: "tech-spec", RFP: "internal-rfp", QUOTE: "supplier-quotes"}
    response = {QUOTE: "supplier-quotes", TECH_SPEC: "tech-spec", FINAL: "final-response"}
    out = []
    for k in range(rounds):
        t = k * period
        out.append(Arrival(DESIGN, t, design, f"design-{k + 1}"))
        out.append(Arrival(REQUESTS, t + 50, requests, f"requests-{k + 1}"))
        out.append(Arrival(RESPONSE, t + 100, response, f"response-{k + 1}"))
    return out


def build_rfp_case(seed: int = 2024, rounds: int = 4) -> ScenarioConfig:
    objects = [
        BusinessObject("customer-request", CUSTOMER_REQUEST, 1, "received"),
        BusinessObject("tech-spec", TECH_SPEC),
        BusinessObject("cad-model", CAD_MODEL),
        BusinessObject("internal-rfp", RFP),
        BusinessObject("supplier-quotes", QUOTE),
        BusinessObject("final-response", FINAL),
    ]
    return ScenarioConfig(
        name="rfp-plastics-subcontractor",
        seed=seed,
        horizon=2000,
        roles=rfp_roles(),
        actors=rfp_actors(),
        processes=rfp_processes(),
        workload=rfp_workload(rounds),
        objects=objects,
        object_classes=list(OBJECT_CLASSES),
        weights=WeightFunction(((MODIFICATIONS, 1.0), (MULTI_ACTOR_ACCESSES, 2.0), (OUTPUT_FLOWS, 1.5))),
        collaborative_cutoff=10.0,
        indicators=rfp_indicators(),
        rules=rfp_rules(),
        regulator=Regulator("regulator", RegulatorKind.AUTOMATED, AcceptancePolicy(AcceptanceKind.AUTO)),
        durations={
            "default": (0.8, 1.3),
            ActivityKind.VALIDATION.value: (0.9, 2.0),
            ActivityKind.EXCHANGE.value: (1.0, 3.0),
        },
        monitored=[REQUESTS, RESPONSE],
    )
