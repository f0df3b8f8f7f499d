from .config import (
    DEFAULT_BUDGET, BudgetExceeded, ConfigError, Derived, DomainConfig, Table, parse_domain,
)
from .entails import EntailResult, Entailment, entails, flatten_goal
from .evaluate import EvalError, Evaluator, FuelExhausted, OutOfDomain, defining_eq, split_conj
from .values import NULL, LVal, format_binding, format_value, sort_key, value_to_term
