from .ast import *  # noqa: F401,F403
from .lexer import AmbiguousMixError, ParseError, tokenize
from .parser import (
    parse_command, parse_coupling, parse_derivation, parse_module, parse_pred, parse_program,
    parse_term, parse_tokens, parse_type, Parser,
)
from .paths import PathError, all_paths, children, focus, replace
from .pretty import pp, pp_command, pp_coupling, pp_module, pp_pred, pp_proc, pp_program, pp_term, pp_type
from .subst import (
    alpha_equal, free_vars, fresh_name, ordered_free_vars, rename_free, subst_many, substitute,
)
