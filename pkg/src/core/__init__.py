from .diffcore import ParamStore, Tape, Var, is_var, value_of

__all__ = ["ParamStore", "Tape", "Var", "is_var", "value_of"]
